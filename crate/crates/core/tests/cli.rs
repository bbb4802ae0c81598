use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neural-gpu")).args(args).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL: &[&str] = &[
    "--task", "copy", "--alphabet", "3", "--max-len", "4", "--channels", "4", "--layers", "1",
    "--precision", "f64", "--batch", "4", "--wall-clock", "false",
];

fn train(dir: &Path, steps: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out-dir", dir.to_str().unwrap(), "--steps", steps];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn datagen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    for p in [&a, &b] {
        let o = bin(&["datagen", "--task", "reverse", "--seed", "4", "--count", "20", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with('#'));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn train_writes_run_directory_and_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for d in [&a, &b] {
        let o = train(d, "6", &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    // config.txt (and so the manifest) records the differing out_dir
    for f in ["metrics.csv", "checkpoint.bin", "checkpoint.bin.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    let entry = |m: &str| m.lines().find(|l| l.starts_with("checkpoint.bin\t")).map(str::to_owned);
    assert!(entry(&manifest).is_some());
    assert_eq!(entry(&manifest), entry(&fs::read_to_string(b.join("manifest.txt")).unwrap()));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert_eq!(code(&train(&a, "8", &[])), 0);
    assert_eq!(code(&train(&b, "3", &[])), 0);
    let o = train(&b, "8", &["--resume"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
    assert_eq!(
        fs::read_to_string(a.join("metrics.csv")).unwrap(),
        fs::read_to_string(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn eval_and_decode_report() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    assert_eq!(code(&train(&run, "2", &[])), 0);
    let data = root.path().join("d.tsv");
    let mut args = vec!["datagen", "--count", "12", "--out", data.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&bin(&args)), 0);

    let report = root.path().join("report.csv");
    let buckets = root.path().join("buckets.csv");
    let plot = root.path().join("plot.csv");
    let mut args = vec![
        "eval", "--out-dir", run.to_str().unwrap(), "--dataset", data.to_str().unwrap(), "--bleu", "--beam", "2",
        "--report", report.to_str().unwrap(), "--buckets", buckets.to_str().unwrap(),
        "--emit-plot-data", plot.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    let o = bin(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(report).unwrap();
    assert!(report.starts_with("metric,value\n"));
    for key in ["log_perplexity,", "seq_acc,", "bleu,", "samples,12"] {
        assert!(report.contains(key), "{key} missing from {report}");
    }
    let buckets = fs::read_to_string(buckets).unwrap();
    assert!(buckets.starts_with("bucket_lo,bucket_hi,count,value"));
    let total: usize = buckets.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 12);
    assert!(fs::read_to_string(plot).unwrap().starts_with("x,y"));

    let input = root.path().join("in.txt");
    fs::write(&input, "0 1 2\n2 2\n").unwrap();
    let mut args = vec!["decode", "--out-dir", run.to_str().unwrap(), "--input", input.to_str().unwrap(), "--greedy"];
    args.extend_from_slice(SMALL);
    let o = bin(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn integrity_errors_exit_three() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    assert_eq!(code(&train(&run, "2", &[])), 0);
    let ckpt = run.join("checkpoint.bin");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&ckpt, &bytes).unwrap();
    let o = train(&run, "4", &["--resume"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    // a different architecture cannot load the checkpoint
    let run2 = root.path().join("run2");
    assert_eq!(code(&train(&run2, "2", &[])), 0);
    let o = train(&run2, "4", &["--resume", "--width", "3"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_exit_codes() {
    let o = bin(&["gradcheck", "--components", "primitives,cells", "--channels", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count() > 0, true);
    let o = bin(&["gradcheck", "--components", "primitives", "--inject-fault", "conv"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&bin(&["gradcheck", "--components", ""])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bin(&[])), 1);
    assert_eq!(code(&bin(&["train", "--steps", "many"])), 1);
    assert_eq!(code(&bin(&["train", "--bogus-flag", "1"])), 1);
    assert_eq!(code(&bin(&["--help"])), 0);
}

#[test]
fn datagen_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.tsv");
    assert_eq!(code(&bin(&["datagen", "--count", "0", "--out", empty.to_str().unwrap()])), 0);
    let text = fs::read_to_string(&empty).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with('#'));

    // every addition line checked against integer arithmetic
    let add = dir.path().join("add.tsv");
    let o = bin(&[
        "datagen", "--task", "addition", "--alphabet", "10", "--max-len", "6", "--count", "300", "--out",
        add.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&add).unwrap();
    let value = |ids: &[u64]| ids.iter().fold(0u64, |acc, &d| acc * 10 + d);
    for line in text.lines().skip(1) {
        let (input, target) = line.split_once('\t').unwrap();
        let ids: Vec<u64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
        let plus = ids.iter().position(|&t| t == 10).unwrap();
        let mut out: Vec<u64> = target.split_whitespace().map(|t| t.parse().unwrap()).collect();
        assert_eq!(out.pop(), Some(10), "EOS ends the target");
        assert_eq!(value(&ids[..plus]) + value(&ids[plus + 1..]), value(&out));
    }
}

#[test]
fn zero_steps_writes_initial_checkpoint_only() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    let o = train(&run, "0", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("checkpoint.bin").exists());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn trained_copy_model_echoes_inputs() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    let cfg: &[&str] = &[
        "--task", "copy", "--alphabet", "3", "--max-len", "4", "--channels", "8", "--batch", "8",
        "--wall-clock", "false", "--lr", "0.01",
    ];
    let mut args = vec!["train", "--out-dir", run.to_str().unwrap(), "--steps", "400"];
    args.extend_from_slice(cfg);
    let o = bin(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let data = root.path().join("d.tsv");
    let mut args = vec!["datagen", "--count", "64", "--seed", "9", "--out", data.to_str().unwrap()];
    args.extend_from_slice(cfg);
    assert_eq!(code(&bin(&args)), 0);
    let eval = |report: &Path| {
        let mut args = vec![
            "eval", "--out-dir", run.to_str().unwrap(), "--dataset", data.to_str().unwrap(), "--report",
            report.to_str().unwrap(),
        ];
        args.extend_from_slice(cfg);
        assert_eq!(code(&bin(&args)), 0);
        fs::read_to_string(report).unwrap()
    };
    let first = eval(&root.path().join("r1.csv"));
    assert_eq!(first, eval(&root.path().join("r2.csv")));
    assert!(first.contains("\nseq_acc,1\n"), "{first}");

    let input = root.path().join("in.txt");
    fs::write(&input, "0 1 2 1\n2 2 0\n1\n").unwrap();
    let decode = |flags: &[&str]| {
        let mut args = vec!["decode", "--out-dir", run.to_str().unwrap(), "--input", input.to_str().unwrap()];
        args.extend_from_slice(flags);
        args.extend_from_slice(cfg);
        let o = bin(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let greedy = decode(&["--greedy"]);
    assert_eq!(greedy, decode(&["--beam", "1"]));
    let echoed: Vec<&str> = greedy.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(echoed, ["0 1 2 1", "2 2 0", "1"]);

    let searched = decode(&["--length-search"]);
    for (line, input) in searched.lines().zip([4usize, 3, 1]) {
        let len: usize = line.rsplit('\t').next().unwrap().parse().unwrap();
        assert!((input..=2 * input).contains(&len), "{line}");
    }
}
