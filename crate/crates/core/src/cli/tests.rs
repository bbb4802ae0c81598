use super::*;

fn resolve(args: &[&str]) -> ExperimentConfig {
    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        c: ConfigArgs,
    }
    let mut v = vec!["x"];
    v.extend_from_slice(args);
    Wrap::try_parse_from(v).unwrap().c.resolve().unwrap()
}

#[test]
fn precedence_defaults_file_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.txt");
    fs::write(&file, "# comment\nwidth = 6\nlr=0.01\nseed=9\n").unwrap();
    let f = file.to_str().unwrap();
    let d = ExperimentConfig::default();

    let c = resolve(&[]);
    assert_eq!(c.width, d.width);
    let c = resolve(&["--config", f]);
    assert_eq!((c.width, c.lr, c.seed), (6, 0.01, 9));
    let c = resolve(&["--width", "8"]);
    assert_eq!((c.width, c.seed), (8, d.seed));
    let c = resolve(&["--config", f, "--width", "8"]);
    assert_eq!((c.width, c.lr, c.seed), (8, 0.01, 9));
    assert_eq!(c.layers, d.layers);
}

#[test]
fn config_text_roundtrips() {
    let c = resolve(&["--variant", "extended", "--task", "reverse", "--dropout", "0.1", "--eos", "true"]);
    let mut back = ExperimentConfig::default();
    back.apply_text(&c.to_text()).unwrap();
    assert_eq!(back.to_text(), c.to_text());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(["neural-gpu", "frobnicate"]), 1);
    assert_eq!(run(["neural-gpu", "gradcheck", "--components", "bogus"]), 1);
}

#[test]
fn exit_codes_by_error_class() {
    assert_eq!(exit_code(&Error::Divergence { step: 1, loss: f64::NAN }), 2);
    assert_eq!(exit_code(&Error::NonFinite { op: "x".into() }), 2);
    assert_eq!(exit_code(&Error::Version { found: 9, expected: 1 }), 3);
    assert_eq!(exit_code(&Error::Config("x".into())), 1);
}

#[test]
fn empty_component_list_is_noop() {
    assert_eq!(run(["neural-gpu", "gradcheck", "--components", ""]), 0);
}
