//! Finite-difference gradient checks over primitives, cells and full
//! models, shared by the test suite and the `gradcheck` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{gradcheck, BoundParams, GradCheckOptions, GradCheckReport, Graph, OpKind, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{forward, perturb, Model, ModelConfig, ModelVars, Precision, Variant};
use crate::nn::{CgruCell, CgruVars, DcgruCell, DcgruVars};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Primitives,
    Cells,
    Models,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Primitives, Component::Cells, Component::Models];

    pub fn name(self) -> &'static str {
        match self {
            Component::Primitives => "primitives",
            Component::Cells => "cells",
            Component::Models => "models",
        }
    }

    /// Largest accepted relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Component::Primitives => 1e-6,
            Component::Cells => 1e-5,
            Component::Models => 1e-4,
        }
    }
}

impl std::str::FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck component {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub component: Component,
    pub name: String,
    pub report: GradCheckReport,
    pub passed: bool,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let worst = self
            .report
            .worst
            .as_ref()
            .map(|(n, i)| format!(" worst={n}[{i}]"))
            .unwrap_or_default();
        format!(
            "{} {} max_rel_error={:.3e} tol={:.0e} {}{}",
            self.component.name(),
            self.name,
            self.report.max_rel_error,
            self.component.tolerance(),
            if self.passed { "PASS" } else { "FAIL" },
            worst
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Channel count for cell and model checks.
    pub channels: usize,
    /// Memory length for model checks.
    pub n: usize,
    pub seed: u64,
    /// Corrupt one backward rule (for testing the checker itself).
    pub fault: Option<OpKind>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            channels: 4,
            n: 4,
            seed: 7,
            fault: None,
        }
    }
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid shape")
}

fn store(entries: &[(&str, Tensor<f64>)]) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (k, v) in entries {
        s.insert(*k, v.clone()).expect("distinct names");
    }
    s
}

pub type Case = (
    &'static str,
    ParameterStore<f64>,
    Box<dyn Fn(&mut Tape<f64>, &BoundParams<Var>) -> Result<Var>>,
);

fn weighted_sum(t: &mut Tape<f64>, y: &Var, seed: u64) -> Result<Var> {
    // random projection so every output coordinate gets a distinct weight
    let shape = t.tensor(*y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(random(&shape, &mut rng));
    let p = t.mul(y, &w)?;
    Ok(t.sum(&p))
}

pub fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();
    let ab = store(&[("a", random(&[2, 3, 2], rng)), ("b", random(&[2, 3, 2], rng))]);
    cases.push(("add", ab.clone(), Box::new(|t, p| {
        let y = t.add(&p.get("a")?, &p.get("b")?)?;
        weighted_sum(t, &y, 1)
    })));
    cases.push(("sub", ab.clone(), Box::new(|t, p| {
        let y = t.sub(&p.get("a")?, &p.get("b")?)?;
        weighted_sum(t, &y, 2)
    })));
    cases.push(("mul", ab.clone(), Box::new(|t, p| {
        let y = t.mul(&p.get("a")?, &p.get("b")?)?;
        weighted_sum(t, &y, 3)
    })));
    cases.push(("sigmoid/tanh/one_minus/square", ab.clone(), Box::new(|t, p| {
        let a = p.get("a")?;
        let y = t.sigmoid(&a);
        let z = t.tanh(&y);
        let w = t.one_minus(&z);
        let q = t.square(&w);
        weighted_sum(t, &q, 4)
    })));
    let xb = store(&[("x", random(&[2, 3, 4], rng)), ("b", random(&[4], rng))]);
    cases.push(("add_bias", xb, Box::new(|t, p| {
        let y = t.add_bias(&p.get("x")?, &p.get("b")?)?;
        weighted_sum(t, &y, 5)
    })));
    let lin = store(&[("x", random(&[3, 4], rng)), ("w", random(&[5, 4], rng)), ("v", random(&[4], rng))]);
    cases.push(("linear", lin, Box::new(|t, p| {
        let w = p.get("w")?;
        let y = t.linear(&p.get("x")?, &w)?;
        let z = t.linear(&p.get("v")?, &w)?;
        let a = weighted_sum(t, &y, 6)?;
        let b = weighted_sum(t, &z, 7)?;
        t.add(&a, &b)
    })));
    let mm = store(&[("a", random(&[3, 4], rng)), ("b", random(&[4, 2], rng))]);
    cases.push(("matmul/reshape", mm, Box::new(|t, p| {
        let y = t.matmul(&p.get("a")?, &p.get("b")?)?;
        let r = t.reshape(&y, &[6])?;
        weighted_sum(t, &r, 8)
    })));
    let st = store(&[("s", random(&[3, 4, 2], rng)), ("v", random(&[2], rng)), ("x", random(&[3, 2], rng))]);
    cases.push(("first_row/column/write_column/place_first_row", st, Box::new(|t, p| {
        let s = p.get("s")?;
        let w = t.write_column(&s, 2, &p.get("v")?)?;
        let c = t.column(&w, 2)?;
        let r = t.first_row(&w)?;
        let placed = t.place_first_row(&p.get("x")?, 2, 5)?;
        let a = weighted_sum(t, &c, 9)?;
        let b = weighted_sum(t, &r, 10)?;
        let d = weighted_sum(t, &w, 11)?;
        let e = weighted_sum(t, &placed, 12)?;
        let ab = t.add(&a, &b)?;
        let de = t.add(&d, &e)?;
        t.add(&ab, &de)
    })));
    let gc = store(&[("e", random(&[5, 3], rng)), ("f", random(&[3, 2], rng))]);
    cases.push(("gather/concat/stack", gc, Box::new(|t, p| {
        let g = t.gather(&p.get("e")?, &[4, 1, 4])?;
        let c = t.concat_last(&g, &p.get("f")?)?;
        let r0 = t.reshape(&c, &[15])?;
        let s = t.stack(&[r0, r0])?;
        weighted_sum(t, &s, 13)
    })));
    let sm = store(&[("x", random(&[3, 5], rng))]);
    cases.push(("softmax", sm.clone(), Box::new(|t, p| {
        let y = t.softmax(&p.get("x")?)?;
        weighted_sum(t, &y, 14)
    })));
    cases.push(("cross_entropy", sm, Box::new(|t, p| {
        t.cross_entropy(&p.get("x")?, &[Some(1), None, Some(4)])
    })));
    let cv = store(&[("u", random(&[3, 3, 3, 3], rng)), ("s", random(&[2, 4, 3], rng))]);
    cases.push(("conv", cv, Box::new(|t, p| {
        let y = t.conv(&p.get("u")?, &p.get("s")?)?;
        weighted_sum(t, &y, 15)
    })));
    let mc = store(&[("x", random(&[4], rng))]);
    cases.push(("mul_const", mc, Box::new(|t, p| {
        let y = t.mul_const(&p.get("x")?, Tensor::from_f64(&[4], &[0.0, 2.0, -1.0, 3.0])?)?;
        weighted_sum(t, &y, 16)
    })));
    cases
}


fn cell_store(m: usize, rng: &mut ChaCha8Rng) -> Result<ParameterStore<f64>> {
    let mut s = ParameterStore::new();
    let mut c = CgruCell::<f64>::init(3, 3, m, rng)?;
    let mut d = DcgruCell::<f64>::init(3, 3, m, rng)?;
    c.candidate_bias = random(&[m], rng);
    c.reset_bias = random(&[m], rng);
    d.cell.candidate_bias = random(&[m], rng);
    c.insert_into(&mut s, "cgru")?;
    d.insert_into(&mut s, "dcgru")?;
    s.insert("s", random(&[4, 3, m], rng))?;
    s.insert("p", random(&[4, 3, m], rng))?;
    Ok(s)
}

/// Runs the requested components; an empty list runs nothing.
pub fn run_checks(components: &[Component], opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let gc = GradCheckOptions {
        fault: opts.fault,
        ..GradCheckOptions::default()
    };
    let mut out = Vec::new();
    let mut push = |component: Component, name: String, report: GradCheckReport| {
        let passed = report.max_rel_error < component.tolerance();
        out.push(CheckResult {
            component,
            name,
            report,
            passed,
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for &component in components {
        match component {
            Component::Primitives => {
                for (name, s, f) in primitive_cases(&mut rng) {
                    push(component, name.to_string(), gradcheck(&s, &gc, f)?);
                }
            }
            Component::Cells => {
                let s = cell_store(opts.channels, &mut rng)?;
                let proj = random(&[4, 3, opts.channels], &mut rng);
                let r = gradcheck(&s, &gc, |t: &mut Tape<f64>, p| {
                    let y = CgruVars::bind(p, "cgru")?.step(t, &p.get("s")?, None)?;
                    let w = t.constant(proj.clone());
                    let y = t.mul(&y, &w)?;
                    Ok(t.sum(&y))
                })?;
                push(component, "cgru".into(), r);
                let r = gradcheck(&s, &gc, |t: &mut Tape<f64>, p| {
                    let y = DcgruVars::bind(p, "dcgru")?.step(t, &p.get("s")?, &p.get("p")?, None)?;
                    let w = t.constant(proj.clone());
                    let y = t.mul(&y, &w)?;
                    Ok(t.sum(&y))
                })?;
                push(component, "dcgru".into(), r);
            }
            Component::Models => {
                for variant in Variant::ALL {
                    let config = ModelConfig {
                        variant,
                        layers: 2,
                        width: 4,
                        channels: opts.channels,
                        kernel_w: 3,
                        kernel_h: 3,
                        vocab_in: 4,
                        vocab_out: 3,
                        precision: Precision::F64,
                        dropout: 0.0,
                    };
                    let mut model = Model::<f64>::init(config, opts.seed)?;
                    perturb(&mut model.params, 0.2, opts.seed);
                    let n = opts.n.max(1);
                    let tokens: Vec<usize> = (0..n).map(|k| (k * 3 + 1) % 4).collect();
                    let targets: Vec<usize> = (0..n).map(|k| (k * 2 + 2) % 3).collect();
                    let r = gradcheck(&model.params, &gc, |t: &mut Tape<f64>, p| {
                        let vars = ModelVars::bind(&config, p)?;
                        Ok(forward(&config, t, &vars, &tokens, &targets, n, None)?.nll_sum)
                    })?;
                    push(component, variant.name().to_string(), r);
                }
            }
        }
    }
    Ok(out)
}
