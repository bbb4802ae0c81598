use std::fmt;

use super::eager::{cross_entropy_forward, place_first_row};
use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::conv::{self, ConvGeometry};
use crate::tensor::{conv_geometry, Real, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tag identifying the primitive that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv,
    Add,
    Sub,
    Mul,
    AddBias,
    Sigmoid,
    Tanh,
    OneMinus,
    Square,
    MulConst,
    Linear,
    Matmul,
    Reshape,
    FirstRow,
    PlaceFirstRow,
    Column,
    WriteColumn,
    Gather,
    Concat,
    Stack,
    Softmax,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 24] = [
        OpKind::Leaf,
        OpKind::Conv,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddBias,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::OneMinus,
        OpKind::Square,
        OpKind::MulConst,
        OpKind::Linear,
        OpKind::Matmul,
        OpKind::Reshape,
        OpKind::FirstRow,
        OpKind::PlaceFirstRow,
        OpKind::Column,
        OpKind::WriteColumn,
        OpKind::Gather,
        OpKind::Concat,
        OpKind::Stack,
        OpKind::Softmax,
        OpKind::Sum,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv => "conv",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddBias => "add_bias",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::OneMinus => "one_minus",
            OpKind::Square => "square",
            OpKind::MulConst => "mul_const",
            OpKind::Linear => "linear",
            OpKind::Matmul => "matmul",
            OpKind::Reshape => "reshape",
            OpKind::FirstRow => "first_row",
            OpKind::PlaceFirstRow => "place_first_row",
            OpKind::Column => "column",
            OpKind::WriteColumn => "write_column",
            OpKind::Gather => "gather",
            OpKind::Concat => "concat",
            OpKind::Stack => "stack",
            OpKind::Softmax => "softmax",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op<T> {
    Leaf,
    Conv { kernel: usize, input: usize, geom: ConvGeometry },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    OneMinus(usize),
    Square(usize),
    MulConst(usize, Tensor<T>),
    Linear(usize, usize),
    Matmul(usize, usize),
    Reshape(usize),
    FirstRow(usize),
    PlaceFirstRow(usize),
    Column(usize, usize),
    WriteColumn(usize, usize, usize),
    Gather(usize, Vec<usize>),
    Concat(usize, usize),
    Stack(Vec<usize>),
    Softmax(usize),
    Sum(usize),
    CrossEntropy { logits: usize, targets: Vec<Option<usize>>, probs: Tensor<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv { .. } => OpKind::Conv,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::OneMinus(_) => OpKind::OneMinus,
            Op::Square(_) => OpKind::Square,
            Op::MulConst(..) => OpKind::MulConst,
            Op::Linear(..) => OpKind::Linear,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Reshape(_) => OpKind::Reshape,
            Op::FirstRow(_) => OpKind::FirstRow,
            Op::PlaceFirstRow(_) => OpKind::PlaceFirstRow,
            Op::Column(..) => OpKind::Column,
            Op::WriteColumn(..) => OpKind::WriteColumn,
            Op::Gather(..) => OpKind::Gather,
            Op::Concat(..) => OpKind::Concat,
            Op::Stack(_) => OpKind::Stack,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Sum(_) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records operations during the forward pass and replays them in reverse.
/// Built fresh for every training step.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every node reachable from the loss, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Corrupts the backward rule of one primitive (its outgoing gradient is
    /// scaled by 1.5). Used to prove the gradient checker catches bad rules.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.shape()));
        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let kind = node.op.kind();
            if self.fault == Some(kind) {
                g = g.scale(T::from_f64(1.5));
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            for (target, contribution) in self.backward_node(node, &g)? {
                if !contribution.all_finite() {
                    return Err(Error::NonFinite {
                        op: format!("backward of {kind}"),
                    });
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let y = &node.value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv { kernel, input, geom } => {
                let mut ds = Tensor::zeros(self.nodes[*input].value.shape());
                conv::conv_backward_input(geom, g.data(), self.nodes[*kernel].value.data(), ds.data_mut());
                let mut dk = Tensor::zeros(self.nodes[*kernel].value.shape());
                conv::conv_backward_kernel(geom, self.nodes[*input].value.data(), g.data(), dk.data_mut());
                vec![(*input, ds), (*kernel, dk)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => vec![
                (*a, g.mul(&self.nodes[*b].value)?),
                (*b, g.mul(&self.nodes[*a].value)?),
            ],
            Op::AddBias(x, b) => {
                let m = g.last_dim();
                let mut db = vec![T::zero(); m];
                for row in g.data().chunks_exact(m) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*x, g.clone()), (*b, Tensor::new(&[m], db)?)]
            }
            Op::Sigmoid(x) => {
                let d = pointwise(g, y, |gv, yv| gv * yv * (T::one() - yv));
                vec![(*x, d)]
            }
            Op::Tanh(x) => {
                let d = pointwise(g, y, |gv, yv| gv * (T::one() - yv * yv));
                vec![(*x, d)]
            }
            Op::OneMinus(x) => vec![(*x, g.scale(-T::one()))],
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                vec![(*x, pointwise(g, &self.nodes[*x].value, |gv, xv| two * xv * gv))]
            }
            Op::MulConst(x, c) => vec![(*x, g.mul(c)?)],
            Op::Linear(x, w) => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (p, q) = (wv.shape()[0], wv.shape()[1]);
                let k = xv.len() / q;
                let mut dx = Tensor::zeros(xv.shape());
                conv::gemm_acc(k, p, q, g.data(), p, 1, wv.data(), q, dx.data_mut(), q);
                let mut dw = Tensor::zeros(wv.shape());
                conv::gemm_acc(p, k, q, g.data(), 1, p, xv.data(), q, dw.data_mut(), q);
                vec![(*x, dx), (*w, dw)]
            }
            Op::Matmul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (p, q, r) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let bt = bv.transpose2()?;
                let mut da = Tensor::zeros(av.shape());
                conv::gemm_acc(p, r, q, g.data(), r, 1, bt.data(), q, da.data_mut(), q);
                let mut db = Tensor::zeros(bv.shape());
                conv::gemm_acc(q, p, r, av.data(), 1, q, g.data(), r, db.data_mut(), r);
                vec![(*a, da), (*b, db)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(self.nodes[*x].value.shape())?)],
            Op::FirstRow(s) => {
                let mut ds = Tensor::zeros(self.nodes[*s].value.shape());
                ds.data_mut()[..g.len()].copy_from_slice(g.data());
                vec![(*s, ds)]
            }
            Op::PlaceFirstRow(x) => {
                let xv = &self.nodes[*x].value;
                vec![(*x, Tensor::new(xv.shape(), g.data()[..xv.len()].to_vec())?)]
            }
            Op::Column(s, k) => {
                let mut ds = Tensor::zeros(self.nodes[*s].value.shape());
                ds.write_column(*k, g)?;
                vec![(*s, ds)]
            }
            Op::WriteColumn(s, k, v) => {
                let dv = g.column(*k)?;
                let mut ds = g.clone();
                ds.write_column(*k, &Tensor::zeros(dv.shape()))?;
                vec![(*s, ds), (*v, dv)]
            }
            Op::Gather(table, ids) => {
                let tv = &self.nodes[*table].value;
                let m = tv.shape()[1];
                let mut dt = Tensor::zeros(tv.shape());
                for (row, &id) in g.data().chunks_exact(m).zip(ids) {
                    for (d, &v) in dt.data_mut()[id * m..(id + 1) * m].iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*table, dt)]
            }
            Op::Concat(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (ma, mb) = (av.last_dim(), bv.last_dim());
                let mut da = Vec::with_capacity(av.len());
                let mut db = Vec::with_capacity(bv.len());
                for row in g.data().chunks_exact(ma + mb) {
                    da.extend_from_slice(&row[..ma]);
                    db.extend_from_slice(&row[ma..]);
                }
                vec![(*a, Tensor::new(av.shape(), da)?), (*b, Tensor::new(bv.shape(), db)?)]
            }
            Op::Stack(items) => {
                let shape = self.nodes[items[0]].value.shape();
                let size = self.nodes[items[0]].value.len();
                items
                    .iter()
                    .zip(g.data().chunks_exact(size))
                    .map(|(&i, chunk)| Ok((i, Tensor::new(shape, chunk.to_vec())?)))
                    .collect::<Result<_>>()?
            }
            Op::Softmax(x) => {
                let v = y.last_dim();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(v).zip(g.data().chunks_exact(v)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                }
                vec![(*x, Tensor::new(y.shape(), dx)?)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.nodes[*x].value.shape(), g.item()))],
            Op::CrossEntropy { logits, targets, probs } => {
                let v = probs.last_dim();
                let scale = g.item();
                let mut d = probs.scale(scale);
                for (row, target) in d.data_mut().chunks_exact_mut(v).zip(targets) {
                    match target {
                        Some(t) => row[*t] -= scale,
                        None => row.iter_mut().for_each(|x| *x = T::zero()),
                    }
                }
                vec![(*logits, d)]
            }
        })
    }
}

fn pointwise<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

impl<T: Real> Graph<T> for Tape<T> {
    type V = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn conv(&mut self, kernel: &Var, s: &Var) -> Result<Var> {
        let geom = conv_geometry(self.val(*kernel), self.val(*s))?;
        let out = self.val(*s).conv_same(self.val(*kernel))?;
        Ok(self.push(
            out,
            Op::Conv {
                kernel: kernel.0,
                input: s.0,
                geom,
            },
        ))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).add(self.val(*b))?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).sub(self.val(*b))?;
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).mul(self.val(*b))?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    fn add_bias(&mut self, x: &Var, bias: &Var) -> Result<Var> {
        let out = self.val(*x).add_bias(self.val(*bias))?;
        Ok(self.push(out, Op::AddBias(x.0, bias.0)))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let out = self.val(*x).sigmoid();
        self.push(out, Op::Sigmoid(x.0))
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let out = self.val(*x).tanh();
        self.push(out, Op::Tanh(x.0))
    }

    fn one_minus(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(|v| T::one() - v);
        self.push(out, Op::OneMinus(x.0))
    }

    fn square(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(|v| v * v);
        self.push(out, Op::Square(x.0))
    }

    fn mul_const(&mut self, x: &Var, c: Tensor<T>) -> Result<Var> {
        let out = self.val(*x).mul(&c)?;
        Ok(self.push(out, Op::MulConst(x.0, c)))
    }

    fn linear(&mut self, x: &Var, w: &Var) -> Result<Var> {
        let out = self.val(*x).linear(self.val(*w))?;
        Ok(self.push(out, Op::Linear(x.0, w.0)))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).matmul(self.val(*b))?;
        Ok(self.push(out, Op::Matmul(a.0, b.0)))
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(*x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x.0)))
    }

    fn first_row(&mut self, s: &Var) -> Result<Var> {
        let out = self.val(*s).first_row()?;
        Ok(self.push(out, Op::FirstRow(s.0)))
    }

    fn place_first_row(&mut self, x: &Var, width: usize, len: usize) -> Result<Var> {
        let out = place_first_row(self.val(*x), width, len)?;
        Ok(self.push(out, Op::PlaceFirstRow(x.0)))
    }

    fn column(&mut self, s: &Var, k: usize) -> Result<Var> {
        let out = self.val(*s).column(k)?;
        Ok(self.push(out, Op::Column(s.0, k)))
    }

    fn write_column(&mut self, s: &Var, k: usize, v: &Var) -> Result<Var> {
        let mut out = self.val(*s).clone();
        out.write_column(k, self.val(*v))?;
        Ok(self.push(out, Op::WriteColumn(s.0, k, v.0)))
    }

    fn gather(&mut self, table: &Var, ids: &[usize]) -> Result<Var> {
        let out = self.val(*table).gather_rows(ids)?;
        Ok(self.push(out, Op::Gather(table.0, ids.to_vec())))
    }

    fn concat_last(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).concat_last(self.val(*b))?;
        Ok(self.push(out, Op::Concat(a.0, b.0)))
    }

    fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = items.iter().map(|v| self.val(*v)).collect();
        let out = Tensor::stack(&refs)?;
        Ok(self.push(out, Op::Stack(items.iter().map(|v| v.0).collect())))
    }

    fn softmax(&mut self, x: &Var) -> Result<Var> {
        let out = self.val(*x).softmax()?;
        Ok(self.push(out, Op::Softmax(x.0)))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let out = Tensor::scalar(self.val(*x).sum());
        self.push(out, Op::Sum(x.0))
    }

    fn cross_entropy(&mut self, logits: &Var, targets: &[Option<usize>]) -> Result<Var> {
        let (total, probs) = cross_entropy_forward(self.val(*logits), targets)?;
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }
}
