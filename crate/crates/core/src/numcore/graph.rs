use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{NumError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sqrt(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    StopGradient,
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

/// Operand layout of a binary elementwise op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

/// Tape of operations recorded in execution order.
///
/// Nodes are appended as operations run, so node order is a topological
/// order and `backward` walks it in reverse. Each node keeps its forward
/// value; backward rules read operand values from there.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: gradient of the loss for every node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`. Nodes the loss does not depend on
    /// (including everything behind a stop-gradient) get exact zeros.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// True when no gradient reached `var` at all.
    pub fn is_untouched(&self, var: Var) -> bool {
        self.grads[var.0].is_none()
    }
}

fn dim_err(what: &str, a: &[usize], b: &[usize]) -> NumError {
    NumError::Dimension(format!("{what}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let tracked = self.nodes[a.0].tracked;
        self.push(op, value, tracked)
    }

    fn layout(&self, a: Var, b: Var) -> Result<Broadcast, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::Same)
        } else if self.value(a).len() == 1 {
            Ok(Broadcast::LeftScalar)
        } else if self.value(b).len() == 1 {
            Ok(Broadcast::RightScalar)
        } else {
            Err(dim_err("elementwise shapes", sa, sb))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let layout = self.layout(a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = match layout {
            Broadcast::Same => {
                let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(va.shape().to_vec(), data)?
            }
            Broadcast::LeftScalar => {
                let s = va.data()[0];
                vb.map(|y| f(s, y))
            }
            Broadcast::RightScalar => {
                let s = vb.data()[0];
                va.map(|x| f(x, s))
            }
        };
        let tracked = self.nodes[a.0].tracked || self.nodes[b.0].tracked;
        Ok(self.push(op, value, tracked))
    }

    /// Matrix product of rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ((r, k), (k2, c)) = match (sa, sb) {
            ([r, k], [k2, c]) => ((*r, *k), (*k2, *c)),
            _ => return Err(dim_err("matmul needs rank-2 operands", sa, sb)),
        };
        if k != k2 {
            return Err(dim_err("matmul inner dimensions", sa, sb));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), r, k, c);
        let value = Tensor::new(vec![r, c], data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::MatMul(a, b), value, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        if self.value(b).data().contains(&0.0) {
            return Err(NumError::Domain("division by zero".into()));
        }
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(NumError::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
            return Err(NumError::Domain(format!("square root of negative value {bad}")));
        }
        Ok(self.unary(a, Op::Sqrt(a), f64::sqrt))
    }

    /// Elementwise `a^p` for a fixed exponent.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Op::Pow(a, p), |x| x.powf(p))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was
    /// already inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Identity on values; contributes no gradient to anything upstream.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(Op::StopGradient, value, false)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(Op::Sum(a), value, tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let tracked = self.tracked(a);
        self.push(Op::Mean(a), value, tracked)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let value = self.value(a).clone().reshaped(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(Op::Reshape(a), value, tracked))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(NumError::Contract(format!("loss node {} is not in this graph", loss.0)));
        };
        if node.value.len() != 1 {
            return Err(NumError::Contract(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if node.tracked {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, contribution: Vec<f64>) {
        if !self.nodes[target.0].tracked {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Gradient of a binary op split per operand, reducing broadcast scalars.
    fn accumulate_binary(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        b: Var,
        da: impl Fn(usize) -> f64,
        db: impl Fn(usize) -> f64,
        len: usize,
    ) {
        let layout = self.layout(a, b).expect("layout checked in forward");
        if self.tracked(a) {
            let full: Vec<f64> = (0..len).map(&da).collect();
            let contribution = match layout {
                Broadcast::LeftScalar => vec![full.iter().sum()],
                _ => full,
            };
            self.accumulate(grads, a, contribution);
        }
        if self.tracked(b) {
            let full: Vec<f64> = (0..len).map(&db).collect();
            let contribution = match layout {
                Broadcast::RightScalar => vec![full.iter().sum()],
                _ => full,
            };
            self.accumulate(grads, b, contribution);
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        // Operand value at output position `i`, honouring scalar broadcast.
        let at = |v: Var, i: usize| {
            let d = self.value(v).data();
            if d.len() == 1 {
                d[0]
            } else {
                d[i]
            }
        };
        match node.op {
            Op::Leaf | Op::Constant | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (r, k, c) = (sa[0], sa[1], sb[1]);
                if self.tracked(a) {
                    let ga = matmul_nt(g, self.value(b).data(), r, c, k);
                    self.accumulate(grads, a, ga);
                }
                if self.tracked(b) {
                    let gb = matmul_tn(self.value(a).data(), g, r, k, c);
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Add(a, b) => self.accumulate_binary(grads, a, b, |i| g[i], |i| g[i], g.len()),
            Op::Sub(a, b) => self.accumulate_binary(grads, a, b, |i| g[i], |i| -g[i], g.len()),
            Op::Mul(a, b) => self.accumulate_binary(
                grads,
                a,
                b,
                |i| g[i] * at(b, i),
                |i| g[i] * at(a, i),
                g.len(),
            ),
            Op::Div(a, b) => self.accumulate_binary(
                grads,
                a,
                b,
                |i| g[i] / at(b, i),
                |i| -g[i] * at(a, i) / (at(b, i) * at(b, i)),
                g.len(),
            ),
            Op::Scale(a, f) => self.accumulate(grads, a, g.iter().map(|&x| x * f).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(grads, a, g.to_vec()),
            Op::Neg(a) => self.accumulate(grads, a, g.iter().map(|&x| -x).collect()),
            Op::Exp(a) => {
                self.accumulate(grads, a, g.iter().zip(out).map(|(&gi, &o)| gi * o).collect())
            }
            Op::Log(a) => {
                let x = self.value(a).data();
                self.accumulate(grads, a, g.iter().zip(x).map(|(&gi, &xi)| gi / xi).collect())
            }
            Op::Relu(a) => {
                let x = self.value(a).data();
                let ga = g.iter().zip(x).map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, a, ga.collect())
            }
            Op::Sqrt(a) => {
                let ga = g.iter().zip(out).map(|(&gi, &o)| gi * 0.5 / o);
                self.accumulate(grads, a, ga.collect())
            }
            Op::Pow(a, p) => {
                let x = self.value(a).data();
                let ga = g.iter().zip(x).map(|(&gi, &xi)| {
                    if p == 0.0 {
                        0.0
                    } else {
                        gi * p * xi.powf(p - 1.0)
                    }
                });
                self.accumulate(grads, a, ga.collect())
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi >= lo && xi <= hi { gi } else { 0.0 });
                self.accumulate(grads, a, ga.collect())
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.accumulate(grads, a, vec![g[0]; n])
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                self.accumulate(grads, a, vec![g[0] / n as f64; n])
            }
        }
    }
}
