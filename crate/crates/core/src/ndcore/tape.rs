//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::ndcore::tensor::{matmul, matmul_nt, matmul_tn, softmax_rows, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    BceLogitsSum {
        logits: Var,
        targets: Tensor<T>,
    },
    IrmPenalty {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
        grad_scale: f64,
    },
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    adjoints: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.adjoints.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(format!("{what}: shapes {a:?} and {b:?} do not agree"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `[m]` bias to every row of an `[n, m]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(bias);
        let m = av.row_len();
        if bv.len() != m || av.ndim() != 2 {
            return Err(shape_err("add_row", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    /// Affine layer `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(shape_err(what, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a, k), rg)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    /// Sum of all entries (64-bit accumulation).
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        let rg = self.rg(a);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum_f64() / v.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(a), rg)
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, ca) = av.check_2d("concat_cols lhs")?;
        let (n2, cb) = bv.check_2d("concat_cols rhs")?;
        if n != n2 {
            return Err(shape_err("concat_cols", av.shape(), bv.shape()));
        }
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let out = Tensor::new(vec![n, ca + cb], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Mean over rows of `logsumexp(logits_i) - logits_i[target_i]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.check_2d("softmax_cross_entropy")?;
        check_targets(targets, n, c)?;
        let (loss, probs) = cross_entropy_value(lv, targets);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Sum over all entries of the binary cross-entropy between
    /// `sigmoid(logits)` and `targets`, computed from logits for stability.
    pub fn bce_with_logits_sum(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != targets.shape() {
            return Err(shape_err("bce_with_logits_sum", lv.shape(), targets.shape()));
        }
        let mut s = 0.0f64;
        for (&l, &t) in lv.data().iter().zip(targets.data()) {
            let l = l.as_f64();
            let t = t.as_f64();
            // max(l,0) - l t + ln(1 + e^{-|l|})
            s += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(T::from_f64(s)),
            Op::BceLogitsSum {
                logits,
                targets: targets.clone(),
            },
            rg,
        ))
    }

    /// Squared derivative of the mean cross-entropy with respect to a scalar
    /// multiplier on the logits, evaluated at 1.
    pub fn irm_penalty(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.check_2d("irm_penalty")?;
        check_targets(targets, n, c)?;
        let probs = softmax_rows(lv);
        let mut g = 0.0f64;
        for i in 0..n {
            for j in 0..c {
                let y = if targets[i] == j { 1.0 } else { 0.0 };
                g += (probs.row(i)[j].as_f64() - y) * lv.row(i)[j].as_f64();
            }
        }
        g /= n as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(T::from_f64(g * g)),
            Op::IrmPenalty {
                logits,
                targets: targets.to_vec(),
                probs,
                grad_scale: g,
            },
            rg,
        ))
    }

    /// Hash of the sign pattern at every ReLU input. Two evaluations with the
    /// same signature lie on the same linear piece of every ReLU.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &v in self.nodes[a.0].value.data() {
                    h ^= (v > T::zero()) as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = matmul_nt(&g, self.value(*b))?;
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = matmul_tn(self.value(*a), &g)?;
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.rg(*b) {
                        let m = g.row_len();
                        let mut acc = vec![0.0f64; m];
                        for row in g.data().chunks(m) {
                            for (s, &v) in acc.iter_mut().zip(row) {
                                *s += v.as_f64();
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        accumulate(
                            &mut adj,
                            *b,
                            Tensor::new(shape, acc.into_iter().map(T::from_f64).collect())?,
                        );
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g.clone());
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g.map(|v| -v));
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, hadamard(&g, self.value(*b)));
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, hadamard(&g, self.value(*a)));
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut adj, *a, g.map(|v| v * k));
                }
                Op::AddScalar(a, _) => accumulate(&mut adj, *a, g),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = zip_with(&g, x, |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                    accumulate(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip_with(&g, &node.value, |gv, s| gv * s * (T::one() - s));
                    accumulate(&mut adj, *a, d);
                }
                Op::Tanh(a) => {
                    let d = zip_with(&g, &node.value, |gv, t| gv * (T::one() - t * t));
                    accumulate(&mut adj, *a, d);
                }
                Op::Exp(a) => {
                    let d = hadamard(&g, &node.value);
                    accumulate(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    let two = T::from_f64(2.0);
                    let d = zip_with(&g, self.value(*a), |gv, x| gv * two * x);
                    accumulate(&mut adj, *a, d);
                }
                Op::Abs(a) => {
                    let d = zip_with(&g, self.value(*a), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else if x < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut adj, *a, d);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adj, *a, Tensor::full(&shape, gv));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let gv = T::from_f64(g.data()[0].as_f64() / av.len().max(1) as f64);
                    let shape = av.shape().to_vec();
                    accumulate(&mut adj, *a, Tensor::full(&shape, gv));
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).row_len();
                    let cb = self.value(*b).row_len();
                    let n = g.rows();
                    let mut ga = Vec::with_capacity(n * ca);
                    let mut gb = Vec::with_capacity(n * cb);
                    for i in 0..n {
                        let row = g.row(i);
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, Tensor::new(vec![n, ca], ga)?);
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, Tensor::new(vec![n, cb], gb)?);
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len();
                    let scale = g.data()[0].as_f64() / n as f64;
                    let mut d = probs.clone();
                    let c = d.row_len();
                    for (i, &t) in targets.iter().enumerate() {
                        let row = d.row_mut(i);
                        row[t] = row[t] - T::one();
                        for v in row.iter_mut().take(c) {
                            *v = T::from_f64(v.as_f64() * scale);
                        }
                    }
                    accumulate(&mut adj, *logits, d);
                }
                Op::BceLogitsSum { logits, targets } => {
                    let gv = g.data()[0];
                    let d = zip_with(self.value(*logits), targets, |l, t| gv * (sigmoid(l) - t));
                    accumulate(&mut adj, *logits, d);
                }
                Op::IrmPenalty {
                    logits,
                    targets,
                    probs,
                    grad_scale,
                } => {
                    // d(g^2)/dl_ic = 2 g (p_ic - y_ic + p_ic (l_ic - sum_c' p_ic' l_ic')) / n
                    let lv = self.value(*logits);
                    let n = targets.len();
                    let c = lv.row_len();
                    let outer = g.data()[0].as_f64() * 2.0 * grad_scale / n as f64;
                    let mut d = Tensor::zeros(lv.shape());
                    for i in 0..n {
                        let l = lv.row(i);
                        let p = probs.row(i);
                        let lbar: f64 = (0..c).map(|j| p[j].as_f64() * l[j].as_f64()).sum();
                        let row = d.row_mut(i);
                        for j in 0..c {
                            let y = if targets[i] == j { 1.0 } else { 0.0 };
                            let pj = p[j].as_f64();
                            row[j] = T::from_f64(outer * (pj - y + pj * (l[j].as_f64() - lbar)));
                        }
                    }
                    accumulate(&mut adj, *logits, d);
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_targets(targets: &[usize], n: usize, c: usize) -> Result<()> {
    if targets.len() != n {
        return Err(Error::dim(format!(
            "{} targets for {n} rows of logits",
            targets.len()
        )));
    }
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= c) {
        return Err(Error::Index(format!(
            "target {t} at row {i} is outside [0, {c})"
        )));
    }
    Ok(())
}

/// Mean cross-entropy and the softmax probabilities, log-sum-exp stabilized.
pub(crate) fn cross_entropy_value<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> (f64, Tensor<T>) {
    let n = targets.len();
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
        let z: f64 = row.iter().map(|&v| (v.as_f64() - m).exp()).sum();
        total += m + z.ln() - row[t].as_f64();
    }
    (total / n.max(1) as f64, softmax_rows(logits))
}

fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    zip_with(a, b, |x, y| x * y)
}

fn zip_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_fn(a.shape(), |i| f(a.data()[i], b.data()[i]))
}

fn accumulate<T: Real>(adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::scalar(3.0));
        let c = t.constant(Tensor::scalar(5.0));
        let y = t.scale(c, 2.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get_or_zeros(x, &[]).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut t = Tape::<f32>::new();
        let x = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::<f32>::new();
        let l = t.constant(Tensor::from_rows(&[vec![0.0, 0.0]]));
        let ce = t.softmax_cross_entropy(l, &[0]).unwrap();
        assert!((t.scalar(ce) as f64 - std::f64::consts::LN_2).abs() < 1e-6);

        let l = t.constant(Tensor::from_rows(&[vec![1000.0, 0.0]]));
        let ce = t.softmax_cross_entropy(l, &[0]).unwrap();
        assert!(t.scalar(ce).is_finite() && t.scalar(ce).abs() < 1e-6);

        // ln(e + e^2 + e^3) - 3, evaluated independently: 0.40760596444...
        let l = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]));
        let ce = t.softmax_cross_entropy(l, &[2]).unwrap();
        assert!((t.scalar(ce) as f64 - 0.407_605_964_4).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut t = Tape::<f32>::new();
        let l = t.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            t.softmax_cross_entropy(l, &[3]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn irm_penalty_vanishes_at_calibrated_logits() {
        // Two mirrored rows with identical confidence: the scale derivative of
        // each row is p1 l1 + p2 l2 - l_target; at l = (0,0) it is zero.
        let mut t = Tape::<f64>::new();
        let l = t.param(Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]));
        let p = t.irm_penalty(l, &[0, 1]).unwrap();
        assert_eq!(t.scalar(p), 0.0);
        let g = t.backward(p).unwrap();
        assert!(g.get(l).unwrap().data().iter().all(|v| v.abs() < 1e-15));
    }
}
