use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{AutodiffError, Result, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: usize,
        k: usize,
        b: usize,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Relu {
        x: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    Reshape {
        x: usize,
    },
    SoftmaxCe {
        logits: usize,
        target: usize,
        probs: Vec<f64>,
    },
    Select {
        x: usize,
        index: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sum {
        x: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records the forward pass; [`Tape::backward`] replays it in reverse.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient of one scalar output with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient for `v`; all zeros if the output does not depend on it.
    pub fn get(&self, v: Var) -> &[f64] {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        &self.grads[v.index]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.index)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.index].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Valid cross-correlation, stride 1:
    /// `out[t, o] = b[o] + sum_{k, c} x[t + k, c] * w[k, c, o]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xi, ki, bi) = (self.idx(x)?, self.idx(kernel)?, self.idx(bias)?);
        let (xs, ks, bs) = (
            self.nodes[xi].value.shape(),
            self.nodes[ki].value.shape(),
            self.nodes[bi].value.shape(),
        );
        if xs.len() != 2 || ks.len() != 3 || bs != [ks.get(2).copied().unwrap_or(0)] {
            return Err(AutodiffError::Shape(format!(
                "conv1d input {xs:?}, kernel {ks:?}, bias {bs:?}"
            )));
        }
        let (l, cin) = (xs[0], xs[1]);
        let (k, kcin, cout) = (ks[0], ks[1], ks[2]);
        if kcin != cin || k == 0 || l < k {
            return Err(AutodiffError::Shape(format!(
                "conv1d input {xs:?} incompatible with kernel {ks:?}"
            )));
        }
        let lo = l - k + 1;
        let xd = self.nodes[xi].value.data();
        let wd = self.nodes[ki].value.data();
        let bd = self.nodes[bi].value.data();
        let span = k * cin;
        let mut out = vec![0.0; lo * cout];
        for t in 0..lo {
            let row = &mut out[t * cout..(t + 1) * cout];
            row.copy_from_slice(bd);
            let window = &xd[t * cin..t * cin + span];
            for (j, &xv) in window.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[j * cout..(j + 1) * cout];
                for (o, &w) in row.iter_mut().zip(wrow) {
                    *o += xv * w;
                }
            }
        }
        let value = Tensor::new(vec![lo, cout], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x: xi,
                k: ki,
                b: bi,
            },
        ))
    }

    /// Non-overlapping max pooling along time; a trailing partial window is dropped and
    /// ties go to the first maximal element.
    pub fn maxpool1d(&mut self, x: Var, pool: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.nodes[xi].value.shape();
        if xs.len() != 2 || pool == 0 || xs[0] < pool {
            return Err(AutodiffError::Shape(format!(
                "maxpool{pool} on input {xs:?}"
            )));
        }
        let (l, c) = (xs[0], xs[1]);
        let lo = l / pool;
        let xd = self.nodes[xi].value.data();
        let mut out = vec![0.0; lo * c];
        let mut argmax = vec![0; lo * c];
        for t in 0..lo {
            for ch in 0..c {
                let mut best = t * pool * c + ch;
                for p in 1..pool {
                    let j = (t * pool + p) * c + ch;
                    if xd[j] > xd[best] {
                        best = j;
                    }
                }
                out[t * c + ch] = xd[best];
                argmax[t * c + ch] = best;
            }
        }
        let value = Tensor::new(vec![lo, c], out)?;
        Ok(self.push(value, Op::MaxPool { x: xi, argmax }))
    }

    /// `out[j] = b[j] + sum_i x[i] * w[i, j]`.
    pub fn dense(&mut self, x: Var, weights: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(weights)?, self.idx(bias)?);
        let (xs, ws, bs) = (
            self.nodes[xi].value.shape(),
            self.nodes[wi].value.shape(),
            self.nodes[bi].value.shape(),
        );
        if xs.len() != 1 || ws.len() != 2 || ws[0] != xs[0] || bs != [ws[1]] {
            return Err(AutodiffError::Shape(format!(
                "dense input {xs:?}, weights {ws:?}, bias {bs:?}"
            )));
        }
        let nout = ws[1];
        let xd = self.nodes[xi].value.data();
        let wd = self.nodes[wi].value.data();
        let mut out = self.nodes[bi].value.data().to_vec();
        for (i, &xv) in xd.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(&wd[i * nout..(i + 1) * nout]) {
                *o += xv * w;
            }
        }
        let value = Tensor::vector(out);
        Ok(self.push(
            value,
            Op::Dense {
                x: xi,
                w: wi,
                b: bi,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        let out = v.data().iter().map(|&a| a.max(0.0)).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Relu { x: xi }))
    }

    /// Inverted dropout. In inference mode, or with rate 0, this is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let xi = self.idx(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidRate(rate));
        }
        let v = &self.nodes[xi].value;
        let mask = if training && rate > 0.0 {
            dropout_mask(v.len(), rate, rng)
        } else {
            vec![1.0; v.len()]
        };
        let out = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Dropout { x: xi, mask }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x: xi }))
    }

    /// Flattens to 1-D in row-major order.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, vec![n])
    }

    /// Scalar loss `-ln softmax(logits)[target]`, plus the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<(Var, Vec<f64>)> {
        let li = self.idx(logits)?;
        let z = self.nodes[li].value.data();
        if z.is_empty() {
            return Err(AutodiffError::EmptyLogits);
        }
        if target >= z.len() {
            return Err(AutodiffError::InvalidTarget {
                target,
                classes: z.len(),
            });
        }
        let probs = softmax(z);
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_sum = z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        let loss = -(z[target] - m - log_sum);
        let out = probs.clone();
        Ok((
            self.push(
                Tensor::scalar(loss),
                Op::SoftmaxCe {
                    logits: li,
                    target,
                    probs,
                },
            ),
            out,
        ))
    }

    /// Element `index` of the flattened value, as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        let val = *v.data().get(index).ok_or_else(|| {
            AutodiffError::Shape(format!("index {index} out of range for {:?}", v.shape()))
        })?;
        Ok(self.push(Tensor::scalar(val), Op::Select { x: xi, index }))
    }

    /// Elementwise product of equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if va.shape() != vb.shape() {
            return Err(AutodiffError::Shape(format!(
                "mul {:?} by {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mul { a: ai, b: bi }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x: xi }))
    }

    /// Sign pattern of every ReLU input and the winner of every pooling window. Two
    /// evaluations with equal patterns lie on the same linear piece of the network.
    pub fn kink_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => sig.extend(
                    self.nodes[*x]
                        .value
                        .data()
                        .iter()
                        .map(|&v| usize::from(v > 0.0)),
                ),
                Op::MaxPool { argmax, .. } => sig.extend_from_slice(argmax),
                _ => {}
            }
        }
        sig
    }

    /// Reverse-mode gradient of the scalar `output` with respect to every recorded value.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        let out = self.idx(output)?;
        let shape = self.nodes[out].value.shape();
        if self.nodes[out].value.len() != 1 {
            return Err(AutodiffError::NonScalarOutput(shape.to_vec()));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        let mut live = vec![false; self.nodes.len()];
        grads[out][0] = 1.0;
        live[out] = true;

        for i in (0..=out).rev() {
            if !live[i] {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv1d { x, k, b } => {
                    let (x, k, b) = (*x, *k, *b);
                    let xs = self.nodes[x].value.shape();
                    let ks = self.nodes[k].value.shape();
                    let (cin, kk, cout) = (xs[1], ks[0], ks[2]);
                    let span = kk * cin;
                    let lo = node.value.shape()[0];
                    let xd = self.nodes[x].value.data();
                    let wd = self.nodes[k].value.data();
                    let mut gx = std::mem::take(&mut grads[x]);
                    let mut gk = std::mem::take(&mut grads[k]);
                    let gb = &mut grads[b];
                    for t in 0..lo {
                        let go = &g[t * cout..(t + 1) * cout];
                        for (acc, &v) in gb.iter_mut().zip(go) {
                            *acc += v;
                        }
                        let base = t * cin;
                        for j in 0..span {
                            let wrow = &wd[j * cout..(j + 1) * cout];
                            let gkrow = &mut gk[j * cout..(j + 1) * cout];
                            let xv = xd[base + j];
                            let mut dx = 0.0;
                            for o in 0..cout {
                                dx += wrow[o] * go[o];
                                gkrow[o] += xv * go[o];
                            }
                            gx[base + j] += dx;
                        }
                    }
                    grads[x] = gx;
                    grads[k] = gk;
                    live[x] = true;
                    live[k] = true;
                    live[b] = true;
                }
                Op::MaxPool { x, argmax } => {
                    for (&j, &v) in argmax.iter().zip(&g) {
                        grads[*x][j] += v;
                    }
                    live[*x] = true;
                }
                Op::Dense { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let nout = g.len();
                    let xd = self.nodes[x].value.data();
                    let wd = self.nodes[w].value.data();
                    for (acc, &v) in grads[b].iter_mut().zip(&g) {
                        *acc += v;
                    }
                    let mut gw = std::mem::take(&mut grads[w]);
                    let gx = &mut grads[x];
                    for (i, &xv) in xd.iter().enumerate() {
                        let wrow = &wd[i * nout..(i + 1) * nout];
                        let gwrow = &mut gw[i * nout..(i + 1) * nout];
                        let mut dx = 0.0;
                        for o in 0..nout {
                            dx += wrow[o] * g[o];
                            gwrow[o] += xv * g[o];
                        }
                        gx[i] += dx;
                    }
                    grads[w] = gw;
                    live[x] = true;
                    live[w] = true;
                    live[b] = true;
                }
                Op::Relu { x } => {
                    let xd = self.nodes[*x].value.data();
                    for ((acc, &v), &xv) in grads[*x].iter_mut().zip(&g).zip(xd) {
                        if xv > 0.0 {
                            *acc += v;
                        }
                    }
                    live[*x] = true;
                }
                Op::Dropout { x, mask } => {
                    for ((acc, &v), &m) in grads[*x].iter_mut().zip(&g).zip(mask) {
                        *acc += v * m;
                    }
                    live[*x] = true;
                }
                Op::Reshape { x } => {
                    for (acc, &v) in grads[*x].iter_mut().zip(&g) {
                        *acc += v;
                    }
                    live[*x] = true;
                }
                Op::SoftmaxCe {
                    logits,
                    target,
                    probs,
                } => {
                    for (j, (acc, &p)) in grads[*logits].iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        *acc += g[0] * (p - onehot);
                    }
                    live[*logits] = true;
                }
                Op::Select { x, index } => {
                    grads[*x][*index] += g[0];
                    live[*x] = true;
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let ad = self.nodes[a].value.data();
                    let bd = self.nodes[b].value.data();
                    for (j, &v) in g.iter().enumerate() {
                        grads[a][j] += v * bd[j];
                        grads[b][j] += v * ad[j];
                    }
                    live[a] = true;
                    live[b] = true;
                }
                Op::Sum { x } => {
                    for acc in grads[*x].iter_mut() {
                        *acc += g[0];
                    }
                    live[*x] = true;
                }
            }
            grads[i] = g;
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Keep-mask for inverted dropout: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::sequence(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
        let k = t.leaf(Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, -1.0]).unwrap());
        let b = t.leaf(Tensor::vector(vec![0.0]));
        let y = t.conv1d(x, k, b).unwrap();
        assert_eq!(t.value(y).data(), &[-2.0, -2.0, -2.0]);
        assert_eq!(t.value(y).shape(), &[3, 1]);
    }

    #[test]
    fn conv_identity_kernel_and_table_shape() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let x = t.leaf(Tensor::sequence(data.clone()));
        let k = t.leaf(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let b = t.leaf(Tensor::vector(vec![0.0]));
        let y = t.conv1d(x, k, b).unwrap();
        assert_eq!(t.value(y).data(), data.as_slice());

        let x = t.leaf(Tensor::zeros(vec![216, 1]));
        let k = t.leaf(Tensor::zeros(vec![50, 1, 64]));
        let b = t.leaf(Tensor::zeros(vec![64]));
        let y = t.conv1d(x, k, b).unwrap();
        assert_eq!(t.value(y).shape(), &[167, 64]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![4, 1]));
        let k = t.leaf(Tensor::zeros(vec![5, 1, 2]));
        let b = t.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(t.conv1d(x, k, b), Err(AutodiffError::Shape(_))));
        let k2 = t.leaf(Tensor::zeros(vec![2, 3, 2]));
        assert!(matches!(t.conv1d(x, k2, b), Err(AutodiffError::Shape(_))));
    }

    #[test]
    fn maxpool_forward_backward() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::sequence(vec![1.0, 3.0, 2.0, 5.0]));
        let y = t.maxpool1d(x, 2).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 5.0]);

        let x = t.leaf(Tensor::zeros(vec![167, 4]));
        let y = t.maxpool1d(x, 2).unwrap();
        assert_eq!(t.value(y).shape(), &[83, 4]);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::sequence(vec![1.0, 3.0]));
        let y = t.maxpool1d(x, 2).unwrap();
        let s = t.select(y, 0).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), &[0.0, 1.0]);

        // Ties route to the first element.
        let mut t = Tape::new();
        let x = t.leaf(Tensor::sequence(vec![2.0, 2.0]));
        let y = t.maxpool1d(x, 2).unwrap();
        let s = t.select(y, 0).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x), &[1.0, 0.0]);
    }

    #[test]
    fn dense_hand_example_and_identity() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 1.0]));
        let w = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 6.0]);

        let x = t.leaf(Tensor::vector(vec![0.3, -7.0, 2.5]));
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = t.leaf(Tensor::new(vec![3, 3], eye).unwrap());
        let b = t.leaf(Tensor::zeros(vec![3]));
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[0.3, -7.0, 2.5]);
    }

    #[test]
    fn relu_values_and_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = t.sum(y).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x), &[0.0, 0.0, 1.0]);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.relu(x).unwrap();
        let five = t.leaf(Tensor::scalar(5.0));
        let z = t.mul(y, five).unwrap();
        assert_eq!(t.backward(z).unwrap().get(x), &[5.0]);
    }

    #[test]
    fn chain_rule_relu_of_product() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::scalar(2.0));
        let x = t.leaf(Tensor::scalar(3.0));
        let unused = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let wx = t.mul(w, x).unwrap();
        let f = t.relu(wx).unwrap();
        let g = t.backward(f).unwrap();
        assert_eq!(g.get(w), &[3.0]);
        assert_eq!(g.get(x), &[2.0]);
        assert_eq!(g.get(unused), &[0.0, 0.0]);
    }

    #[test]
    fn parameter_reuse_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(x, x).unwrap();
        let cube = t.mul(sq, x).unwrap();
        assert_eq!(t.backward(cube).unwrap().get(x), &[27.0]);
    }

    #[test]
    fn backward_errors() {
        let t = Tape::new();
        let mut other = Tape::new();
        let v = other.leaf(Tensor::scalar(1.0));
        assert_eq!(
            t.backward(v).unwrap_err(),
            AutodiffError::BackwardBeforeForward
        );
        let mut t = Tape::new();
        t.leaf(Tensor::scalar(0.0));
        assert_eq!(t.backward(v).unwrap_err(), AutodiffError::ForeignVar);
        let w = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            t.backward(w),
            Err(AutodiffError::NonScalarOutput(_))
        ));
    }

    #[test]
    fn softmax_ce_examples() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::vector(vec![0.0; 6]));
        let (loss, p) = t.softmax_cross_entropy(z, 2).unwrap();
        assert!((t.value(loss).data()[0] - 6f64.ln()).abs() < 1e-15);
        assert!(p.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
        let g = t.backward(loss).unwrap();
        assert!(g.get(z).iter().sum::<f64>().abs() < 1e-15);

        let mut t = Tape::new();
        let z = t.leaf(Tensor::vector(vec![0.0, 60.0, 0.0]));
        let (loss, _) = t.softmax_cross_entropy(z, 1).unwrap();
        assert!(t.value(loss).data()[0] < 1e-20);

        let mut t = Tape::new();
        let z = t.leaf(Tensor::vector(vec![]));
        assert_eq!(
            t.softmax_cross_entropy(z, 0).unwrap_err(),
            AutodiffError::EmptyLogits
        );
        let z = t.leaf(Tensor::vector(vec![1.0]));
        assert!(matches!(
            t.softmax_cross_entropy(z, 1),
            Err(AutodiffError::InvalidTarget { .. })
        ));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..10_000).map(|i| 1.0 + (i % 7) as f64).collect();
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(data.clone()));
        for training in [false, true] {
            let y = t.dropout(x, 0.0, training, &mut rng).unwrap();
            assert_eq!(t.value(y).data(), data.as_slice());
        }
        let y = t.dropout(x, 0.7, false, &mut rng).unwrap();
        assert_eq!(t.value(y).data(), data.as_slice());
        assert!(t.dropout(x, 1.0, true, &mut rng).is_err());

        let y = t.dropout(x, 0.5, true, &mut rng).unwrap();
        let out = t.value(y).data();
        let survivors = out.iter().filter(|&&v| v != 0.0).count() as f64 / out.len() as f64;
        assert!((survivors - 0.5).abs() <= 0.02, "{survivors}");
        for (o, i) in out.iter().zip(&data) {
            assert!(*o == 0.0 || (o - 2.0 * i).abs() < 1e-12);
        }
        // Expectation preserved within 3 standard errors.
        let n = data.len() as f64;
        let mean_in = data.iter().sum::<f64>() / n;
        let mean_out = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|v| (v - mean_out).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean_out - mean_in).abs() < 3.0 * (var / n).sqrt());
    }

    /// Central-difference check of `build`'s scalar output with respect to every leaf
    /// element drawn. Points whose ±h evaluations land on another linear piece are
    /// redrawn. Returns the worst relative error over `points` accepted samples.
    fn grad_check<F>(inputs: &[Tensor], points: usize, seed: u64, build: F) -> f64
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let eval = |ins: &[Tensor]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone())).collect();
            let out = build(&mut t, &vars);
            (t, vars, out)
        };
        let (tape, vars, out) = eval(inputs);
        let sig = tape.kink_signature();
        let grads = tape.backward(out).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < points {
            attempts += 1;
            assert!(attempts < 50 * points, "too many kink rejections");
            let which = rng.random_range(0..inputs.len());
            let j = rng.random_range(0..inputs[which].len());
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[j] -= h;
            let (tp, _, op) = eval(&plus);
            let (tm, _, om) = eval(&minus);
            if tp.kink_signature() != sig || tm.kink_signature() != sig {
                continue;
            }
            let numeric = (tp.value(op).data()[0] - tm.value(om).data()[0]) / (2.0 * h);
            let analytic = grads.get(vars[which])[j];
            let denom = analytic.abs().max(numeric.abs());
            let err = if denom == 0.0 {
                0.0
            } else {
                (analytic - numeric).abs() / denom.max(1e-8)
            };
            worst = worst.max(err);
            accepted += 1;
        }
        worst
    }

    fn project(t: &mut Tape, y: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = t.value(y).shape().to_vec();
        let r = t.leaf(rand_tensor(&mut rng, shape));
        let p = t.mul(y, r).unwrap();
        t.sum(p).unwrap()
    }

    #[test]
    fn gradcheck_conv1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ins = vec![
            rand_tensor(&mut rng, vec![20, 3]),
            rand_tensor(&mut rng, vec![5, 3, 4]),
            rand_tensor(&mut rng, vec![4]),
        ];
        let err = grad_check(&ins, 100, 2, |t, v| {
            let y = t.conv1d(v[0], v[1], v[2]).unwrap();
            project(t, y, 3)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gradcheck_maxpool() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ins = vec![rand_tensor(&mut rng, vec![33, 4])];
        let err = grad_check(&ins, 100, 5, |t, v| {
            let y = t.maxpool1d(v[0], 2).unwrap();
            project(t, y, 6)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gradcheck_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ins = vec![
            rand_tensor(&mut rng, vec![12]),
            rand_tensor(&mut rng, vec![12, 5]),
            rand_tensor(&mut rng, vec![5]),
        ];
        let err = grad_check(&ins, 100, 8, |t, v| {
            let y = t.dense(v[0], v[1], v[2]).unwrap();
            project(t, y, 9)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gradcheck_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ins = vec![rand_tensor(&mut rng, vec![40])];
        let err = grad_check(&ins, 100, 11, |t, v| {
            let y = t.relu(v[0]).unwrap();
            project(t, y, 12)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gradcheck_dropout_and_flatten() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ins = vec![rand_tensor(&mut rng, vec![10, 3])];
        let err = grad_check(&ins, 100, 14, |t, v| {
            // Same seed every evaluation, so the mask is fixed across perturbations.
            let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
            let d = t.dropout(v[0], 0.3, true, &mut mask_rng).unwrap();
            let f = t.flatten(d).unwrap();
            project(t, f, 15)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gradcheck_softmax_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let ins = vec![rand_tensor(&mut rng, vec![6])];
        let err = grad_check(&ins, 100, 17, |t, v| {
            t.softmax_cross_entropy(v[0], 4).unwrap().0
        });
        assert!(err < 1e-6, "{err}");
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in proptest::collection::vec(-50.0f64..50.0, 1..30)) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn conv_is_bilinear(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x1 = rand_tensor(&mut rng, vec![15, 2]);
            let x2 = rand_tensor(&mut rng, vec![15, 2]);
            let k1 = rand_tensor(&mut rng, vec![4, 2, 3]);
            let k2 = rand_tensor(&mut rng, vec![4, 2, 3]);
            let zero = Tensor::zeros(vec![3]);
            let conv = |x: &Tensor, k: &Tensor| {
                let mut t = Tape::new();
                let (xv, kv, bv) = (t.leaf(x.clone()), t.leaf(k.clone()), t.leaf(zero.clone()));
                let y = t.conv1d(xv, kv, bv).unwrap();
                t.value(y).data().to_vec()
            };
            let combine = |p: &Tensor, q: &Tensor| {
                let d = p.data().iter().zip(q.data()).map(|(u, v)| a * u + b * v).collect();
                Tensor::new(p.shape().to_vec(), d).unwrap()
            };
            let in_x = conv(&combine(&x1, &x2), &k1);
            let (y1, y2) = (conv(&x1, &k1), conv(&x2, &k1));
            let in_k = conv(&x1, &combine(&k1, &k2));
            let y3 = conv(&x1, &k2);
            let scale = in_x.iter().chain(&in_k).fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..in_x.len() {
                prop_assert!((in_x[i] - (a * y1[i] + b * y2[i])).abs() <= 1e-12 * scale);
                prop_assert!((in_k[i] - (a * y1[i] + b * y3[i])).abs() <= 1e-12 * scale);
            }
        }
    }
}
