//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A `Tape` records every forward operation together with a closure that
//! pushes the upstream gradient back to the operation's parents. Gradients
//! for all nodes (in particular parameter leaves) come out of a single
//! reverse sweep from a scalar loss node.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValId(usize);

impl ValId {
    /// Node index, usable to look up gradients from [`Tape::backward`].
    pub fn index(&self) -> usize {
        self.0
    }
}

type BackFn = Box<dyn Fn(&Tensor) -> Vec<(usize, Tensor)>>;

struct Node {
    value: Tensor,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> ValId {
        self.nodes.push(Node { value, back });
        ValId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: ValId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: ValId) -> f64 {
        let t = self.value(id);
        debug_assert_eq!(t.len(), 1);
        t.data[0]
    }

    /// Inserts an input node. Leaves receive gradients but produce none.
    pub fn leaf(&mut self, value: Tensor) -> ValId {
        self.push(value, None)
    }

    pub fn add(&mut self, a: ValId, b: ValId) -> ValId {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.clone()), (b.0, g.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: ValId, b: ValId) -> ValId {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.clone()), (b.0, g.scale(-1.0))]
            })),
        )
    }

    pub fn mul(&mut self, a: ValId, b: ValId) -> ValId {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.zip(&bv, |x, y| x * y);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.zip(&bv, |x, y| x * y)), (b.0, g.zip(&av, |x, y| x * y))]
            })),
        )
    }

    pub fn scale(&mut self, a: ValId, c: f64) -> ValId {
        let v = self.value(a).scale(c);
        self.push(
            v,
            Some(Box::new(move |g| vec![(a.0, g.scale(c))])),
        )
    }

    pub fn add_scalar(&mut self, a: ValId, c: f64) -> ValId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Some(Box::new(move |g| vec![(a.0, g.clone())])))
    }

    pub fn matmul(&mut self, a: ValId, b: ValId) -> ValId {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.matmul(&bv);
        self.push(
            v,
            Some(Box::new(move |g| {
                let ga = g.matmul(&bv.transpose());
                let gb = av.transpose().matmul(g);
                vec![(a.0, ga), (b.0, gb)]
            })),
        )
    }

    pub fn transpose(&mut self, a: ValId) -> ValId {
        let v = self.value(a).transpose();
        self.push(v, Some(Box::new(move |g| vec![(a.0, g.transpose())])))
    }

    /// `a` is B x d, `bias` is 1 x d, added to every row.
    pub fn add_row_broadcast(&mut self, a: ValId, bias: ValId) -> ValId {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(bv.rows, 1);
        assert_eq!(av.cols, bv.cols);
        let mut v = av.clone();
        for r in 0..v.rows {
            for (x, &b) in v.row_mut(r).iter_mut().zip(bv.data.iter()) {
                *x += b;
            }
        }
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut gb = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (acc, &x) in gb.data.iter_mut().zip(g.row(r).iter()) {
                        *acc += x;
                    }
                }
                vec![(a.0, g.clone()), (bias.0, gb)]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: ValId) -> ValId {
        let v = self.value(a).map(sigmoid);
        let out = v.clone();
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.zip(&out, |gi, s| gi * s * (1.0 - s)))]
            })),
        )
    }

    pub fn tanh(&mut self, a: ValId) -> ValId {
        let v = self.value(a).map(f64::tanh);
        let out = v.clone();
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.zip(&out, |gi, t| gi * (1.0 - t * t)))]
            })),
        )
    }

    /// Smooth GELU via the tanh approximation.
    pub fn gelu(&mut self, a: ValId) -> ValId {
        let inp = self.value(a).clone();
        let v = inp.map(gelu);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.zip(&inp, |gi, x| gi * gelu_deriv(x)))]
            })),
        )
    }

    pub fn relu(&mut self, a: ValId) -> ValId {
        let inp = self.value(a).clone();
        let v = inp.map(|x| x.max(0.0));
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.zip(&inp, |gi, x| if x > 0.0 { gi } else { 0.0 }))]
            })),
        )
    }

    pub fn abs(&mut self, a: ValId) -> ValId {
        let inp = self.value(a).clone();
        let v = inp.map(f64::abs);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a.0, g.zip(&inp, |gi, x| gi * sign0(x)))]
            })),
        )
    }

    pub fn mean_all(&mut self, a: ValId) -> ValId {
        let av = self.value(a);
        let n = av.len() as f64;
        let (rows, cols) = (av.rows, av.cols);
        let v = Tensor::scalar(av.sum() / n);
        self.push(
            v,
            Some(Box::new(move |g| {
                let gi = g.data[0] / n;
                vec![(a.0, Tensor::from_vec(rows, cols, vec![gi; rows * cols]))]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[ValId]) -> ValId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols).collect();
        let total: usize = widths.iter().sum();
        let mut v = Tensor::zeros(rows, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows);
            for r in 0..rows {
                v.row_mut(r)[off..off + w].copy_from_slice(pv.row(r));
            }
            off += w;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (&id, &w) in ids.iter().zip(widths.iter()) {
                    let mut gp = Tensor::zeros(g.rows, w);
                    for r in 0..g.rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    out.push((id, gp));
                    off += w;
                }
                out
            })),
        )
    }

    pub fn gather_rows(&mut self, a: ValId, indices: Vec<usize>) -> ValId {
        let av = self.value(a);
        let (arows, cols) = (av.rows, av.cols);
        let mut v = Tensor::zeros(indices.len(), cols);
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut ga = Tensor::zeros(arows, cols);
                for (r, &i) in indices.iter().enumerate() {
                    for (acc, &x) in ga.row_mut(i).iter_mut().zip(g.row(r).iter()) {
                        *acc += x;
                    }
                }
                vec![(a.0, ga)]
            })),
        )
    }

    /// Multiplies each row of `a` by a fixed (non-differentiable) mask value.
    pub fn mask_rows(&mut self, a: ValId, mask: Vec<f64>) -> ValId {
        let av = self.value(a);
        assert_eq!(av.rows, mask.len());
        let mut v = av.clone();
        for (r, &m) in mask.iter().enumerate() {
            for x in v.row_mut(r) {
                *x *= m;
            }
        }
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut ga = g.clone();
                for (r, &m) in mask.iter().enumerate() {
                    for x in ga.row_mut(r) {
                        *x *= m;
                    }
                }
                vec![(a.0, ga)]
            })),
        )
    }

    /// Row-wise l2 normalization; rows with near-zero norm pass through.
    pub fn normalize_rows(&mut self, a: ValId) -> ValId {
        let inp = self.value(a).clone();
        let mut v = inp.clone();
        let mut norms = vec![1.0; inp.rows];
        for r in 0..inp.rows {
            let n = inp.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                norms[r] = n;
                for x in v.row_mut(r) {
                    *x /= n;
                }
            }
        }
        let out = v.clone();
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut ga = Tensor::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let h = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = h.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &hi) in ga.row_mut(r).iter_mut().zip(gr.iter()).zip(h.iter()) {
                        *o = (gi - hi * dot) / norms[r];
                    }
                }
                vec![(a.0, ga)]
            })),
        )
    }

    /// Cross entropy where the target of row i is column i:
    /// mean_i ( logsumexp(row_i) - logits[i][i] ).
    pub fn diag_cross_entropy(&mut self, logits: ValId) -> ValId {
        let lv = self.value(logits).clone();
        assert_eq!(lv.rows, lv.cols, "square logits expected");
        let n = lv.rows;
        let mut total = 0.0;
        let mut soft = Tensor::zeros(n, n);
        for r in 0..n {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|x| (x - m).exp()).sum();
            total += m + denom.ln() - row[r];
            for (c, &x) in row.iter().enumerate() {
                soft.set(r, c, (x - m).exp() / denom);
            }
        }
        let v = Tensor::scalar(total / n as f64);
        self.push(
            v,
            Some(Box::new(move |g| {
                let s = g.data[0] / n as f64;
                let mut gl = soft.scale(s);
                for i in 0..n {
                    let d = gl.get(i, i) - s;
                    gl.set(i, i, d);
                }
                vec![(logits.0, gl)]
            })),
        )
    }

    /// Mean over elements of w_i * huber_delta(r_i), with fixed per-sample
    /// weights. The quadratic branch applies at |r| == delta.
    pub fn weighted_huber_mean(&mut self, residual: ValId, weights: Vec<f64>, delta: f64) -> ValId {
        let rv = self.value(residual).clone();
        assert_eq!(rv.len(), weights.len());
        let n = rv.len() as f64;
        let mut total = 0.0;
        for (&r, &w) in rv.data.iter().zip(weights.iter()) {
            total += w * if r.abs() <= delta {
                0.5 * r * r
            } else {
                delta * r.abs() - 0.5 * delta * delta
            };
        }
        let v = Tensor::scalar(total / n);
        self.push(
            v,
            Some(Box::new(move |g| {
                let s = g.data[0] / n;
                let mut gr = rv.clone();
                for (x, &w) in gr.data.iter_mut().zip(weights.iter()) {
                    let r = *x;
                    *x = s * w * if r.abs() <= delta { r } else { delta * sign0(r) };
                }
                vec![(residual.0, gr)]
            })),
        )
    }

    /// Reverse sweep from a scalar node; returns one gradient per node.
    pub fn backward(&self, root: ValId) -> Vec<Tensor> {
        assert_eq!(self.value(root).len(), 1, "backward expects a scalar root");
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[root.0] = Tensor::scalar(1.0);
        for i in (0..=root.0).rev() {
            if let Some(back) = &self.nodes[i].back {
                if grads[i].data.iter().all(|&x| x == 0.0) {
                    continue;
                }
                for (parent, contrib) in back(&grads[i]) {
                    grads[parent].add_assign(&contrib);
                }
            }
        }
        grads
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_deriv(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Central finite differences on a scalar-valued builder.
    fn fd_grad(f: impl Fn(&Tensor) -> f64, at: &Tensor, step: f64) -> Tensor {
        let mut g = Tensor::zeros(at.rows, at.cols);
        for i in 0..at.len() {
            let mut hi = at.clone();
            hi.data[i] += step;
            let mut lo = at.clone();
            lo.data[i] -= step;
            g.data[i] = (f(&hi) - f(&lo)) / (2.0 * step);
        }
        g
    }

    fn check(build: impl Fn(&mut Tape, ValId) -> ValId, at: Tensor) {
        let analytic = {
            let mut t = Tape::new();
            let x = t.leaf(at.clone());
            let loss = build(&mut t, x);
            t.backward(loss)[0].clone()
        };
        let numeric = fd_grad(
            |v| {
                let mut t = Tape::new();
                let x = t.leaf(v.clone());
                let loss = build(&mut t, x);
                t.scalar_value(loss)
            },
            &at,
            1e-6,
        );
        for (a, n) in analytic.data.iter().zip(numeric.data.iter()) {
            assert_relative_eq!(a, n, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn grad_matmul_chain() {
        let x = Tensor::from_vec(2, 3, vec![0.3, -0.7, 1.1, 0.5, 0.2, -0.4]);
        check(
            |t, x| {
                let w = t.leaf(Tensor::from_vec(3, 2, vec![0.1, 0.4, -0.2, 0.9, 0.3, -0.5]));
                let y = t.matmul(x, w);
                let s = t.sigmoid(y);
                t.mean_all(s)
            },
            x,
        );
    }

    #[test]
    fn grad_gelu_normalize() {
        let x = Tensor::from_vec(2, 3, vec![0.9, -0.3, 0.4, -1.2, 0.8, 0.1]);
        check(
            |t, x| {
                let g = t.gelu(x);
                let n = t.normalize_rows(g);
                t.mean_all(n)
            },
            x,
        );
    }

    #[test]
    fn grad_diag_cross_entropy() {
        let x = Tensor::from_vec(3, 3, vec![0.5, -0.2, 0.1, 0.3, 0.9, -0.4, 0.0, 0.2, 0.7]);
        check(|t, x| t.diag_cross_entropy(x), x);
    }

    #[test]
    fn grad_huber_both_branches() {
        let x = Tensor::from_vec(1, 4, vec![0.3, -0.8, 2.5, -3.1]);
        check(
            |t, x| t.weighted_huber_mean(x, vec![1.0, 1.5, 3.0, 1.0], 1.0),
            x,
        );
    }

    #[test]
    fn grad_gather_concat_mask() {
        let x = Tensor::from_vec(3, 2, vec![0.4, -0.1, 0.2, 0.8, -0.6, 0.3]);
        check(
            |t, x| {
                let g = t.gather_rows(x, vec![2, 0]);
                let m = t.mask_rows(g, vec![1.0, 0.0]);
                let c = t.concat_cols(&[m, g]);
                let r = t.relu(c);
                t.mean_all(r)
            },
            x,
        );
    }

    #[test]
    fn huber_values() {
        let mut t = Tape::new();
        let r = t.leaf(Tensor::from_vec(1, 1, vec![0.5]));
        let l = t.weighted_huber_mean(r, vec![1.0], 1.0);
        assert_relative_eq!(t.scalar_value(l), 0.125);

        let mut t = Tape::new();
        let r = t.leaf(Tensor::from_vec(1, 1, vec![2.0]));
        let l = t.weighted_huber_mean(r, vec![3.0], 1.0);
        assert_relative_eq!(t.scalar_value(l), 4.5);

        let mut t = Tape::new();
        let r = t.leaf(Tensor::from_vec(1, 1, vec![0.0]));
        let l = t.weighted_huber_mean(r, vec![1.0], 1.0);
        assert_relative_eq!(t.scalar_value(l), 0.0);
    }
}
