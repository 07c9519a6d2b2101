//! Minimal reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A fresh tape is built per forward pass; `backward` walks it once in
//! reverse and returns gradients keyed by parameter id.

use super::tensor::{matmul, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRowBroadcast { x: Var, row: Var },
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, gain: Var, bias: Var },
    Gather { table: Var, indices: Vec<usize> },
    SliceCols { x: Var, start: usize },
    StackRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropyMean { logits: Var, targets: Vec<usize>, mask: Vec<bool> },
    BceWithLogitsMean { logits: Var, labels: Vec<f64> },
    MseMean { pred: Var, target: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    /// Parameter id when this node mirrors a trainable tensor.
    param: Option<usize>,
}

pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, t: Tensor, id: usize) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let v = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value, ta, tb);
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Add(a, b))
    }

    /// x: m x n, row: 1 x n, added to every row.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        assert_eq!(rv.rows, 1);
        assert_eq!(xv.cols, rv.cols);
        let mut out = xv.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                *out.at_mut(r, c) += rv.data[c];
            }
        }
        self.push(out, Op::AddRowBroadcast { x, row })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * s).collect());
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p.tanh()).collect());
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Tensor::from_vec(
            x.rows,
            x.cols,
            x.data.iter().map(|p| 1.0 / (1.0 + (-p).exp())).collect(),
        );
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p.max(0.0)).collect());
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..x.cols {
                let e = (row[c] - max).exp();
                *out.at_mut(r, c) = e;
                sum += e;
            }
            for c in 0..x.cols {
                *out.at_mut(r, c) /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with learned gain/bias (each 1 x n).
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let n = xv.cols;
        let mut out = Tensor::zeros(xv.rows, n);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            let s = (var + LN_EPS).sqrt();
            for c in 0..n {
                *out.at_mut(r, c) = (row[c] - mu) / s * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNormRows { x, gain, bias })
    }

    /// Gather rows of `table` by index; output is indices.len() x table.cols.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let mut out = Tensor::zeros(indices.len(), t.cols);
        for (r, &idx) in indices.iter().enumerate() {
            out.data[r * t.cols..(r + 1) * t.cols].copy_from_slice(t.row(idx));
        }
        self.push(
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut out = Tensor::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    /// Stack 1 x n rows into an m x n matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let n = self.nodes[rows[0].0].value.cols;
        let mut out = Tensor::zeros(rows.len(), n);
        for (r, v) in rows.iter().enumerate() {
            let row = &self.nodes[v.0].value;
            assert_eq!(row.rows, 1);
            out.data[r * n..(r + 1) * n].copy_from_slice(&row.data);
        }
        self.push(out, Op::StackRows(rows.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0].0].value.rows;
        let total: usize = parts.iter().map(|v| self.nodes[v.0].value.cols).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for v in parts {
            let t = &self.nodes[v.0].value;
            assert_eq!(t.rows, rows);
            for r in 0..rows {
                out.data[r * total + offset..r * total + offset + t.cols]
                    .copy_from_slice(t.row(r));
            }
            offset += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean over masked rows of -log softmax(logits)[target].
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let x = &self.nodes[logits.0].value;
        assert_eq!(x.rows, targets.len());
        assert_eq!(x.rows, mask.len());
        let mut total = 0.0;
        let mut count = 0usize;
        for r in 0..x.rows {
            if !mask[r] {
                continue;
            }
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
        )
    }

    /// Mean binary cross-entropy of sigmoid(logits) against labels in {0,1}.
    pub fn bce_with_logits_mean(&mut self, logits: Var, labels: &[f64]) -> Var {
        let x = &self.nodes[logits.0].value;
        assert_eq!(x.len(), labels.len());
        let mut total = 0.0;
        for (z, y) in x.data.iter().zip(labels) {
            // log(1 + e^z) - y*z, computed stably
            let softplus = if *z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            total += softplus - y * z;
        }
        let loss = total / labels.len() as f64;
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::BceWithLogitsMean {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse_mean(&mut self, pred: Var, target: &Tensor) -> Var {
        let x = &self.nodes[pred.0].value;
        assert_eq!(x.len(), target.len());
        let total: f64 = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(p, t)| (p - t).powi(2))
            .sum();
        let loss = total / x.len() as f64;
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::MseMean {
                pred,
                target: target.clone(),
            },
        )
    }

    /// Backpropagate from a scalar loss. Returns gradients keyed by
    /// parameter id; parameters not touched by this tape come back zeroed.
    pub fn backward(&self, loss: Var, param_shapes: &[(usize, usize)]) -> Vec<Tensor> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out: Vec<Tensor> = param_shapes
            .iter()
            .map(|&(r, c)| Tensor::zeros(r, c))
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                if let Some(g) = &grads[i] {
                    for (dst, src) in out[pid].data.iter_mut().zip(&g.data) {
                        *dst += src;
                    }
                }
            }
        }
        out
    }

    fn accum(grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
        match &mut grads[target.0] {
            Some(g) => {
                for (d, s) in g.data.iter_mut().zip(&delta.data) {
                    *d += s;
                }
            }
            None => grads[target.0] = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (da, db) = match (ta, tb) {
                    (false, false) => (matmul(g, bv, false, true), matmul(av, g, true, false)),
                    (false, true) => (matmul(g, bv, false, false), matmul(g, av, true, false)),
                    (true, false) => (matmul(bv, g, false, true), matmul(av, g, false, false)),
                    (true, true) => (matmul(bv, g, true, true), matmul(g, av, true, true)),
                };
                Self::accum(grads, *a, da);
                Self::accum(grads, *b, db);
            }
            Op::Add(a, b) => {
                Self::accum(grads, *a, g.clone());
                Self::accum(grads, *b, g.clone());
            }
            Op::AddRowBroadcast { x, row } => {
                Self::accum(grads, *x, g.clone());
                let mut dr = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        dr.data[c] += g.at(r, c);
                    }
                }
                Self::accum(grads, *row, dr);
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&bv.data).map(|(p, q)| p * q).collect(),
                );
                let db = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&av.data).map(|(p, q)| p * q).collect(),
                );
                Self::accum(grads, *a, da);
                Self::accum(grads, *b, db);
            }
            Op::Scale(a, s) => {
                let da =
                    Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|p| p * s).collect());
                Self::accum(grads, *a, da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&y.data)
                        .map(|(p, t)| p * (1.0 - t * t))
                        .collect(),
                );
                Self::accum(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&y.data)
                        .map(|(p, s)| p * s * (1.0 - s))
                        .collect(),
                );
                Self::accum(grads, *a, da);
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&x.data)
                        .map(|(p, v)| if *v > 0.0 { *p } else { 0.0 })
                        .collect(),
                );
                Self::accum(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut da = Tensor::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let dot: f64 = (0..g.cols).map(|c| g.at(r, c) * y.at(r, c)).sum();
                    for c in 0..g.cols {
                        *da.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                    }
                }
                Self::accum(grads, *a, da);
            }
            Op::LayerNormRows { x, gain, bias } => {
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gain.0].value;
                let n = xv.cols;
                let mut dx = Tensor::zeros(xv.rows, n);
                let mut dgain = Tensor::zeros(1, n);
                let mut dbias = Tensor::zeros(1, n);
                for r in 0..xv.rows {
                    let row = xv.row(r);
                    let mu = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
                    let s = (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mu) / s).collect();
                    let dyg: Vec<f64> = (0..n).map(|c| g.at(r, c) * gv.data[c]).collect();
                    let mean_dyg = dyg.iter().sum::<f64>() / n as f64;
                    let mean_dyg_xhat =
                        dyg.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for c in 0..n {
                        *dx.at_mut(r, c) =
                            (dyg[c] - mean_dyg - xhat[c] * mean_dyg_xhat) / s;
                        dgain.data[c] += g.at(r, c) * xhat[c];
                        dbias.data[c] += g.at(r, c);
                    }
                }
                Self::accum(grads, *x, dx);
                Self::accum(grads, *gain, dgain);
                Self::accum(grads, *bias, dbias);
            }
            Op::Gather { table, indices } => {
                let t = &self.nodes[table.0].value;
                let mut dt = Tensor::zeros(t.rows, t.cols);
                for (r, &idx) in indices.iter().enumerate() {
                    for c in 0..t.cols {
                        *dt.at_mut(idx, c) += g.at(r, c);
                    }
                }
                Self::accum(grads, *table, dt);
            }
            Op::SliceCols { x, start } => {
                let xv = &self.nodes[x.0].value;
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        *dx.at_mut(r, start + c) = g.at(r, c);
                    }
                }
                Self::accum(grads, *x, dx);
            }
            Op::StackRows(rows) => {
                for (r, v) in rows.iter().enumerate() {
                    let mut dr = Tensor::zeros(1, g.cols);
                    dr.data.copy_from_slice(g.row(r));
                    Self::accum(grads, *v, dr);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for v in parts {
                    let cols = self.nodes[v.0].value.cols;
                    let mut dp = Tensor::zeros(g.rows, cols);
                    for r in 0..g.rows {
                        dp.data[r * cols..(r + 1) * cols]
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    Self::accum(grads, *v, dp);
                    offset += cols;
                }
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                mask,
            } => {
                let x = &self.nodes[logits.0].value;
                let count = mask.iter().filter(|m| **m).count();
                let mut dl = Tensor::zeros(x.rows, x.cols);
                if count > 0 {
                    let scale = g.data[0] / count as f64;
                    for r in 0..x.rows {
                        if !mask[r] {
                            continue;
                        }
                        let row = x.row(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for c in 0..x.cols {
                            let p = (row[c] - max).exp() / sum;
                            let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                            *dl.at_mut(r, c) = scale * (p - onehot);
                        }
                    }
                }
                Self::accum(grads, *logits, dl);
            }
            Op::BceWithLogitsMean { logits, labels } => {
                let x = &self.nodes[logits.0].value;
                let scale = g.data[0] / labels.len() as f64;
                let dl = Tensor::from_vec(
                    x.rows,
                    x.cols,
                    x.data
                        .iter()
                        .zip(labels)
                        .map(|(z, y)| scale * (1.0 / (1.0 + (-z).exp()) - y))
                        .collect(),
                );
                Self::accum(grads, *logits, dl);
            }
            Op::MseMean { pred, target } => {
                let x = &self.nodes[pred.0].value;
                let scale = 2.0 * g.data[0] / x.len() as f64;
                let dp = Tensor::from_vec(
                    x.rows,
                    x.cols,
                    x.data
                        .iter()
                        .zip(&target.data)
                        .map(|(p, t)| scale * (p - t))
                        .collect(),
                );
                Self::accum(grads, *pred, dp);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences on every element of every parameter.
    fn finite_diff_check<F>(params: Vec<Tensor>, f: F, tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let shapes: Vec<(usize, usize)> = params.iter().map(|t| (t.rows, t.cols)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(t.clone(), i))
            .collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss, &shapes);

        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            for ei in 0..p.len() {
                let eval = |delta: f64| {
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = params
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let mut t = t.clone();
                            if i == pi {
                                t.data[ei] += delta;
                            }
                            tape.param(t, i)
                        })
                        .collect();
                    let loss = f(&mut tape, &vars);
                    tape.scalar(loss)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grads[pi].data[ei];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < tol,
                    "param {pi} elem {ei}: numeric {numeric} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn gradcheck_matmul_softmax_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::uniform(3, 4, 0.5, &mut rng);
        let x = Tensor::uniform(2, 3, 0.5, &mut rng);
        finite_diff_check(vec![w, x], |tape, vars| {
            let logits = tape.matmul(vars[1], vars[0]);
            tape.cross_entropy_mean(logits, &[1, 3], &[true, true])
        }, 1e-6);
    }

    #[test]
    fn gradcheck_lstm_style_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wx = Tensor::uniform(3, 8, 0.5, &mut rng);
        let wh = Tensor::uniform(2, 8, 0.5, &mut rng);
        let b = Tensor::uniform(1, 8, 0.5, &mut rng);
        let x = Tensor::uniform(1, 3, 0.5, &mut rng);
        let h0 = Tensor::uniform(1, 2, 0.5, &mut rng);
        finite_diff_check(vec![wx, wh, b, x, h0], |tape, v| {
            let a = tape.matmul(v[3], v[0]);
            let bmat = tape.matmul(v[4], v[1]);
            let s = tape.add(a, bmat);
            let s = tape.add_row_broadcast(s, v[2]);
            let i = tape.slice_cols(s, 0, 2);
            let f = tape.slice_cols(s, 2, 2);
            let o = tape.slice_cols(s, 4, 2);
            let gt = tape.slice_cols(s, 6, 2);
            let i = tape.sigmoid(i);
            let f = tape.sigmoid(f);
            let o = tape.sigmoid(o);
            let gt = tape.tanh(gt);
            let c = tape.mul(i, gt);
            let fc = tape.mul(f, c);
            let c = tape.add(c, fc);
            let ct = tape.tanh(c);
            let h = tape.mul(o, ct);
            let target = Tensor::from_vec(1, 2, vec![0.3, -0.2]);
            tape.mse_mean(h, &target)
        }, 1e-6);
    }

    #[test]
    fn gradcheck_layernorm_attention_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(3, 4, 0.8, &mut rng);
        let wq = Tensor::uniform(4, 4, 0.5, &mut rng);
        let wk = Tensor::uniform(4, 4, 0.5, &mut rng);
        let wv = Tensor::uniform(4, 4, 0.5, &mut rng);
        let gain = Tensor::from_vec(1, 4, vec![1.0, 0.9, 1.1, 1.0]);
        let bias = Tensor::from_vec(1, 4, vec![0.0, 0.1, -0.1, 0.0]);
        finite_diff_check(vec![x, wq, wk, wv, gain, bias], |tape, v| {
            let xn = tape.layer_norm_rows(v[0], v[4], v[5]);
            let q = tape.matmul(xn, v[1]);
            let k = tape.matmul(xn, v[2]);
            let val = tape.matmul(xn, v[3]);
            let scores = tape.matmul_t(q, k, false, true);
            let scores = tape.scale(scores, 0.5);
            // causal mask as a constant
            let mut mask = Tensor::zeros(3, 3);
            for r in 0..3 {
                for c in (r + 1)..3 {
                    *mask.at_mut(r, c) = -1e30;
                }
            }
            let mask = tape.constant(mask);
            let scores = tape.add(scores, mask);
            let attn = tape.softmax_rows(scores);
            let out = tape.matmul(attn, val);
            tape.cross_entropy_mean(out, &[0, 2, 1], &[true, true, true])
        }, 1e-5);
    }

    #[test]
    fn gradcheck_gather_and_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = Tensor::uniform(5, 3, 0.5, &mut rng);
        let w = Tensor::uniform(6, 2, 0.5, &mut rng);
        finite_diff_check(vec![table, w], |tape, v| {
            let e1 = tape.gather(v[0], &[0, 2, 2]);
            let e2 = tape.gather(v[0], &[4, 1, 0]);
            let x = tape.concat_cols(&[e1, e2]);
            let logits = tape.matmul(x, v[1]);
            tape.bce_with_logits_mean(logits, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
        }, 1e-6);
    }

    #[test]
    fn zero_gradient_at_stationary_point() {
        // Uniform logits with uniform target mix: CE gradient vanishes when
        // prediction equals the (one-hot) target distribution exactly.
        let logits = Tensor::from_vec(1, 3, vec![50.0, -50.0, -50.0]);
        let mut tape = Tape::new();
        let v = tape.param(logits, 0);
        let loss = tape.cross_entropy_mean(v, &[0], &[true]);
        let grads = tape.backward(loss, &[(1, 3)]);
        let norm: f64 = grads[0].data.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "gradient norm {norm}");
    }
}
