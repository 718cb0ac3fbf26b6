//! A small reverse-mode tape over dense matrices.
//!
//! Each op records its inputs (and whatever forward intermediates its
//! backward rule needs) on an append-only node list; [`Graph::backward`]
//! walks the list in reverse. Only the ops the reference transformer needs
//! are provided.

use super::tensor::{Mat, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Silu(Var),
    RmsNorm {
        x: Var,
        w: Var,
        inv_rms: Vec<T>,
    },
    Reshape(Var),
    Rope {
        x: Var,
        head_dim: usize,
        seq_len: usize,
        cos: Vec<T>,
        sin: Vec<T>,
    },
    CausalSoftmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    LmLoss(Box<LmLossCache<T>>),
}

#[derive(Debug)]
struct LmLossCache<T> {
    logits: Var,
    targets: Vec<usize>,
    mask: Vec<bool>,
    z_weight: T,
    probs: Mat<T>,
    lse: Vec<T>,
    count: usize,
    parts: LossParts,
}

/// Components of a language-model loss node, averaged over unmasked positions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub z_loss: f64,
    pub positions: usize,
}

#[derive(Debug)]
struct Node<T> {
    value: Mat<T>,
    grad: Option<Mat<T>>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn acc<T: Scalar>(nodes: &mut [Node<T>], v: Var, contribution: Mat<T>) {
    let node = &mut nodes[v.0];
    match &mut node.grad {
        Some(g) => g.add_assign(&contribution),
        None => node.grad = Some(contribution),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if any
    /// path reached it.
    pub fn grad(&self, v: Var) -> Option<&Mat<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn loss_parts(&self, v: Var) -> Option<LossParts> {
        match &self.nodes[v.0].op {
            Op::LmLoss(cache) => Some(cache.parts),
            _ => None,
        }
    }

    fn val(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).matmul(self.val(b));
        self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_b: false,
            },
        )
    }

    /// `a @ b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        let mut value = Mat::zeros(av.rows(), bv.rows());
        Mat::gemm(T::one(), av, false, bv, true, T::zero(), &mut value);
        self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_b: true,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.val(a).shape(),
            self.val(b).shape(),
            "add shape mismatch"
        );
        let mut value = self.val(a).clone();
        value.add_assign(self.val(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Mat::new(av.rows(), av.cols(), data);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.val(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| x * sigmoid(x));
        self.push(value, Op::Silu(a))
    }

    /// Row-wise RMSNorm with a `1 x cols` gain.
    pub fn rmsnorm(&mut self, x: Var, w: Var, eps: f64) -> Var {
        let (xv, wv) = (self.val(x), self.val(w));
        assert_eq!(wv.shape(), (1, xv.cols()), "rmsnorm weight shape");
        let cols = xv.cols();
        let n = T::narrow(cols as f64);
        let eps = T::narrow(eps);
        let mut out = Mat::zeros(xv.rows(), cols);
        let mut inv_rms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let ms = row.iter().map(|&v| v * v).sum::<T>() / n;
            let inv = (ms + eps).sqrt().recip();
            inv_rms.push(inv);
            for ((o, &v), &g) in out.row_mut(r).iter_mut().zip(row).zip(wv.data()) {
                *o = g * v * inv;
            }
        }
        self.push(out, Op::RmsNorm { x, w, inv_rms })
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.val(a).clone().reshaped(rows, cols);
        self.push(value, Op::Reshape(a))
    }

    /// Rotary embedding over `x` laid out as `(batch * seq_len) x (heads * head_dim)`.
    /// Each head's vector is split in halves `(a, b)` rotated pairwise by
    /// `(pos0 + t) * theta^(-2j / head_dim)`.
    pub fn rope(
        &mut self,
        x: Var,
        head_dim: usize,
        seq_len: usize,
        pos0: usize,
        theta: f64,
    ) -> Var {
        let xv = self.val(x);
        assert!(
            head_dim.is_multiple_of(2),
            "rope needs an even head dimension"
        );
        assert_eq!(xv.cols() % head_dim, 0);
        assert_eq!(xv.rows() % seq_len, 0);
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(seq_len * half);
        let mut sin = Vec::with_capacity(seq_len * half);
        for t in 0..seq_len {
            let pos = (pos0 + t) as f64;
            for j in 0..half {
                let freq = theta.powf(-2.0 * j as f64 / head_dim as f64);
                let angle = pos * freq;
                cos.push(T::narrow(angle.cos()));
                sin.push(T::narrow(angle.sin()));
            }
        }
        let mut out = xv.clone();
        rotate(&mut out, head_dim, seq_len, &cos, &sin, false);
        self.push(
            out,
            Op::Rope {
                x,
                head_dim,
                seq_len,
                cos,
                sin,
            },
        )
    }

    /// Row-wise softmax over a square score matrix, with column `j > row`
    /// masked out.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let av = self.val(a);
        assert_eq!(av.rows(), av.cols(), "causal softmax expects square scores");
        let mut out = Mat::zeros(av.rows(), av.cols());
        for t in 0..av.rows() {
            let row = &av.row(t)[..=t];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let o = &mut out.row_mut(t)[..=t];
            let mut sum = T::zero();
            for (o, &v) in o.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in o.iter_mut() {
                *o = *o / sum;
            }
        }
        self.push(out, Op::CausalSoftmax(a))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.val(x);
        assert!(start + len <= xv.cols());
        let mut out = Mat::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.val(x);
        assert!(start + len <= xv.rows());
        let c = xv.cols();
        let out = Mat::new(len, c, xv.data()[start * c..(start + len) * c].to_vec());
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.val(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pv = self.val(p);
                assert_eq!(pv.rows(), rows);
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.val(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.val(p);
            assert_eq!(pv.cols(), cols);
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(Mat::new(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.val(table);
        let mut out = Mat::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean next-token cross-entropy plus `z_weight * log^2 Z`, over rows
    /// where `mask` is true. A fully masked input has loss 0 and no gradient.
    pub fn lm_loss(&mut self, logits: Var, targets: &[usize], mask: &[bool], z_weight: f64) -> Var {
        let lv = self.val(logits);
        assert_eq!(lv.rows(), targets.len());
        assert_eq!(lv.rows(), mask.len());
        let z_weight = T::narrow(z_weight);
        let mut probs = Mat::zeros(lv.rows(), lv.cols());
        let mut lse = vec![T::zero(); lv.rows()];
        let (mut ce_sum, mut z_sum, mut count) = (T::zero(), T::zero(), 0usize);
        for r in 0..lv.rows() {
            if !mask[r] {
                continue;
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = probs.row_mut(r);
            let mut sum = T::zero();
            for (p, &v) in p.iter_mut().zip(row) {
                *p = (v - max).exp();
                sum += *p;
            }
            for p in p.iter_mut() {
                *p = *p / sum;
            }
            let l = max + sum.ln();
            lse[r] = l;
            ce_sum += l - row[targets[r]];
            z_sum += l * l;
            count += 1;
        }
        let (value, parts) = if count == 0 {
            (T::zero(), LossParts::default())
        } else {
            let n = T::narrow(count as f64);
            let ce = ce_sum / n;
            let z = z_weight * z_sum / n;
            (
                ce + z,
                LossParts {
                    cross_entropy: ce.widen(),
                    z_loss: z.widen(),
                    positions: count,
                },
            )
        };
        let cache = LmLossCache {
            logits,
            targets: targets.to_vec(),
            mask: mask.to_vec(),
            z_weight,
            probs,
            lse,
            count,
            parts,
        };
        self.push(Mat::row_vector(vec![value]), Op::LmLoss(Box::new(cache)))
    }

    /// Accumulate d(root)/d(node) for every node reachable from `root`,
    /// which must be `1 x 1`. Gradients from a previous call are discarded.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.val(root).shape(),
            (1, 1),
            "backward root must be a scalar"
        );
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(Mat::filled(1, 1, T::one()));
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let Some(g) = node.grad.take() else { continue };
            backprop(before, &node.op, &node.value, &g);
            node.grad = Some(g);
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

fn rotate<T: Scalar>(
    m: &mut Mat<T>,
    head_dim: usize,
    seq_len: usize,
    cos: &[T],
    sin: &[T],
    inverse: bool,
) {
    let half = head_dim / 2;
    let heads = m.cols() / head_dim;
    for r in 0..m.rows() {
        let t = r % seq_len;
        let (c, s) = (
            &cos[t * half..(t + 1) * half],
            &sin[t * half..(t + 1) * half],
        );
        let row = m.row_mut(r);
        for h in 0..heads {
            let base = h * head_dim;
            for j in 0..half {
                let (a, b) = (row[base + j], row[base + j + half]);
                let s = if inverse { -s[j] } else { s[j] };
                row[base + j] = a * c[j] - b * s;
                row[base + j + half] = a * s + b * c[j];
            }
        }
    }
}

fn backprop<T: Scalar>(nodes: &mut [Node<T>], op: &Op<T>, out: &Mat<T>, g: &Mat<T>) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let mut da = Mat::zeros(av.rows(), av.cols());
            let mut db = Mat::zeros(bv.rows(), bv.cols());
            if *trans_b {
                // C = A B^T: dA = G B, dB = G^T A
                Mat::gemm(T::one(), g, false, bv, false, T::zero(), &mut da);
                Mat::gemm(T::one(), g, true, av, false, T::zero(), &mut db);
            } else {
                Mat::gemm(T::one(), g, false, bv, true, T::zero(), &mut da);
                Mat::gemm(T::one(), av, true, g, false, T::zero(), &mut db);
            }
            acc(nodes, *a, da);
            acc(nodes, *b, db);
        }
        Op::Add(a, b) => {
            acc(nodes, *a, g.clone());
            acc(nodes, *b, g.clone());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let da = Mat::new(
                g.rows(),
                g.cols(),
                g.data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&g, &y)| g * y)
                    .collect(),
            );
            let db = Mat::new(
                g.rows(),
                g.cols(),
                g.data()
                    .iter()
                    .zip(av.data())
                    .map(|(&g, &x)| g * x)
                    .collect(),
            );
            acc(nodes, *a, da);
            acc(nodes, *b, db);
        }
        Op::Scale(a, factor) => acc(nodes, *a, g.map(|x| x * *factor)),
        Op::Silu(a) => {
            let xv = &nodes[a.0].value;
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .map(|(&g, &x)| {
                    let s = sigmoid(x);
                    g * s * (T::one() + x * (T::one() - s))
                })
                .collect();
            acc(nodes, *a, Mat::new(g.rows(), g.cols(), data));
        }
        Op::RmsNorm { x, w, inv_rms } => {
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            let cols = xv.cols();
            let n = T::narrow(cols as f64);
            let mut dx = Mat::zeros(xv.rows(), cols);
            let mut dw = Mat::zeros(1, cols);
            for (r, &inv) in inv_rms.iter().enumerate() {
                let (xr, gr) = (xv.row(r), g.row(r));
                let mut dot = T::zero();
                for j in 0..cols {
                    dot += gr[j] * wv.data()[j] * xr[j];
                    dw.data_mut()[j] += gr[j] * xr[j] * inv;
                }
                let coef = inv * inv * inv * dot / n;
                for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                    *d = inv * gr[j] * wv.data()[j] - xr[j] * coef;
                }
            }
            acc(nodes, *x, dx);
            acc(nodes, *w, dw);
        }
        Op::Reshape(a) => {
            let (r, c) = nodes[a.0].value.shape();
            acc(nodes, *a, g.clone().reshaped(r, c));
        }
        Op::Rope {
            x,
            head_dim,
            seq_len,
            cos,
            sin,
        } => {
            let mut dx = g.clone();
            rotate(&mut dx, *head_dim, *seq_len, cos, sin, true);
            acc(nodes, *x, dx);
        }
        Op::CausalSoftmax(a) => {
            let mut dx = Mat::zeros(out.rows(), out.cols());
            for t in 0..out.rows() {
                let (y, gr) = (&out.row(t)[..=t], &g.row(t)[..=t]);
                let dot: T = y.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                for (d, (&y, &g)) in dx.row_mut(t)[..=t].iter_mut().zip(y.iter().zip(gr)) {
                    *d = y * (g - dot);
                }
            }
            acc(nodes, *a, dx);
        }
        Op::SliceCols { x, start } => {
            let (rows, cols) = nodes[x.0].value.shape();
            let mut dx = Mat::zeros(rows, cols);
            for r in 0..rows {
                dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
            }
            acc(nodes, *x, dx);
        }
        Op::SliceRows { x, start } => {
            let (rows, cols) = nodes[x.0].value.shape();
            let mut dx = Mat::zeros(rows, cols);
            dx.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
            acc(nodes, *x, dx);
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (rows, cols) = nodes[p.0].value.shape();
                let mut dp = Mat::zeros(rows, cols);
                for r in 0..rows {
                    dp.row_mut(r)
                        .copy_from_slice(&g.row(r)[offset..offset + cols]);
                }
                offset += cols;
                acc(nodes, p, dp);
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (rows, cols) = nodes[p.0].value.shape();
                let dp = Mat::new(
                    rows,
                    cols,
                    g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                );
                offset += rows;
                acc(nodes, p, dp);
            }
        }
        Op::Gather { table, ids } => {
            let (rows, cols) = nodes[table.0].value.shape();
            let mut dt = Mat::zeros(rows, cols);
            for (r, &id) in ids.iter().enumerate() {
                for (d, &gv) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                    *d += gv;
                }
            }
            acc(nodes, *table, dt);
        }
        Op::LmLoss(cache) => {
            let (rows, cols) = cache.probs.shape();
            let mut dl = Mat::zeros(rows, cols);
            if cache.count > 0 {
                let scale = g.data()[0] / T::narrow(cache.count as f64);
                let two = T::narrow(2.0);
                for r in 0..rows {
                    if !cache.mask[r] {
                        continue;
                    }
                    let factor = T::one() + two * cache.z_weight * cache.lse[r];
                    let d = dl.row_mut(r);
                    for (d, &p) in d.iter_mut().zip(cache.probs.row(r)) {
                        *d = scale * p * factor;
                    }
                    d[cache.targets[r]] -= scale;
                }
            }
            acc(nodes, cache.logits, dl);
        }
    }
}
