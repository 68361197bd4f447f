use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::{sgemm, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const NORM_EPS: f32 = 1e-5;

enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: usize,
    },
    ConvTranspose2x2 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    ConcatChannels(Var, Var),
    BceWithLogits {
        logits: Var,
        target: Vec<f32>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        ignore: u32,
        probs: Vec<f32>,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

/// A recording of one forward pass. Build it, read values, then call
/// [`Graph::backward`] on a scalar loss to obtain parameter gradients.
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(id, t)| (*id, t))
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records operations for backpropagation.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            record: true,
            buffer_updates: Vec::new(),
        }
    }

    /// A graph that only evaluates values.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    /// Buffer values computed during the forward pass (batch-norm running
    /// statistics); apply them to the store after the optimizer step.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let grad = self.record && inputs.iter().any(|v| self.nodes[v.0].grad);
        let op = if grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let grad = self.record && store.is_trainable(id);
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: if grad { Op::Param(id) } else { Op::Leaf },
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x · w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (rows, din) = self.value(x).rows_cols();
        let wshape = self.shape(w).to_vec();
        assert_eq!(wshape.len(), 2);
        assert_eq!(wshape[0], din, "linear input width mismatch");
        let dout = wshape[1];
        let mut out = vec![0.0; rows * dout];
        sgemm(
            rows,
            din,
            dout,
            self.value(x).data(),
            (din, 1),
            self.value(w).data(),
            (dout, 1),
            &mut out,
            (dout, 1),
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), dout);
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Tensor::new(&shape, out), Op::Linear { x, w, b }, &inputs)
    }

    /// Batched product of 3-D tensors, optionally transposing either operand.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (batch, m, k, n, sa, sb) = self.bmm_geometry(a, b, ta, tb);
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            sgemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                sa,
                &bv[i * k * n..(i + 1) * k * n],
                sb,
                &mut out[i * m * n..(i + 1) * m * n],
                (n, 1),
                false,
            );
        }
        self.push(
            Tensor::new(&[batch, m, n], out),
            Op::BatchMatMul { a, b, ta, tb },
            &[a, b],
        )
    }

    #[allow(clippy::type_complexity)]
    fn bmm_geometry(
        &self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    ) -> (usize, usize, usize, usize, (usize, usize), (usize, usize)) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm shapes {sa:?} {sb:?}");
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        assert_eq!(k, k2, "bmm inner dimension mismatch {sa:?} {sb:?}");
        let a_strides = if ta { (1, m) } else { (k, 1) };
        let b_strides = if tb { (1, k) } else { (n, 1) };
        (sa[0], m, k, n, a_strides, b_strides)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, data), Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * s).collect());
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v.max(0.0)).collect());
        self.push(out, Op::Relu(a), &[a])
    }

    /// Elementwise logistic function; inference only.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::new(
            t.shape(),
            t.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        );
        self.input(out)
    }

    /// Softmax over the last axis of `scores` (`[B*heads, T, S]`).
    ///
    /// Key position `s` of query row `t` in batch `b` receives zero weight
    /// when `key_pad[b*S + s]` is set or, with `causal`, when `s > t`.
    pub fn masked_softmax(
        &mut self,
        scores: Var,
        key_pad: Option<&[bool]>,
        causal: bool,
        heads: usize,
    ) -> Var {
        let shape = self.shape(scores).to_vec();
        assert_eq!(shape.len(), 3);
        let (bh, t, s) = (shape[0], shape[1], shape[2]);
        if let Some(pad) = key_pad {
            assert_eq!(pad.len(), bh / heads * s);
        }
        let mut out = self.value(scores).data().to_vec();
        for i in 0..bh {
            let b = i / heads;
            for q in 0..t {
                let row = &mut out[(i * t + q) * s..(i * t + q + 1) * s];
                for (k, v) in row.iter_mut().enumerate() {
                    let padded = key_pad.is_some_and(|p| p[b * s + k]);
                    if padded || (causal && k > q) {
                        *v = f32::NEG_INFINITY;
                    }
                }
                kernels::softmax_in_place(row);
            }
        }
        self.push(Tensor::new(&shape, out), Op::Softmax(scores), &[scores])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (rows, dim) = self.value(x).rows_cols();
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * dim];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * dim];
        for r in 0..rows {
            let row = &xs[r * dim..(r + 1) * dim];
            let mean = row.iter().sum::<f32>() / dim as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / dim as f32;
            let rs = 1.0 / (var + NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..dim {
                let h = (row[j] - mean) * rs;
                xhat[r * dim + j] = h;
                out[r * dim + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(&shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Row lookup into `table` (`[V, D]`); output shape `out_shape + [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32], out_shape: &[usize]) -> Var {
        let t = self.value(table);
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            let id = id as usize;
            assert!(id < vocab, "token id {id} out of range for table of {vocab}");
            out.extend_from_slice(&t.data()[id * dim..(id + 1) * dim]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(dim);
        self.push(
            Tensor::new(&shape, out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape);
        self.push(out, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let (shape, data) = kernels::permute(self.value(x).data(), self.shape(x), perm);
        self.push(
            Tensor::new(&shape, data),
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        )
    }

    /// Inverted dropout. A no-op when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f32, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f32> = (0..t.numel())
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
            .collect();
        let out = Tensor::new(
            t.shape(),
            t.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Stride-1 convolution with a square `[O, C, k, k]` kernel and symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let (o, c2, k, k2) = self.value(w).dims4();
        assert!(c == c2 && k == k2, "conv2d kernel {:?} vs input channels {c}", self.shape(w));
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            ksize: k,
            pad,
        };
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let (krows, hw) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; krows * hw];
        let mut out = vec![0.0; n * o * hw];
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        for i in 0..n {
            kernels::im2col(&geom, &xs[i * c * h * wd..(i + 1) * c * h * wd], &mut cols);
            sgemm(
                o,
                krows,
                hw,
                ws,
                (krows, 1),
                &cols,
                (hw, 1),
                &mut out[i * o * hw..(i + 1) * o * hw],
                (hw, 1),
                false,
            );
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), hw);
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            Tensor::new(&[n, o, oh, ow], out),
            Op::Conv2d { x, w, b, pad },
            &inputs,
        )
    }

    /// Kernel-2, stride-2 transposed convolution; `w` is `[C, O, 2, 2]`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let (c2, o, k, _) = self.value(w).dims4();
        assert!(c == c2 && k == 2, "transposed conv kernel mismatch");
        let hw = h * wd;
        let mut tmp = vec![0.0; o * 4 * hw];
        let mut out = vec![0.0; n * o * 4 * hw];
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        for i in 0..n {
            // tmp[(o,ky,kx), (y,x)] = sum_c w[c,(o,ky,kx)] x[c,(y,x)]
            sgemm(
                o * 4,
                c,
                hw,
                ws,
                (1, o * 4),
                &xs[i * c * hw..(i + 1) * c * hw],
                (hw, 1),
                &mut tmp,
                (hw, 1),
                false,
            );
            scatter_up2(&tmp, &mut out[i * o * 4 * hw..(i + 1) * o * 4 * hw], o, h, wd);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), 4 * hw);
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            Tensor::new(&[n, o, 2 * h, 2 * wd], out),
            Op::ConvTranspose2x2 { x, w, b },
            &inputs,
        )
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best as u32);
                }
            }
        }
        self.push(
            Tensor::new(&[n, c, oh, ow], out),
            Op::MaxPool2 { x, argmax },
            &[x],
        )
    }

    /// Batch normalization over `(N, H, W)` using the batch's own statistics.
    /// New running statistics (momentum 0.1, unbiased variance) are queued
    /// as buffer updates.
    pub fn batch_norm_train(
        &mut self,
        store: &ParamStore,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running: (ParamId, ParamId),
    ) -> Var {
        const MOMENTUM: f32 = 0.1;
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let count = (n * hw) as f32;
        let xs = self.value(x).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; c];
        let mut means = vec![0.0; c];
        let mut vars = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for i in 0..n {
                sum += xs[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            let mean = (sum / count as f64) as f32;
            let mut sq = 0.0f64;
            for i in 0..n {
                sq += xs[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                    .iter()
                    .map(|&v| ((v - mean) as f64).powi(2))
                    .sum::<f64>();
            }
            let var = (sq / count as f64) as f32;
            means[ch] = mean;
            vars[ch] = var;
            rstd[ch] = 1.0 / (var + NORM_EPS).sqrt();
        }
        let (g, b) = (store.get(gamma).data(), store.get(beta).data());
        let mut out = vec![0.0; xs.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    let v = (xs[j] - means[ch]) * rstd[ch];
                    xhat[j] = v;
                    out[j] = g[ch] * v + b[ch];
                }
            }
        }
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let rm: Vec<f32> = store
            .get(running.0)
            .data()
            .iter()
            .zip(&means)
            .map(|(r, m)| (1.0 - MOMENTUM) * r + MOMENTUM * m)
            .collect();
        let rv: Vec<f32> = store
            .get(running.1)
            .data()
            .iter()
            .zip(&vars)
            .map(|(r, v)| (1.0 - MOMENTUM) * r + MOMENTUM * v * unbias)
            .collect();
        self.buffer_updates.push((running.0, Tensor::new(&[c], rm)));
        self.buffer_updates.push((running.1, Tensor::new(&[c], rv)));
        let gv = self.param(store, gamma);
        let bv = self.param(store, beta);
        self.push(
            Tensor::new(&[n, c, h, w], out),
            Op::BatchNorm {
                x,
                gamma: gv,
                beta: bv,
                xhat,
                rstd,
            },
            &[x, gv, bv],
        )
    }

    /// Batch normalization with frozen running statistics (inference only).
    pub fn batch_norm_eval(
        &mut self,
        store: &ParamStore,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running: (ParamId, ParamId),
    ) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let (g, b) = (store.get(gamma).data(), store.get(beta).data());
        let (rm, rv) = (store.get(running.0).data(), store.get(running.1).data());
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let scale = g[ch] / (rv[ch] + NORM_EPS).sqrt();
                let shift = b[ch] - rm[ch] * scale;
                out[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale + shift);
            }
        }
        self.input(Tensor::new(&[n, c, h, w], out))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = self.value(a).dims4();
        let (n2, cb, h2, w2) = self.value(b).dims4();
        assert!(n == n2 && h == h2 && w == w2, "concat spatial mismatch");
        let hw = h * w;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&av[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&bv[i * cb * hw..(i + 1) * cb * hw]);
        }
        self.push(
            Tensor::new(&[n, ca + cb, h, w], out),
            Op::ConcatChannels(a, b),
            &[a, b],
        )
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `target` in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[f32]) -> Var {
        let z = self.value(logits).data();
        assert_eq!(z.len(), target.len());
        let total: f64 = z
            .iter()
            .zip(target)
            .map(|(&z, &t)| (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()) as f64)
            .sum();
        let loss = (total / z.len().max(1) as f64) as f32;
        self.push(
            Tensor::new(&[], vec![loss]),
            Op::BceWithLogits {
                logits,
                target: target.to_vec(),
            },
            &[logits],
        )
    }

    /// Mean cross-entropy over rows of `logits` (`[..., V]`) whose target is
    /// not `ignore`. Zero when every row is ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: u32) -> Var {
        let (rows, vocab) = self.value(logits).rows_cols();
        assert_eq!(rows, targets.len());
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0f64;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &mut probs[r * vocab..(r + 1) * vocab];
            if t == ignore {
                row.fill(0.0);
                continue;
            }
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
            total += (lse - row[t as usize]) as f64;
            count += 1;
            kernels::softmax_in_place(row);
        }
        let loss = if count == 0 {
            0.0
        } else {
            (total / count as f64) as f32
        };
        self.push(
            Tensor::new(&[], vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Backpropagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &dy, &mut grads);
            if let Op::Param(id) = node.op {
                out.grads
                    .push((id, Tensor::new(node.value.shape(), dy)));
            }
        }
        out
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn backprop_node(&self, node: &Node, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (rows, din) = self.value(*x).rows_cols();
                let dout = self.shape(*w)[1];
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, rows * din);
                    sgemm(rows, dout, din, dy, (dout, 1), self.value(*w).data(), (1, dout), gx, (din, 1), true);
                }
                if self.needs(*w) {
                    let gw = grad_buf(grads, *w, din * dout);
                    sgemm(din, rows, dout, self.value(*x).data(), (1, din), dy, (dout, 1), gw, (dout, 1), true);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let gb = grad_buf(grads, *b, dout);
                        for row in dy.chunks(dout) {
                            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                        }
                    }
                }
            }
            Op::BatchMatMul { a, b, ta, tb } => {
                let (batch, m, k, n, sa, sb) = self.bmm_geometry(*a, *b, *ta, *tb);
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let ga = grad_buf(grads, *a, batch * m * k);
                    for i in 0..batch {
                        sgemm(
                            m,
                            n,
                            k,
                            &dy[i * m * n..(i + 1) * m * n],
                            (n, 1),
                            &bv[i * k * n..(i + 1) * k * n],
                            (sb.1, sb.0),
                            &mut ga[i * m * k..(i + 1) * m * k],
                            sa,
                            true,
                        );
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let gb = grad_buf(grads, *b, batch * k * n);
                    for i in 0..batch {
                        sgemm(
                            k,
                            m,
                            n,
                            &av[i * m * k..(i + 1) * m * k],
                            (sa.1, sa.0),
                            &dy[i * m * n..(i + 1) * m * n],
                            (n, 1),
                            &mut gb[i * k * n..(i + 1) * k * n],
                            sb,
                            true,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        add_into(grad_buf(grads, *v, dy.len()), dy);
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    let g = grad_buf(grads, *a, dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * s);
                }
            }
            Op::Relu(a) => {
                let xs = self.value(*a).data();
                let g = grad_buf(grads, *a, dy.len());
                for i in 0..dy.len() {
                    if xs[i] > 0.0 {
                        g[i] += dy[i];
                    }
                }
            }
            Op::Softmax(a) => {
                let p = node.value.data();
                let (rows, cols) = node.value.rows_cols();
                let g = grad_buf(grads, *a, dy.len());
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let dot: f32 = p[span.clone()].iter().zip(&dy[span.clone()]).map(|(p, d)| p * d).sum();
                    for j in span {
                        g[j] += p[j] * (dy[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (rows, dim) = self.value(*x).rows_cols();
                let gv = self.value(*gamma).data();
                if self.needs(*gamma) {
                    let gg = grad_buf(grads, *gamma, dim);
                    for r in 0..rows {
                        for j in 0..dim {
                            gg[j] += dy[r * dim + j] * xhat[r * dim + j];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = grad_buf(grads, *beta, dim);
                    for row in dy.chunks(dim) {
                        add_into(gb, row);
                    }
                }
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, rows * dim);
                    let d = dim as f32;
                    for r in 0..rows {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..dim {
                            let dh = dy[r * dim + j] * gv[j];
                            s1 += dh;
                            s2 += dh * xhat[r * dim + j];
                        }
                        for j in 0..dim {
                            let dh = dy[r * dim + j] * gv[j];
                            gx[r * dim + j] += rstd[r] / d * (d * dh - s1 - xhat[r * dim + j] * s2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let shape = self.shape(*table);
                let dim = shape[1];
                let g = grad_buf(grads, *table, shape[0] * dim);
                for (r, &id) in ids.iter().enumerate() {
                    let id = id as usize;
                    add_into(&mut g[id * dim..(id + 1) * dim], &dy[r * dim..(r + 1) * dim]);
                }
            }
            Op::Reshape(a) => add_into(grad_buf(grads, *a, dy.len()), dy),
            Op::Permute { x, perm } => {
                let inv = kernels::inverse_perm(perm);
                let (_, back) = kernels::permute(dy, node.value.shape(), &inv);
                add_into(grad_buf(grads, *x, dy.len()), &back);
            }
            Op::Dropout { x, mask } => {
                let g = grad_buf(grads, *x, dy.len());
                for i in 0..dy.len() {
                    g[i] += dy[i] * mask[i];
                }
            }
            Op::Conv2d { x, w, b, pad } => self.conv2d_backward(*x, *w, *b, *pad, dy, grads),
            Op::ConvTranspose2x2 { x, w, b } => self.conv_t_backward(*x, *w, *b, dy, grads),
            Op::MaxPool2 { x, argmax } => {
                let g = grad_buf(grads, *x, self.value(*x).numel());
                for (d, &i) in dy.iter().zip(argmax) {
                    g[i as usize] += d;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let hw = h * w;
                let count = (n * hw) as f32;
                let gv = self.value(*gamma).data();
                let mut sum_dy = vec![0.0f32; c];
                let mut sum_dy_xhat = vec![0.0f32; c];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * hw;
                        for j in off..off + hw {
                            sum_dy[ch] += dy[j];
                            sum_dy_xhat[ch] += dy[j] * xhat[j];
                        }
                    }
                }
                if self.needs(*gamma) {
                    add_into(grad_buf(grads, *gamma, c), &sum_dy_xhat);
                }
                if self.needs(*beta) {
                    add_into(grad_buf(grads, *beta, c), &sum_dy);
                }
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, n * c * hw);
                    for i in 0..n {
                        for ch in 0..c {
                            let k = gv[ch] * rstd[ch] / count;
                            let off = (i * c + ch) * hw;
                            for j in off..off + hw {
                                gx[j] += k * (count * dy[j] - sum_dy[ch] - xhat[j] * sum_dy_xhat[ch]);
                            }
                        }
                    }
                }
            }
            Op::ConcatChannels(a, b) => {
                let (n, ca, h, w) = self.value(*a).dims4();
                let cb = self.value(*b).dims4().1;
                let hw = h * w;
                let stride = (ca + cb) * hw;
                if self.needs(*a) {
                    let g = grad_buf(grads, *a, n * ca * hw);
                    for i in 0..n {
                        add_into(&mut g[i * ca * hw..(i + 1) * ca * hw], &dy[i * stride..i * stride + ca * hw]);
                    }
                }
                if self.needs(*b) {
                    let g = grad_buf(grads, *b, n * cb * hw);
                    for i in 0..n {
                        add_into(&mut g[i * cb * hw..(i + 1) * cb * hw], &dy[i * stride + ca * hw..(i + 1) * stride]);
                    }
                }
            }
            Op::BceWithLogits { logits, target } => {
                let z = self.value(*logits).data();
                let scale = dy[0] / z.len().max(1) as f32;
                let g = grad_buf(grads, *logits, z.len());
                for i in 0..z.len() {
                    let s = 1.0 / (1.0 + (-z[i]).exp());
                    g[i] += (s - target[i]) * scale;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let (_, vocab) = self.value(*logits).rows_cols();
                let scale = dy[0] / *count as f32;
                let g = grad_buf(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    if t == *ignore {
                        continue;
                    }
                    let row = &mut g[r * vocab..(r + 1) * vocab];
                    for (gj, pj) in row.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                        *gj += pj * scale;
                    }
                    row[t as usize] -= scale;
                }
            }
        }
    }

    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: usize,
        dy: &[f32],
        grads: &mut [Option<Vec<f32>>],
    ) {
        let (n, c, h, wd) = self.value(x).dims4();
        let (o, _, k, _) = self.value(w).dims4();
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            ksize: k,
            pad,
        };
        let (krows, hw) = (geom.col_rows(), geom.col_cols());
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        if let Some(b) = b {
            if self.needs(b) {
                let gb = grad_buf(grads, b, o);
                for (i, d) in dy.chunks(hw).enumerate() {
                    gb[i % o] += d.iter().sum::<f32>();
                }
            }
        }
        let mut cols = vec![0.0; krows * hw];
        if self.needs(w) {
            let mut gw = grads[w.0].take().unwrap_or_else(|| vec![0.0; o * krows]);
            for i in 0..n {
                kernels::im2col(&geom, &xs[i * c * h * wd..(i + 1) * c * h * wd], &mut cols);
                sgemm(o, hw, krows, &dy[i * o * hw..(i + 1) * o * hw], (hw, 1), &cols, (1, hw), &mut gw, (krows, 1), true);
            }
            grads[w.0] = Some(gw);
        }
        if self.needs(x) {
            let gx = grad_buf(grads, x, n * c * h * wd);
            for i in 0..n {
                sgemm(krows, o, hw, ws, (1, krows), &dy[i * o * hw..(i + 1) * o * hw], (hw, 1), &mut cols, (hw, 1), false);
                kernels::col2im(&geom, &cols, &mut gx[i * c * h * wd..(i + 1) * c * h * wd]);
            }
        }
    }

    fn conv_t_backward(&self, x: Var, w: Var, b: Option<Var>, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let (n, c, h, wd) = self.value(x).dims4();
        let o = self.value(w).dims4().1;
        let hw = h * wd;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        if let Some(b) = b {
            if self.needs(b) {
                let gb = grad_buf(grads, b, o);
                for (i, d) in dy.chunks(4 * hw).enumerate() {
                    gb[i % o] += d.iter().sum::<f32>();
                }
            }
        }
        let mut gathered = vec![0.0; o * 4 * hw];
        let need_w = self.needs(w);
        let need_x = self.needs(x);
        let mut gw = if need_w {
            grads[w.0].take().unwrap_or_else(|| vec![0.0; c * o * 4])
        } else {
            Vec::new()
        };
        for i in 0..n {
            gather_down2(&dy[i * o * 4 * hw..(i + 1) * o * 4 * hw], &mut gathered, o, h, wd);
            if need_w {
                // gw[c, (o,ky,kx)] += x[c, hw] . g[(o,ky,kx), hw]^T
                sgemm(c, hw, o * 4, &xs[i * c * hw..(i + 1) * c * hw], (hw, 1), &gathered, (1, hw), &mut gw, (o * 4, 1), true);
            }
            if need_x {
                let gx = grad_buf(grads, x, n * c * hw);
                sgemm(c, o * 4, hw, ws, (o * 4, 1), &gathered, (hw, 1), &mut gx[i * c * hw..(i + 1) * c * hw], (hw, 1), true);
            }
        }
        if need_w {
            grads[w.0] = Some(gw);
        }
    }
}

fn grad_buf(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut Vec<f32> {
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    debug_assert_eq!(g.len(), len);
    g
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn add_channel_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    let c = bias.len();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// `tmp[(o,ky,kx), (y,x)]` → `out[o, 2y+ky, 2x+kx]`.
fn scatter_up2(tmp: &[f32], out: &mut [f32], o: usize, h: usize, w: usize) {
    let hw = h * w;
    for ch in 0..o {
        for ky in 0..2 {
            for kx in 0..2 {
                let src = &tmp[((ch * 2 + ky) * 2 + kx) * hw..((ch * 2 + ky) * 2 + kx + 1) * hw];
                for y in 0..h {
                    let row = &mut out[ch * 4 * hw + (2 * y + ky) * 2 * w..];
                    for x in 0..w {
                        row[2 * x + kx] = src[y * w + x];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`scatter_up2`].
fn gather_down2(dy: &[f32], tmp: &mut [f32], o: usize, h: usize, w: usize) {
    let hw = h * w;
    for ch in 0..o {
        for ky in 0..2 {
            for kx in 0..2 {
                let dst = &mut tmp[((ch * 2 + ky) * 2 + kx) * hw..((ch * 2 + ky) * 2 + kx + 1) * hw];
                for y in 0..h {
                    let row = &dy[ch * 4 * hw + (2 * y + ky) * 2 * w..];
                    for x in 0..w {
                        dst[y * w + x] = row[2 * x + kx];
                    }
                }
            }
        }
    }
}
