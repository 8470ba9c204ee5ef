//! Dense building blocks with hand-written backward passes.
//!
//! All parameters of a network live in one flat `[f64]`; each layer only
//! stores offsets into it. Backward passes accumulate (`+=`) into a gradient
//! buffer of the same length, so several heads can share an encoder.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

/// Named ranges of the flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    segments: Vec<(String, Range<usize>)>,
    len: usize,
}

impl Layout {
    pub fn alloc(&mut self, name: impl Into<String>, len: usize) -> usize {
        let start = self.len;
        self.len += len;
        self.segments.push((name.into(), start..self.len));
        start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[(String, Range<usize>)] {
        &self.segments
    }
}

/// Fills an `n_out × n_in` row-major block with a scaled (semi-)orthogonal
/// matrix: Gaussian entries orthonormalized by Gram–Schmidt along the
/// shorter side.
pub fn orthogonal_init<R: Rng + ?Sized>(
    out: &mut [f64],
    n_out: usize,
    n_in: usize,
    gain: f64,
    rng: &mut R,
) {
    debug_assert_eq!(out.len(), n_out * n_in);
    let (rows, cols, transpose) = if n_out <= n_in {
        (n_out, n_in, false)
    } else {
        (n_in, n_out, true)
    };
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
            let prev = m[j].clone();
            for (a, b) in m[i].iter_mut().zip(prev) {
                *a -= dot * b;
            }
        }
        let norm = m[i].iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        for a in &mut m[i] {
            *a /= norm;
        }
    }
    for o in 0..n_out {
        for i in 0..n_in {
            let v = if transpose { m[i][o] } else { m[o][i] };
            out[o * n_in + i] = gain * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(layout: &mut Layout, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = layout.alloc(format!("{name}.w"), n_in * n_out);
        let b = layout.alloc(format!("{name}.b"), n_out);
        Self { w, b, n_in, n_out }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], gain: f64, rng: &mut R) {
        let w = &mut p[self.w..self.w + self.n_in * self.n_out];
        if gain == 0.0 {
            w.fill(0.0);
        } else {
            orthogonal_init(w, self.n_out, self.n_in, gain, rng);
        }
        p[self.b..self.b + self.n_out].fill(0.0);
    }

    /// `y = W x + b`.
    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        let b = &p[self.b..self.b + self.n_out];
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            y[o] = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients and, if requested, `dx += Wᵀ dy`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &[f64],
        dy: &[f64],
        dx: Option<&mut [f64]>,
    ) {
        let n_in = self.n_in;
        for o in 0..self.n_out {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            g[self.b + o] += d;
            let gw = &mut g[self.w + o * n_in..self.w + (o + 1) * n_in];
            for (gi, xi) in gw.iter_mut().zip(x) {
                *gi += d * xi;
            }
        }
        if let Some(dx) = dx {
            let w = &p[self.w..self.w + n_in * self.n_out];
            for o in 0..self.n_out {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += d * wi;
                }
            }
        }
    }
}

/// Tanh MLP. Hidden layers always use tanh; the last layer only if
/// `tanh_output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub tanh_output: bool,
}

#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    /// `acts[0]` is the input, `acts[k + 1]` the output of layer `k`.
    pub acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(layout: &mut Layout, name: &str, sizes: &[usize], tanh_output: bool) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(layout, &format!("{name}.l{i}"), w[0], w[1]))
            .collect();
        Self {
            layers,
            tanh_output,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// Orthogonal init with `hidden_gain` on every layer but the last, which
    /// gets `out_gain` (zero gives an all-zero final map).
    pub fn init<R: Rng + ?Sized>(
        &self,
        p: &mut [f64],
        hidden_gain: f64,
        out_gain: f64,
        rng: &mut R,
    ) {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            l.init(p, if i == last { out_gain } else { hidden_gain }, rng);
        }
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.tanh_output
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.n_out];
            l.forward(p, acts.last().unwrap(), &mut y);
            if self.activates(i) {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        MlpTrace { acts }
    }

    /// Returns the gradient with respect to the input.
    pub fn backward(&self, p: &[f64], g: &mut [f64], trace: &MlpTrace, dy: &[f64]) -> Vec<f64> {
        let mut d = dy.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if self.activates(i) {
                for (di, y) in d.iter_mut().zip(&trace.acts[i + 1]) {
                    *di *= 1.0 - y * y;
                }
            }
            let mut dx = vec![0.0; l.n_in];
            l.backward(p, g, &trace.acts[i], &d, Some(&mut dx));
            d = dx;
        }
        d
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(layout: &mut Layout, name: &str, dim: usize) -> Self {
        let gain = layout.alloc(format!("{name}.gain"), dim);
        let bias = layout.alloc(format!("{name}.bias"), dim);
        Self { gain, bias, dim }
    }

    pub fn init(&self, p: &mut [f64]) {
        p[self.gain..self.gain + self.dim].fill(1.0);
        p[self.bias..self.bias + self.dim].fill(0.0);
    }

    /// Writes the normalized output into `y` and `x̂` into `xhat`; returns 1/σ.
    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64], xhat: &mut [f64]) -> f64 {
        let n = self.dim as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..self.dim {
            xhat[i] = (x[i] - mu) * inv;
            y[i] = p[self.gain + i] * xhat[i] + p[self.bias + i];
        }
        inv
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        xhat: &[f64],
        inv: f64,
        dy: &[f64],
        dx: &mut [f64],
    ) {
        let n = self.dim as f64;
        let mut dxhat = vec![0.0; self.dim];
        for i in 0..self.dim {
            g[self.gain + i] += dy[i] * xhat[i];
            g[self.bias + i] += dy[i];
            dxhat[i] = dy[i] * p[self.gain + i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for i in 0..self.dim {
            dx[i] += inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-LayerNorm Transformer encoder over a fixed-length token sequence;
/// the embedding is the final-normalized last token.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    embed: Linear,
    pos: usize,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    tokens: usize,
    token_dim: usize,
    d: usize,
    heads: usize,
}

#[derive(Debug, Clone, Default)]
struct BlockTrace {
    a: Vec<f64>,
    a_hat: Vec<f64>,
    a_inv: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]` attention weights.
    p: Vec<f64>,
    att: Vec<f64>,
    b: Vec<f64>,
    b_hat: Vec<f64>,
    b_inv: Vec<f64>,
    h1: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TransformerTrace {
    input: Vec<f64>,
    blocks: Vec<BlockTrace>,
    f_hat: Vec<f64>,
    f_inv: f64,
}

impl Transformer {
    pub fn new(
        layout: &mut Layout,
        name: &str,
        tokens: usize,
        token_dim: usize,
        d: usize,
        heads: usize,
        n_blocks: usize,
        ff: usize,
    ) -> Self {
        assert!(
            heads > 0 && d % heads == 0,
            "embedding width must split across heads"
        );
        let embed = Linear::new(layout, &format!("{name}.embed"), token_dim, d);
        let pos = layout.alloc(format!("{name}.pos"), tokens * d);
        let blocks = (0..n_blocks)
            .map(|i| {
                let n = format!("{name}.b{i}");
                Block {
                    ln1: LayerNorm::new(layout, &format!("{n}.ln1"), d),
                    q: Linear::new(layout, &format!("{n}.q"), d, d),
                    k: Linear::new(layout, &format!("{n}.k"), d, d),
                    v: Linear::new(layout, &format!("{n}.v"), d, d),
                    o: Linear::new(layout, &format!("{n}.o"), d, d),
                    ln2: LayerNorm::new(layout, &format!("{n}.ln2"), d),
                    ff1: Linear::new(layout, &format!("{n}.ff1"), d, ff),
                    ff2: Linear::new(layout, &format!("{n}.ff2"), ff, d),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(layout, &format!("{name}.ln_f"), d);
        Self {
            embed,
            pos,
            blocks,
            ln_f,
            tokens,
            token_dim,
            d,
            heads,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.d
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        self.embed.init(p, 1.0, rng);
        for v in &mut p[self.pos..self.pos + self.tokens * self.d] {
            *v = 0.02 * rng.sample::<f64, _>(StandardNormal);
        }
        let res_gain = 1.0 / (2.0 * self.blocks.len().max(1) as f64).sqrt();
        for b in &self.blocks {
            b.ln1.init(p);
            b.ln2.init(p);
            b.q.init(p, 1.0, rng);
            b.k.init(p, 1.0, rng);
            b.v.init(p, 1.0, rng);
            b.o.init(p, res_gain, rng);
            b.ff1.init(p, 2f64.sqrt(), rng);
            b.ff2.init(p, res_gain, rng);
        }
        self.ln_f.init(p);
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, TransformerTrace) {
        let (t_n, d) = (self.tokens, self.d);
        debug_assert_eq!(x.len(), t_n * self.token_dim);
        let mut h = vec![0.0; t_n * d];
        for t in 0..t_n {
            let row = &mut h[t * d..(t + 1) * d];
            self.embed
                .forward(p, &x[t * self.token_dim..(t + 1) * self.token_dim], row);
            for (r, e) in row
                .iter_mut()
                .zip(&p[self.pos + t * d..self.pos + (t + 1) * d])
            {
                *r += e;
            }
        }
        let mut traces = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (out, tr) = self.block_forward(blk, p, h);
            traces.push(tr);
            h = out;
        }
        let last = h[(t_n - 1) * d..].to_vec();
        let mut y = vec![0.0; d];
        let mut f_hat = vec![0.0; d];
        let f_inv = self.ln_f.forward(p, &last, &mut y, &mut f_hat);
        (
            y,
            TransformerTrace {
                input: x.to_vec(),
                blocks: traces,
                f_hat,
                f_inv,
            },
        )
    }

    fn block_forward(&self, blk: &Block, p: &[f64], x: Vec<f64>) -> (Vec<f64>, BlockTrace) {
        let (t_n, d, nh) = (self.tokens, self.d, self.heads);
        let dh = d / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut tr = BlockTrace {
            a: vec![0.0; t_n * d],
            a_hat: vec![0.0; t_n * d],
            a_inv: vec![0.0; t_n],
            q: vec![0.0; t_n * d],
            k: vec![0.0; t_n * d],
            v: vec![0.0; t_n * d],
            p: vec![0.0; nh * t_n * t_n],
            att: vec![0.0; t_n * d],
            b: vec![0.0; t_n * d],
            b_hat: vec![0.0; t_n * d],
            b_inv: vec![0.0; t_n],
            h1: vec![0.0; t_n * blk.ff1.n_out],
            ..Default::default()
        };
        for t in 0..t_n {
            let r = t * d..(t + 1) * d;
            tr.a_inv[t] = blk.ln1.forward(
                p,
                &x[r.clone()],
                &mut tr.a[r.clone()],
                &mut tr.a_hat[r.clone()],
            );
            blk.q.forward(p, &tr.a[r.clone()], &mut tr.q[r.clone()]);
            blk.k.forward(p, &tr.a[r.clone()], &mut tr.k[r.clone()]);
            blk.v.forward(p, &tr.a[r.clone()], &mut tr.v[r]);
        }
        for hd in 0..nh {
            let c = hd * dh;
            for i in 0..t_n {
                let prow = &mut tr.p[(hd * t_n + i) * t_n..(hd * t_n + i + 1) * t_n];
                let qi = &tr.q[i * d + c..i * d + c + dh];
                for j in 0..t_n {
                    let kj = &tr.k[j * d + c..j * d + c + dh];
                    prow[j] = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let m = prow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in prow.iter_mut() {
                    *s = (*s - m).exp();
                    z += *s;
                }
                prow.iter_mut().for_each(|s| *s /= z);
                for j in 0..t_n {
                    let w = prow[j];
                    for e in 0..dh {
                        tr.att[i * d + c + e] += w * tr.v[j * d + c + e];
                    }
                }
            }
        }
        let mut x1 = x.clone();
        let mut tmp = vec![0.0; d];
        for t in 0..t_n {
            let r = t * d..(t + 1) * d;
            blk.o.forward(p, &tr.att[r.clone()], &mut tmp);
            for (a, b) in x1[r].iter_mut().zip(&tmp) {
                *a += b;
            }
        }
        let ff = blk.ff1.n_out;
        let mut x2 = x1.clone();
        for t in 0..t_n {
            let r = t * d..(t + 1) * d;
            tr.b_inv[t] = blk.ln2.forward(
                p,
                &x1[r.clone()],
                &mut tr.b[r.clone()],
                &mut tr.b_hat[r.clone()],
            );
            let h1 = &mut tr.h1[t * ff..(t + 1) * ff];
            blk.ff1.forward(p, &tr.b[r.clone()], h1);
            h1.iter_mut().for_each(|v| *v = v.tanh());
            blk.ff2.forward(p, h1, &mut tmp);
            for (a, b) in x2[r].iter_mut().zip(&tmp) {
                *a += b;
            }
        }
        (x2, tr)
    }

    /// Returns the gradient with respect to the flattened input tokens.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        tr: &TransformerTrace,
        dy: &[f64],
    ) -> Vec<f64> {
        let (t_n, d) = (self.tokens, self.d);
        let mut dh = vec![0.0; t_n * d];
        self.ln_f
            .backward(p, g, &tr.f_hat, tr.f_inv, dy, &mut dh[(t_n - 1) * d..]);
        for (blk, bt) in self.blocks.iter().zip(&tr.blocks).rev() {
            dh = self.block_backward(blk, p, g, bt, dh);
        }
        let mut dx = vec![0.0; t_n * self.token_dim];
        for t in 0..t_n {
            let r = t * d..(t + 1) * d;
            for (gp, v) in g[self.pos + t * d..self.pos + (t + 1) * d]
                .iter_mut()
                .zip(&dh[r.clone()])
            {
                *gp += v;
            }
            let xr = t * self.token_dim..(t + 1) * self.token_dim;
            self.embed
                .backward(p, g, &tr.input[xr.clone()], &dh[r], Some(&mut dx[xr]));
        }
        dx
    }

    fn block_backward(
        &self,
        blk: &Block,
        p: &[f64],
        g: &mut [f64],
        tr: &BlockTrace,
        dx2: Vec<f64>,
    ) -> Vec<f64> {
        let (t_n, d, nh) = (self.tokens, self.d, self.heads);
        let dh = d / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let ff = blk.ff1.n_out;

        // feed-forward branch
        let mut dx1 = dx2.clone();
        for t in 0..t_n {
            let r = t * d..(t + 1) * d;
            let h1 = &tr.h1[t * ff..(t + 1) * ff];
            let mut dh1 = vec![0.0; ff];
            blk.ff2.backward(p, g, h1, &dx2[r.clone()], Some(&mut dh1));
            for (a, h) in dh1.iter_mut().zip(h1) {
                *a *= 1.0 - h * h;
            }
            let mut db = vec![0.0; d];
            blk.ff1
                .backward(p, g, &tr.b[r.clone()], &dh1, Some(&mut db));
            blk.ln2
                .backward(p, g, &tr.b_hat[r.clone()], tr.b_inv[t], &db, &mut dx1[r]);
        }

        // attention branch
        let mut dx = dx1.clone();
        let mut datt = vec![0.0; t_n * d];
        for t in 0..t_n {
            let r = t * d..(t + 1) * d;
            blk.o.backward(
                p,
                g,
                &tr.att[r.clone()],
                &dx1[r.clone()],
                Some(&mut datt[r]),
            );
        }
        let mut dq = vec![0.0; t_n * d];
        let mut dk = vec![0.0; t_n * d];
        let mut dv = vec![0.0; t_n * d];
        let mut dp = vec![0.0; t_n];
        for hd in 0..nh {
            let c = hd * dh;
            for i in 0..t_n {
                let prow = &tr.p[(hd * t_n + i) * t_n..(hd * t_n + i + 1) * t_n];
                let dai = &datt[i * d + c..i * d + c + dh];
                for j in 0..t_n {
                    let vj = &tr.v[j * d + c..j * d + c + dh];
                    dp[j] = dai.iter().zip(vj).map(|(a, b)| a * b).sum();
                    for e in 0..dh {
                        dv[j * d + c + e] += prow[j] * dai[e];
                    }
                }
                let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..t_n {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for e in 0..dh {
                        dq[i * d + c + e] += ds * tr.k[j * d + c + e];
                        dk[j * d + c + e] += ds * tr.q[i * d + c + e];
                    }
                }
            }
        }
        for t in 0..t_n {
            let r = t * d..(t + 1) * d;
            let a = &tr.a[r.clone()];
            let mut da = vec![0.0; d];
            blk.q.backward(p, g, a, &dq[r.clone()], Some(&mut da));
            blk.k.backward(p, g, a, &dk[r.clone()], Some(&mut da));
            blk.v.backward(p, g, a, &dv[r.clone()], Some(&mut da));
            blk.ln1
                .backward(p, g, &tr.a_hat[r.clone()], tr.a_inv[t], &da, &mut dx[r]);
        }
        dx
    }
}

/// Sequence encoder over a flattened observation window.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Mlp(Mlp),
    Transformer(Transformer),
}

#[derive(Debug, Clone)]
pub enum EncoderTrace {
    Mlp(MlpTrace),
    Transformer(TransformerTrace),
}

impl Encoder {
    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Mlp(m) => m.out_dim(),
            Encoder::Transformer(t) => t.out_dim(),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        match self {
            Encoder::Mlp(m) => m.init(p, 2f64.sqrt(), 2f64.sqrt(), rng),
            Encoder::Transformer(t) => t.init(p, rng),
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, EncoderTrace) {
        match self {
            Encoder::Mlp(m) => {
                let tr = m.forward(p, x);
                (tr.acts.last().unwrap().clone(), EncoderTrace::Mlp(tr))
            }
            Encoder::Transformer(t) => {
                let (y, tr) = t.forward(p, x);
                (y, EncoderTrace::Transformer(tr))
            }
        }
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], tr: &EncoderTrace, dy: &[f64]) -> Vec<f64> {
        match (self, tr) {
            (Encoder::Mlp(m), EncoderTrace::Mlp(t)) => m.backward(p, g, t, dy),
            (Encoder::Transformer(m), EncoderTrace::Transformer(t)) => m.backward(p, g, t, dy),
            _ => unreachable!("trace from a different encoder"),
        }
    }
}
