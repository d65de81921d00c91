//! Heterogeneous spatiotemporal graph attention network with a brake/go head.
//!
//! Per layer, edge type and head, node `i` attends over its type-neighbours:
//!
//! ```text
//! z_i   = W u_i
//! α_ij  = softmax_j ReLU(a · [z_i ‖ z_j ‖ W_e e_ij])
//! o_i   = ReLU(z_i + Σ_j α_ij (z_j + W_e e_ij))
//! ```
//!
//! Layer 1 concatenates heads per type and sums the active types into the
//! layer 2 input; layer 2 averages heads. Type importances
//! β = softmax_t mean_{i ∈ V_t} qᵀ tanh(W_b h_i^t + b) weight the ego's
//! per-type embeddings, and a three-layer MLP over [h'_ego ‖ command] gives
//! brake/go probabilities.
//!
//! Gradients are hand-derived reverse mode; `tests` checks them against
//! central differences.

pub mod checkpoint;
mod graph;
mod params;

pub use graph::{Adjacency, FeatureScale, GraphInput};
pub use params::*;

use crate::error::{Error, Result};
use crate::scenario::{Action, Command};

type H = [f64; HEAD_DIM];

/// Read-only view of one attention head's parameters.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams<'a> {
    pub w: &'a [f64],
    pub w_e: &'a [f64],
    pub a: &'a [f64],
    pub d_in: usize,
}

impl<'a> HeadParams<'a> {
    pub fn of(p: &'a ModelParams, layer: usize, ty: usize, head: usize) -> Self {
        let o = layout().heads[layer][ty][head];
        let d = layer_input(layer);
        HeadParams {
            w: &p.data[o.w..o.w + HEAD_DIM * d],
            w_e: &p.data[o.w_e..o.w_e + HEAD_DIM],
            a: &p.data[o.a..o.a + 3 * HEAD_DIM],
            d_in: d,
        }
    }
}

#[inline]
fn dot6(a: &[f64], b: &H) -> f64 {
    let mut s = 0.0;
    for k in 0..HEAD_DIM {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(d)) {
        let mut s = 0.0;
        for k in 0..d {
            s += row[k] * x[k];
        }
        *o = s;
    }
}

/// Node projection `W_v x`, no bias.
pub fn project(p: &ModelParams, input: &[f64; INPUT_DIM]) -> [f64; PROJ_DIM] {
    let l = layout();
    let mut h = [0.0; PROJ_DIM];
    matvec(&p.data[l.w_v..l.w_v + PROJ_DIM * INPUT_DIM], input, &mut h);
    h
}

/// Activations of one head, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct HeadTrace {
    pub z: Vec<H>,
    /// Pre-activation attention logits, one per adjacency entry.
    pub t: Vec<f64>,
    /// Attention weights, one per adjacency entry; rows sum to 1.
    pub alpha: Vec<f64>,
    /// Pre-activation node outputs.
    pub m: Vec<H>,
}

impl HeadTrace {
    pub fn output(&self, i: usize) -> H {
        self.m[i].map(relu)
    }
}

/// Attention weights of one head and type for inputs `u` (`n × d_in`, flat).
pub fn edge_attention(adj: &Adjacency, u: &[f64], hp: &HeadParams<'_>) -> Vec<f64> {
    let z = features(u, hp);
    let (t, alpha) = attention_from_features(adj, &z, hp);
    let _ = t;
    alpha
}

fn features(u: &[f64], hp: &HeadParams<'_>) -> Vec<H> {
    u.chunks_exact(hp.d_in)
        .map(|ui| {
            let mut z = [0.0; HEAD_DIM];
            matvec(hp.w, ui, &mut z);
            z
        })
        .collect()
}

fn attention_from_features(adj: &Adjacency, z: &[H], hp: &HeadParams<'_>) -> (Vec<f64>, Vec<f64>) {
    let n = z.len();
    let (a1, rest) = hp.a.split_at(HEAD_DIM);
    let (a2, a3) = rest.split_at(HEAD_DIM);
    let c: f64 = a3.iter().zip(hp.w_e).map(|(x, y)| x * y).sum();
    let src: Vec<f64> = z.iter().map(|zi| dot6(a1, zi)).collect();
    let dst: Vec<f64> = z.iter().map(|zj| dot6(a2, zj)).collect();
    let mut t = vec![0.0; adj.entries()];
    let mut alpha = vec![0.0; adj.entries()];
    for i in 0..n {
        let r = adj.range(i);
        if r.is_empty() {
            continue;
        }
        let mut max = f64::NEG_INFINITY;
        for k in r.clone() {
            let j = adj.neighbor[k] as usize;
            t[k] = src[i] + dst[j] + c * adj.attr[k];
            max = max.max(relu(t[k]));
        }
        let mut sum = 0.0;
        for k in r.clone() {
            let e = (relu(t[k]) - max).exp();
            alpha[k] = e;
            sum += e;
        }
        for k in r {
            alpha[k] /= sum;
        }
    }
    (t, alpha)
}

/// Node outputs `ReLU(z_i + Σ_j α_ij (z_j + W_e e_ij))`; nodes without
/// neighbours keep the self term only.
pub fn aggregate(adj: &Adjacency, z: &[H], alpha: &[f64], hp: &HeadParams<'_>) -> Vec<H> {
    aggregate_pre(adj, z, alpha, hp).into_iter().map(|m| m.map(relu)).collect()
}

fn aggregate_pre(adj: &Adjacency, z: &[H], alpha: &[f64], hp: &HeadParams<'_>) -> Vec<H> {
    let mut m = z.to_vec();
    for (i, mi) in m.iter_mut().enumerate() {
        let mut ae = 0.0;
        for k in adj.range(i) {
            let j = adj.neighbor[k] as usize;
            let a = alpha[k];
            ae += a * adj.attr[k];
            for d in 0..HEAD_DIM {
                mi[d] += a * z[j][d];
            }
        }
        for d in 0..HEAD_DIM {
            mi[d] += ae * hp.w_e[d];
        }
    }
    m
}

fn head_forward(adj: &Adjacency, u: &[f64], hp: &HeadParams<'_>) -> HeadTrace {
    let z = features(u, hp);
    let (t, alpha) = attention_from_features(adj, &z, hp);
    let m = aggregate_pre(adj, &z, &alpha, hp);
    HeadTrace { z, t, alpha, m }
}

/// Gradient buffers of one head.
struct HeadGrad<'a> {
    w: &'a mut [f64],
    w_e: &'a mut [f64],
    a: &'a mut [f64],
}

/// Backward through one head given `d_out` (gradient w.r.t. the ReLU
/// outputs). Accumulates into `du` and the parameter gradients.
fn head_backward(
    adj: &Adjacency,
    u: &[f64],
    hp: &HeadParams<'_>,
    tr: &HeadTrace,
    d_out: &[H],
    du: &mut [f64],
    g: HeadGrad<'_>,
) {
    let n = tr.z.len();
    let d = hp.d_in;
    let (a1, rest) = hp.a.split_at(HEAD_DIM);
    let (a2, a3) = rest.split_at(HEAD_DIM);

    let mut dz = vec![[0.0; HEAD_DIM]; n];
    let mut dsrc = vec![0.0; n];
    let mut ddst = vec![0.0; n];
    let mut dc = 0.0;
    let mut dwe = [0.0; HEAD_DIM];

    for i in 0..n {
        let mut dm = [0.0; HEAD_DIM];
        let mut any = false;
        for k in 0..HEAD_DIM {
            if tr.m[i][k] > 0.0 {
                dm[k] = d_out[i][k];
                any |= dm[k] != 0.0;
            }
        }
        if !any {
            continue;
        }
        for k in 0..HEAD_DIM {
            dz[i][k] += dm[k];
        }
        let r = adj.range(i);
        if r.is_empty() {
            continue;
        }
        // dα_ij = dm · (z_j + W_e e_ij)
        let dm_we = dot6(hp.w_e, &dm);
        let mut weighted = 0.0;
        let mut ae = 0.0;
        let mut dalpha_buf = [0.0; 64];
        let mut dalpha_vec;
        let dalpha: &mut [f64] = if r.len() <= 64 {
            &mut dalpha_buf[..r.len()]
        } else {
            dalpha_vec = vec![0.0; r.len()];
            &mut dalpha_vec
        };
        for (s, k) in r.clone().enumerate() {
            let j = adj.neighbor[k] as usize;
            let a = tr.alpha[k];
            let da = dot6(&dm, &tr.z[j]) + dm_we * adj.attr[k];
            dalpha[s] = da;
            weighted += a * da;
            ae += a * adj.attr[k];
            for q in 0..HEAD_DIM {
                dz[j][q] += a * dm[q];
            }
        }
        for q in 0..HEAD_DIM {
            dwe[q] += ae * dm[q];
        }
        for (s, k) in r.enumerate() {
            if tr.t[k] <= 0.0 {
                continue;
            }
            let dt = tr.alpha[k] * (dalpha[s] - weighted);
            let j = adj.neighbor[k] as usize;
            dsrc[i] += dt;
            ddst[j] += dt;
            dc += dt * adj.attr[k];
        }
    }

    for i in 0..n {
        for q in 0..HEAD_DIM {
            dz[i][q] += dsrc[i] * a1[q] + ddst[i] * a2[q];
            g.a[q] += dsrc[i] * tr.z[i][q];
            g.a[HEAD_DIM + q] += ddst[i] * tr.z[i][q];
        }
    }
    for q in 0..HEAD_DIM {
        g.a[2 * HEAD_DIM + q] += dc * hp.w_e[q];
        g.w_e[q] += dc * a3[q] + dwe[q];
    }
    for i in 0..n {
        let ui = &u[i * d..(i + 1) * d];
        let dui = &mut du[i * d..(i + 1) * d];
        for q in 0..HEAD_DIM {
            let g_q = dz[i][q];
            if g_q == 0.0 {
                continue;
            }
            let row = &hp.w[q * d..(q + 1) * d];
            let grow = &mut g.w[q * d..(q + 1) * d];
            for k in 0..d {
                grow[k] += g_q * ui[k];
                dui[k] += g_q * row[k];
            }
        }
    }
}

/// Two-way softmax over the type scores of the active types; inactive types
/// get weight 0.
pub fn normalize_importance(raw: [f64; TYPES], active: [bool; TYPES]) -> [f64; TYPES] {
    match active {
        [true, true] => {
            let m = raw[0].max(raw[1]);
            let e = [(raw[0] - m).exp(), (raw[1] - m).exp()];
            let s = e[0] + e[1];
            [e[0] / s, e[1] / s]
        }
        [false, true] => [0.0, 1.0],
        _ => [1.0, 0.0],
    }
}

/// Raw type score: mean over `members` of `qᵀ tanh(W_b h_i + b)`.
pub fn type_score(p: &ModelParams, emb: &[H], members: &[u32]) -> f64 {
    if members.is_empty() {
        return f64::NEG_INFINITY;
    }
    let l = layout();
    let (w_b, b, q) = (
        &p.data[l.w_b..l.w_b + HEAD_DIM * HEAD_DIM],
        &p.data[l.b..l.b + HEAD_DIM],
        &p.data[l.q..l.q + HEAD_DIM],
    );
    let mut total = 0.0;
    for &i in members {
        let mut y = [0.0; HEAD_DIM];
        matvec(w_b, &emb[i as usize], &mut y);
        for k in 0..HEAD_DIM {
            total += q[k] * (y[k] + b[k]).tanh();
        }
    }
    total / members.len() as f64
}

/// Importance weights (β_spatial, β_temporal).
pub fn type_importance(p: &ModelParams, emb: [&[H]; TYPES], members: [&[u32]; TYPES]) -> [f64; TYPES] {
    let raw = [type_score(p, emb[0], members[0]), type_score(p, emb[1], members[1])];
    normalize_importance(raw, [!members[0].is_empty(), !members[1].is_empty()])
}

/// Convex combination of the ego's per-type embeddings.
pub fn fuse_ego(h: [&H; TYPES], beta: [f64; TYPES]) -> H {
    let mut out = [0.0; HEAD_DIM];
    for t in 0..TYPES {
        if beta[t] != 0.0 {
            for k in 0..HEAD_DIM {
                out[k] += beta[t] * h[t][k];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// (p_brake, p_go).
    pub p: [f64; CLASSES],
    pub beta: [f64; TYPES],
}

impl Prediction {
    /// Brake on ties: it is the safe action.
    pub fn action(&self) -> Action {
        if self.p[0] >= self.p[1] {
            Action::Brake
        } else {
            Action::Go
        }
    }
}

fn softmax2(logits: [f64; CLASSES]) -> [f64; CLASSES] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

#[derive(Debug, Clone)]
struct MlpTrace {
    x: [f64; MLP_IN],
    a1: [f64; MLP_HIDDEN],
    a2: [f64; MLP_HIDDEN],
    logits: [f64; CLASSES],
}

fn mlp_forward(p: &ModelParams, h: &H, cmd: Command) -> MlpTrace {
    let l = layout();
    let mut x = [0.0; MLP_IN];
    x[..HEAD_DIM].copy_from_slice(h);
    x[HEAD_DIM..].copy_from_slice(&cmd.one_hot());
    let mut a1 = [0.0; MLP_HIDDEN];
    matvec(&p.data[l.mlp_w[0]..l.mlp_w[0] + MLP_HIDDEN * MLP_IN], &x, &mut a1);
    for (k, v) in a1.iter_mut().enumerate() {
        *v = relu(*v + p.data[l.mlp_b[0] + k]);
    }
    let mut a2 = [0.0; MLP_HIDDEN];
    matvec(&p.data[l.mlp_w[1]..l.mlp_w[1] + MLP_HIDDEN * MLP_HIDDEN], &a1, &mut a2);
    for (k, v) in a2.iter_mut().enumerate() {
        *v = relu(*v + p.data[l.mlp_b[1] + k]);
    }
    let mut logits = [0.0; CLASSES];
    matvec(&p.data[l.mlp_w[2]..l.mlp_w[2] + CLASSES * MLP_HIDDEN], &a2, &mut logits);
    for (k, v) in logits.iter_mut().enumerate() {
        *v += p.data[l.mlp_b[2] + k];
    }
    MlpTrace { x, a1, a2, logits }
}

/// Action head on a fused ego embedding.
pub fn predict(p: &ModelParams, h: &H, cmd: Command) -> [f64; CLASSES] {
    softmax2(mlp_forward(p, h, cmd).logits)
}

/// Everything computed by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub projected: Vec<[f64; PROJ_DIM]>,
    /// `[layer][type][head]`; `None` for inactive types.
    pub heads: [[Vec<HeadTrace>; TYPES]; LAYERS],
    /// Layer 2 input, `n × 24` flat.
    pub layer2_input: Vec<f64>,
    /// Final per-type node embeddings (head average).
    pub embeddings: [Vec<H>; TYPES],
    pub active: [bool; TYPES],
    /// Types entering the importance softmax.
    pub present: [bool; TYPES],
    pub raw_importance: [f64; TYPES],
    pub fused: H,
    mlp: MlpTrace,
    pub prediction: Prediction,
}

impl ForwardTrace {
    /// Attention rows of one (layer, type, head), as (node, weights).
    pub fn attention_rows<'a>(&'a self, g: &'a GraphInput, layer: usize, ty: usize, head: usize) -> Vec<(usize, &'a [f64])> {
        let Some(tr) = self.heads[layer][ty].get(head) else {
            return Vec::new();
        };
        let adj = &g.adjacency[ty];
        (0..g.len())
            .filter(|&i| adj.degree(i) > 0)
            .map(|i| (i, &tr.alpha[adj.range(i)]))
            .collect()
    }

    /// Checks attention, importance and output normalization.
    pub fn check_normalization(&self, g: &GraphInput) -> std::result::Result<(), String> {
        for l in 0..LAYERS {
            for t in 0..TYPES {
                for k in 0..self.heads[l][t].len() {
                    for (i, row) in self.attention_rows(g, l, t, k) {
                        let s: f64 = row.iter().sum();
                        if (s - 1.0).abs() > 1e-6 {
                            return Err(format!("attention row {i} (layer {l}, type {t}, head {k}) sums to {s}"));
                        }
                    }
                }
            }
        }
        let b = self.prediction.beta;
        if (b[0] + b[1] - 1.0).abs() > 1e-9 || b.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("importance weights {b:?}"));
        }
        let p = self.prediction.p;
        if (p[0] + p[1] - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
            return Err(format!("probabilities {p:?}"));
        }
        Ok(())
    }
}

pub fn forward(g: &GraphInput, p: &ModelParams) -> ForwardTrace {
    forward_restricted(g, p, [true, true])
}

/// Forward pass using only the edge types flagged in `allowed`; the others
/// are treated as absent (their branches skipped, their importance 0).
pub fn forward_restricted(g: &GraphInput, p: &ModelParams, allowed: [bool; TYPES]) -> ForwardTrace {
    let n = g.len();
    let present = [g.active(0) && allowed[0], g.active(1) && allowed[1]];
    let active = if present == [false, false] { [true, false] } else { present };
    let projected: Vec<[f64; PROJ_DIM]> = g.inputs.iter().map(|x| project(p, x)).collect();
    let u1: Vec<f64> = projected.iter().flatten().copied().collect();

    let mut heads: [[Vec<HeadTrace>; TYPES]; LAYERS] = Default::default();
    let width = HEADS * HEAD_DIM;
    let mut u2 = vec![0.0; n * width];
    for t in 0..TYPES {
        if !active[t] {
            continue;
        }
        for k in 0..HEADS {
            let hp = HeadParams::of(p, 0, t, k);
            let tr = head_forward(&g.adjacency[t], &u1, &hp);
            for i in 0..n {
                let o = tr.output(i);
                let dst = &mut u2[i * width + k * HEAD_DIM..i * width + (k + 1) * HEAD_DIM];
                for q in 0..HEAD_DIM {
                    dst[q] += o[q];
                }
            }
            heads[0][t].push(tr);
        }
    }

    let mut embeddings: [Vec<H>; TYPES] = Default::default();
    for t in 0..TYPES {
        if !active[t] {
            continue;
        }
        let mut f = vec![[0.0; HEAD_DIM]; n];
        for k in 0..HEADS {
            let hp = HeadParams::of(p, 1, t, k);
            let tr = head_forward(&g.adjacency[t], &u2, &hp);
            for (i, fi) in f.iter_mut().enumerate() {
                let o = tr.output(i);
                for q in 0..HEAD_DIM {
                    fi[q] += o[q] / HEADS as f64;
                }
            }
            heads[1][t].push(tr);
        }
        embeddings[t] = f;
    }

    let raw_importance = [0, 1].map(|t| {
        if present[t] {
            type_score(p, &embeddings[t], &g.members[t])
        } else {
            f64::NEG_INFINITY
        }
    });
    let beta = normalize_importance(raw_importance, present);
    let zero = [0.0; HEAD_DIM];
    let ego_emb = [0, 1].map(|t| embeddings[t].get(g.ego).unwrap_or(&zero));
    let fused = fuse_ego(ego_emb, beta);
    let mlp = mlp_forward(p, &fused, g.command);
    let prediction = Prediction {
        p: softmax2(mlp.logits),
        beta,
    };
    let trace = ForwardTrace {
        projected,
        heads,
        layer2_input: u2,
        embeddings,
        active,
        present,
        raw_importance,
        fused,
        mlp,
        prediction,
    };
    #[cfg(debug_assertions)]
    if let Err(e) = trace.check_normalization(g) {
        panic!("forward invariant violated: {e}");
    }
    trace
}

/// Class-weighted cross-entropy `-w_y ln p_y` of one prediction.
pub fn cross_entropy(trace: &ForwardTrace, label: Action, weight: f64) -> f64 {
    let l = trace.mlp.logits;
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    weight * (lse - l[label.class()])
}

/// Adds `scale · ∂(-w ln p_label)/∂θ` to `grad`.
pub fn backward(g: &GraphInput, p: &ModelParams, trace: &ForwardTrace, label: Action, scale: f64, grad: &mut [f64]) {
    let l = layout();
    let n = g.len();

    // softmax + cross-entropy
    let mut dlogits = trace.prediction.p;
    dlogits[label.class()] -= 1.0;
    for v in &mut dlogits {
        *v *= scale;
    }

    // MLP
    let m = &trace.mlp;
    let w3 = &p.data[l.mlp_w[2]..l.mlp_w[2] + CLASSES * MLP_HIDDEN];
    let mut da2 = [0.0; MLP_HIDDEN];
    for c in 0..CLASSES {
        grad[l.mlp_b[2] + c] += dlogits[c];
        for k in 0..MLP_HIDDEN {
            grad[l.mlp_w[2] + c * MLP_HIDDEN + k] += dlogits[c] * m.a2[k];
            da2[k] += dlogits[c] * w3[c * MLP_HIDDEN + k];
        }
    }
    let w2 = &p.data[l.mlp_w[1]..l.mlp_w[1] + MLP_HIDDEN * MLP_HIDDEN];
    let mut da1 = [0.0; MLP_HIDDEN];
    for o in 0..MLP_HIDDEN {
        if m.a2[o] <= 0.0 {
            continue;
        }
        let d = da2[o];
        grad[l.mlp_b[1] + o] += d;
        for k in 0..MLP_HIDDEN {
            grad[l.mlp_w[1] + o * MLP_HIDDEN + k] += d * m.a1[k];
            da1[k] += d * w2[o * MLP_HIDDEN + k];
        }
    }
    let w1 = &p.data[l.mlp_w[0]..l.mlp_w[0] + MLP_HIDDEN * MLP_IN];
    let mut dh = [0.0; HEAD_DIM];
    for o in 0..MLP_HIDDEN {
        if m.a1[o] <= 0.0 {
            continue;
        }
        let d = da1[o];
        grad[l.mlp_b[0] + o] += d;
        for k in 0..MLP_IN {
            grad[l.mlp_w[0] + o * MLP_IN + k] += d * m.x[k];
        }
        for k in 0..HEAD_DIM {
            dh[k] += d * w1[o * MLP_IN + k];
        }
    }

    // fusion and type importance
    let beta = trace.prediction.beta;
    let mut demb: [Vec<H>; TYPES] = [0, 1].map(|t| {
        if trace.active[t] {
            vec![[0.0; HEAD_DIM]; n]
        } else {
            Vec::new()
        }
    });
    let mut dbeta = [0.0; TYPES];
    for t in 0..TYPES {
        if !trace.active[t] {
            continue;
        }
        let e = &trace.embeddings[t][g.ego];
        for k in 0..HEAD_DIM {
            demb[t][g.ego][k] += beta[t] * dh[k];
            dbeta[t] += dh[k] * e[k];
        }
    }
    if trace.present == [true, true] {
        let mean = beta[0] * dbeta[0] + beta[1] * dbeta[1];
        let draw = [beta[0] * (dbeta[0] - mean), beta[1] * (dbeta[1] - mean)];
        let w_b = &p.data[l.w_b..l.w_b + HEAD_DIM * HEAD_DIM];
        let b = &p.data[l.b..l.b + HEAD_DIM];
        let q = &p.data[l.q..l.q + HEAD_DIM];
        for t in 0..TYPES {
            let members = &g.members[t];
            let s = draw[t] / members.len() as f64;
            for &i in members {
                let h = &trace.embeddings[t][i as usize];
                let mut pre = [0.0; HEAD_DIM];
                matvec(w_b, h, &mut pre);
                for k in 0..HEAD_DIM {
                    let y = (pre[k] + b[k]).tanh();
                    grad[l.q + k] += s * y;
                    let dpre = s * q[k] * (1.0 - y * y);
                    grad[l.b + k] += dpre;
                    for c in 0..HEAD_DIM {
                        grad[l.w_b + k * HEAD_DIM + c] += dpre * h[c];
                        demb[t][i as usize][c] += dpre * w_b[k * HEAD_DIM + c];
                    }
                }
            }
        }
    }

    // layer 2 (heads averaged)
    let width = HEADS * HEAD_DIM;
    let mut du2 = vec![0.0; n * width];
    for t in 0..TYPES {
        if !trace.active[t] {
            continue;
        }
        let d_out: Vec<H> = demb[t].iter().map(|v| v.map(|x| x / HEADS as f64)).collect();
        for k in 0..HEADS {
            let o = l.heads[1][t][k];
            let hp = HeadParams::of(p, 1, t, k);
            let (gw, gwe, ga) = split_head_grad(grad, o, layer_input(1));
            head_backward(
                &g.adjacency[t],
                &trace.layer2_input,
                &hp,
                &trace.heads[1][t][k],
                &d_out,
                &mut du2,
                HeadGrad { w: gw, w_e: gwe, a: ga },
            );
        }
    }

    // layer 1 (heads concatenated, active types summed)
    let u1: Vec<f64> = trace.projected.iter().flatten().copied().collect();
    let mut du1 = vec![0.0; n * PROJ_DIM];
    for t in 0..TYPES {
        if !trace.active[t] {
            continue;
        }
        for k in 0..HEADS {
            let d_out: Vec<H> = (0..n)
                .map(|i| {
                    let mut v = [0.0; HEAD_DIM];
                    v.copy_from_slice(&du2[i * width + k * HEAD_DIM..i * width + (k + 1) * HEAD_DIM]);
                    v
                })
                .collect();
            let o = l.heads[0][t][k];
            let hp = HeadParams::of(p, 0, t, k);
            let (gw, gwe, ga) = split_head_grad(grad, o, layer_input(0));
            head_backward(
                &g.adjacency[t],
                &u1,
                &hp,
                &trace.heads[0][t][k],
                &d_out,
                &mut du1,
                HeadGrad { w: gw, w_e: gwe, a: ga },
            );
        }
    }

    // projection
    for (i, x) in g.inputs.iter().enumerate() {
        for r in 0..PROJ_DIM {
            let d = du1[i * PROJ_DIM + r];
            if d == 0.0 {
                continue;
            }
            for c in 0..INPUT_DIM {
                grad[l.w_v + r * INPUT_DIM + c] += d * x[c];
            }
        }
    }
}

fn split_head_grad(grad: &mut [f64], o: HeadOffsets, d: usize) -> (&mut [f64], &mut [f64], &mut [f64]) {
    // w, w_e and a are laid out contiguously in that order
    debug_assert_eq!(o.w_e, o.w + HEAD_DIM * d);
    debug_assert_eq!(o.a, o.w_e + HEAD_DIM);
    let block = &mut grad[o.w..o.a + 3 * HEAD_DIM];
    let (w, rest) = block.split_at_mut(HEAD_DIM * d);
    let (w_e, a) = rest.split_at_mut(HEAD_DIM);
    (w, w_e, a)
}

/// One labelled training or evaluation instance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: GraphInput,
    pub label: Action,
}

/// Mean weighted cross-entropy over `batch` and its gradient.
/// `class_weight[c]` multiplies the loss of instances labelled `c`.
pub fn loss_and_grads(batch: &[&Sample], p: &ModelParams, class_weight: [f64; CLASSES]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; p.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for s in batch {
        let tr = forward(&s.graph, p);
        let w = class_weight[s.label.class()];
        loss += cross_entropy(&tr, s.label, w) * scale;
        backward(&s.graph, p, &tr, s.label, w * scale, &mut grad);
    }
    check_finite(loss, &grad)?;
    Ok((loss, grad))
}

pub(crate) fn check_finite(loss: f64, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            detail: format!("loss is {loss}"),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        let name = layout()
            .tensors
            .iter()
            .find(|t| t.range().contains(&i))
            .map_or("?", |t| t.name.as_str());
        return Err(Error::Divergence {
            epoch: 0,
            detail: format!("non-finite gradient in {name}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
