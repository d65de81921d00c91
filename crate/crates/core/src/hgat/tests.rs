use super::*;
use approx::assert_relative_eq;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random graph: node 0 is the ego and spatially linked to everyone, other
/// spatial pairs and temporal pairs drawn at random.
fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> GraphInput {
    let mut inputs = vec![[0.0, 0.0, 0.0, 1.0]];
    for _ in 1..n {
        inputs.push([rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0, 0.0]);
    }
    let dist = |a: usize, b: usize| {
        let (p, q): ([f64; 4], [f64; 4]) = (inputs[a], inputs[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let mut spatial = Vec::new();
    let mut temporal = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if i == 0 || rng.gen_bool(0.4) {
                spatial.push((i as u32, j as u32, dist(i, j)));
            } else if rng.gen_bool(0.25) {
                temporal.push((i as u32, j as u32, 0.1 * rng.gen_range(1..5) as f64));
            }
        }
    }
    if temporal.is_empty() {
        temporal.push((1, 2, 0.1));
    }
    GraphInput::from_parts(inputs, 0, [&spatial, &temporal], Command::from_index(rng.gen_range(0..6)).unwrap())
}

fn line_graph(attrs: &[f64]) -> GraphInput {
    // node 0 linked spatially to nodes 1..=k
    let mut inputs = vec![[0.0, 0.0, 0.0, 1.0]];
    let mut edges = Vec::new();
    for (k, &e) in attrs.iter().enumerate() {
        inputs.push([1.0, 0.5, 0.0, 0.0]);
        edges.push((0, k as u32 + 1, e));
    }
    GraphInput::from_parts(inputs, 0, [&edges, &[]], Command::LaneFollow)
}

#[test]
fn projection_cases() {
    let mut p = ModelParams::zeros();
    assert_eq!(project(&p, &[0.0, 0.0, 0.0, 0.0]), [0.0; PROJ_DIM]);
    let w_v = p.tensor_mut("w_v").unwrap();
    for i in 0..INPUT_DIM {
        w_v[i * INPUT_DIM + i] = 1.0;
    }
    let h = project(&p, &[1.0, 2.0, 3.0, 0.0]);
    assert_eq!(&h[..4], &[1.0, 2.0, 3.0, 0.0]);
    assert!(h[4..].iter().all(|&v| v == 0.0));

    let p = ModelParams::init(9);
    let x = [0.3, -1.2, 0.05, 1.0];
    let h = project(&p, &x);
    let w = p.tensor("w_v").unwrap();
    for r in 0..PROJ_DIM {
        let expect: f64 = (0..INPUT_DIM).map(|c| w[r * INPUT_DIM + c] * x[c]).sum();
        assert_relative_eq!(h[r], expect, epsilon = 1e-15);
    }
}

#[test]
fn attention_singleton_and_symmetric_pair() {
    let p = ModelParams::init(2);
    let hp = HeadParams::of(&p, 0, 0, 0);
    let g = line_graph(&[0.4]);
    let u: Vec<f64> = g.inputs.iter().flat_map(|x| project(&p, x)).collect();
    let alpha = edge_attention(&g.adjacency[0], &u, &hp);
    let row = &alpha[g.adjacency[0].range(0)];
    assert_eq!(row, &[1.0]);

    let g = line_graph(&[0.7, 0.7]);
    let u: Vec<f64> = g.inputs.iter().flat_map(|x| project(&p, x)).collect();
    let alpha = edge_attention(&g.adjacency[0], &u, &hp);
    let row = &alpha[g.adjacency[0].range(0)];
    assert_relative_eq!(row[0], 0.5, epsilon = 1e-15);
    assert_relative_eq!(row[1], 0.5, epsilon = 1e-15);
}

/// Straightforward re-derivation of one head on a dense adjacency matrix.
fn head_oracle(n: usize, edges: &[(usize, usize, f64)], u: &[Vec<f64>], hp: &HeadParams<'_>) -> (Vec<Vec<(usize, f64)>>, Vec<[f64; 6]>) {
    let mut attr = vec![vec![None; n]; n];
    for &(a, b, e) in edges {
        attr[a][b] = Some(e);
        attr[b][a] = Some(e);
    }
    let wx = |x: &[f64]| -> Vec<f64> {
        (0..6)
            .map(|r| (0..hp.d_in).map(|c| hp.w[r * hp.d_in + c] * x[c]).sum())
            .collect()
    };
    let z: Vec<Vec<f64>> = u.iter().map(|x| wx(x)).collect();
    let mut alphas = Vec::new();
    let mut outs = Vec::new();
    for i in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&j| attr[i][j].is_some()).collect();
        let scores: Vec<f64> = nb
            .iter()
            .map(|&j| {
                let e = attr[i][j].unwrap();
                let mut cat = z[i].clone();
                cat.extend(&z[j]);
                cat.extend((0..6).map(|k| hp.w_e[k] * e));
                let s: f64 = cat.iter().zip(hp.a).map(|(x, y)| x * y).sum();
                s.max(0.0)
            })
            .collect();
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        let a: Vec<(usize, f64)> = nb.iter().zip(&scores).map(|(&j, s)| (j, s.exp() / total)).collect();
        let mut m = [0.0; 6];
        for k in 0..6 {
            m[k] = z[i][k] + a.iter().map(|&(j, w)| w * (z[j][k] + hp.w_e[k] * attr[i][j].unwrap())).sum::<f64>();
            m[k] = m[k].max(0.0);
        }
        alphas.push(a);
        outs.push(m);
    }
    (alphas, outs)
}

#[test]
fn attention_and_aggregation_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for seed in 0..5 {
        let p = ModelParams::init(seed);
        let n = 5;
        let u: Vec<Vec<f64>> = (0..n).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.6) {
                    edges.push((i, j, rng.gen_range(0.0..2.0)));
                }
            }
        }
        let e32: Vec<(u32, u32, f64)> = edges.iter().map(|&(a, b, e)| (a as u32, b as u32, e)).collect();
        let g = GraphInput::from_parts(vec![[0.0; 4]; n], 0, [&e32, &[]], Command::GoStraight);
        let hp = HeadParams::of(&p, 0, 0, 1);
        let flat: Vec<f64> = u.iter().flatten().copied().collect();
        let alpha = edge_attention(&g.adjacency[0], &flat, &hp);
        let z = features(&flat, &hp);
        let out = aggregate(&g.adjacency[0], &z, &alpha, &hp);
        let (oa, oo) = head_oracle(n, &edges, &u, &hp);
        for i in 0..n {
            let adj = &g.adjacency[0];
            for k in adj.range(i) {
                let j = adj.neighbor[k] as usize;
                let expect = oa[i].iter().find(|(jj, _)| *jj == j).unwrap().1;
                assert_relative_eq!(alpha[k], expect, epsilon = 1e-12);
            }
            for k in 0..6 {
                assert_relative_eq!(out[i][k], oo[i][k], epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn aggregation_trivial_cases() {
    let mut p = ModelParams::zeros();
    {
        let o = layout().heads[0][0][0];
        for r in 0..6 {
            p.data[o.w + r * 12 + r] = 1.0;
        }
    }
    let hp = HeadParams::of(&p, 0, 0, 0);
    // no neighbours: output = W h for h ≥ 0
    let g = GraphInput::from_parts(vec![[0.0; 4]; 1], 0, [&[], &[]], Command::LaneFollow);
    let u: Vec<f64> = (0..12).map(|k| k as f64 * 0.1).collect();
    let z = features(&u, &hp);
    let out = aggregate(&g.adjacency[0], &z, &[], &hp);
    for k in 0..6 {
        assert_relative_eq!(out[0][k], u[k]);
    }
    // single neighbour, zero edge map: ReLU(Wh_i + Wh_j)
    let g = GraphInput::from_parts(vec![[0.0; 4]; 2], 0, [&[(0, 1, 3.0)], &[]], Command::LaneFollow);
    let mut u2 = u.clone();
    u2.extend((0..12).map(|k| -(k as f64) * 0.05));
    let z = features(&u2, &hp);
    let alpha = edge_attention(&g.adjacency[0], &u2, &hp);
    let out = aggregate(&g.adjacency[0], &z, &alpha, &hp);
    for k in 0..6 {
        assert_relative_eq!(out[0][k], (u2[k] + u2[12 + k]).max(0.0), epsilon = 1e-15);
    }
}

#[test]
fn importance_cases() {
    let p = ModelParams::init(4);
    let emb = vec![[0.2, -0.1, 0.4, 0.0, 0.3, -0.5]; 3];
    let members: Vec<u32> = vec![0, 1, 2];
    let beta = type_importance(&p, [&emb, &emb], [&members, &members]);
    assert_relative_eq!(beta[0], 0.5, epsilon = 1e-15);
    assert_eq!(type_importance(&p, [&emb, &[]], [&members, &[]]), [1.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let es: Vec<[f64; 6]> = (0..4).map(|_| [(); 6].map(|_| rng.gen_range(-1.0..1.0))).collect();
    let et: Vec<[f64; 6]> = (0..4).map(|_| [(); 6].map(|_| rng.gen_range(-1.0..1.0))).collect();
    let ms = vec![0u32, 1, 3];
    let mt = vec![2u32, 3];
    let (w_b, b, q) = (
        p.tensor("importance.w_b").unwrap(),
        p.tensor("importance.b").unwrap(),
        p.tensor("importance.q").unwrap(),
    );
    let score = |e: &[[f64; 6]], m: &[u32]| {
        m.iter()
            .map(|&i| {
                (0..6)
                    .map(|r| q[r] * ((0..6).map(|c| w_b[r * 6 + c] * e[i as usize][c]).sum::<f64>() + b[r]).tanh())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / m.len() as f64
    };
    let (rs, rt) = (score(&es, &ms), score(&et, &mt));
    let expect = rs.exp() / (rs.exp() + rt.exp());
    let beta = type_importance(&p, [&es, &et], [&ms, &mt]);
    assert_relative_eq!(beta[0], expect, epsilon = 1e-14);
    assert_relative_eq!(beta[0] + beta[1], 1.0, epsilon = 1e-15);
}

#[test]
fn fusion_cases() {
    let hs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let ht = [-1.0, 0.5, 0.0, 2.0, 1.0, 0.0];
    assert_eq!(fuse_ego([&hs, &ht], [1.0, 0.0]), hs);
    assert_eq!(fuse_ego([&hs, &hs], [0.5, 0.5]), hs);
    let f = fuse_ego([&hs, &ht], [0.3, 0.7]);
    for k in 0..6 {
        assert_relative_eq!(f[k], 0.3 * hs[k] + 0.7 * ht[k], epsilon = 1e-15);
    }
}

#[test]
fn prediction_head_cases() {
    let p = ModelParams::zeros();
    let out = predict(&p, &[0.3; 6], Command::TurnLeft);
    assert_eq!(out, [0.5, 0.5]);
    let pred = Prediction { p: out, beta: [1.0, 0.0] };
    assert_eq!(pred.action(), Action::Brake);

    let p2 = softmax2([10.0, -10.0]);
    assert_relative_eq!(p2[0], 1.0 - 2.061e-9, epsilon = 1e-12);

    let p = ModelParams::init(12);
    let h = [0.1, -0.4, 0.9, 0.0, 0.3, 0.2];
    let cmd = Command::ChangeRight;
    let l = layout();
    let dense = |x: &[f64], w: usize, b: usize, dout: usize, act: bool| -> Vec<f64> {
        (0..dout)
            .map(|o| {
                let s: f64 = x.iter().enumerate().map(|(c, v)| p.data[w + o * x.len() + c] * v).sum::<f64>() + p.data[b + o];
                if act {
                    s.max(0.0)
                } else {
                    s
                }
            })
            .collect()
    };
    let mut x = h.to_vec();
    x.extend(cmd.one_hot());
    let a1 = dense(&x, l.mlp_w[0], l.mlp_b[0], 32, true);
    let a2 = dense(&a1, l.mlp_w[1], l.mlp_b[1], 32, true);
    let lo = dense(&a2, l.mlp_w[2], l.mlp_b[2], 2, false);
    let e0 = 1.0 / (1.0 + (lo[1] - lo[0]).exp());
    let out = predict(&p, &h, cmd);
    assert_relative_eq!(out[0], e0, epsilon = 1e-14);
}

#[test]
fn loss_limits() {
    let mut p = ModelParams::zeros();
    let g = line_graph(&[0.5]);
    let tr = forward(&g, &p);
    assert_relative_eq!(cross_entropy(&tr, Action::Go, 1.0), std::f64::consts::LN_2, epsilon = 1e-15);
    p.data[layout().mlp_b[2]] = 40.0;
    p.data[layout().mlp_b[2] + 1] = -40.0;
    let tr = forward(&g, &p);
    assert!(cross_entropy(&tr, Action::Brake, 1.0) < 1e-30);
}

/// Signature of every ReLU decision in a forward pass; used to detect
/// finite-difference steps that cross a kink.
fn activation_pattern(tr: &ForwardTrace) -> Vec<bool> {
    let mut v = Vec::new();
    for layer in &tr.heads {
        for ty in layer {
            for h in ty {
                v.extend(h.t.iter().map(|&t| t > 0.0));
                v.extend(h.m.iter().flatten().map(|&m| m > 0.0));
            }
        }
    }
    v.extend(tr.mlp.a1.iter().chain(&tr.mlp.a2).map(|&a| a > 0.0));
    v
}

pub(crate) struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

pub(crate) fn gradient_check(sample: &Sample, p: &ModelParams, eps: f64) -> GradCheck {
    let batch = [sample];
    let (_, grad) = loss_and_grads(&batch, p, [1.0, 1.0]).unwrap();
    let base = activation_pattern(&forward(&sample.graph, p));
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    let mut q = p.clone();
    for i in 0..p.len() {
        let orig = q.data[i];
        q.data[i] = orig + eps;
        let tp = forward(&sample.graph, &q);
        let lp = cross_entropy(&tp, sample.label, 1.0);
        let kp = activation_pattern(&tp) != base;
        q.data[i] = orig - eps;
        let tm = forward(&sample.graph, &q);
        let lm = cross_entropy(&tm, sample.label, 1.0);
        let km = activation_pattern(&tm) != base;
        q.data[i] = orig;
        if kp || km {
            out.skipped += 1;
            continue;
        }
        out.checked += 1;
        let numeric = (lp - lm) / (2.0 * eps);
        let diff = (grad[i] - numeric).abs();
        let rel = diff / grad[i].abs().max(numeric.abs()).max(1e-300);
        if diff > 1e-6 {
            out.worst = out.worst.max(rel);
            if rel > 1e-3 {
                out.failures.push(format!("param {i}: analytic {} numeric {numeric}", grad[i]));
            }
        }
    }
    out
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut skipped = 0;
    let mut checked = 0;
    for seed in 0..20 {
        let g = random_graph(6, &mut rng);
        let label = if seed % 2 == 0 { Action::Brake } else { Action::Go };
        let p = ModelParams::init(100 + seed);
        let r = gradient_check(&Sample { graph: g, label }, &p, 1e-4);
        assert!(r.failures.is_empty(), "seed {seed}: {:?}", &r.failures[..r.failures.len().min(5)]);
        skipped += r.skipped;
        checked += r.checked;
    }
    assert!(skipped * 100 < checked, "too many kink skips: {skipped} of {}", checked + skipped);
}

#[test]
fn gradients_on_degenerate_graphs() {
    let p = ModelParams::init(77);
    let ego_only = GraphInput::from_parts(vec![[0.0, 0.0, 0.0, 1.0]], 0, [&[], &[]], Command::GoStraight);
    let tr = forward(&ego_only, &p);
    assert_eq!(tr.prediction.beta, [1.0, 0.0]);
    for g in [ego_only, line_graph(&[0.3, 1.2])] {
        let r = gradient_check(&Sample { graph: g, label: Action::Brake }, &p, 1e-4);
        assert!(r.failures.is_empty(), "{:?}", r.failures);
    }
}

#[test]
fn node_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let g = random_graph(8, &mut rng);
        let p = ModelParams::init(seed);
        let mut perm: Vec<usize> = (0..g.len()).collect();
        perm.shuffle(&mut rng);
        let a = forward(&g, &p).prediction;
        let b = forward(&g.permuted(&perm), &p).prediction;
        assert!((a.p[0] - b.p[0]).abs() < 1e-12);
        assert!((a.beta[0] - b.beta[0]).abs() < 1e-12);
    }
}

#[test]
fn deleting_temporal_edges_equals_skipping_temporal_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(7, &mut rng);
    let p = ModelParams::init(3);
    let spatial: Vec<(u32, u32, f64)> = (0..g.len())
        .flat_map(|i| {
            let adj = &g.adjacency[0];
            adj.range(i)
                .filter(move |&k| (adj.neighbor[k] as usize) > i)
                .map(move |k| (i as u32, adj.neighbor[k], adj.attr[k]))
        })
        .collect();
    let stripped = GraphInput::from_parts(g.inputs.clone(), g.ego, [&spatial, &[]], g.command);
    let a = forward(&stripped, &p);
    let b = forward_restricted(&g, &p, [true, false]);
    assert_eq!(b.prediction.beta, [1.0, 0.0]);
    assert!((a.prediction.p[0] - b.prediction.p[0]).abs() < 1e-12);
}

#[test]
fn temporal_attributes_are_signed_by_direction() {
    let inputs = vec![[0.0, 0.0, 0.0, 1.0], [0.1, 0.0, 0.0, 0.0], [0.2, 0.0, 0.0, 0.0]];
    let g = GraphInput::from_parts(inputs, 0, [&[(0, 1, 0.5)], &[(1, 2, 0.3)]], Command::GoStraight);
    let t = &g.adjacency[1];
    assert_eq!((t.neighbor[t.range(1)][0], t.attr[t.range(1)][0]), (2, -0.3));
    assert_eq!((t.neighbor[t.range(2)][0], t.attr[t.range(2)][0]), (1, 0.3));
    let s = &g.adjacency[0];
    assert_eq!(s.attr[s.range(0)][0], 0.5);
    assert_eq!(s.attr[s.range(1)][0], 0.5);

    // reversing the temporal edge changes the output
    let r = GraphInput::from_parts(g.inputs.clone(), 0, [&[(0, 1, 0.5)], &[(2, 1, 0.3)]], Command::GoStraight);
    let p = ModelParams::init(2);
    let a = forward(&g, &p).prediction;
    assert!((a.p[0] - forward(&r, &p).prediction.p[0]).abs() > 1e-9);

    let b = forward(&g.permuted(&[2, 0, 1]), &p).prediction;
    assert!((a.p[0] - b.p[0]).abs() < 1e-12);
    assert_eq!(g.permuted(&[2, 0, 1]).permuted(&[1, 2, 0]), g);
}
