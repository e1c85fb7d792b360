//! Oracles shared by the property suites and the acceptance gate. Each check
//! returns `Err` with a description instead of panicking, so callers can
//! either assert or tally.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sdp::heads::{AxisEmbedding, Head, HeadKind, HeadSpec};
use sdp::nnet::{sample_objective, MlpSpec, Model};
use sdp::{gtf_operator, neighborhood, DyadicLayout, GridShape};

pub type Check = std::result::Result<(), String>;

/// Proptest settings without on-disk regression files.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn shape(dims: &[usize]) -> GridShape {
    GridShape::new(dims.to_vec()).expect("valid dims")
}

/// Central finite differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a − b| / max(max |b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn expect_close(label: &str, got: f64, want: f64, tol: f64) -> Check {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{label}: got {got}, want {want} (tol {tol})"))
    }
}

pub fn expect_grad(label: &str, analytic: &[f64], numeric: &[f64], tol: f64) -> Check {
    let err = rel_err(analytic, numeric, 1e-8);
    if err <= tol {
        Ok(())
    } else {
        Err(format!("{label}: relative gradient error {err:.3e} > {tol:.0e}"))
    }
}

/// Mixture-head parameters with locations spread over the grid.
pub fn head_params(spec: &HeadSpec, rng: &mut impl Rng) -> Vec<f64> {
    let d = spec.shape.ndim();
    let m = spec.components;
    match spec.kind {
        HeadKind::Gmm | HeadKind::Lmm => {
            let block = spec.param_count() / m;
            let mut p = Vec::with_capacity(spec.param_count());
            for _ in 0..m {
                p.push(rng.sample::<f64, _>(StandardNormal));
                for (axis, &size) in spec.shape.dims().iter().enumerate() {
                    let e = spec.embedding[axis];
                    p.push(e.center(0) + rng.random::<f64>() * e.step * (size - 1) as f64);
                }
                let rest = block - 1 - d;
                // Raw scale or Cholesky entries around a few bins of width.
                p.extend((0..rest).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)));
            }
            p
        }
        _ => normals(rng, spec.param_count(), 1.0),
    }
}

/// Heads exercised by the property suites, with `m = 3` for the mixtures.
pub fn spec_for(kind: HeadKind, dims: &[usize], smoothing: Option<(f64, usize, usize)>) -> HeadSpec {
    let mut spec = HeadSpec::new(kind, shape(dims)).with_components(3);
    if kind.is_smoothed() {
        let (l, k, r) = smoothing.unwrap_or((0.1, 2, 2));
        spec = spec.with_smoothing(l, k, r);
    }
    spec
}

pub fn all_leaves(shape: &GridShape) -> Vec<Vec<usize>> {
    (0..shape.total()).map(|i| shape.unflatten(i)).collect()
}

/// Full decode sums to one and agrees with per-path log-likelihoods.
pub fn check_tree_decode(dims: &[usize], seed: u64, logit_scale: f64) -> Check {
    let shape = shape(dims);
    let layout = DyadicLayout::new(&shape);
    let logits = normals(&mut rng(seed), shape.total() - 1, logit_scale);
    let mass = layout.decode_full(&logits).map_err(|e| e.to_string())?;
    expect_close("decode_full sum", mass.iter().sum(), 1.0, 1e-9)?;
    for (i, &m) in mass.iter().enumerate() {
        let lp = layout.log_prob_index(&logits, i).map_err(|e| e.to_string())?;
        expect_close(&format!("path vs decode at cell {i}"), lp.exp(), m, 1e-12)?;
    }
    Ok(())
}

/// Structural invariants of the split tree.
pub fn check_tree_layout(dims: &[usize]) -> Check {
    use sdp::grid_tree::Child;
    let shape = shape(dims);
    let layout = DyadicLayout::new(&shape);
    let n = shape.total();
    if layout.node_count() != n - 1 {
        return Err(format!("{} nodes for {n} cells", layout.node_count()));
    }
    let mut seen = vec![0usize; n];
    for node in layout.nodes() {
        let size = node.hi[node.split_dim] - node.lo[node.split_dim] + 1;
        if size < 2 {
            return Err(format!("node {} splits an extent-1 axis", node.id));
        }
        if node.threshold != node.lo[node.split_dim] + size.div_ceil(2) {
            return Err(format!("node {} is not a balanced split", node.id));
        }
        for child in [node.left, node.right] {
            match child {
                Child::Leaf(cell) => seen[cell] += 1,
                Child::Node(id) if id <= node.id => return Err("child precedes parent".into()),
                Child::Node(_) => {}
            }
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err("cells not covered exactly once".into());
    }
    let max_depth = dims.iter().map(|&s| ceil_log2(s)).sum::<usize>();
    for coord in all_leaves(&shape) {
        let path = layout.path_for(&coord).map_err(|e| e.to_string())?;
        if path.steps.len() != layout.depth() || path.active_len() > max_depth {
            return Err(format!("path of {coord:?} has bad length"));
        }
    }
    Ok(())
}

pub fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n.max(1) - 1).leading_zeros()) as usize
}

/// Sparse path gradient and windowed gather/backward against finite
/// differences and per-leaf evaluation.
pub fn check_tree_grads(dims: &[usize], radius: usize, seed: u64) -> Check {
    let shape = shape(dims);
    let layout = DyadicLayout::new(&shape);
    let mut r = rng(seed);
    let logits = normals(&mut r, shape.total() - 1, 1.0);
    let cell = r.random_range(0..shape.total());
    let coord = shape.unflatten(cell);

    let mut analytic = vec![0.0; logits.len()];
    for (node, g) in layout.log_prob_grad(&logits, &coord).map_err(|e| e.to_string())? {
        analytic[node] += g;
    }
    let numeric = numeric_grad(|l| layout.log_prob(l, &coord).unwrap(), &logits, 1e-6);
    expect_grad("path gradient", &analytic, &numeric, 1e-4)?;

    let window = neighborhood(&shape, &coord, radius).map_err(|e| e.to_string())?;
    let gathered = layout.gather_window_logprobs(&logits, &window).map_err(|e| e.to_string())?;
    for (pos, &leaf) in window.leaves.iter().enumerate() {
        let direct = layout.log_prob_index(&logits, leaf).map_err(|e| e.to_string())?;
        expect_close(&format!("gather at window cell {pos}"), gathered[pos], direct, 1e-12)?;
    }

    let upstream = normals(&mut r, window.leaves.len(), 1.0);
    let mut back = vec![0.0; logits.len()];
    layout
        .window_logprob_backward(&logits, &window, &upstream, 1.0, &mut back)
        .map_err(|e| e.to_string())?;
    let f = |l: &[f64]| {
        let z = layout.gather_window_logprobs(l, &window).unwrap();
        z.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
    };
    expect_grad("window backward", &back, &numeric_grad(f, &logits, 1e-6), 1e-4)
}

/// Every head's full distribution sums to one and matches `log_prob`.
pub fn check_head_normalized(kind: HeadKind, dims: &[usize], seed: u64) -> Check {
    let spec = spec_for(kind, dims, None);
    let params = head_params(&spec, &mut rng(seed));
    let head = Head::new(spec).map_err(|e| e.to_string())?;
    let full = head.full(&params).map_err(|e| e.to_string())?;
    expect_close(&format!("{kind} sum"), full.mass().iter().sum(), 1.0, 1e-9)?;
    for (i, &m) in full.mass().iter().enumerate() {
        let lp = head.log_prob(&params, i).map_err(|e| e.to_string())?;
        if (lp.exp() - m).abs() > 1e-12 {
            return Err(format!("{kind}: log_prob and full disagree at cell {i}"));
        }
    }
    Ok(())
}

/// `∇ log p(y)` against finite differences.
pub fn check_head_grad(kind: HeadKind, dims: &[usize], seed: u64) -> Check {
    let spec = spec_for(kind, dims, None);
    let mut r = rng(seed);
    let params = head_params(&spec, &mut r);
    let total = spec.shape.total();
    let head = Head::new(spec).map_err(|e| e.to_string())?;
    let y = r.random_range(0..total);
    let analytic = head.grad(&params, y).map_err(|e| e.to_string())?;
    let numeric = numeric_grad(|p| head.log_prob(p, y).unwrap(), &params, 1e-6);
    expect_grad(&format!("{kind} log-prob gradient"), &analytic, &numeric, 1e-4)
}

/// Full training loss (likelihood plus λ-weighted window penalty) against
/// finite differences, for the smoothed heads.
pub fn check_penalized_grad(kind: HeadKind, dims: &[usize], order: usize, radius: usize, seed: u64) -> Check {
    let lambda = 0.3;
    let spec = spec_for(kind, dims, Some((lambda, order, radius)));
    let mut r = rng(seed);
    let params = head_params(&spec, &mut r);
    let total = spec.shape.total();
    let head = Head::new(spec).map_err(|e| e.to_string())?;
    let y = r.random_range(0..total);
    let mut analytic = vec![0.0; params.len()];
    head.loss_grad(&params, y, 1.0, &mut analytic).map_err(|e| e.to_string())?;
    let loss = |p: &[f64]| -head.log_prob(p, y).unwrap() + lambda * head.window_penalty(p, y).unwrap();
    expect_grad(&format!("{kind} penalized gradient"), &analytic, &numeric_grad(loss, &params, 1e-7), 1e-4)
}

/// Network plus head: gradient of the per-sample objective with respect to
/// every network weight.
pub fn check_end_to_end_grad(kind: HeadKind, seed: u64) -> Check {
    let spec = spec_for(kind, &[16], Some((0.2, 2, 3)));
    let head = Head::new(spec).map_err(|e| e.to_string())?;
    let mut r = rng(seed);
    let net = MlpSpec::new(3, &[6], head.param_count());
    let model = Model::network(net, &head, &mut r).map_err(|e| e.to_string())?;
    let x = normals(&mut r, 3, 1.0);
    let y = r.random_range(0..16);
    let (_, analytic) = sample_objective(&model, &head, &x, y).map_err(|e| e.to_string())?;
    let f = |p: &[f64]| {
        let mut m = model.clone();
        m.params_mut().copy_from_slice(p);
        sample_objective(&m, &head, &x, y).unwrap().0
    };
    expect_grad(&format!("{kind} end-to-end gradient"), &analytic, &numeric_grad(f, model.params(), 1e-6), 1e-4)
}

/// Polynomials of degree below the order's nullspace dimension vanish:
/// constants for every order, and axis-linear fields for even orders ≥ 2.
pub fn check_gtf_nullspace(dims: &[usize], order: usize) -> Check {
    let shape = shape(dims);
    let op = gtf_operator(&shape, order).map_err(|e| e.to_string())?;
    let constant = vec![1.0; shape.total()];
    let out = op.apply(&constant).map_err(|e| e.to_string())?;
    if out.iter().any(|v| v.abs() > 1e-12) {
        return Err(format!("order {order} does not annihilate constants on {dims:?}"));
    }
    if dims.len() == 1 && order == 2 && shape.total() >= 3 {
        let linear: Vec<f64> = (0..shape.total()).map(|i| i as f64).collect();
        let out = op.apply(&linear).map_err(|e| e.to_string())?;
        // Interior rows of the chain Laplacian vanish on linear fields.
        if out[1..out.len() - 1].iter().any(|v| v.abs() > 1e-12) {
            return Err("chain Laplacian does not annihilate linear fields".into());
        }
    }
    Ok(())
}

/// Edges of the induced subgraph on `cells` (flat indices into `shape`), in
/// the full grid's edge order, as `(a, b)` positions within `cells`.
fn induced_edges(shape: &GridShape, cells: &[usize]) -> Vec<(usize, usize)> {
    let pos = |flat: usize| cells.iter().position(|&c| c == flat);
    let mut edges = Vec::new();
    for i in 0..shape.total() {
        let coord = shape.unflatten(i);
        for axis in 0..shape.ndim() {
            let mut next = coord.clone();
            next[axis] += 1;
            if !shape.contains(&next) {
                continue;
            }
            let j = shape.flatten(&next).expect("in range");
            if let (Some(a), Some(b)) = (pos(i), pos(j)) {
                edges.push((a, b));
            }
        }
    }
    edges
}

fn dense_mul_t(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    // aᵀ b
    let n = a[0].len();
    let m = b[0].len();
    let mut out = vec![vec![0; m]; n];
    for (ra, rb) in a.iter().zip(b) {
        for i in 0..n {
            if ra[i] == 0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += ra[i] * rb[j];
            }
        }
    }
    out
}

fn dense_mul(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let m = b[0].len();
    a.iter()
        .map(|row| {
            let mut out = vec![0; m];
            for (k, &v) in row.iter().enumerate() {
                if v != 0 {
                    for j in 0..m {
                        out[j] += v * b[k][j];
                    }
                }
            }
            out
        })
        .collect()
}

/// The operator built on a window's own grid equals the one built from the
/// induced subgraph of the full grid, and the second-order operator is the
/// degree-minus-adjacency Laplacian.
pub fn check_window_operator(dims: &[usize], center: &[usize], radius: usize, order: usize) -> Check {
    let full = shape(dims);
    let window = neighborhood(&full, center, radius).map_err(|e| e.to_string())?;
    let n = window.leaves.len();
    let edges = induced_edges(&full, &window.leaves);
    if edges.is_empty() {
        return Ok(());
    }
    let d1: Vec<Vec<i64>> = edges
        .iter()
        .map(|&(a, b)| {
            let mut row = vec![0; n];
            row[a] = -1;
            row[b] = 1;
            row
        })
        .collect();
    let mut oracle = d1.clone();
    for k in 1..order {
        oracle = if k % 2 == 1 { dense_mul_t(&d1, &oracle) } else { dense_mul(&d1, &oracle) };
    }
    let op = gtf_operator(&shape(&window.dims()), order).map_err(|e| e.to_string())?;
    if op.to_dense() != oracle {
        return Err(format!("window operator differs from induced subgraph: dims {dims:?} center {center:?} r {radius} k {order}"));
    }
    if order == 2 {
        let mut laplacian = vec![vec![0i64; n]; n];
        for &(a, b) in &edges {
            laplacian[a][a] += 1;
            laplacian[b][b] += 1;
            laplacian[a][b] -= 1;
            laplacian[b][a] -= 1;
        }
        if op.to_dense() != laplacian {
            return Err("second-order operator is not the graph Laplacian".into());
        }
    }
    Ok(())
}

/// Discretized logistic tails: boundary bins absorb the mass beyond the
/// grid, so a single component's masses sum to one and the edge bins match
/// the logistic CDF at the inner edges.
pub fn check_lmm_conservation(bins: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let embedding = AxisEmbedding::spanning(-2.0, 3.0, bins);
    let spec = HeadSpec::new(HeadKind::Lmm, GridShape::line(bins).unwrap())
        .with_components(1)
        .with_embedding(vec![embedding]);
    let head = Head::new(spec).map_err(|e| e.to_string())?;
    let loc = -4.0 + 9.0 * r.random::<f64>();
    let raw: f64 = r.sample(StandardNormal);
    let params = [0.0, loc, raw];
    let scale = raw.exp().ln_1p() + 1e-3;
    let sigma = |t: f64| 1.0 / (1.0 + (-t).exp());
    let full = head.full(&params).map_err(|e| e.to_string())?;
    let mass = full.mass();
    expect_close("logistic mass", mass.iter().sum(), 1.0, 1e-12)?;
    let first_edge = embedding.center(0) + 0.5 * embedding.step;
    let last_edge = embedding.center(bins - 1) - 0.5 * embedding.step;
    expect_close("lower tail", mass[0], sigma((first_edge - loc) / scale), 1e-10)?;
    expect_close("upper tail", mass[bins - 1], 1.0 - sigma((last_edge - loc) / scale), 1e-10)
}

/// SDP with λ = 0 follows UDP exactly: same parameters after every logged
/// step and the same log, bit for bit, for a network and a marginal model.
pub fn check_sdp_zero_is_udp(seed: u64) -> Check {
    use sdp::dataio::Samples;
    use sdp::nnet::{fit_observed, TrainConfig, Validation};

    let mut r = rng(seed);
    let shape = shape(&[12]);
    let n = 60;
    let features = normals(&mut r, n * 3, 1.0);
    let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..12)).collect();
    let data = Samples::new(features, 3, targets, shape.clone()).map_err(|e| e.to_string())?;
    let (train, valid) = data.split_validation(0.25, seed).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        max_steps: Some(40),
        validation: Validation::EverySteps(10),
        log_every: 5,
        seed,
        ..TrainConfig::default()
    };
    let udp = Head::new(HeadSpec::new(HeadKind::Udp, shape.clone())).map_err(|e| e.to_string())?;
    let sdp = Head::new(HeadSpec::new(HeadKind::Sdp, shape).with_smoothing(0.0, 2, 3)).map_err(|e| e.to_string())?;

    let net = MlpSpec::new(3, &[8], udp.param_count()).with_dropout(0.8);
    for marginal in [false, true] {
        let build = |head: &Head| {
            if marginal {
                Ok(Model::marginal(head))
            } else {
                Model::network(net.clone(), head, &mut rng(seed ^ 1))
            }
        };
        let run = |head: &Head| -> std::result::Result<(Vec<Vec<u64>>, String), String> {
            let mut model = build(head).map_err(|e| e.to_string())?;
            let mut snapshots = Vec::new();
            let log = fit_observed(&mut model, head, &train, &valid, &config, |_, m| {
                snapshots.push(m.params().iter().map(|v| v.to_bits()).collect());
            })
            .map_err(|e| e.to_string())?;
            snapshots.push(model.params().iter().map(|v| v.to_bits()).collect());
            let csv: String = log.to_csv().lines().map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a).to_owned() + "\n").collect();
            Ok((snapshots, csv))
        };
        let (a, log_a) = run(&udp)?;
        let (b, log_b) = run(&sdp)?;
        if a != b {
            return Err(format!("parameter trajectories differ (marginal = {marginal})"));
        }
        if log_a != log_b {
            return Err(format!("training logs differ (marginal = {marginal})"));
        }
    }
    Ok(())
}
