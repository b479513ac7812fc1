#![allow(dead_code)]

use ascmh::dataio::{generate_synthetic, RawLabelMatrix};
use ascmh::labelspace::{normalize_labels, LabelSet};
use ascmh::trainer::ModelState;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn signs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Haar-ish orthogonal matrix from the QR of a Gaussian.
pub fn rotation(r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = normal(r, r, rng).qr();
    let (q, rr) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random `r x n` matrix with `V V^T = n I` and `V 1 = 0`, built by
/// centering a Gaussian and orthonormalizing its rows with a QR.
pub fn feasible_latent(r: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut g = normal(n, r, rng);
    for mut col in g.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let q = g.qr().q();
    q.transpose() * (n as f64).sqrt()
}

/// Multi-label matrix with at least one label per instance.
pub fn random_labels(c: usize, n: usize, density: f64, rng: &mut ChaCha8Rng) -> RawLabelMatrix {
    let mut l = DMatrix::from_fn(c, n, |_, _| if rng.random::<f64>() < density { 1.0 } else { 0.0 });
    for j in 0..n {
        if l.column(j).sum() == 0.0 {
            let i = rng.random_range(0..c);
            l[(i, j)] = 1.0;
        }
    }
    RawLabelMatrix::new(l).unwrap()
}

/// Column-normalized labels and the dense `n x n` affinity `G^T G`.
pub fn dense_affinity(l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = l.clone();
    for mut col in g.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    g.transpose() * g
}

/// Objective evaluated term by term with every `n x n` product materialized.
/// `phi_t` is instance-major (`n x k_t`).
#[allow(clippy::too_many_arguments)]
pub fn dense_objective(
    v: &DMatrix<f64>,
    rot: &DMatrix<f64>,
    m: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &[DMatrix<f64>],
    l: &DMatrix<f64>,
    phi: &[DMatrix<f64>],
    omega: f64,
    lambdas: &[f64],
) -> f64 {
    let r = v.nrows() as f64;
    let s = dense_affinity(l);
    let ml = m * l;
    let mut f = ((rot * v).transpose() * &ml - s * r).norm_squared();
    f += omega * (b - &ml).norm_squared();
    for ((x, pt), lam) in phi.iter().zip(p).zip(lambdas) {
        f += lam * (x.transpose() - pt * v).norm_squared();
    }
    f
}

pub fn dense_state_objective(
    st: &ModelState,
    l: &DMatrix<f64>,
    phi: &[DMatrix<f64>],
    omega: f64,
    lambdas: &[f64],
) -> f64 {
    dense_objective(&st.v, &st.rot, &st.m, &st.b, &st.p, l, phi, omega, lambdas)
}

/// Small random problem: labels, kernel-like features and a feasible state.
pub struct Problem {
    pub raw: RawLabelMatrix,
    pub labels: LabelSet,
    pub phi: Vec<DMatrix<f64>>,
    pub state: ModelState,
}

pub fn random_problem(n: usize, c: usize, r: usize, k: [usize; 2], seed: u64) -> Problem {
    let mut g = rng(seed);
    let raw = random_labels(c, n, 0.35, &mut g);
    let labels = normalize_labels(&raw);
    let phi = vec![normal(n, k[0], &mut g), normal(n, k[1], &mut g)];
    let state = ModelState {
        v: feasible_latent(r, n, &mut g),
        rot: rotation(r, &mut g),
        m: normal(r, c, &mut g),
        b: signs(r, n, &mut g),
        p: vec![normal(k[0], r, &mut g), normal(k[1], r, &mut g)],
    };
    Problem {
        raw,
        labels,
        phi,
        state,
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &DMatrix<f64>, h: f64, f: impl Fn(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// Unpacked Hamming distances between rows of two `+-1` matrices.
pub fn brute_distances(q: &DMatrix<f64>, db: &DMatrix<f64>) -> DMatrix<u32> {
    DMatrix::from_fn(q.nrows(), db.nrows(), |i, j| {
        q.row(i).iter().zip(db.row(j).iter()).filter(|(a, b)| a != b).count() as u32
    })
}

/// Full sort by (distance, index).
pub fn brute_ranking(dist: &[u32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[a].cmp(&dist[b]).then(a.cmp(&b)));
    idx
}

pub fn shares_label(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> bool {
    (0..a.nrows()).any(|c| a[(c, i)] > 0.0 && b[(c, j)] > 0.0)
}

/// AP over a relevance vector in ranked order.
pub fn brute_ap(rel: &[bool]) -> (f64, usize) {
    let mut hits = 0;
    let mut sum = 0.0;
    for (pos, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    (if hits == 0 { 0.0 } else { sum / hits as f64 }, hits)
}

/// Brute-force mAP over the whole ranked database, skipping empty queries.
/// `score(q, j)` is a similarity; ties break by index.
pub fn brute_map_by_score(
    nq: usize,
    ndb: usize,
    score: impl Fn(usize, usize) -> f64,
    relevant: impl Fn(usize, usize) -> bool,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for q in 0..nq {
        let s: Vec<f64> = (0..ndb).map(|j| score(q, j)).collect();
        let mut idx: Vec<usize> = (0..ndb).collect();
        idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        let rel: Vec<bool> = idx.iter().map(|&j| relevant(q, j)).collect();
        let (ap, hits) = brute_ap(&rel);
        if hits > 0 {
            sum += ap;
            count += 1;
        }
    }
    sum / count as f64
}

/// Train/query split of the synthetic benchmark set.
pub struct Split {
    pub train: [DMatrix<f64>; 2],
    pub train_labels: RawLabelMatrix,
    pub query: [DMatrix<f64>; 2],
    pub query_labels: RawLabelMatrix,
}

pub fn synthetic_split(n_train: usize, n_query: usize, c: usize, noise: f64, seed: u64) -> Split {
    let data = generate_synthetic(n_train + n_query, c, 32, 16, noise, seed).unwrap();
    let rows = |m: &DMatrix<f64>, lo: usize, hi: usize| m.rows(lo, hi - lo).into_owned();
    let n = n_train + n_query;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let query_idx: Vec<usize> = (n_train..n).collect();
    Split {
        train: [rows(data.x1.values(), 0, n_train), rows(data.x2.values(), 0, n_train)],
        train_labels: data.labels.select(&train_idx),
        query: [rows(data.x1.values(), n_train, n), rows(data.x2.values(), n_train, n)],
        query_labels: data.labels.select(&query_idx),
    }
}

/// Supervised reference: per-modality RBF features on anchors drawn from
/// the training set, ridge-regressed onto one-hot labels; retrieval ranks
/// by the inner product of predicted label scores.
pub fn ridge_label_oracle(split: &Split, anchors: usize, lambda: f64, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let y = split.train_labels.values().transpose();
    let mut predict = |t: usize| -> (DMatrix<f64>, DMatrix<f64>) {
        let x = &split.train[t];
        let n = x.nrows();
        let picks: Vec<usize> = rand::seq::index::sample(&mut g, n, anchors.min(n)).into_vec();
        let a = DMatrix::from_fn(picks.len(), x.ncols(), |i, j| x[(picks[i], j)]);
        let dist = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), a.nrows(), |i, j| (m.row(i) - a.row(j)).norm())
        };
        let dtrain = dist(x);
        let sigma = dtrain.mean();
        let feat = |d: DMatrix<f64>| d.map(|v| (-v * v / (2.0 * sigma * sigma)).exp());
        let ftrain = feat(dtrain);
        let mean = DVector::from_iterator(ftrain.ncols(), ftrain.column_iter().map(|c| c.mean()));
        let center = |mut f: DMatrix<f64>| {
            for (mut col, mu) in f.column_iter_mut().zip(mean.iter()) {
                col.add_scalar_mut(-mu);
            }
            f
        };
        let ftrain = center(ftrain);
        let fquery = center(feat(dist(&split.query[t])));
        let k = ftrain.ncols();
        let w = (ftrain.transpose() * &ftrain + DMatrix::identity(k, k) * lambda)
            .lu()
            .solve(&(ftrain.transpose() * &y))
            .unwrap();
        (&ftrain * &w, &fquery * &w)
    };
    let (train_img, query_img) = predict(0);
    let (train_txt, query_txt) = predict(1);
    let ql = split.query_labels.values();
    let dl = split.train_labels.values();
    let rel = |q: usize, j: usize| shares_label(ql, q, dl, j);
    let nq = ql.ncols();
    let ndb = dl.ncols();
    let i2t = brute_map_by_score(nq, ndb, |q, j| query_img.row(q).dot(&train_txt.row(j)), rel);
    let t2i = brute_map_by_score(nq, ndb, |q, j| query_txt.row(q).dot(&train_img.row(j)), rel);
    (i2t, t2i)
}

/// Relative size of the finite-difference gradient at the P-step output.
pub fn projection_gradient(seed: u64) -> f64 {
    let pb = random_problem(40, 4, 5, [7, 6], seed);
    let x = &pb.phi[0];
    let v = &pb.state.v;
    let p = ascmh::trainer::update_projection(x, v);
    let f = |p: &DMatrix<f64>| (x.transpose() - p * v).norm_squared();
    let grad = fd_gradient(&p, 1e-5, f);
    let scale = fd_gradient(&DMatrix::zeros(p.nrows(), p.ncols()), 1e-5, f).norm();
    grad.norm() / scale
}

/// Relative size of the finite-difference gradient at the M-step output.
pub fn label_projection_gradient(seed: u64, omega: f64) -> f64 {
    let pb = random_problem(40, 4, 6, [5, 5], seed);
    let st = &pb.state;
    let l = pb.raw.values();
    let m = ascmh::trainer::update_label_projection(&st.v, &st.rot, &st.b, &pb.labels, omega).unwrap();
    let f = |m: &DMatrix<f64>| {
        dense_objective(&st.v, &st.rot, m, &st.b, &st.p, l, &pb.phi, omega, &[0.0, 0.0])
    };
    let grad = fd_gradient(&m, 1e-5, f);
    let scale = fd_gradient(&DMatrix::zeros(m.nrows(), m.ncols()), 1e-5, f).norm();
    grad.norm() / scale
}

/// `(objective at the R-step output, best objective over random rotations)`.
pub fn rotation_vs_random(seed: u64, samples: usize) -> (f64, f64) {
    let pb = random_problem(30, 4, 5, [4, 4], seed);
    let st = &pb.state;
    let l = pb.raw.values();
    let rot = ascmh::trainer::update_rotation(&st.m, &pb.labels, &st.v).unwrap();
    let f = |r: &DMatrix<f64>| dense_objective(&st.v, r, &st.m, &st.b, &st.p, l, &pb.phi, 0.5, &[0.5, 0.5]);
    let mut g = rng(seed ^ 0xabcd);
    let best = (0..samples).map(|_| f(&rotation(5, &mut g))).fold(f64::INFINITY, f64::min);
    (f(&rot), best)
}

/// `(<V*, Z>, best <V, Z> over random feasible V, objective at V*, best
/// objective over the same random V)`.
pub fn latent_vs_random(seed: u64, samples: usize) -> (f64, f64, f64, f64) {
    let (n, r) = (30, 5);
    let pb = random_problem(n, 4, r, [4, 6], seed);
    let st = &pb.state;
    let l = pb.raw.values();
    let lambdas = [0.5, 0.3];
    let v = ascmh::trainer::update_latent(&st.rot, &st.m, &pb.labels, &pb.phi, &st.p, &lambdas, &mut rng(seed + 1))
        .unwrap();
    // target assembled densely
    let s = dense_affinity(l);
    let mut z = st.rot.transpose() * &st.m * l * &s * r as f64;
    for ((x, p), lam) in pb.phi.iter().zip(&st.p).zip(lambdas) {
        z += p.transpose() * x.transpose() * lam;
    }
    let inner = |v: &DMatrix<f64>| v.dot(&z);
    let f = |v: &DMatrix<f64>| dense_objective(v, &st.rot, &st.m, &st.b, &st.p, l, &pb.phi, 0.5, &lambdas);
    let mut g = rng(seed ^ 0x1234);
    let mut best_inner = f64::NEG_INFINITY;
    let mut best_f = f64::INFINITY;
    for _ in 0..samples {
        let cand = feasible_latent(r, n, &mut g);
        best_inner = best_inner.max(inner(&cand));
        best_f = best_f.min(f(&cand));
    }
    (inner(&v), best_inner, f(&v), best_f)
}

/// Enumerate every `+-1` matrix of an `r x n` instance with `r n <= 16` and
/// return `(objective at B-step output, exhaustive minimum, candidates)`.
pub fn codes_vs_exhaustive(seed: u64, r: usize, n: usize) -> (f64, f64, usize) {
    let mut g = rng(seed);
    let raw = random_labels(3, n, 0.5, &mut g);
    let labels = normalize_labels(&raw);
    let m = normal(r, 3, &mut g);
    let ml = &m * raw.values();
    let b = ascmh::trainer::update_codes(&m, &labels);
    let f = |b: &DMatrix<f64>| (b - &ml).norm_squared();
    let total = 1usize << (r * n);
    let best = (0..total)
        .map(|mask| {
            let cand = DMatrix::from_fn(r, n, |i, j| if mask >> (i * n + j) & 1 == 1 { 1.0 } else { -1.0 });
            f(&cand)
        })
        .fold(f64::INFINITY, f64::min);
    (f(&b), best, total)
}
