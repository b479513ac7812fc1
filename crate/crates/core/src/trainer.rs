//! Alternating minimization of the hashing objective
//!
//! ```text
//! ||(R V)^T (M L) - r G^T G||^2 + omega ||B - M L||^2 + sum_t lambda_t ||phi_t - P_t V||^2
//! s.t. B in {-1,+1}^(r x n), R^T R = I, V V^T = n I, V 1 = 0
//! ```
//!
//! with `V` (`r x n`) the shared latent factor, `R` (`r x r`) a rotation,
//! `M` (`r x c`) the label projection, `B` (`r x n`) the codes and `P_t`
//! (`k_t x r`) the per-modality projections. Each sweep updates `P`, `M`, `R`,
//! `V` and `B` in that order, each step being the exact minimizer of its
//! subproblem, so the objective never increases.
//!
//! Kernel features are passed instance-major (`n x k_t`), i.e. the transpose
//! of `phi_t` above. No step materializes an `n x n` matrix: every product
//! involving `G^T G` is contracted through the `c x c` Gram blocks cached in
//! [`LabelSet`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::labelspace::LabelSet;
use crate::linalg::{self, frob_dot, max_abs_diff, sign};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Code length `r`.
    pub bits: usize,
    /// Weight of the quantization term `||B - M L||^2`.
    pub omega: f64,
    /// Reconstruction weight per modality.
    pub lambdas: Vec<f64>,
    pub max_iters: usize,
    /// Stop once the relative objective decrease of a sweep drops below this.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: 32,
            omega: 0.5,
            lambdas: vec![0.5, 0.5],
            max_iters: 30,
            rel_tol: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, modalities: usize) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::Validation("code length must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be >= 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::Validation(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Validation(format!("omega must be >= 0, got {}", self.omega)));
        }
        if self.lambdas.len() != modalities {
            return Err(Error::Validation(format!(
                "{} reconstruction weights for {modalities} modalities",
                self.lambdas.len()
            )));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Validation(format!("lambda must be >= 0, got {l}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Shared latent factor, `r x n`.
    pub v: DMatrix<f64>,
    /// Rotation, `r x r`.
    pub rot: DMatrix<f64>,
    /// Label projection, `r x c`.
    pub m: DMatrix<f64>,
    /// Codes, `r x n`, entries exactly +-1.
    pub b: DMatrix<f64>,
    /// Per-modality projections, `k_t x r`.
    pub p: Vec<DMatrix<f64>>,
}

/// Worst-case violations of the state constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintReport {
    /// `max |R^T R - I|`
    pub rotation: f64,
    /// `max |V V^T - n I|`
    pub latent_gram: f64,
    /// `||V 1||`
    pub latent_balance: f64,
    pub codes_binary: bool,
}

impl ConstraintReport {
    /// Tolerances: `1e-8` for the rotation, `1e-8 n` for the Gram matrix and
    /// `1e-6 sqrt(n)` for the balance.
    pub fn holds(&self, n: usize) -> bool {
        let n = n as f64;
        self.rotation < 1e-8
            && self.latent_gram < 1e-8 * n
            && self.latent_balance < 1e-6 * n.sqrt()
            && self.codes_binary
    }
}

impl ModelState {
    pub fn bits(&self) -> usize {
        self.v.nrows()
    }

    pub fn n(&self) -> usize {
        self.v.ncols()
    }

    pub fn constraints(&self) -> ConstraintReport {
        let r = self.rot.nrows();
        let n = self.v.ncols();
        ConstraintReport {
            rotation: max_abs_diff(&self.rot.tr_mul(&self.rot), &DMatrix::identity(r, r)),
            latent_gram: max_abs_diff(
                &(&self.v * self.v.transpose()),
                &(DMatrix::identity(self.v.nrows(), self.v.nrows()) * n as f64),
            ),
            latent_balance: self.v.column_sum().norm(),
            codes_binary: self.b.iter().all(|&x| x == 1.0 || x == -1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Objective after each full sweep.
    pub objective_history: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
}

fn check_inputs(phix: &[DMatrix<f64>], labels: &LabelSet, cfg: &TrainConfig) -> Result<()> {
    cfg.validate(phix.len())?;
    if phix.is_empty() {
        return Err(Error::Validation("at least one modality is required".into()));
    }
    let n = labels.n();
    for (t, x) in phix.iter().enumerate() {
        if x.nrows() != n {
            return Err(Error::Validation(format!(
                "modality {} has {} instances but labels cover {n}",
                t + 1,
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Validation(format!("modality {} has no features", t + 1)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "modality {} has non-finite features",
                t + 1
            )));
        }
    }
    if cfg.bits + 1 > n {
        return Err(Error::Validation(format!(
            "code length r={} needs at least r+1 instances (V V^T = nI with V 1 = 0), got n={n}",
            cfg.bits
        )));
    }
    Ok(())
}

/// Seeded feasible starting point; the projections are fitted immediately.
pub fn init_state(phix: &[DMatrix<f64>], labels: &LabelSet, cfg: &TrainConfig) -> Result<ModelState> {
    check_inputs(phix, labels, cfg)?;
    let (r, n, c) = (cfg.bits, labels.n(), labels.classes());
    let rot = linalg::random_orthogonal(r, &mut seed::rng(cfg.seed, "init/rotation", 0));
    let m = linalg::gaussian(r, c, &mut seed::rng(cfg.seed, "init/label-projection", 0));
    let mut rng = seed::rng(cfg.seed, "init/codes", 0);
    let b = DMatrix::from_fn(r, n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    let v = linalg::random_balanced_latent(r, n, &mut seed::rng(cfg.seed, "init/latent", 0));
    let p = phix.iter().map(|x| update_projection(x, &v)).collect();
    Ok(ModelState { v, rot, m, b, p })
}

/// `P = phi V^T / n`, the least-squares fit of `phi ~ P V` under `V V^T = n I`.
pub fn update_projection(phix: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.ncols() as f64;
    (v * phix).transpose() / n
}

fn numerical_context(what: &str, mat: &DMatrix<f64>) -> Error {
    let eig = SymmetricEigen::new(mat.clone()).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    Error::Numerical(format!(
        "{what}: system is not positive definite (eigenvalue range [{lo:e}, {hi:e}], condition ~{:e})",
        hi.abs() / lo.abs().max(f64::MIN_POSITIVE)
    ))
}

/// Closed-form label projection
/// `M = (r (RV) G^T G L^T + omega B L^T) ((n + omega) L L^T + eps I)^-1`
/// with `eps = 1e-6 tr(L L^T) / c`.
pub fn update_label_projection(
    v: &DMatrix<f64>,
    rot: &DMatrix<f64>,
    b: &DMatrix<f64>,
    labels: &LabelSet,
    omega: f64,
) -> Result<DMatrix<f64>> {
    let r = v.nrows() as f64;
    let n = v.ncols() as f64;
    let c = labels.classes();
    let u_gt = rot * (v * labels.g_transposed());
    let mut rhs = u_gt * labels.l_gt().transpose() * r;
    rhs += b * labels.l_transposed() * omega;

    let eps = 1e-6 * labels.l_lt().trace() / c as f64;
    let system = labels.l_lt() * (n + omega) + DMatrix::identity(c, c) * eps;
    let chol = system
        .clone()
        .cholesky()
        .ok_or_else(|| numerical_context("label projection", &system))?;
    // M S = rhs with S symmetric  <=>  S M^T = rhs^T
    Ok(chol.solve(&rhs.transpose()).transpose())
}

/// Procrustes step: maximize `tr(R^T C)` with `C = r M (L G^T)(G V^T)`.
pub fn update_rotation(m: &DMatrix<f64>, labels: &LabelSet, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = v.nrows() as f64;
    let g_vt = (v * labels.g_transposed()).transpose();
    let cross = m * labels.l_gt() * g_vt * r;
    procrustes(cross)
}

/// Orthogonal `R` maximizing `tr(R^T C)`: `R = U W^T` for `C = U S W^T`.
pub fn procrustes(cross: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = cross
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("rotation SVD did not converge".into()))?;
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    Ok(u * v_t)
}

/// `Z = r R^T M (L G^T) G + sum_t lambda_t P_t^T phi_t`. The latent step
/// maximizes `<V, Z>` over balanced `V`.
pub fn latent_target(
    rot: &DMatrix<f64>,
    m: &DMatrix<f64>,
    labels: &LabelSet,
    phix: &[DMatrix<f64>],
    p: &[DMatrix<f64>],
    lambdas: &[f64],
) -> DMatrix<f64> {
    let r = rot.nrows() as f64;
    let mut z = (rot.tr_mul(m) * labels.l_gt() * r) * labels.g();
    for ((x, pt), &lambda) in phix.iter().zip(p).zip(lambdas) {
        if lambda != 0.0 {
            z += (x * pt).transpose() * lambda;
        }
    }
    z
}

/// Maximize `<V, Z>` subject to `V V^T = n I`, `V 1 = 0`.
///
/// With `Y = Z J` (rows centered) and `Y Y^T = Q diag(w) Q^T`, the maximizer
/// is `sqrt(n) [Q Qbar][P Pbar]^T` where `P = Y^T Q w^-1/2` over the
/// nonzero singular values and `Pbar` completes `P` orthonormally against
/// `1`. The completion draws from `rng`.
pub fn update_latent<R: Rng + ?Sized>(
    rot: &DMatrix<f64>,
    m: &DMatrix<f64>,
    labels: &LabelSet,
    phix: &[DMatrix<f64>],
    p: &[DMatrix<f64>],
    lambdas: &[f64],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let z = latent_target(rot, m, labels, phix, p, lambdas);
    balanced_maximizer(z, rng)
}

/// Relative singular-value cutoff for the rank of the centered latent target.
pub const LATENT_RANK_TOL: f64 = 1e-12;

/// The constrained maximizer of `<V, z>`; see [`update_latent`].
pub fn balanced_maximizer<R: Rng + ?Sized>(mut z: DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let (r, n) = z.shape();
    if r + 1 > n {
        return Err(Error::Validation(format!(
            "latent dimension r={r} needs n >= r+1 instances, got n={n}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("latent target has non-finite entries".into()));
    }
    for mut row in z.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let y = z;
    let eig = SymmetricEigen::try_new(&y * y.transpose(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("latent eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if top.is_nan() || top <= 0.0 {
        return Err(Error::Degenerate(
            "latent target has no signal after centering (all eigenvalues are zero)".into(),
        ));
    }
    let q_all = DMatrix::from_fn(r, r, |i, j| eig.eigenvectors[(i, order[j])]);
    // singular values of Y, as column norms of Y^T Q
    let yt_q = y.tr_mul(&q_all);
    let norms: Vec<f64> = yt_q.column_iter().map(|c| c.norm()).collect();
    let rank = norms
        .iter()
        .take_while(|&&s| s > LATENT_RANK_TOL * norms[0])
        .count();
    let mut columns: Vec<DVector<f64>> = (0..rank).map(|j| yt_q.column(j) / norms[j]).collect();
    columns.extend((rank..r).map(|_| {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }));
    // twice-GS against 1/sqrt(n), completing with the Gaussian draws
    let basis = linalg::orthonormalize(&[linalg::ones_unit(n)], columns, rng);
    let p_all = DMatrix::from_fn(r, n, |j, i| basis[j][i]);
    Ok(q_all * p_all * (n as f64).sqrt())
}

/// `B = sgn(M L)`, ties to +1.
pub fn update_codes(m: &DMatrix<f64>, labels: &LabelSet) -> DMatrix<f64> {
    (m * labels.l()).map(sign)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerms {
    /// `||(RV)^T (ML) - r G^T G||^2`
    pub similarity: f64,
    /// `omega ||B - ML||^2`
    pub quantization: f64,
    /// `lambda_t ||phi_t - P_t V||^2` per modality.
    pub reconstruction: Vec<f64>,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.similarity + self.quantization + self.reconstruction.iter().sum::<f64>()
    }
}

/// Similarity term through `r x r` and `c x c` blocks:
/// `<U U^T, A A^T> - 2r <A G^T, U G^T> + r^2 ||G G^T||^2`, `U = RV`, `A = ML`.
pub fn similarity_term(v: &DMatrix<f64>, rot: &DMatrix<f64>, m: &DMatrix<f64>, labels: &LabelSet) -> f64 {
    let r = v.nrows() as f64;
    let u_ut = rot * (v * v.transpose()) * rot.transpose();
    let a_at = m * labels.l_lt() * m.transpose();
    let u_gt = rot * (v * labels.g_transposed());
    let a_gt = m * labels.l_gt();
    let value = frob_dot(&u_ut, &a_at) - 2.0 * r * frob_dot(&a_gt, &u_gt)
        + r * r * labels.g_gt().norm_squared();
    value.max(0.0)
}

/// `||phi - P V||^2` expanded as `||phi||^2 - 2 <P, (V phi)^T> + <P^T P, V V^T>`.
pub fn reconstruction_term(phix: &DMatrix<f64>, p: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let v_phi = v * phix;
    let cross: f64 = p.iter().zip(v_phi.transpose().iter()).map(|(a, b)| a * b).sum();
    let value = phix.norm_squared() - 2.0 * cross + frob_dot(&p.tr_mul(p), &(v * v.transpose()));
    value.max(0.0)
}

pub fn objective_terms(
    state: &ModelState,
    labels: &LabelSet,
    phix: &[DMatrix<f64>],
    cfg: &TrainConfig,
) -> ObjectiveTerms {
    let ml = &state.m * labels.l();
    ObjectiveTerms {
        similarity: similarity_term(&state.v, &state.rot, &state.m, labels),
        quantization: cfg.omega * (&state.b - ml).norm_squared(),
        reconstruction: phix
            .iter()
            .zip(&state.p)
            .zip(&cfg.lambdas)
            .map(|((x, p), &lambda)| lambda * reconstruction_term(x, p, &state.v))
            .collect(),
    }
}

pub fn objective_value(
    state: &ModelState,
    labels: &LabelSet,
    phix: &[DMatrix<f64>],
    cfg: &TrainConfig,
) -> f64 {
    objective_terms(state, labels, phix, cfg).total()
}

fn at_sweep(err: Error, sweep: usize) -> Error {
    match err {
        Error::Numerical(msg) => Error::Numerical(format!("sweep {sweep}: {msg}")),
        Error::Degenerate(msg) => Error::Degenerate(format!("sweep {sweep}: {msg}")),
        other => other,
    }
}

#[cfg(not(target_arch = "wasm32"))]
struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

// no monotonic clock without JS bindings on wasm32-unknown-unknown
#[cfg(target_arch = "wasm32")]
struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch
    }
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// One full sweep of the five updates, in place.
pub fn sweep(
    state: &mut ModelState,
    phix: &[DMatrix<f64>],
    labels: &LabelSet,
    cfg: &TrainConfig,
    index: usize,
) -> Result<()> {
    for (p, x) in state.p.iter_mut().zip(phix) {
        *p = update_projection(x, &state.v);
    }
    state.m = update_label_projection(&state.v, &state.rot, &state.b, labels, cfg.omega)?;
    state.rot = update_rotation(&state.m, labels, &state.v)?;
    let mut rng = seed::rng(cfg.seed, "sweep/latent", index as u64);
    state.v = update_latent(&state.rot, &state.m, labels, phix, &state.p, &cfg.lambdas, &mut rng)?;
    state.b = update_codes(&state.m, labels);
    Ok(())
}

/// Run sweeps until the relative decrease falls below `cfg.rel_tol` or
/// `cfg.max_iters` sweeps have run.
pub fn train(
    phix: &[DMatrix<f64>],
    labels: &LabelSet,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainReport)> {
    let clock = Stopwatch::start();
    let mut state = init_state(phix, labels, cfg)?;
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for it in 0..cfg.max_iters {
        sweep(&mut state, phix, labels, cfg, it).map_err(|e| at_sweep(e, it))?;
        let value = objective_value(&state, labels, phix, cfg);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("sweep {it}: objective is {value}")));
        }
        history.push(value);
        if let [.., prev, cur] = history[..] {
            if prev - cur < cfg.rel_tol * prev.abs() {
                converged = true;
                break;
            }
        }
    }
    let report = TrainReport {
        iterations_run: history.len(),
        objective_history: history,
        converged,
        wall_time_seconds: clock.seconds(),
    };
    Ok((state, report))
}
