//! Error-dynamics matrix, nonsmooth Lyapunov quantities and convergence
//! certificates.
//!
//! Along the closed loop the angle errors obey `eps' = -A sgn(eps)` with `A`
//! symmetric, positive semi-definite and cyclic tridiagonal. With
//! `V(eps) = |eps|_1`, the Lie derivative along `eta = sgn(eps)` is
//! `-eta^T A eta <= -(1 / sum |e_i|) |E D eta|^2`, which yields the rate
//! `kappa = beta lambda_2(E^T E) / (gamma n)` and the finite-time bound
//! `V(eps(0)) / kappa`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::controller::SignPolicy;
use crate::error::{FormationError, Result};
use crate::formation::{errors, FormationState, TargetSpec};
use crate::geometry::{perp, projector, quadratic, Vec2};
use crate::simulator::{collision_horizon, TrajectoryRecord};

/// Below this angle gap the slope `w` is replaced by its limit.
const W_FACTOR_GAP: f64 = 1e-7;

/// The matrix `A` of `eps' = -A sgn(eps)` for one state.
#[derive(Debug, Clone)]
pub struct ErrorMatrix {
    pub a: DMatrix<f64>,
    pub state: FormationState,
}

impl ErrorMatrix {
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.a * x))
    }

    /// Eigenvalues of `A` in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        symmetric_eigenvalues(&self.a)
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.a - self.a.transpose()).amax()
    }
}

/// Assembles `A` entry by entry:
///
/// ```text
/// a_{i,i-1} = g_i^T P_{i-1} g_{i-2} / |e_{i-1}|
/// a_{i,i}   = g_i^T P_{i-1} g_i / |e_{i-1}| + g_{i-1}^T P_i g_{i-1} / |e_i|
/// a_{i,i+1} = g_{i-1}^T P_i g_{i+1} / |e_i|
/// ```
///
/// with `P_i = I - g_i g_i^T`.
pub fn assemble_a(state: &FormationState) -> ErrorMatrix {
    let n = state.n();
    let g: Vec<Vec2> = state.bearings().iter().map(|b| b.vec()).collect();
    let p: Vec<_> = state.bearings().iter().map(|&b| projector(b)).collect();
    let len = state.edge_lengths();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        let ip1 = (i + 1) % n;
        a[(i, im1)] += quadratic(g[i], &p[im1], g[im2]) / len[im1];
        a[(i, i)] +=
            quadratic(g[i], &p[im1], g[i]) / len[im1] + quadratic(g[im1], &p[i], g[im1]) / len[i];
        a[(i, ip1)] += quadratic(g[im1], &p[i], g[ip1]) / len[i];
    }
    ErrorMatrix {
        a,
        state: state.clone(),
    }
}

/// `sum_i (1/|e_i|) w_i^T P_i w_i` with `w_i = g_{i+1} x_{i+1} + g_{i-1} x_i`,
/// the projector-sum form of `x^T A x`.
pub fn projector_sum_form(state: &FormationState, x: &[f64]) -> f64 {
    let n = state.n();
    assert_eq!(x.len(), n, "vector length must match the ring size");
    let g: Vec<Vec2> = state.bearings().iter().map(|b| b.vec()).collect();
    let len = state.edge_lengths();
    state
        .bearings()
        .iter()
        .enumerate()
        .map(|(i, &gi)| {
            let ip1 = (i + 1) % n;
            let im1 = (i + n - 1) % n;
            let w = x[ip1] * g[ip1] + x[i] * g[im1];
            quadratic(w, &projector(gi), w) / len[i]
        })
        .sum()
}

/// `V(eps) = sum |eps_i|`.
pub fn lyapunov(eps: &[f64]) -> f64 {
    eps.iter().map(|e| e.abs()).sum()
}

/// The generalized gradient of `V` at `eps`: the box with `{sgn(eps_i)}` in
/// nonzero components and `[-1, 1]` in zero components.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBox {
    pub intervals: Vec<(f64, f64)>,
}

impl GradientBox {
    /// The element of least Euclidean norm.
    pub fn least_norm(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .map(|&(lo, hi)| {
                if lo <= 0.0 && 0.0 <= hi {
                    0.0
                } else if lo > 0.0 {
                    lo
                } else {
                    hi
                }
            })
            .collect()
    }

    pub fn contains(&self, eta: &[f64]) -> bool {
        eta.len() == self.intervals.len()
            && self
                .intervals
                .iter()
                .zip(eta)
                .all(|(&(lo, hi), &x)| lo <= x && x <= hi)
    }

    /// Smallest norm of any element whose zero components are chosen freely.
    pub fn min_norm(&self) -> f64 {
        self.least_norm().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn gradient_box(eps: &[f64]) -> GradientBox {
    GradientBox {
        intervals: eps
            .iter()
            .map(|&e| {
                if e > 0.0 {
                    (1.0, 1.0)
                } else if e < 0.0 {
                    (-1.0, -1.0)
                } else {
                    (-1.0, 1.0)
                }
            })
            .collect(),
    }
}

/// `-eta^T A eta` with `eta` the (deadbanded) sign of the current errors.
/// Pass a zero deadband for the exact sign.
pub fn lie_derivative_value(
    state: &FormationState,
    spec: &TargetSpec,
    policy: &SignPolicy,
) -> Result<f64> {
    let eps = errors(state, spec)?;
    let eta = DVector::from_iterator(eps.len(), eps.iter().map(|&e| policy.sign(e)));
    Ok(-assemble_a(state).quadratic_form(&eta))
}

/// Incidence matrix `E` of the directed cycle `1 -> 2 -> ... -> n -> 1`:
/// row `i` has `+1` in column `i` and `-1` in column `i + 1`.
pub fn incidence_matrix(n: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    for i in 0..n {
        e[(i, i)] = 1.0;
        e[(i, (i + 1) % n)] = -1.0;
    }
    e
}

/// `E` and the diagonal of `D` with `D_ii = <g_i_perp, g_{i-1}> = sin(theta_i)`.
#[derive(Debug, Clone)]
pub struct CycleFactorization {
    pub e: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl CycleFactorization {
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d)
    }

    /// `h = E D eta`.
    pub fn h(&self, eta: &DVector<f64>) -> DVector<f64> {
        &self.e * self.d.component_mul(eta)
    }

    /// `lambda_1(D^2) = min_i D_ii^2`.
    pub fn min_d_squared(&self) -> f64 {
        self.d.iter().map(|d| d * d).fold(f64::INFINITY, f64::min)
    }
}

pub fn cycle_factorization(state: &FormationState) -> CycleFactorization {
    let n = state.n();
    let g = state.bearings();
    let d = DVector::from_iterator(
        n,
        (0..n).map(|i| perp(g[i]).vec().dot(g[(i + n - 1) % n].vec())),
    );
    CycleFactorization {
        e: incidence_matrix(n),
        d,
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Second-smallest eigenvalue of the cycle Laplacian `E^T E`.
pub fn lambda2_cycle(n: usize) -> f64 {
    assert!(n >= 3, "cycle needs at least 3 vertices");
    let e = incidence_matrix(n);
    symmetric_eigenvalues(&(e.transpose() * e))[1]
}

/// Outcome of sampling `x^T B x` over unit vectors with mixed-sign entries.
#[derive(Debug, Clone, Serialize)]
pub struct InfimumCheck {
    pub samples: usize,
    pub min_sampled: f64,
    /// `lambda_2(B) / n`.
    pub bound: f64,
    /// `min_sampled >= bound - 1e-9`.
    pub holds: bool,
    /// `min_sampled / bound`.
    pub ratio: f64,
    pub best: Vec<f64>,
}

/// Draws `samples` unit vectors whose entries are not all of one sign and
/// compares the smallest `x^T B x` with `lambda_2(B) / n`.
///
/// `B` must be symmetric PSD with `lambda_1 = 0`, `B 1 = 0` and
/// `lambda_2 > 0`.
pub fn sampled_infimum_check(b: &DMatrix<f64>, samples: usize, seed: u64) -> Result<InfimumCheck> {
    let n = b.nrows();
    let violated = |msg: String| Err(FormationError::HypothesisViolated(msg));
    if n < 2 || b.ncols() != n {
        return violated(format!(
            "matrix must be square with n >= 2, got {}x{}",
            n,
            b.ncols()
        ));
    }
    if samples == 0 {
        return Err(FormationError::InvalidInput(
            "need at least one sample".into(),
        ));
    }
    let scale = b.amax().max(1.0);
    if (b - b.transpose()).amax() > 1e-12 * scale {
        return violated("matrix is not symmetric".into());
    }
    let values = symmetric_eigenvalues(b);
    let tol = 1e-9 * scale;
    if values[0] < -tol {
        return violated(format!(
            "not positive semi-definite (lambda_1 = {:e})",
            values[0]
        ));
    }
    if values[0].abs() > tol {
        return violated(format!("lambda_1 = {:e} is not zero", values[0]));
    }
    let ones = DVector::from_element(n, 1.0);
    let residual = (b * &ones).norm();
    if residual > tol * (n as f64).sqrt() {
        return violated(format!("1 is not in the null space (|B 1| = {residual:e})"));
    }
    if values[1] <= tol {
        return violated(format!("lambda_2 = {:e} is not positive", values[1]));
    }
    let bound = values[1] / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = DVector::zeros(n);
    let mut min_sampled = f64::INFINITY;
    let mut x = DVector::zeros(n);
    for _ in 0..samples {
        let mut positive = 0;
        for k in 0..n {
            let mag: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            let sign = if rng.random::<bool>() {
                positive += 1;
                1.0
            } else {
                -1.0
            };
            x[k] = sign * mag;
        }
        if positive == 0 || positive == n {
            let k = rng.random_range(0..n);
            x[k] = -x[k];
        }
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        x /= norm;
        let value = x.dot(&(b * &x));
        if value < min_sampled {
            min_sampled = value;
            best.copy_from(&x);
        }
    }

    Ok(InfimumCheck {
        samples,
        min_sampled,
        bound,
        holds: min_sampled >= bound - 1e-9,
        ratio: min_sampled / bound,
        best: best.iter().copied().collect(),
    })
}

/// Slope `w = (cos theta - cos theta*) / (theta - theta*)`, so that
/// `eps_i = w_i (theta_i - theta_i*)`. Tends to `-sin theta*` as the gap
/// closes.
pub fn w_factor(theta: f64, theta_star: f64) -> f64 {
    let gap = theta - theta_star;
    if gap.abs() < W_FACTOR_GAP {
        -theta_star.sin()
    } else {
        (theta.cos() - theta_star.cos()) / gap
    }
}

/// `kappa = beta lambda_2 / (gamma n)`.
pub fn kappa(beta: f64, lambda2: f64, gamma: f64, n: usize) -> f64 {
    beta * lambda2 / (gamma * n as f64)
}

/// Convergence certificate of a converged run.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub n: usize,
    pub v0: f64,
    pub t_f: f64,
    pub t_star: f64,
    /// Largest perimeter `sum |e_i|` over recorded samples up to `t_f`.
    pub gamma: f64,
    /// Smallest `lambda_1(D^2)` over recorded samples up to `t_f`.
    pub beta: f64,
    pub lambda2_ete: f64,
    pub kappa: f64,
    /// `V(eps(0)) / kappa`.
    pub time_bound: f64,
    /// `2 V(eps(0)) / kappa`.
    pub displacement_bound: f64,
    /// `max_i |z_i(t_f) - z_i(0)|`.
    pub max_displacement: f64,
    pub time_ok: bool,
    pub displacement_ok: bool,
    /// `t_f < T*`: convergence finished before any collision was possible.
    /// A sufficient condition only, so it is not part of [`Self::all_pass`].
    pub horizon_ok: bool,
}

impl CertificateReport {
    /// The convergence-time and displacement bounds both hold.
    pub fn all_pass(&self) -> bool {
        self.time_ok && self.displacement_ok
    }
}

/// Evaluates the convergence-time, displacement and collision-horizon
/// bounds against a converged trajectory. `gamma` and `beta` are the
/// extremes observed along the trajectory.
pub fn certify(
    trajectory: &TrajectoryRecord,
    state0: &FormationState,
    spec: &TargetSpec,
) -> Result<CertificateReport> {
    let t_f = match trajectory.t_f {
        Some(t) if trajectory.converged => t,
        _ => return Err(FormationError::NotConverged),
    };
    let n = state0.n();
    if trajectory.n != n || spec.n() != n {
        return Err(FormationError::InvalidInput(
            "trajectory, state and target sizes differ".into(),
        ));
    }

    let mut gamma: f64 = 0.0;
    let mut beta = f64::INFINITY;
    let mut final_positions = None;
    for sample in &trajectory.samples {
        if sample.t > t_f {
            break;
        }
        let state = sample.state()?;
        gamma = gamma.max(state.perimeter());
        beta = beta.min(cycle_factorization(&state).min_d_squared());
        final_positions = Some(&sample.positions);
    }
    let final_positions = final_positions.ok_or(FormationError::NotConverged)?;

    let v0 = lyapunov(&errors(state0, spec)?);
    let lambda2 = lambda2_cycle(n);
    let kappa = kappa(beta, lambda2, gamma, n);
    let time_bound = if v0 == 0.0 { 0.0 } else { v0 / kappa };
    let displacement_bound = 2.0 * time_bound;
    let max_displacement = state0
        .positions()
        .iter()
        .zip(final_positions)
        .map(|(a, b)| a.distance(*b))
        .fold(0.0, f64::max);
    let t_star = collision_horizon(state0);

    Ok(CertificateReport {
        n,
        v0,
        t_f,
        t_star,
        gamma,
        beta,
        lambda2_ete: lambda2,
        kappa,
        time_bound,
        displacement_bound,
        max_displacement,
        time_ok: t_f <= time_bound,
        displacement_ok: max_displacement <= displacement_bound,
        horizon_ok: t_f < t_star,
    })
}
