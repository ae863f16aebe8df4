//! Adjustment subproblems: minimize a separable loss to one or more anchors
//! over a [`ConstraintSet`], optionally inside a loss ball around a feasible
//! center.
//!
//! * [`project`] solves `argmin_z { L(z, anchor) | z ∈ C }`, the loss-matched
//!   projection. For MSE it is the Euclidean projection onto `C`.
//! * [`project_ball_intersection`] adds the trust constraint
//!   `L(z, center) ≤ β`.
//! * [`minimize_terms`] handles weighted sums `Σ_j w_j L(z, a_j)`.
//!
//! All three run consensus ADMM (see the `admm` module) with closed-form
//! proximal steps. Squared-loss solutions without auxiliary variables are
//! finished by an exact active-set solve.

mod admm;
mod ball;
mod polish;
mod rows;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, MEMBERSHIP_TOL};
use crate::error::{check_dim, Error, Result};
use crate::losses::{loss as mean_loss, LossSpec, MatchedNorm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Bound on the primal and dual residuals (max-norm, normalized units).
    pub tolerance: f64,
    pub max_iterations: usize,
    pub warm_start: bool,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Exact active-set finish for squared losses.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-7, max_iterations: 20_000, warm_start: true, rho: 1.0, polish: true }
    }
}

/// Solver state carried from one solve to the next nearby one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    zbar: Vec<f64>,
    duals: Vec<Vec<f64>>,
    row_multipliers: Vec<f64>,
    rho: f64,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    /// Output coordinates `z`.
    pub solution: Vec<f64>,
    /// `(z, u)` including auxiliaries.
    pub extended: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The squared-loss active-set finish produced the solution.
    pub polished: bool,
    pub warm: WarmStart,
}

impl SolverReport {
    fn exact(cs: &ConstraintSet, z: Vec<f64>) -> Self {
        SolverReport {
            extended: cs.extend(&z),
            solution: z,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
            converged: true,
            polished: false,
            warm: WarmStart::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Trust<'a> {
    pub center: &'a [f64],
    /// Radius β in loss units.
    pub radius: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionProblem<'a> {
    pub loss: LossSpec,
    pub anchor: &'a [f64],
    pub constraints: &'a ConstraintSet,
    pub trust: Option<Trust<'a>>,
}

pub fn project(problem: &ProjectionProblem<'_>, opts: &SolverOptions) -> Result<SolverReport> {
    project_warm(problem, opts, None)
}

pub fn project_warm(problem: &ProjectionProblem<'_>, opts: &SolverOptions, warm: Option<&WarmStart>) -> Result<SolverReport> {
    match problem.trust {
        Some(t) => project_ball_intersection_warm(&problem.loss, problem.anchor, t.center, t.radius, problem.constraints, opts, warm),
        None => minimize_terms(&problem.loss, &[(1.0, problem.anchor)], problem.constraints, opts, warm),
    }
}

/// `argmin_z { Σ_j w_j L(z, a_j) | z ∈ C }` with nonnegative weights.
pub fn minimize_terms(
    loss: &LossSpec,
    terms: &[(f64, &[f64])],
    cs: &ConstraintSet,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<SolverReport> {
    loss.validate()?;
    validate_opts(opts)?;
    let n = cs.n();
    if terms.is_empty() || terms.iter().any(|(w, _)| !(*w >= 0.0 && w.is_finite())) || terms.iter().all(|(w, _)| *w == 0.0) {
        return Err(Error::InvalidParameter("objective weights must be finite, >= 0 and not all zero".into()));
    }
    for (_, a) in terms {
        check_dim(n, a.len())?;
    }
    let active: Vec<(f64, &[f64])> = terms.iter().copied().filter(|(w, _)| *w > 0.0).collect();

    if cs.is_box_only() && active.len() == 1 {
        let a = active[0].1;
        let z: Vec<f64> = (0..n).map(|k| a[k].clamp(cs.lower()[k], cs.upper()[k])).collect();
        return Ok(SolverReport::exact(cs, z));
    }

    let start = warm.map(|w| &w.zbar[..n.min(w.zbar.len())]).filter(|s| s.len() == n).unwrap_or(active[0].1);
    let absolute = |x: &[f64], guess: f64| polish::polish_absolute(cs, &active, x, guess);
    let finish: Option<admm::Finish<'_>> = match loss {
        LossSpec::Mae if opts.polish => Some(&absolute),
        _ => None,
    };
    let out = admm::solve(loss, &active, cs, None, start, warm, opts, finish);
    let mut report = SolverReport {
        solution: out.extended[..n].to_vec(),
        extended: out.extended,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
        iterations: out.iterations,
        converged: out.converged,
        polished: out.finished,
        warm: out.warm,
    };
    if out.finished {
        report.primal_residual = cs.max_violation(&report.extended);
        report.dual_residual = 0.0;
    }
    if opts.polish && matches!(loss, LossSpec::Mse) && cs.n_aux() == 0 {
        let total: f64 = active.iter().map(|(w, _)| w).sum();
        let anchor: Vec<f64> = (0..n).map(|k| active.iter().map(|(w, a)| w * a[k]).sum::<f64>() / total).collect();
        if let Some(z) = polish::polish_squared(cs, &anchor, &report.extended) {
            let viol = cs.max_violation(&z);
            if viol <= 1e-9 {
                report.solution = z.clone();
                report.extended = z;
                report.primal_residual = viol;
                report.dual_residual = 0.0;
                report.converged = true;
                report.polished = true;
            }
        }
    }
    Ok(report)
}

/// `argmin_z { L(z, anchor) | L(z, center) ≤ β, z ∈ C }` for a feasible center.
pub fn project_ball_intersection(
    loss: &LossSpec,
    anchor: &[f64],
    center: &[f64],
    beta: f64,
    cs: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    project_ball_intersection_warm(loss, anchor, center, beta, cs, opts, None)
}

pub fn project_ball_intersection_warm(
    loss: &LossSpec,
    anchor: &[f64],
    center: &[f64],
    beta: f64,
    cs: &ConstraintSet,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<SolverReport> {
    check_dim(cs.n(), anchor.len())?;
    check_dim(cs.n(), center.len())?;
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("trust radius must be >= 0, got {beta}")));
    }
    if !cs.is_member(center, MEMBERSHIP_TOL)? {
        return Err(Error::Infeasible);
    }
    if beta == 0.0 {
        return Ok(SolverReport::exact(cs, center.to_vec()));
    }
    let free = minimize_terms(loss, &[(1.0, anchor)], cs, opts, warm)?;
    if beta.is_infinite() || mean_loss(loss, &free.solution, center)? <= beta {
        return Ok(free);
    }
    match loss {
        LossSpec::Mse => ball_bisection(anchor, center, beta, cs, opts, free),
        _ => ball_splitting(loss, anchor, center, beta, cs, opts, Some(&free.warm)),
    }
}

/// Trust-ball projection with the ball as its own ADMM block. Used for MAE and
/// Huber; available for MSE as an independent route.
pub fn project_ball_intersection_splitting(
    loss: &LossSpec,
    anchor: &[f64],
    center: &[f64],
    beta: f64,
    cs: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    check_dim(cs.n(), anchor.len())?;
    check_dim(cs.n(), center.len())?;
    if !cs.is_member(center, MEMBERSHIP_TOL)? {
        return Err(Error::Infeasible);
    }
    ball_splitting(loss, anchor, center, beta, cs, opts, None)
}

fn ball_splitting(
    loss: &LossSpec,
    anchor: &[f64],
    center: &[f64],
    beta: f64,
    cs: &ConstraintSet,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<SolverReport> {
    let n = cs.n();
    let ball = admm::Ball { center, radius: beta * n as f64 };
    let out = admm::solve(loss, &[(1.0, anchor)], cs, Some(ball), center, warm, opts, None);
    Ok(SolverReport {
        solution: out.extended[..n].to_vec(),
        extended: out.extended,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
        iterations: out.iterations,
        converged: out.converged,
        polished: false,
        warm: out.warm,
    })
}

// For MSE, L(z, a) + μ L(z, c) is a scaled squared distance to the blend
// (a + μc)/(1 + μ), so each multiplier costs one projection. L(z(μ), c) is
// nonincreasing in μ; bisect for the smallest μ whose projection lies in the
// ball.
fn ball_bisection(
    anchor: &[f64],
    center: &[f64],
    beta: f64,
    cs: &ConstraintSet,
    opts: &SolverOptions,
    free: SolverReport,
) -> Result<SolverReport> {
    let mut warm = free.warm.clone();
    let mut iterations = free.iterations;
    let eval = |mu: f64, warm: &mut WarmStart, iterations: &mut usize| -> Result<(SolverReport, f64)> {
        let blend: Vec<f64> = anchor.iter().zip(center).map(|(a, c)| (a + mu * c) / (1.0 + mu)).collect();
        let r = minimize_terms(&LossSpec::Mse, &[(1.0, &blend)], cs, opts, Some(warm))?;
        *warm = r.warm.clone();
        *iterations += r.iterations;
        let phi = mean_loss(&LossSpec::Mse, &r.solution, center)?;
        Ok((r, phi))
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut best, mut phi_hi) = eval(hi, &mut warm, &mut iterations)?;
    while phi_hi > beta {
        lo = hi;
        hi *= 4.0;
        if hi > 1e18 {
            return Ok(SolverReport::exact(cs, center.to_vec()));
        }
        let (r, phi) = eval(hi, &mut warm, &mut iterations)?;
        best = r;
        phi_hi = phi;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi || beta - phi_hi <= 1e-14 * beta {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (r, phi) = eval(mid, &mut warm, &mut iterations)?;
        if phi > beta {
            lo = mid;
        } else {
            hi = mid;
            best = r;
            phi_hi = phi;
        }
    }
    best.iterations = iterations;
    Ok(best)
}

/// Euclidean projection of `start` onto the extended polyhedron, used to
/// certify nonemptiness.
pub(crate) fn feasibility_probe(cs: &ConstraintSet, start: &[f64], opts: &SolverOptions) -> Result<SolverReport> {
    minimize_terms(&LossSpec::Mse, &[(1.0, start)], cs, opts, None)
}

/// Largest ratio `‖P(x₁) − P(x₂)‖ / ‖x₁ − x₂‖` over the given pairs, in L2
/// for MSE and L1 otherwise. Pairs with `x₁ = x₂` are skipped.
pub fn lipschitz_ratio(
    loss: &LossSpec,
    cs: &ConstraintSet,
    pairs: &[(Vec<f64>, Vec<f64>)],
    opts: &SolverOptions,
) -> Result<f64> {
    let norm = match loss {
        LossSpec::Mse => MatchedNorm::L2,
        _ => MatchedNorm::L1,
    };
    let mut best = 0.0f64;
    for (a, b) in pairs {
        let den = norm.distance(a, b);
        if den == 0.0 {
            continue;
        }
        let pa = minimize_terms(loss, &[(1.0, a)], cs, opts, None)?;
        let pb = minimize_terms(loss, &[(1.0, b)], cs, opts, None)?;
        best = best.max(norm.distance(&pa.solution, &pb.solution) / den);
    }
    Ok(best)
}

/// Sampled lower bound on the Lipschitz constant of the loss-matched
/// projection onto `cs`: `samples` points uniform in `[-0.5, 1.5]ⁿ`, paired
/// consecutively.
pub fn lipschitz_probe(loss: &LossSpec, cs: &ConstraintSet, samples: usize, seed: u64, opts: &SolverOptions) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidParameter("lipschitz probe needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cs.n();
    let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect() };
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..samples / 2).map(|_| (draw(), draw())).collect();
    lipschitz_ratio(loss, cs, &pairs, opts)
}

fn validate_opts(opts: &SolverOptions) -> Result<()> {
    if !(opts.tolerance > 0.0) || opts.max_iterations == 0 || !(opts.rho > 0.0) {
        return Err(Error::InvalidParameter("solver tolerance, max_iterations and rho must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_box, intersect};

    fn halfspace_x_le(n: usize, bound: f64) -> ConstraintSet {
        let mut a = vec![0.0; n];
        a[0] = 1.0;
        ConstraintSet::polyhedron(n, vec![(a, bound)], vec![]).unwrap()
    }

    fn problem<'a>(loss: LossSpec, anchor: &'a [f64], cs: &'a ConstraintSet) -> ProjectionProblem<'a> {
        ProjectionProblem { loss, anchor, constraints: cs, trust: None }
    }

    #[test]
    fn halfspace_projection_mse() {
        let cs = halfspace_x_le(2, 0.5);
        let r = project(&problem(LossSpec::Mse, &[1.0, 0.0], &cs), &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.solution[0] - 0.5).abs() < 1e-12 && r.solution[1].abs() < 1e-12, "{:?}", r.solution);
    }

    #[test]
    fn feasible_anchor_is_returned() {
        let cs = halfspace_x_le(3, 0.5);
        for loss in [LossSpec::Mse, LossSpec::Mae, LossSpec::Huber { threshold: 0.1 }] {
            let a = [0.1, 0.7, -0.2];
            let r = project(&problem(loss, &a, &cs), &SolverOptions::default()).unwrap();
            for (s, e) in r.solution.iter().zip(a) {
                assert!((s - e).abs() < 1e-6, "{loss:?}: {:?}", r.solution);
            }
        }
    }

    #[test]
    fn box_only_is_clamp() {
        let cs = build_box(0.0, 1.0, 3).unwrap();
        let r = project(&problem(LossSpec::Mae, &[1.5, 0.5, -0.5], &cs), &SolverOptions::default()).unwrap();
        assert_eq!(r.solution, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn zero_radius_trust_returns_center() {
        let cs = build_box(0.0, 1.0, 2).unwrap();
        let r = project_ball_intersection(&LossSpec::Mse, &[1.0, 1.0], &[0.2, 0.3], 0.0, &cs, &SolverOptions::default()).unwrap();
        assert_eq!(r.solution, vec![0.2, 0.3]);
    }

    #[test]
    fn infeasible_center_is_error() {
        let cs = build_box(0.0, 1.0, 2).unwrap();
        let r = project_ball_intersection(&LossSpec::Mse, &[1.0, 1.0], &[2.0, 0.3], 0.1, &cs, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Infeasible)));
    }

    #[test]
    fn mse_trust_ball_routes_agree() {
        let cs = intersect(&build_box(0.0, 1.0, 3).unwrap(), &halfspace_x_le(3, 0.6)).unwrap();
        let (a, c) = ([1.0, 1.0, 0.2], [0.0, 0.1, 0.0]);
        let opts = SolverOptions { tolerance: 1e-10, max_iterations: 100_000, ..SolverOptions::default() };
        let bis = project_ball_intersection(&LossSpec::Mse, &a, &c, 0.05, &cs, &opts).unwrap();
        let spl = project_ball_intersection_splitting(&LossSpec::Mse, &a, &c, 0.05, &cs, &opts).unwrap();
        for (x, y) in bis.solution.iter().zip(&spl.solution) {
            assert!((x - y).abs() < 1e-6, "{:?} vs {:?}", bis.solution, spl.solution);
        }
        assert!((mean_loss(&LossSpec::Mse, &bis.solution, &c).unwrap() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn composite_mse_matches_blend_projection() {
        let cs = halfspace_x_le(2, 0.2);
        let y = [0.9, 0.4];
        let yh = [0.5, 0.1];
        let opts = SolverOptions::default();
        let r = minimize_terms(&LossSpec::Mse, &[(1.0, &y), (1.0, &yh)], &cs, &opts, None).unwrap();
        let blend = [0.7, 0.25];
        let p = project(&problem(LossSpec::Mse, &blend, &cs), &opts).unwrap();
        for (x, z) in r.solution.iter().zip(&p.solution) {
            assert!((x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_needs_two_samples() {
        let cs = build_box(0.0, 1.0, 2).unwrap();
        assert!(lipschitz_probe(&LossSpec::Mse, &cs, 1, 0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn probe_skips_identical_pair() {
        let cs = build_box(0.0, 1.0, 2).unwrap();
        let p = vec![(vec![0.3, 2.0], vec![0.3, 2.0])];
        assert_eq!(lipschitz_ratio(&LossSpec::Mse, &cs, &p, &SolverOptions::default()).unwrap(), 0.0);
    }
}
