//! Convex feasible sets written as linear constraints over an extended
//! variable `(z, u)`, where `u` holds auxiliary variables that linearize
//! absolute values.
//!
//! The fairness constraint bounds the Disparate Impact Discrimination Index
//!
//! ```text
//! DIDI(z) = Σ_p Σ_v | mean(z) − mean(z over rows with feature p = v) |  ≤  ε
//! ```
//!
//! by introducing one `u_{p,v} ≥ |d_{p,v}(z)|` per group (two inequalities
//! each) and a single budget row `Σ u_{p,v} ≤ ε`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ProtectedSpec;
use crate::error::{check_dim, Error, Result};
use crate::solver::{self, SolverOptions};

/// Default membership tolerance in normalized output units.
pub const MEMBERSHIP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Didi,
    Box,
    Custom,
}

/// One linear row `coeffs · x (≤ | =) rhs` over the extended variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

// Auxiliary variables `first .. first + forms.len()` stand for `|form · z|`.
#[derive(Debug, Clone, PartialEq)]
struct AbsBlock {
    first: usize,
    forms: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    n: usize,
    n_aux: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    ineq: Vec<LinearRow>,
    eq: Vec<LinearRow>,
    abs_blocks: Vec<AbsBlock>,
    provenance: Vec<Provenance>,
}

impl ConstraintSet {
    /// Number of output coordinates `z`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_aux(&self) -> usize {
        self.n_aux
    }

    /// Length of the extended variable `(z, u)`.
    pub fn dim(&self) -> usize {
        self.n + self.n_aux
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn inequalities(&self) -> &[LinearRow] {
        &self.ineq
    }

    pub fn equalities(&self) -> &[LinearRow] {
        &self.eq
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// `true` when the only constraints are coordinate bounds.
    pub fn is_box_only(&self) -> bool {
        self.ineq.is_empty() && self.eq.is_empty()
    }

    fn unconstrained(n: usize, provenance: Provenance) -> Self {
        ConstraintSet {
            n,
            n_aux: 0,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            ineq: Vec::new(),
            eq: Vec::new(),
            abs_blocks: Vec::new(),
            provenance: vec![provenance],
        }
    }

    /// `{z : a_j · z ≤ b_j}` plus optional equalities, without auxiliaries.
    pub fn polyhedron(n: usize, ineq: Vec<(Vec<f64>, f64)>, eq: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let mut cs = Self::unconstrained(n, Provenance::Custom);
        for (coeffs, rhs) in ineq {
            check_dim(n, coeffs.len())?;
            cs.ineq.push(LinearRow { coeffs, rhs });
        }
        for (coeffs, rhs) in eq {
            check_dim(n, coeffs.len())?;
            cs.eq.push(LinearRow { coeffs, rhs });
        }
        cs.ensure_nonempty()?;
        Ok(cs)
    }

    /// Point `(z, u)` with every auxiliary set to its smallest admissible value.
    pub fn extend(&self, z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(z);
        x.resize(self.dim(), 0.0);
        for b in &self.abs_blocks {
            for (j, f) in b.forms.iter().enumerate() {
                let d: f64 = f.iter().zip(z).map(|(a, b)| a * b).sum();
                x[b.first + j] = d.abs();
            }
        }
        for k in self.n..self.dim() {
            x[k] = x[k].clamp(self.lower[k], self.upper[k]);
        }
        x
    }

    /// Largest violation of any bound or row at an extended point.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v = 0.0f64;
        for (k, &xk) in x.iter().enumerate() {
            v = v.max(self.lower[k] - xk).max(xk - self.upper[k]);
        }
        for r in &self.ineq {
            v = v.max(r.eval(x) - r.rhs);
        }
        for r in &self.eq {
            v = v.max((r.eval(x) - r.rhs).abs());
        }
        v
    }

    /// Whether `z` (output coordinates only) lies in the set within `tol`.
    pub fn is_member(&self, z: &[f64], tol: f64) -> Result<bool> {
        check_dim(self.n, z.len())?;
        Ok(self.max_violation(&self.extend(z)) <= tol)
    }

    /// Dense form `A_ineq x ≤ b_ineq`, `A_eq x = b_eq` with finite bounds
    /// expanded into rows.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let dim = self.dim();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for k in 0..dim {
            if self.upper[k].is_finite() {
                let mut c = vec![0.0; dim];
                c[k] = 1.0;
                rows.push((c, self.upper[k]));
            }
            if self.lower[k].is_finite() {
                let mut c = vec![0.0; dim];
                c[k] = -1.0;
                rows.push((c, -self.lower[k]));
            }
        }
        rows.extend(self.ineq.iter().map(|r| (r.coeffs.clone(), r.rhs)));
        let a = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].0[j]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let ae = DMatrix::from_fn(self.eq.len(), dim, |i, j| self.eq[i].coeffs[j]);
        let be = DVector::from_iterator(self.eq.len(), self.eq.iter().map(|r| r.rhs));
        (a, b, ae, be)
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err(Error::Infeasible);
        }
        if self.find_feasible_point().is_some() {
            Ok(())
        } else {
            Err(Error::Infeasible)
        }
    }

    /// One point of the set, if the probe finds one.
    pub fn find_feasible_point(&self) -> Option<Vec<f64>> {
        // Constant vectors zero every DIDI form, so try those first.
        let lo = self.lower[..self.n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let hi = self.upper[..self.n].iter().cloned().fold(f64::INFINITY, f64::min);
        let mut candidates = vec![0.0, 0.5, 1.0];
        if lo.is_finite() && hi.is_finite() {
            candidates.push(0.5 * (lo + hi));
        }
        for c in candidates {
            let z: Vec<f64> = (0..self.n).map(|k| c.clamp(self.lower[k], self.upper[k])).collect();
            if self.max_violation(&self.extend(&z)) <= 1e-9 {
                return Some(z);
            }
        }
        let start: Vec<f64> = (0..self.n).map(|k| 0.5f64.clamp(self.lower[k], self.upper[k])).collect();
        let opts = SolverOptions { tolerance: 1e-9, max_iterations: 20_000, ..SolverOptions::default() };
        let report = solver::feasibility_probe(self, &start, &opts).ok()?;
        (self.max_violation(&report.extended) <= MEMBERSHIP_TOL * 1e-2).then_some(report.solution)
    }
}

/// Coordinate box `lower ≤ z_k ≤ upper`.
pub fn build_box(lower: f64, upper: f64, n: usize) -> Result<ConstraintSet> {
    if !(lower <= upper) {
        return Err(Error::InvalidParameter(format!("box lower {lower} > upper {upper}")));
    }
    let mut cs = ConstraintSet::unconstrained(n, Provenance::Box);
    cs.lower = vec![lower; n];
    cs.upper = vec![upper; n];
    Ok(cs)
}

fn validate_groups(protected: &[ProtectedSpec], n: usize) -> Result<()> {
    for p in protected {
        for (v, rows) in &p.groups {
            if rows.is_empty() {
                return Err(Error::InvalidParameter(format!("empty group {v} in feature {:?}", p.name)));
            }
            if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
                return Err(Error::InvalidParameter(format!("group row {bad} out of range for n = {n}")));
            }
        }
    }
    Ok(())
}

/// Linear forms `d_{p,v}(z) = mean(z) − mean_{X_{p,v}}(z)`, one per group.
fn didi_forms(protected: &[ProtectedSpec], n: usize) -> Vec<Vec<f64>> {
    let mut forms = Vec::new();
    for p in protected {
        for (_, rows) in &p.groups {
            let mut f = vec![1.0 / n as f64; n];
            let w = 1.0 / rows.len() as f64;
            for &r in rows {
                f[r] -= w;
            }
            forms.push(f);
        }
    }
    forms
}

/// `Σ_p Σ_v |mean(z) − mean(z over group v of feature p)|`.
pub fn didi_value(z: &[f64], protected: &[ProtectedSpec]) -> Result<f64> {
    let n = z.len();
    if n == 0 {
        return Err(Error::InvalidParameter("didi of empty vector".into()));
    }
    validate_groups(protected, n)?;
    let mean = z.iter().sum::<f64>() / n as f64;
    Ok(protected
        .iter()
        .flat_map(|p| p.groups.iter())
        .map(|(_, rows)| {
            let gm = rows.iter().map(|&r| z[r]).sum::<f64>() / rows.len() as f64;
            (mean - gm).abs()
        })
        .sum())
}

/// Feasible set `{z : DIDI(z) ≤ ε}` with one auxiliary per group.
pub fn build_didi_constraints(protected: &[ProtectedSpec], epsilon: f64, n: usize) -> Result<ConstraintSet> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    validate_groups(protected, n)?;
    let forms = didi_forms(protected, n);
    let m = forms.len();
    let dim = n + m;
    let mut cs = ConstraintSet::unconstrained(n, Provenance::Didi);
    cs.n_aux = m;
    cs.lower.extend(std::iter::repeat(0.0).take(m));
    cs.upper.extend(std::iter::repeat(f64::INFINITY).take(m));
    for (j, f) in forms.iter().enumerate() {
        for sign in [1.0, -1.0] {
            let mut coeffs: Vec<f64> = f.iter().map(|c| sign * c).collect();
            coeffs.resize(dim, 0.0);
            coeffs[n + j] = -1.0;
            cs.ineq.push(LinearRow { coeffs, rhs: 0.0 });
        }
    }
    if m > 0 {
        let mut budget = vec![0.0; dim];
        budget[n..].iter_mut().for_each(|c| *c = 1.0);
        cs.ineq.push(LinearRow { coeffs: budget, rhs: epsilon });
    }
    cs.abs_blocks.push(AbsBlock { first: n, forms });
    Ok(cs)
}

/// Intersection of two sets over the same outputs; auxiliaries are
/// concatenated (those of `a` first).
pub fn intersect(a: &ConstraintSet, b: &ConstraintSet) -> Result<ConstraintSet> {
    check_dim(a.n, b.n)?;
    let n = a.n;
    let dim = n + a.n_aux + b.n_aux;
    let shift = a.n_aux;
    let lift_a = |r: &LinearRow| {
        let mut c = r.coeffs.clone();
        c.resize(dim, 0.0);
        LinearRow { coeffs: c, rhs: r.rhs }
    };
    let lift_b = |r: &LinearRow| {
        let mut c = vec![0.0; dim];
        c[..n].copy_from_slice(&r.coeffs[..n]);
        c[n + shift..].copy_from_slice(&r.coeffs[n..]);
        LinearRow { coeffs: c, rhs: r.rhs }
    };
    let mut lower: Vec<f64> = (0..n).map(|k| a.lower[k].max(b.lower[k])).collect();
    let mut upper: Vec<f64> = (0..n).map(|k| a.upper[k].min(b.upper[k])).collect();
    lower.extend_from_slice(&a.lower[n..]);
    lower.extend_from_slice(&b.lower[n..]);
    upper.extend_from_slice(&a.upper[n..]);
    upper.extend_from_slice(&b.upper[n..]);
    let mut abs_blocks = a.abs_blocks.clone();
    abs_blocks.extend(b.abs_blocks.iter().map(|blk| AbsBlock { first: blk.first + shift, forms: blk.forms.clone() }));
    let mut provenance = a.provenance.clone();
    provenance.extend_from_slice(&b.provenance);
    let cs = ConstraintSet {
        n,
        n_aux: a.n_aux + b.n_aux,
        lower,
        upper,
        ineq: a.ineq.iter().map(lift_a).chain(b.ineq.iter().map(lift_b)).collect(),
        eq: a.eq.iter().map(lift_a).chain(b.eq.iter().map(lift_b)).collect(),
        abs_blocks,
        provenance,
    };
    cs.ensure_nonempty()?;
    Ok(cs)
}
