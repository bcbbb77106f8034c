//! Stabilizing solutions of the zero-sum game Riccati equation
//!
//! ```text
//! AᵀP + PA + Q − P B1 R1⁻¹ B1ᵀ P + P B2 R2⁻¹ B2ᵀ P = 0
//! ```
//!
//! The stable invariant subspace of the Hamiltonian `[[A, −S], [−Q, −Aᵀ]]`
//! is extracted from an ordered complex Schur form and refined with Newton
//! steps. Solutions are kept complex so that Hermitian solutions of
//! estimated models are representable; the real symmetric part drives the
//! players' gains.

use std::fmt;

use nalgebra::Schur;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, numerical, Result};
use crate::linalg::{
    balance, complexify, condition_number, hermitize, spd_solve, spectral_abscissa, symmetrize,
    CMat, ComplexMatrix, Mat,
};
use crate::model::GameModel;

/// Closed loops count as stable only when their spectral abscissa is below
/// `-STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-7;
/// Relative distance of a Hamiltonian eigenvalue from the imaginary axis
/// below which no stabilizing solution is reported.
pub const AXIS_MARGIN: f64 = 1e-7;
/// Largest acceptable condition number of the graph basis `X1`.
pub const GRAPH_CONDITION_LIMIT: f64 = 1e10;
/// Residual contract: `|Res(P)|_F <= RESIDUAL_TOL * (1 + |P|_F)^2`.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// `B = [B1, B2]`, `R = diag(R1, −R2)` and the indefinite quadratic term
/// `S = B1 R1⁻¹ B1ᵀ − B2 R2⁻¹ B2ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeWeights {
    pub b: Mat,
    pub r: Mat,
    pub s: Mat,
}

impl CompositeWeights {
    pub fn new(b1: &Mat, b2: &Mat, r1: &Mat, r2: &Mat) -> Result<Self> {
        let n = b1.nrows();
        if b2.nrows() != n {
            return Err(contract("B1 and B2 have different row counts"));
        }
        let (m1, m2) = (b1.ncols(), b2.ncols());
        if r1.shape() != (m1, m1) || r2.shape() != (m2, m2) {
            return Err(contract("input weights do not match input dimensions"));
        }
        let b = crate::model::hcat(b1, b2);
        let mut r = Mat::zeros(m1 + m2, m1 + m2);
        r.view_mut((0, 0), (m1, m1)).copy_from(r1);
        r.view_mut((m1, m1), (m2, m2)).copy_from(&(-r2));
        let s1 = b1 * spd_solve(r1, &b1.transpose())?;
        let s2 = b2 * spd_solve(r2, &b2.transpose())?;
        Ok(Self { b, r, s: symmetrize(&(s1 - s2)) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoSolutionReason {
    /// The Hamiltonian has an eigenvalue on (or numerically at) the
    /// imaginary axis.
    ImaginaryAxis,
    /// The stable subspace has no well-conditioned graph representation.
    GraphSingular,
}

impl fmt::Display for NoSolutionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoSolutionReason::ImaginaryAxis => "imaginary-axis",
            NoSolutionReason::GraphSingular => "graph-singular",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameRiccatiSolution {
    pub p: ComplexMatrix,
    /// Real symmetric part of `P`.
    pub p1: Mat,
    /// Real skew-symmetric part of `P` (coefficient of the imaginary unit).
    pub p2: Mat,
    /// `A − S P`.
    pub a_cl_p: ComplexMatrix,
    /// `A − S P1`.
    pub a_cl_p1: Mat,
    pub residual: f64,
    pub abscissa_p: f64,
    pub abscissa_p1: f64,
    pub stabilizing_p: bool,
    pub stabilizing_p1: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AreOutcome {
    Solved(GameRiccatiSolution),
    NoStabilizingSolution(NoSolutionReason),
}

impl AreOutcome {
    pub fn solution(&self) -> Option<&GameRiccatiSolution> {
        match self {
            AreOutcome::Solved(sol) => Some(sol),
            AreOutcome::NoStabilizingSolution(_) => None,
        }
    }

    pub fn into_solution(self) -> Option<GameRiccatiSolution> {
        match self {
            AreOutcome::Solved(sol) => Some(sol),
            AreOutcome::NoStabilizingSolution(_) => None,
        }
    }
}

/// Order in which the stable eigenvalues are arranged at the top of the
/// Schur form. The resulting `P` does not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StableOrdering {
    #[default]
    Ascending,
    Descending,
}

pub fn solve_game_are(a: &Mat, b1: &Mat, b2: &Mat, q: &Mat, r1: &Mat, r2: &Mat) -> Result<AreOutcome> {
    solve_game_are_ordered(a, b1, b2, q, r1, r2, StableOrdering::Ascending)
}

pub fn solve_model_are(model: &GameModel) -> Result<AreOutcome> {
    solve_game_are(&model.a, &model.b1, &model.b2, &model.q, &model.r1, &model.r2)
}

pub fn solve_game_are_ordered(
    a: &Mat,
    b1: &Mat,
    b2: &Mat,
    q: &Mat,
    r1: &Mat,
    r2: &Mat,
    ordering: StableOrdering,
) -> Result<AreOutcome> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) || b1.nrows() != n {
        return Err(contract("solve_game_are: inconsistent dimensions"));
    }
    let weights = CompositeWeights::new(b1, b2, r1, r2)?;
    let s = &weights.s;
    let q = symmetrize(q);

    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let axis_tol = AXIS_MARGIN * (1.0 + h.norm());

    let mut hc = complexify(&h);
    let scaling = balance(&mut hc);
    let schur = Schur::try_new(hc, f64::EPSILON, 200 * (2 * n).pow(2) + 1000)
        .ok_or_else(|| numerical("Hamiltonian Schur iteration did not converge"))?;
    let (mut u, mut t) = schur.unpack();

    let eig: Vec<Complex64> = (0..2 * n).map(|i| t[(i, i)]).collect();
    if eig.iter().any(|z| z.re.abs() <= axis_tol) {
        return Ok(AreOutcome::NoStabilizingSolution(NoSolutionReason::ImaginaryAxis));
    }
    if eig.iter().filter(|z| z.re < 0.0).count() != n {
        return Ok(AreOutcome::NoStabilizingSolution(NoSolutionReason::ImaginaryAxis));
    }

    reorder_schur(&mut t, &mut u, ordering);

    let mut x = u.columns(0, n).into_owned();
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= Complex64::new(scaling[i], 0.0);
    }
    let x1 = x.rows(0, n).into_owned();
    let x2 = x.rows(n, n).into_owned();
    if condition_number(&x1)? > GRAPH_CONDITION_LIMIT {
        return Ok(AreOutcome::NoStabilizingSolution(NoSolutionReason::GraphSingular));
    }
    let pt = x1
        .transpose()
        .lu()
        .solve(&x2.transpose())
        .ok_or_else(|| numerical("graph basis X1 is singular"))?;
    let mut p = hermitize(&pt.transpose());

    let ac = complexify(a);
    let sc = complexify(s);
    let qc = complexify(&q);
    p = newton_refine(&ac, &sc, &qc, p)?;

    let residual = are_residual(&ac, &sc, &qc, &p).norm();
    if residual > RESIDUAL_TOL * (1.0 + p.norm()).powi(2) {
        return Err(numerical(format!(
            "Riccati residual {residual:.3e} exceeds the contract after refinement"
        )));
    }

    let p = ComplexMatrix::from_complex(&p);
    let (p1, p2) = hermitian_split(&p)?;
    let a_cl_p = ComplexMatrix::from_complex(&(&ac - &sc * p.to_complex()));
    let a_cl_p1 = a - s * &p1;
    let abscissa_p = spectral_abscissa(&a_cl_p)?;
    let abscissa_p1 = spectral_abscissa(&a_cl_p1)?;
    Ok(AreOutcome::Solved(GameRiccatiSolution {
        p,
        p1,
        p2,
        a_cl_p,
        a_cl_p1,
        residual,
        abscissa_p,
        abscissa_p1,
        stabilizing_p: abscissa_p < -STABILITY_MARGIN,
        stabilizing_p1: abscissa_p1 < -STABILITY_MARGIN,
    }))
}

/// `AᴴP + PA + Q − PSP`.
pub fn are_residual(a: &CMat, s: &CMat, q: &CMat, p: &CMat) -> CMat {
    a.adjoint() * p + p * a + q - p * s * p
}

/// Residual of the real game equation for a real symmetric candidate.
pub fn game_are_residual(a: &Mat, b1: &Mat, b2: &Mat, q: &Mat, r1: &Mat, r2: &Mat, p: &Mat) -> Result<f64> {
    let s = CompositeWeights::new(b1, b2, r1, r2)?.s;
    Ok((a.transpose() * p + p * a + q - p * s * p).norm())
}

fn lartg(f: Complex64, g: Complex64) -> (f64, Complex64) {
    if g == Complex64::new(0.0, 0.0) {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if f == Complex64::new(0.0, 0.0) {
        return (0.0, g.conj() / g.norm());
    }
    let norm = f.norm().hypot(g.norm());
    let phase = f / f.norm();
    (f.norm() / norm, phase * g.conj() / norm)
}

/// `x ← c x + s y`, `y ← c y − conj(s) x`.
fn rot(x: &mut Complex64, y: &mut Complex64, c: f64, s: Complex64) {
    let (xo, yo) = (*x, *y);
    *x = xo * c + s * yo;
    *y = yo * c - s.conj() * xo;
}

/// Swaps the diagonal entries `k` and `k+1` of the upper-triangular `t`,
/// updating the unitary basis `u`.
fn swap_adjacent(t: &mut CMat, u: &mut CMat, k: usize) {
    let size = t.nrows();
    let t11 = t[(k, k)];
    let t22 = t[(k + 1, k + 1)];
    let (c, s) = lartg(t[(k, k + 1)], t22 - t11);
    for j in k + 2..size {
        let (mut x, mut y) = (t[(k, j)], t[(k + 1, j)]);
        rot(&mut x, &mut y, c, s);
        t[(k, j)] = x;
        t[(k + 1, j)] = y;
    }
    for i in 0..k {
        let (mut x, mut y) = (t[(i, k)], t[(i, k + 1)]);
        rot(&mut x, &mut y, c, s.conj());
        t[(i, k)] = x;
        t[(i, k + 1)] = y;
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
    t[(k + 1, k)] = Complex64::new(0.0, 0.0);
    for i in 0..size {
        let (mut x, mut y) = (u[(i, k)], u[(i, k + 1)]);
        rot(&mut x, &mut y, c, s.conj());
        u[(i, k)] = x;
        u[(i, k + 1)] = y;
    }
}

/// Bubbles stable eigenvalues to the leading block, sorted by real part.
fn reorder_schur(t: &mut CMat, u: &mut CMat, ordering: StableOrdering) {
    let key = |z: Complex64| -> (bool, f64) {
        let stable = z.re < 0.0;
        let re = match ordering {
            StableOrdering::Ascending => z.re,
            StableOrdering::Descending if stable => -z.re,
            StableOrdering::Descending => z.re,
        };
        (!stable, re)
    };
    let size = t.nrows();
    for _ in 0..size {
        let mut swapped = false;
        for k in 0..size.saturating_sub(1) {
            let (a, b) = (key(t[(k, k)]), key(t[(k + 1, k + 1)]));
            if a.0 > b.0 || (a.0 == b.0 && a.1 > b.1) {
                swap_adjacent(t, u, k);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
}

/// Solves `Fᴴ X + X F = C` by vectorization.
fn solve_lyapunov(f: &CMat, c: &CMat) -> Option<CMat> {
    let n = f.nrows();
    let fh = f.adjoint();
    let mut k = CMat::zeros(n * n, n * n);
    // vec(Fᴴ X) = (I ⊗ Fᴴ) vec X, vec(X F) = (Fᵀ ⊗ I) vec X
    for blk in 0..n {
        for i in 0..n {
            for j in 0..n {
                k[(blk * n + i, blk * n + j)] += fh[(i, j)];
            }
        }
    }
    for bi in 0..n {
        for bj in 0..n {
            let coeff = f[(bj, bi)];
            for i in 0..n {
                k[(bi * n + i, bj * n + i)] += coeff;
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(c.as_slice());
    let sol = k.lu().solve(&rhs)?;
    Some(CMat::from_column_slice(n, n, sol.as_slice()))
}

fn newton_refine(a: &CMat, s: &CMat, q: &CMat, mut p: CMat) -> Result<CMat> {
    let mut res = are_residual(a, s, q, &p);
    let mut res_norm = res.norm();
    for _ in 0..4 {
        if res_norm <= 1e-15 * (1.0 + p.norm()).powi(2) {
            break;
        }
        let closed = a - s * &p;
        let Some(delta) = solve_lyapunov(&closed, &(-&res)) else {
            break;
        };
        let candidate = hermitize(&(&p + delta));
        let cand_res = are_residual(a, s, q, &candidate);
        let cand_norm = cand_res.norm();
        if !(cand_norm < res_norm) {
            break;
        }
        p = candidate;
        res = cand_res;
        res_norm = cand_norm;
    }
    if !p.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(numerical("Riccati refinement produced non-finite entries"));
    }
    Ok(p)
}

/// Splits a Hermitian `P` into `P1 = sym(Re P)` and `P2 = skew(Im P)`.
pub fn hermitian_split(p: &ComplexMatrix) -> Result<(Mat, Mat)> {
    if p.re.nrows() != p.re.ncols() {
        return Err(contract("hermitian_split: matrix is not square"));
    }
    if p.frobenius_norm() > 0.0 && p.hermitian_defect() > 1e-8 {
        return Err(contract(format!(
            "hermitian_split: matrix is not Hermitian (relative defect {:.3e})",
            p.hermitian_defect()
        )));
    }
    let p1 = symmetrize(&p.re);
    let p2 = (&p.im - p.im.transpose()) * 0.5;
    Ok((p1, p2))
}

/// Feedback Nash gains `L1 = −R1⁻¹ B1ᵀ P1`, `L2 = R2⁻¹ B2ᵀ P1`.
pub fn nash_gains(sol: &GameRiccatiSolution, b1: &Mat, b2: &Mat, r1: &Mat, r2: &Mat) -> Result<(Mat, Mat)> {
    if !(sol.stabilizing_p && sol.stabilizing_p1) {
        return Err(contract(
            "nash_gains requires both A_cl(P) and A_cl(P1) to be stable",
        ));
    }
    gains_from_p1(&sol.p1, b1, b2, r1, r2)
}

pub(crate) fn gains_from_p1(p1: &Mat, b1: &Mat, b2: &Mat, r1: &Mat, r2: &Mat) -> Result<(Mat, Mat)> {
    let l1 = -spd_solve(r1, &(b1.transpose() * p1))?;
    let l2 = spd_solve(r2, &(b2.transpose() * p1))?;
    Ok((l1, l2))
}

/// Value of the game, `tr(Dᵀ P1 D)`.
pub fn nash_value(p1: &Mat, d: &Mat) -> f64 {
    (d.transpose() * p1 * d).trace()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityPoint {
    pub scale: f64,
    pub solved: bool,
    /// `|P(E) − P(E0)|_F`.
    pub delta_norm: Option<f64>,
    /// `delta_norm / scale`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    pub applicable: bool,
    pub note: Option<String>,
    pub points: Vec<ContinuityPoint>,
}

impl ContinuityReport {
    /// Whether consecutive finite ratios agree within `factor`.
    pub fn ratios_stable(&self, factor: f64) -> bool {
        let ratios: Vec<f64> = self.points.iter().filter_map(|p| p.ratio).collect();
        ratios.windows(2).all(|w| {
            let (x, y) = (w[0], w[1]);
            x <= factor * y && y <= factor * x
        })
    }
}

/// Perturbs `(A, B1, B2)` along a fixed seeded direction with entries
/// uniform in `[-1, 1]`, scaled by each entry of `scales`, and reports how
/// far the stabilizing solution moves.
pub fn riccati_continuity_probe(model: &GameModel, scales: &[f64], seed: u64) -> Result<ContinuityReport> {
    let nominal = match solve_model_are(model)? {
        AreOutcome::Solved(sol) => sol,
        AreOutcome::NoStabilizingSolution(reason) => {
            return Ok(ContinuityReport {
                applicable: false,
                note: Some(format!("probe inapplicable: nominal model has no stabilizing solution ({reason})")),
                points: Vec::new(),
            })
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut direction = |m: &Mat| Mat::from_fn(m.nrows(), m.ncols(), |_, _| rng.random_range(-1.0..=1.0));
    let (da, db1, db2) = (direction(&model.a), direction(&model.b1), direction(&model.b2));
    let p0 = nominal.p.to_complex();
    let mut points = Vec::with_capacity(scales.len());
    for &scale in scales {
        let outcome = solve_game_are(
            &(&model.a + &da * scale),
            &(&model.b1 + &db1 * scale),
            &(&model.b2 + &db2 * scale),
            &model.q,
            &model.r1,
            &model.r2,
        );
        let point = match outcome {
            Ok(AreOutcome::Solved(sol)) => {
                let delta = (sol.p.to_complex() - &p0).norm();
                ContinuityPoint {
                    scale,
                    solved: true,
                    delta_norm: Some(delta),
                    ratio: (scale > 0.0).then(|| delta / scale),
                }
            }
            _ => ContinuityPoint { scale, solved: false, delta_norm: None, ratio: None },
        };
        points.push(point);
    }
    Ok(ContinuityReport { applicable: true, note: None, points })
}
