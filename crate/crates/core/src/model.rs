//! Plant and payoff data for the two-player zero-sum LQ game
//! `dx = (A x + B1 u1 + B2 u2) dt + D dw` with running cost
//! `xᵀ Q x + u1ᵀ R1 u1 − u2ᵀ R2 u2`.

use std::fmt;

use crate::linalg::{min_symmetric_eigenvalue, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameDims {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub p: usize,
}

impl GameDims {
    /// Rows of the stacked parameter matrix `θ = [A, B1, B2]ᵀ`.
    pub fn regressor_len(&self) -> usize {
        self.n + self.m1 + self.m2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameModel {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub d: Mat,
    /// State weight.
    pub q: Mat,
    pub r1: Mat,
    pub r2: Mat,
}

impl GameModel {
    pub fn dims(&self) -> GameDims {
        GameDims {
            n: self.a.nrows(),
            m1: self.b1.ncols(),
            m2: self.b2.ncols(),
            p: self.d.ncols(),
        }
    }

    /// `θ = [A, B1, B2]ᵀ`, shape `(n + m1 + m2) × n`.
    pub fn theta(&self) -> Mat {
        stack_theta(&self.a, &self.b1, &self.b2)
    }

    /// `[B1, B2]`.
    pub fn b(&self) -> Mat {
        hcat(&self.b1, &self.b2)
    }

    pub fn with_noise(&self, d: Mat) -> Self {
        Self { d, ..self.clone() }
    }
}

pub fn hcat(left: &Mat, right: &Mat) -> Mat {
    let mut out = Mat::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

pub fn stack_theta(a: &Mat, b1: &Mat, b2: &Mat) -> Mat {
    let n = a.nrows();
    let (m1, m2) = (b1.ncols(), b2.ncols());
    let mut theta = Mat::zeros(n + m1 + m2, n);
    theta.rows_mut(0, n).copy_from(&a.transpose());
    theta.rows_mut(n, m1).copy_from(&b1.transpose());
    theta.rows_mut(n + m1, m2).copy_from(&b2.transpose());
    theta
}

/// Inverse of [`stack_theta`].
pub fn split_theta(theta: &Mat, dims: GameDims) -> (Mat, Mat, Mat) {
    let GameDims { n, m1, m2, .. } = dims;
    (
        theta.rows(0, n).transpose(),
        theta.rows(n, m1).transpose(),
        theta.rows(n + m1, m2).transpose(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelIssue {
    DimensionMismatch { matrix: &'static str, expected: (usize, usize), found: (usize, usize) },
    NotSquare(&'static str),
    NotSymmetric(&'static str),
    NotPositiveDefinite(&'static str),
    NonFinite(&'static str),
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelIssue::DimensionMismatch { matrix, expected, found } => write!(
                f,
                "dimension mismatch {matrix}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            ModelIssue::NotSquare(name) => write!(f, "{name} is not square"),
            ModelIssue::NotSymmetric(name) => write!(f, "{name} not symmetric"),
            ModelIssue::NotPositiveDefinite(name) => write!(f, "{name} not positive definite"),
            ModelIssue::NonFinite(name) => write!(f, "{name} has non-finite entries"),
        }
    }
}

/// Lists every violated model invariant; an empty list means the model is
/// admissible for simulation.
pub fn validate_model(m: &GameModel) -> Vec<ModelIssue> {
    let mut issues = Vec::new();
    let named = [
        ("A", &m.a),
        ("B1", &m.b1),
        ("B2", &m.b2),
        ("D", &m.d),
        ("Q", &m.q),
        ("R1", &m.r1),
        ("R2", &m.r2),
    ];
    for (name, mat) in named {
        if !mat.iter().all(|x| x.is_finite()) {
            issues.push(ModelIssue::NonFinite(name));
        }
    }
    if m.a.nrows() != m.a.ncols() {
        issues.push(ModelIssue::NotSquare("A"));
        return issues;
    }
    let n = m.a.nrows();
    let (m1, m2, p) = (m.b1.ncols(), m.b2.ncols(), m.d.ncols());
    let shapes = [
        ("B1", &m.b1, (n, m1)),
        ("B2", &m.b2, (n, m2)),
        ("D", &m.d, (n, p)),
        ("Q", &m.q, (n, n)),
        ("R1", &m.r1, (m1, m1)),
        ("R2", &m.r2, (m2, m2)),
    ];
    let mut shapes_ok = true;
    for (name, mat, expected) in shapes {
        if mat.shape() != expected {
            shapes_ok = false;
            issues.push(ModelIssue::DimensionMismatch { matrix: name, expected, found: mat.shape() });
        }
    }
    if !shapes_ok || !issues.is_empty() {
        return issues;
    }
    let qn = m.q.norm();
    if (&m.q - m.q.transpose()).norm() > 1e-12 * qn {
        issues.push(ModelIssue::NotSymmetric("Q"));
    }
    for (name, r) in [("R1", &m.r1), ("R2", &m.r2)] {
        if r.nrows() == 0 {
            continue;
        }
        if (r - r.transpose()).norm() > 1e-12 * r.norm() {
            issues.push(ModelIssue::NotSymmetric(name));
        }
        match min_symmetric_eigenvalue(r) {
            Ok(l) if l > 0.0 => {}
            _ => issues.push(ModelIssue::NotPositiveDefinite(name)),
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn two_state() -> GameModel {
        GameModel {
            a: Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b1: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            b2: Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            d: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            q: Mat::identity(2, 2),
            r1: scalar(1.0),
            r2: scalar(2.0),
        }
    }

    #[test]
    fn consistent_model_has_empty_report() {
        assert!(validate_model(&two_state()).is_empty());
    }

    #[test]
    fn negative_r2_is_reported() {
        let mut m = two_state();
        m.r2 = scalar(-1.0);
        let report = validate_model(&m);
        assert_eq!(report, vec![ModelIssue::NotPositiveDefinite("R2")]);
        assert_eq!(report[0].to_string(), "R2 not positive definite");
    }

    #[test]
    fn extra_row_in_b1_is_reported() {
        let mut m = two_state();
        m.b1 = Mat::zeros(3, 1);
        let report = validate_model(&m);
        assert_eq!(report.len(), 1);
        assert!(report[0].to_string().starts_with("dimension mismatch B1"));
    }

    #[test]
    fn asymmetric_q_is_reported() {
        let mut m = two_state();
        m.q[(0, 1)] = 0.5;
        assert_eq!(validate_model(&m), vec![ModelIssue::NotSymmetric("Q")]);
    }

    #[test]
    fn theta_round_trip() {
        let m = two_state();
        let theta = m.theta();
        assert_eq!(theta.shape(), (4, 2));
        let (a, b1, b2) = split_theta(&theta, m.dims());
        assert_eq!((a, b1, b2), (m.a, m.b1, m.b2));
    }
}
