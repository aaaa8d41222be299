//! CHSH tests with sign-binned collective spin measurements.
//!
//! Each party measures `sgn(Sx~ cos θ + Sy~ sin θ)`: the operator is
//! diagonalized and its eigenvalues `2k - N` are replaced by their signs.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{JointState, Propagator};
use crate::observables::rotated_amplitudes;
use crate::spin_core::{build_operator, OperatorLabel, SpinSpace};

/// Value assigned to the zero eigenvalue that exists for even `N`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZeroSign {
    #[default]
    Plus,
    Minus,
    /// `sgn(0) = 0`; the observable is then no longer dichotomic.
    Zero,
}

impl ZeroSign {
    pub fn value(&self) -> f64 {
        match self {
            ZeroSign::Plus => 1.0,
            ZeroSign::Minus => -1.0,
            ZeroSign::Zero => 0.0,
        }
    }
}

impl fmt::Display for ZeroSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZeroSign::Plus => "+1",
            ZeroSign::Minus => "-1",
            ZeroSign::Zero => "0",
        })
    }
}

impl FromStr for ZeroSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+1" | "1" | "+" | "plus" => Ok(ZeroSign::Plus),
            "-1" | "-" | "minus" => Ok(ZeroSign::Minus),
            "0" | "zero" => Ok(ZeroSign::Zero),
            other => Err(Error::invalid(format!("unknown sgn(0) choice `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DichotomicMeasurement {
    pub theta: f64,
    /// Eigenvalues of `Sx~ cos θ + Sy~ sin θ`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Binned outcome for each eigenvector.
    pub sign_values: Vec<f64>,
    /// Columns are the eigenvectors.
    pub eigenbasis: DMatrix<C64>,
}

impl DichotomicMeasurement {
    /// `Σ_k s_k |e_k><e_k|`.
    pub fn operator(&self) -> DMatrix<C64> {
        let u = &self.eigenbasis;
        let mut scaled = u.clone();
        for (k, &s) in self.sign_values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * u.adjoint()
    }
}

pub fn build_measurement(space: SpinSpace, theta: f64, zero: ZeroSign) -> DichotomicMeasurement {
    let sx = build_operator(space, OperatorLabel::SxTilde)
        .expect("named label")
        .matrix;
    let sy = build_operator(space, OperatorLabel::SyTilde)
        .expect("named label")
        .matrix;
    let op = sx * C64::new(theta.cos(), 0.0) + sy * C64::new(theta.sin(), 0.0);
    let eig = SymmetricEigen::new(op);
    let mut order: Vec<usize> = (0..space.dim()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenbasis = DMatrix::from_fn(space.dim(), space.dim(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    // Spectrum is {2k - N}; anything within 0.5 of zero is the zero branch.
    let sign_values = eigenvalues
        .iter()
        .map(|&l| {
            if l > 0.5 {
                1.0
            } else if l < -0.5 {
                -1.0
            } else {
                zero.value()
            }
        })
        .collect();
    DichotomicMeasurement {
        theta,
        eigenvalues,
        sign_values,
        eigenbasis,
    }
}

/// `<M1 ⊗ M2>` from the joint outcome distribution in the two eigenbases.
pub fn correlator(
    state: &JointState,
    m1: &DichotomicMeasurement,
    m2: &DichotomicMeasurement,
) -> f64 {
    let a = rotated_amplitudes(state, &m1.eigenbasis, &m2.eigenbasis);
    let mut e = 0.0;
    for (k1, s1) in m1.sign_values.iter().enumerate() {
        for (k2, s2) in m2.sign_values.iter().enumerate() {
            e += s1 * s2 * a[(k1, k2)].norm_sqr();
        }
    }
    e
}

/// Bell angle `θ_B` and interaction time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshSetting {
    pub theta_b: f64,
    pub tau: f64,
}

impl ChshSetting {
    /// `(θ1(1), θ1(2), θ2(1), θ2(2)) = (0, θ_B, θ_B/2, -θ_B/2)`.
    pub fn angles(&self) -> [f64; 4] {
        [0.0, self.theta_b, self.theta_b / 2.0, -self.theta_b / 2.0]
    }
}

/// `|E11 + E12 - E21 + E22|` for arbitrary angles `[a1, a2, b1, b2]`.
pub fn chsh_with_angles(state: &JointState, angles: [f64; 4], zero: ZeroSign) -> f64 {
    let space = state.space();
    let m: Vec<DichotomicMeasurement> = angles
        .iter()
        .map(|&t| build_measurement(space, t, zero))
        .collect();
    let e = |i: usize, j: usize| correlator(state, &m[i], &m[j]);
    (e(0, 2) + e(0, 3) - e(1, 2) + e(1, 3)).abs()
}

/// CHSH value of `state` for the Bell angle in `setting` (its `tau` is not
/// used to evolve; the state is taken as given).
pub fn chsh_value(state: &JointState, setting: &ChshSetting, zero: ZeroSign) -> f64 {
    chsh_with_angles(state, setting.angles(), zero)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationOptimum {
    pub n_atoms: usize,
    pub tau: f64,
    pub theta_b: f64,
    pub value: f64,
}

/// Search controls for [`optimize_violation`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellSearch {
    /// Coarse θ_B samples on `(0, π]`.
    pub theta_points: usize,
    /// τ is searched in `[hint (1 - w), hint (1 + w)]`.
    pub tau_window: f64,
    pub theta_tol: f64,
    pub tau_tol: f64,
    pub zero: ZeroSign,
}

impl Default for BellSearch {
    fn default() -> Self {
        Self {
            theta_points: 180,
            tau_window: 0.2,
            theta_tol: 1e-4,
            tau_tol: 1e-5,
            zero: ZeroSign::Plus,
        }
    }
}

/// Maximizes `f` on `[a, b]` by golden-section search.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / 2.0;
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, fx), |best, p| if p.1 > best.1 { p } else { best })
}

/// Maximizes the CHSH value over `θ_B` and over `τ` near `tau_hint`.
///
/// Alternates a golden-section search in `θ_B` (after a coarse scan) with
/// one in `τ` until neither moves by more than its tolerance.
pub fn optimize_violation(
    n_atoms: usize,
    tau_hint: f64,
    search: &BellSearch,
) -> Result<ViolationOptimum> {
    if tau_hint.is_nan() || tau_hint <= 0.0 {
        return Err(Error::invalid("τ hint must be positive"));
    }
    if search.theta_points < 3 {
        return Err(Error::invalid("need at least 3 coarse θ_B points"));
    }
    let prop = Propagator::sector(n_atoms)?;
    let value = |theta_b: f64, tau: f64| {
        let s = prop.evolve(tau);
        chsh_value(&s, &ChshSetting { theta_b, tau }, search.zero)
    };

    let step = PI / search.theta_points as f64;
    let coarse: Vec<(f64, f64)> = (1..=search.theta_points)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 * step;
            (t, value(t, tau_hint))
        })
        .collect();
    let (mut theta, _) =
        coarse.iter().copied().fold(
            (FRAC_PI_2, f64::MIN),
            |best, p| if p.1 > best.1 { p } else { best },
        );
    let mut tau = tau_hint;
    let (lo_tau, hi_tau) = (
        tau_hint * (1.0 - search.tau_window),
        tau_hint * (1.0 + search.tau_window),
    );
    let mut theta_span = step;

    let mut best = f64::MIN;
    for _ in 0..20 {
        let (t_new, _) = golden_max(
            |t| value(t, tau),
            (theta - theta_span).max(1e-6),
            (theta + theta_span).min(PI),
            search.theta_tol,
        );
        let (tau_new, v) = golden_max(|x| value(t_new, x), lo_tau, hi_tau, search.tau_tol);
        let converged =
            (t_new - theta).abs() <= search.theta_tol && (tau_new - tau).abs() <= search.tau_tol;
        theta = t_new;
        tau = tau_new;
        best = v;
        theta_span = (4.0 * search.theta_tol).max(step / 4.0);
        if converged {
            break;
        }
    }
    if !best.is_finite() {
        return Err(Error::SearchFailure(format!(
            "CHSH optimization diverged for N = {n_atoms}"
        )));
    }
    Ok(ViolationOptimum {
        n_atoms,
        tau,
        theta_b: theta,
        value: best,
    })
}
