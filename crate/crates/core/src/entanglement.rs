//! Reduced states, entanglement entropy and variance-based witnesses.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{full_index, Amplitudes, JointState};
use crate::observables::{expectation, variance, Ensemble, TwoSpinObservable};
use crate::spin_core::OperatorLabel;

const TRACE_TOL: f64 = 1e-8;
const EIGEN_CLAMP: f64 = -1e-12;

/// Reduced density matrix of one ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedDensity {
    pub matrix: DMatrix<C64>,
}

impl ReducedDensity {
    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn is_diagonal(&self) -> bool {
        let m = &self.matrix;
        (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == C64::new(0.0, 0.0)))
    }

    /// Eigenvalues with small negative rounding clamped to zero.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let raw: Vec<f64> = if self.is_diagonal() {
            self.matrix.diagonal().iter().map(|z| z.re).collect()
        } else {
            SymmetricEigen::new(self.matrix.clone())
                .eigenvalues
                .iter()
                .copied()
                .collect()
        };
        raw.into_iter()
            .map(|l| {
                if l < EIGEN_CLAMP {
                    Err(Error::InvalidState(format!(
                        "density matrix eigenvalue {l:e} < 0"
                    )))
                } else {
                    Ok(l.max(0.0))
                }
            })
            .collect()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }
}

/// Reduced state of the second ensemble, `Tr_1 |ψ><ψ|`.
pub fn reduced_density(state: &JointState) -> ReducedDensity {
    reduced_density_of(state, Ensemble::Second)
}

/// Reduced state of the chosen ensemble.
pub fn reduced_density_of(state: &JointState, keep: Ensemble) -> ReducedDensity {
    let n = state.n_atoms;
    let d = n + 1;
    let matrix = match &state.amplitudes {
        Amplitudes::Sector(c) => DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(c[i].norm_sqr(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }),
        Amplitudes::Full(v) => {
            let psi = |a: usize, b: usize| match keep {
                Ensemble::Second => v[full_index(n, a, b)],
                Ensemble::First => v[full_index(n, b, a)],
            };
            DMatrix::from_fn(d, d, |i, j| {
                (0..d).map(|a| psi(a, i) * psi(a, j).conj()).sum()
            })
        }
    };
    ReducedDensity { matrix }
}

/// `-Σ λ log2 λ` in bits.
pub fn von_neumann_entropy(rho: &ReducedDensity) -> Result<f64> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(Error::InvalidState(format!(
            "reduced density has trace {tr}"
        )));
    }
    Ok(rho
        .eigenvalues()?
        .into_iter()
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.log2())
        .sum())
}

/// Entanglement entropy of a sector state, straight from `|c_k|^2`.
pub fn sector_entropy(c: &[C64]) -> f64 {
    c.iter()
        .map(|z| z.norm_sqr())
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum()
}

/// `log2(N + 1)`.
pub fn max_entropy(n_atoms: usize) -> f64 {
    ((n_atoms + 1) as f64).log2()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionName {
    Gmvt,
    Dgcz,
    Ht,
}

impl CriterionName {
    pub const ALL: [CriterionName; 3] =
        [CriterionName::Gmvt, CriterionName::Dgcz, CriterionName::Ht];
}

impl fmt::Display for CriterionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriterionName::Gmvt => "GMVT",
            CriterionName::Dgcz => "DGCZ",
            CriterionName::Ht => "HT",
        })
    }
}

impl FromStr for CriterionName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmvt" => Ok(CriterionName::Gmvt),
            "dgcz" => Ok(CriterionName::Dgcz),
            "ht" => Ok(CriterionName::Ht),
            other => Err(Error::invalid(format!("unknown criterion `{other}`"))),
        }
    }
}

/// Left-hand side of a separability inequality `lhs >= bound`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: CriterionName,
    pub tau: Option<f64>,
    pub lhs: f64,
    pub bound: f64,
    pub detected: bool,
    pub guard: bool,
}

/// `(g_x, g_y)` for GMVT; the other criteria ignore weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionWeights {
    pub gx: f64,
    pub gy: f64,
}

impl Default for CriterionWeights {
    fn default() -> Self {
        Self { gx: 1.0, gy: 1.0 }
    }
}

pub fn criterion(
    state: &JointState,
    name: CriterionName,
    weights: Option<CriterionWeights>,
) -> CriterionResult {
    let n = state.n_atoms as f64;
    let sz_sum = || {
        expectation(state, OperatorLabel::Sz, Ensemble::First)
            .expect("hermitian")
            .abs()
            + expectation(state, OperatorLabel::Sz, Ensemble::Second)
                .expect("hermitian")
                .abs()
    };
    let var_x = || variance(state, &TwoSpinObservable::squeezed_x());
    let var_y = || variance(state, &TwoSpinObservable::squeezed_y());
    let guard_at = 1e-9 * n;

    let (lhs, guard) = match name {
        CriterionName::Gmvt => {
            let w = weights.unwrap_or_default();
            let ox = TwoSpinObservable::weighted(
                OperatorLabel::SxTilde,
                w.gx,
                OperatorLabel::SxTilde,
                1.0,
            )
            .expect("hermitian");
            let oy = TwoSpinObservable::weighted(
                OperatorLabel::SyTilde,
                w.gy,
                OperatorLabel::SyTilde,
                -1.0,
            )
            .expect("hermitian");
            let denom = (w.gx * w.gy).abs() * sz_sum();
            let num = (variance(state, &ox) * variance(state, &oy)).sqrt();
            (num / denom, denom < guard_at)
        }
        CriterionName::Dgcz => {
            let denom = sz_sum();
            ((var_x() + var_y()) / (2.0 * denom), denom < guard_at)
        }
        CriterionName::Ht => {
            let vz = variance(state, &TwoSpinObservable::sz_difference());
            ((var_x() + var_y() + vz) / (4.0 * n), false)
        }
    };
    CriterionResult {
        name,
        tau: state.tau,
        lhs,
        bound: 1.0,
        detected: !guard && lhs < 1.0,
        guard,
    }
}

/// GMVT minimized over a grid of `(g_x, g_y)` pairs.
pub fn gmvt_scan(state: &JointState, grid: &[f64]) -> (CriterionResult, CriterionWeights) {
    let mut best: Option<(CriterionResult, CriterionWeights)> = None;
    for &gx in grid {
        for &gy in grid {
            if gx == 0.0 || gy == 0.0 {
                continue;
            }
            let w = CriterionWeights { gx, gy };
            let r = criterion(state, CriterionName::Gmvt, Some(w));
            if best.as_ref().is_none_or(|(b, _)| r.lhs < b.lhs) {
                best = Some((r, w));
            }
        }
    }
    best.unwrap_or_else(|| {
        let w = CriterionWeights::default();
        (criterion(state, CriterionName::Gmvt, Some(w)), w)
    })
}

/// Two-mode squeezed vacuum estimate of `E / log2(N+1)` at `τ = ln(4N)/2N`.
///
/// Uses the unexpanded entropy `c(|d| log2(c/|d|) - log2 c) / (|d| - 1)^2`
/// with `c = 4 e^{-2Nτ} = 1/N` and `|d| = (1 - 2 e^{-2Nτ})^2 = (1 - 1/2N)^2`.
/// Both `c` and `|d|` are large-`Nτ` approximations, so the ratio overshoots
/// one and only approaches it from above as `N` grows.
pub fn hp_entropy_ratio(n_atoms: usize) -> f64 {
    let n = n_atoms as f64;
    let c = 1.0 / n;
    let d = (1.0 - 1.0 / (2.0 * n)).powi(2);
    let e = c * (d * (c / d).log2() - c.log2()) / (d - 1.0).powi(2);
    e / max_entropy(n_atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Propagator;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn state(n: usize, tau: f64) -> JointState {
        Propagator::sector(n).unwrap().evolve(tau)
    }

    #[test]
    fn initial_state_is_pure() {
        let rho = reduced_density(&state(6, 0.0));
        assert_eq!(rho.matrix[(6, 6)], C64::new(1.0, 0.0));
        assert_eq!(von_neumann_entropy(&rho).unwrap(), 0.0);
    }

    #[test]
    fn qubit_bell_state_has_one_bit() {
        let rho = reduced_density(&state(1, PI / 4.0));
        assert_abs_diff_eq!(rho.matrix[(0, 0)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.matrix[(1, 1)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(von_neumann_entropy(&rho).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_oracle() {
        let s = state(4, 0.3);
        let full = JointState::from_full(4, s.to_full().unwrap()).unwrap();
        let a = reduced_density(&s).matrix;
        for keep in [Ensemble::First, Ensemble::Second] {
            let b = reduced_density_of(&full, keep).matrix;
            assert!((&a - b).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-12);
        }
        let e1 = von_neumann_entropy(&reduced_density_of(&full, Ensemble::First)).unwrap();
        assert_abs_diff_eq!(
            e1,
            sector_entropy(s.sector_amplitudes().unwrap()),
            epsilon = 1e-10
        );
    }

    #[test]
    fn entropy_rejects_bad_trace() {
        let rho = ReducedDensity {
            matrix: DMatrix::from_diagonal_element(2, 2, C64::new(0.6, 0.0)),
        };
        assert!(matches!(
            von_neumann_entropy(&rho),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn entropy_bounded_by_maximum() {
        assert_abs_diff_eq!(max_entropy(20), 21f64.log2(), epsilon = 1e-15);
        let p = Propagator::sector(20).unwrap();
        for i in 0..50 {
            let e = sector_entropy(p.evolve(0.1 * i as f64).sector_amplitudes().unwrap());
            assert!(e >= 0.0 && e <= max_entropy(20) + 1e-9);
        }
    }

    #[test]
    fn criteria_at_start_are_on_boundary() {
        let s = state(20, 0.0);
        for name in CriterionName::ALL {
            let r = criterion(&s, name, None);
            assert_abs_diff_eq!(r.lhs, 1.0, epsilon = 1e-12);
            assert!(!r.detected);
        }
    }

    #[test]
    fn criteria_detect_at_short_times() {
        let s = state(20, 0.02);
        for name in CriterionName::ALL {
            let r = criterion(&s, name, None);
            assert!(r.detected, "{name} lhs {}", r.lhs);
        }
    }

    #[test]
    fn gmvt_equals_dgcz_for_unit_weights() {
        let s = state(12, 0.09);
        let a = criterion(&s, CriterionName::Gmvt, None).lhs;
        let b = criterion(&s, CriterionName::Dgcz, None).lhs;
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        let (best, _) = gmvt_scan(&s, &[0.5, 0.8, 1.0, 1.25, 2.0]);
        assert!(best.lhs <= a + 1e-12);
    }

    #[test]
    fn guard_trips_on_vanishing_polarization() {
        // Bell state: <Sz> = 0 on both sides.
        let s = state(1, PI / 4.0);
        let r = criterion(&s, CriterionName::Dgcz, None);
        assert!(r.guard && !r.detected);
        assert!(!criterion(&s, CriterionName::Ht, None).guard);
    }

    #[test]
    fn criterion_names_parse() {
        assert_eq!(
            "GMVT".parse::<CriterionName>().unwrap(),
            CriterionName::Gmvt
        );
        assert!("foo".parse::<CriterionName>().is_err());
    }

    #[test]
    fn hp_entropy_matches_geometric_series() {
        // The closed form is the entropy of p_n = c |d|^n, n = 0, 1, ...
        for n in [10usize, 40, 160] {
            let nf = n as f64;
            let c = 1.0 / nf;
            let q = (1.0 - 1.0 / (2.0 * nf)).powi(2);
            let mut e = 0.0;
            let mut p = c;
            while p > 1e-300 {
                e -= p * p.log2();
                p *= q;
            }
            assert_abs_diff_eq!(hp_entropy_ratio(n), e / max_entropy(n), epsilon = 1e-10);
        }
    }

    #[test]
    fn hp_entropy_ratio_regression() {
        assert_abs_diff_eq!(
            hp_entropy_ratio(20),
            1.320_696_207_019_233_4,
            epsilon = 1e-12
        );
        let mut prev = f64::INFINITY;
        for n in [10, 20, 40, 80, 160] {
            let r = hp_entropy_ratio(n);
            assert!(r < prev && r > 1.0);
            prev = r;
        }
    }
}
