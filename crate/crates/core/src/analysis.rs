//! Optimal interaction times and the scaling laws fitted to them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::{golden_max, ViolationOptimum};
use crate::entanglement::sector_entropy;
use crate::error::{Error, Result};
use crate::evolution::{JointState, Propagator};
use crate::observables::{
    epr_fidelity, expectation, variance, Ensemble, EprSign, TwoSpinObservable,
};
use crate::spin_core::OperatorLabel;

/// Number of coarse samples in the optimal-time scan.
pub const SCAN_POINTS: usize = 400;
/// Refinement tolerance in τ.
pub const TAU_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimalKind {
    /// First minimum of `Var(Sx~1 + Sx~2)`.
    Sq,
    /// First maximum of `Var(Sx~1 - Sx~2)`.
    Asq,
    /// First zero of `<Sz1>`.
    Sz,
    /// First maximum of the entanglement entropy.
    E,
    /// First maximum of the EPR- fidelity.
    F,
}

impl OptimalKind {
    pub const ALL: [OptimalKind; 5] = [
        OptimalKind::Sq,
        OptimalKind::Asq,
        OptimalKind::Sz,
        OptimalKind::E,
        OptimalKind::F,
    ];

    /// Objective evaluated on a state. Minima are returned negated so that
    /// every extremum kind is a maximum.
    fn signed_objective(&self, state: &JointState) -> f64 {
        match self {
            OptimalKind::Sq => -variance(state, &TwoSpinObservable::squeezed_x()),
            OptimalKind::Asq => variance(state, &TwoSpinObservable::antisqueezed_x()),
            OptimalKind::Sz => {
                expectation(state, OperatorLabel::Sz, Ensemble::First).expect("named label")
            }
            OptimalKind::E => sector_entropy(state.sector_amplitudes().expect("sector state")),
            OptimalKind::F => epr_fidelity(state, EprSign::Minus).expect("sector state"),
        }
    }

    fn objective(&self, state: &JointState) -> f64 {
        match self {
            OptimalKind::Sq => -self.signed_objective(state),
            _ => self.signed_objective(state),
        }
    }
}

impl fmt::Display for OptimalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimalKind::Sq => "sq",
            OptimalKind::Asq => "asq",
            OptimalKind::Sz => "Sz",
            OptimalKind::E => "E",
            OptimalKind::F => "F",
        })
    }
}

impl FromStr for OptimalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sq" => Ok(OptimalKind::Sq),
            "asq" => Ok(OptimalKind::Asq),
            "sz" => Ok(OptimalKind::Sz),
            "e" | "entropy" => Ok(OptimalKind::E),
            "f" | "fidelity" => Ok(OptimalKind::F),
            other => Err(Error::invalid(format!(
                "unknown optimal-time kind `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalTime {
    pub n_atoms: usize,
    pub kind: OptimalKind,
    pub tau: f64,
    /// Objective at `tau`; for `Sz` this is `<Sz1>` and should vanish.
    pub value: f64,
}

/// `(ln 2 + ln(N)/2) / N = ln(4N) / 2N`.
pub fn predicted_optimal_time(n_atoms: usize) -> f64 {
    crate::observables::hp_validity_time(n_atoms)
}

/// Upper end of the coarse scan window.
pub fn search_window(n_atoms: usize) -> f64 {
    3.0 * predicted_optimal_time(n_atoms)
}

pub fn find_optimal_time(n_atoms: usize, kind: OptimalKind) -> Result<OptimalTime> {
    find_optimal_time_with(n_atoms, kind, SCAN_POINTS)
}

/// As [`find_optimal_time`] with a custom number of coarse samples.
pub fn find_optimal_time_with(
    n_atoms: usize,
    kind: OptimalKind,
    points: usize,
) -> Result<OptimalTime> {
    if points < 3 {
        return Err(Error::invalid("the coarse scan needs at least 3 points"));
    }
    let prop = Propagator::sector(n_atoms)?;
    let window = search_window(n_atoms);
    let grid: Vec<f64> = (1..=points)
        .map(|i| window * i as f64 / points as f64)
        .collect();
    let f = |tau: f64| kind.signed_objective(&prop.evolve(tau));
    let values: Vec<f64> = grid.par_iter().map(|&t| f(t)).collect();

    let tau = if kind == OptimalKind::Sz {
        let i = values
            .windows(2)
            .position(|w| w[0] > 0.0 && w[1] <= 0.0)
            .ok_or_else(|| {
                Error::SearchFailure(format!(
                    "<Sz> has no sign change on (0, {window:.6}] for N = {n_atoms} (last value {:.3e})",
                    values[points - 1]
                ))
            })?;
        bisect(&f, grid[i], grid[i + 1])
    } else {
        let i = (1..points - 1)
            .find(|&i| values[i] >= values[i - 1] && values[i] > values[i + 1])
            .ok_or_else(|| {
                Error::SearchFailure(format!(
                    "no interior {kind} extremum on (0, {window:.6}] for N = {n_atoms} ({points} samples)"
                ))
            })?;
        golden_max(f, grid[i - 1], grid[i + 1], TAU_TOL).0
    };
    Ok(OptimalTime {
        n_atoms,
        kind,
        tau,
        value: kind.objective(&prop.evolve(tau)),
    })
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    while hi - lo > TAU_TOL {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Optimal times of one kind over several `N`, computed in parallel.
pub fn optimal_times(n_grid: &[usize], kind: OptimalKind) -> Result<Vec<OptimalTime>> {
    n_grid
        .par_iter()
        .map(|&n| find_optimal_time(n, kind))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitModel {
    /// `τ N = p0 + p1 ln N`.
    LogOverN,
    /// `C - 2 = s / N`.
    LinearInverseN,
    /// `θ_B = (a/N + b/N²) / (1 + c/N)`.
    Pade,
}

impl FitModel {
    pub fn parameter_count(&self) -> usize {
        match self {
            FitModel::LogOverN => 2,
            FitModel::LinearInverseN => 1,
            FitModel::Pade => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub parameters: Vec<f64>,
    /// Euclidean norm of the residuals in the fitted quantity.
    pub residual_norm: f64,
    /// Euclidean norm of the fitted data.
    pub data_norm: f64,
    pub r_squared: f64,
    pub n_grid: Vec<usize>,
}

impl FitResult {
    /// Model prediction at `n`: `τ` for [`FitModel::LogOverN`], `C - 2` for
    /// [`FitModel::LinearInverseN`], `θ_B` for [`FitModel::Pade`].
    pub fn predict(&self, n: f64) -> f64 {
        let p = &self.parameters;
        match self.model {
            FitModel::LogOverN => (p[0] + p[1] * n.ln()) / n,
            FitModel::LinearInverseN => p[0] / n,
            FitModel::Pade => pade(p[0], p[1], p[2], 1.0 / n),
        }
    }
}

fn pade(a: f64, b: f64, c: f64, x: f64) -> f64 {
    (a * x + b * x * x) / (1.0 + c * x)
}

fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(v, f)| (v - f).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Least squares `a x = y` with a rank check on the design matrix.
fn linear_least_squares(a: DMatrix<f64>, y: DVector<f64>) -> Result<DVector<f64>> {
    let cols = a.ncols();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > smax * 1e-12)
        .count();
    if rank < cols || smax == 0.0 {
        return Err(Error::FitFailure(format!(
            "design matrix has rank {rank} < {cols}"
        )));
    }
    svd.solve(&y, smax * 1e-12)
        .map_err(|e| Error::FitFailure(e.to_string()))
}

/// Fits `τ N = p0 + p1 ln N`.
pub fn fit_optimal_times(records: &[OptimalTime]) -> Result<FitResult> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n_atoms).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(Error::FitFailure(format!(
            "need at least 4 distinct N, got {}",
            ns.len()
        )));
    }
    let m = records.len();
    let a = DMatrix::from_fn(m, 2, |i, j| {
        if j == 0 {
            1.0
        } else {
            (records[i].n_atoms as f64).ln()
        }
    });
    let y: Vec<f64> = records.iter().map(|r| r.tau * r.n_atoms as f64).collect();
    let p = linear_least_squares(a.clone(), DVector::from_vec(y.clone()))?;
    let fitted: Vec<f64> = (a * &p).iter().copied().collect();
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(v, f)| v - f).collect();
    Ok(FitResult {
        model: FitModel::LogOverN,
        parameters: p.iter().copied().collect(),
        residual_norm: norm(&resid),
        data_norm: norm(&y),
        r_squared: r_squared(&y, &fitted),
        n_grid: records.iter().map(|r| r.n_atoms).collect(),
    })
}

/// `2N / (e^{2 p0} N^{2 p1})`, the squeezed variance at the fitted optimum.
pub fn predicted_min_variance(n_atoms: usize, p0: f64, p1: f64) -> f64 {
    let n = n_atoms as f64;
    2.0 * n / ((2.0 * p0).exp() * n.powf(2.0 * p1))
}

/// Fits the violation excess `C - 2 = s/N` (through the origin) and the
/// optimal Bell angle with the `(a/N + b/N²)/(1 + c/N)` form.
pub fn fit_bell_scaling(records: &[ViolationOptimum]) -> Result<(FitResult, FitResult)> {
    if records.len() < 3 {
        return Err(Error::FitFailure(format!(
            "need at least 3 records, got {}",
            records.len()
        )));
    }
    let n_grid: Vec<usize> = records.iter().map(|r| r.n_atoms).collect();
    let xs: Vec<f64> = n_grid.iter().map(|&n| 1.0 / n as f64).collect();

    let excess: Vec<f64> = records.iter().map(|r| r.value - 2.0).collect();
    let a = DMatrix::from_fn(xs.len(), 1, |i, _| xs[i]);
    let s = linear_least_squares(a, DVector::from_vec(excess.clone()))?[0];
    let fitted: Vec<f64> = xs.iter().map(|x| s * x).collect();
    let resid: Vec<f64> = excess.iter().zip(&fitted).map(|(v, f)| v - f).collect();
    let linear = FitResult {
        model: FitModel::LinearInverseN,
        parameters: vec![s],
        residual_norm: norm(&resid),
        data_norm: norm(&excess),
        r_squared: r_squared(&excess, &fitted),
        n_grid: n_grid.clone(),
    };

    let theta: Vec<f64> = records.iter().map(|r| r.theta_b).collect();
    // θ (1 + c x) = a x + b x² is linear in (a, b, c)
    let design = DMatrix::from_fn(xs.len(), 3, |i, j| match j {
        0 => xs[i],
        1 => xs[i] * xs[i],
        _ => -theta[i] * xs[i],
    });
    let start = linear_least_squares(design, DVector::from_vec(theta.clone()))?;
    let p = refine_pade(Vector3::new(start[0], start[1], start[2]), &xs, &theta)?;
    let fitted: Vec<f64> = xs.iter().map(|&x| pade(p[0], p[1], p[2], x)).collect();
    let resid: Vec<f64> = theta.iter().zip(&fitted).map(|(v, f)| v - f).collect();
    let pade_fit = FitResult {
        model: FitModel::Pade,
        parameters: p.iter().copied().collect(),
        residual_norm: norm(&resid),
        data_norm: norm(&theta),
        r_squared: r_squared(&theta, &fitted),
        n_grid,
    };
    Ok((linear, pade_fit))
}

/// Levenberg-Marquardt on the unweighted θ residuals.
fn refine_pade(mut p: Vector3<f64>, xs: &[f64], ys: &[f64]) -> Result<Vector3<f64>> {
    let cost = |p: &Vector3<f64>| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (pade(p[0], p[1], p[2], x) - y).powi(2))
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(&p);
    for _ in 0..200 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&x, &y) in xs.iter().zip(ys) {
            let den = 1.0 + p[2] * x;
            let num = p[0] * x + p[1] * x * x;
            let j = Vector3::new(x / den, x * x / den, -x * num / (den * den));
            jtj += j * j.transpose();
            jtr += j * (num / den - y);
        }
        let mut damped = jtj;
        for i in 0..3 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            return Err(Error::FitFailure(
                "singular normal equations in the Padé fit".into(),
            ));
        };
        let trial = p + step;
        let c = cost(&trial);
        if c.is_finite() && c < current {
            let done = (current - c) <= 1e-15 * current.max(1e-300)
                || step.norm() <= 1e-12 * (1.0 + p.norm());
            p = trial;
            current = c;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if !current.is_finite() {
        return Err(Error::FitFailure("Padé fit diverged".into()));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sq_time_for_ten_atoms() {
        let t = find_optimal_time(10, OptimalKind::Sq).unwrap();
        assert!((t.tau - 0.165).abs() <= 0.005, "{}", t.tau);
        assert!(t.value < 20.0);
    }

    #[test]
    fn sz_time_is_a_zero() {
        let t = find_optimal_time(12, OptimalKind::Sz).unwrap();
        assert!(t.value.abs() < 1e-6, "{}", t.value);
    }

    #[test]
    fn ordering_at_twenty() {
        let sq = find_optimal_time(20, OptimalKind::Sq).unwrap().tau;
        let asq = find_optimal_time(20, OptimalKind::Asq).unwrap().tau;
        let sz = find_optimal_time(20, OptimalKind::Sz).unwrap().tau;
        assert!(sq < asq && sq < sz);
        assert!((asq - sz).abs() / sz < 0.1);
    }

    #[test]
    fn refinement_is_grid_insensitive() {
        for kind in [OptimalKind::Sq, OptimalKind::E] {
            let a = find_optimal_time_with(20, kind, 400).unwrap().tau;
            let b = find_optimal_time_with(20, kind, 800).unwrap().tau;
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn log_fit_recovers_synthetic_parameters() {
        let recs: Vec<OptimalTime> = [10, 20, 40, 80]
            .iter()
            .map(|&n| OptimalTime {
                n_atoms: n,
                kind: OptimalKind::Sq,
                tau: (0.4 + 0.6 * (n as f64).ln()) / n as f64,
                value: 0.0,
            })
            .collect();
        let fit = fit_optimal_times(&recs).unwrap();
        assert_abs_diff_eq!(fit.parameters[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.parameters[1], 0.6, epsilon = 1e-12);
        assert!(fit.residual_norm < 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.predict(40.0), recs[2].tau, epsilon = 1e-14);
    }

    #[test]
    fn log_fit_needs_four_distinct_sizes() {
        let recs: Vec<OptimalTime> = [10, 10, 20, 40]
            .iter()
            .map(|&n| OptimalTime {
                n_atoms: n,
                kind: OptimalKind::Sq,
                tau: 0.1,
                value: 0.0,
            })
            .collect();
        assert!(matches!(
            fit_optimal_times(&recs),
            Err(Error::FitFailure(_))
        ));
    }

    #[test]
    fn predicted_variance_arithmetic() {
        let v = predicted_min_variance(20, 0.467, 0.508);
        assert_abs_diff_eq!(
            v,
            40.0 / (0.934f64.exp() * 20f64.powf(1.016)),
            epsilon = 1e-14
        );
        assert!((v - 0.742).abs() < 0.01);
    }

    #[test]
    fn bell_fits_recover_synthetic_parameters() {
        let recs: Vec<ViolationOptimum> = [1, 3, 5, 9, 17, 33]
            .iter()
            .map(|&n| {
                let x = 1.0 / n as f64;
                ViolationOptimum {
                    n_atoms: n,
                    tau: 0.1,
                    theta_b: pade(6.1, -0.67, 2.45, x),
                    value: 2.0 + 0.55 * x,
                }
            })
            .collect();
        let (lin, p) = fit_bell_scaling(&recs).unwrap();
        assert_abs_diff_eq!(lin.parameters[0], 0.55, epsilon = 1e-12);
        assert_abs_diff_eq!(p.parameters[0], 6.1, epsilon = 1e-6);
        assert_abs_diff_eq!(p.parameters[1], -0.67, epsilon = 1e-6);
        assert_abs_diff_eq!(p.parameters[2], 2.45, epsilon = 1e-6);
        assert!(p.residual_norm < 1e-9);
    }

    #[test]
    fn kind_parsing() {
        for k in OptimalKind::ALL {
            assert_eq!(k.to_string().parse::<OptimalKind>().unwrap(), k);
        }
        assert!("g".parse::<OptimalKind>().is_err());
    }
}
