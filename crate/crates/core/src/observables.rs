//! Expectation values, variances, rotated-basis distributions and spin-EPR
//! fidelities.
//!
//! Sector states `Σ c_k |k,k>` are handled in O(N) by applying the ladder
//! operators directly; full states fall back to dense loops.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{full_index, Amplitudes, JointState, FULL_SPACE_LIMIT};
use crate::spin_core::{
    build_rotated_basis, ladder_coefficient, OperatorLabel, RotatedBasis, SpinSpace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ensemble {
    First,
    Second,
}

/// Hermitian single-ensemble operator `r S+ + r* S- + z Sz`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOperator {
    pub raise: C64,
    pub sz: f64,
}

impl EnsembleOperator {
    pub const ZERO: Self = Self {
        raise: C64::new(0.0, 0.0),
        sz: 0.0,
    };

    pub fn from_label(label: OperatorLabel) -> Result<Self> {
        // from_polar rounds the two parts in opposite directions, so |r|^2 is exactly 1
        let raise = match label {
            OperatorLabel::Sx => C64::new(1.0, 0.0),
            OperatorLabel::Sy => C64::new(0.0, -1.0),
            OperatorLabel::SxTilde => C64::from_polar(1.0, -FRAC_PI_4),
            OperatorLabel::SyTilde => C64::from_polar(1.0, -3.0 * FRAC_PI_4),
            OperatorLabel::Sz => {
                return Ok(Self {
                    raise: C64::new(0.0, 0.0),
                    sz: 1.0,
                })
            }
            other => {
                return Err(Error::invalid(format!(
                    "{other} is not a Hermitian collective spin component"
                )))
            }
        };
        Ok(Self { raise, sz: 0.0 })
    }

    pub fn scaled(self, g: f64) -> Self {
        Self {
            raise: self.raise * g,
            sz: self.sz * g,
        }
    }

    /// Dense matrix in the Fock basis.
    pub fn matrix(&self, space: SpinSpace) -> DMatrix<C64> {
        let d = space.dim();
        let mut m = DMatrix::<C64>::zeros(d, d);
        for k in 0..d {
            m[(k, k)] = C64::new(self.sz * space.sz_eigenvalue(k), 0.0);
        }
        for k in 0..space.n_atoms() {
            let s = space.ladder_coefficient(k);
            m[(k + 1, k)] = self.raise * s;
            m[(k, k + 1)] = self.raise.conj() * s;
        }
        m
    }
}

/// `O1 ⊗ I + I ⊗ O2`, with any weights folded into the two parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSpinObservable {
    pub name: String,
    pub first: EnsembleOperator,
    pub second: EnsembleOperator,
}

impl TwoSpinObservable {
    fn combine(name: &str, a: OperatorLabel, g1: f64, b: OperatorLabel, g2: f64) -> Self {
        Self {
            name: name.to_string(),
            first: EnsembleOperator::from_label(a)
                .expect("hermitian label")
                .scaled(g1),
            second: EnsembleOperator::from_label(b)
                .expect("hermitian label")
                .scaled(g2),
        }
    }

    /// `Sx~1 + Sx~2`
    pub fn squeezed_x() -> Self {
        Self::combine(
            "Sx~1+Sx~2",
            OperatorLabel::SxTilde,
            1.0,
            OperatorLabel::SxTilde,
            1.0,
        )
    }

    /// `Sy~1 - Sy~2`
    pub fn squeezed_y() -> Self {
        Self::combine(
            "Sy~1-Sy~2",
            OperatorLabel::SyTilde,
            1.0,
            OperatorLabel::SyTilde,
            -1.0,
        )
    }

    /// `Sx~1 - Sx~2`
    pub fn antisqueezed_x() -> Self {
        Self::combine(
            "Sx~1-Sx~2",
            OperatorLabel::SxTilde,
            1.0,
            OperatorLabel::SxTilde,
            -1.0,
        )
    }

    /// `Sy~1 + Sy~2`
    pub fn antisqueezed_y() -> Self {
        Self::combine(
            "Sy~1+Sy~2",
            OperatorLabel::SyTilde,
            1.0,
            OperatorLabel::SyTilde,
            1.0,
        )
    }

    /// `Sz1 - Sz2`
    pub fn sz_difference() -> Self {
        Self::combine("Sz1-Sz2", OperatorLabel::Sz, 1.0, OperatorLabel::Sz, -1.0)
    }

    /// `g1 A1 + g2 B2` for arbitrary Hermitian components.
    pub fn weighted(a: OperatorLabel, g1: f64, b: OperatorLabel, g2: f64) -> Result<Self> {
        EnsembleOperator::from_label(a)?;
        EnsembleOperator::from_label(b)?;
        Ok(Self::combine(&format!("{g1}*{a}1+{g2}*{b}2"), a, g1, b, g2))
    }
}

/// `(O ψ, <O>)` for a sector state; `Oψ` is returned as its squared norm only.
fn sector_moments(n: usize, c: &[C64], obs: &TwoSpinObservable) -> (f64, f64) {
    let (a1, a2) = (obs.first.raise, obs.second.raise);
    let beta = obs.first.sz + obs.second.sz;
    let mut mean = 0.0;
    let mut second = 0.0;
    for k in 0..=n {
        let d = c[k] * (beta * (2.0 * k as f64 - n as f64));
        mean += (c[k].conj() * d).re;
        second += d.norm_sqr();
    }
    for k in 0..n {
        let s2 = ((k + 1) * (n - k)) as f64;
        // components on |k+1,k> and |k,k+1>, without the ladder factor
        let up = a1 * c[k] + a2.conj() * c[k + 1];
        let dn = a2 * c[k] + a1.conj() * c[k + 1];
        second += (up.norm_sqr() + dn.norm_sqr()) * s2;
    }
    (mean, second)
}

fn apply_full(n: usize, v: &[C64], obs: &TwoSpinObservable) -> Vec<C64> {
    let d = n + 1;
    let mut out = vec![C64::new(0.0, 0.0); d * d];
    for k1 in 0..d {
        for k2 in 0..d {
            let x = v[full_index(n, k1, k2)];
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            let diag = obs.first.sz * (2.0 * k1 as f64 - n as f64)
                + obs.second.sz * (2.0 * k2 as f64 - n as f64);
            out[full_index(n, k1, k2)] += x * diag;
            if k1 < n {
                out[full_index(n, k1 + 1, k2)] += x * obs.first.raise * ladder_coefficient(n, k1);
            }
            if k1 > 0 {
                out[full_index(n, k1 - 1, k2)] +=
                    x * obs.first.raise.conj() * ladder_coefficient(n, k1 - 1);
            }
            if k2 < n {
                out[full_index(n, k1, k2 + 1)] += x * obs.second.raise * ladder_coefficient(n, k2);
            }
            if k2 > 0 {
                out[full_index(n, k1, k2 - 1)] +=
                    x * obs.second.raise.conj() * ladder_coefficient(n, k2 - 1);
            }
        }
    }
    out
}

fn moments(state: &JointState, obs: &TwoSpinObservable) -> (f64, f64) {
    let n = state.n_atoms;
    match &state.amplitudes {
        Amplitudes::Sector(c) => sector_moments(n, c, obs),
        Amplitudes::Full(v) => {
            let ov = apply_full(n, v, obs);
            let mean = v.iter().zip(&ov).map(|(a, b)| a.conj() * b).sum::<C64>().re;
            let second = ov.iter().map(|z| z.norm_sqr()).sum();
            (mean, second)
        }
    }
}

/// `<O>` of a two-ensemble observable.
pub fn observable_expectation(state: &JointState, obs: &TwoSpinObservable) -> f64 {
    moments(state, obs).0
}

/// `<O^2> - <O>^2`, clamped at zero when rounding drives it below.
pub fn variance(state: &JointState, obs: &TwoSpinObservable) -> f64 {
    let (mean, second) = moments(state, obs);
    let v = second - mean * mean;
    debug_assert!(v >= -1e-10 * second.max(1.0), "negative variance {v}");
    v.max(0.0)
}

/// Expectation of a single collective spin component on one ensemble.
pub fn expectation(state: &JointState, label: OperatorLabel, ensemble: Ensemble) -> Result<f64> {
    let op = EnsembleOperator::from_label(label)?;
    let obs = match ensemble {
        Ensemble::First => TwoSpinObservable {
            name: format!("{label}1"),
            first: op,
            second: EnsembleOperator::ZERO,
        },
        Ensemble::Second => TwoSpinObservable {
            name: format!("{label}2"),
            first: EnsembleOperator::ZERO,
            second: op,
        },
    };
    Ok(observable_expectation(state, &obs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HpKind {
    Squeezed,
    AntiSqueezed,
}

/// Holstein-Primakoff variance `2N e^{∓2Nτ}`.
pub fn hp_variance(n_atoms: usize, tau: f64, kind: HpKind) -> f64 {
    let n = n_atoms as f64;
    let sign = match kind {
        HpKind::Squeezed => -1.0,
        HpKind::AntiSqueezed => 1.0,
    };
    2.0 * n * (sign * 2.0 * n * tau).exp()
}

/// `ln(4N) / 2N`, the time scale on which the bosonic approximation holds.
pub fn hp_validity_time(n_atoms: usize) -> f64 {
    let n = n_atoms as f64;
    (4.0 * n).ln() / (2.0 * n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HpCurve {
    VarSq,
    VarAsq,
    ValidityTime,
    EntropyRatio,
}

/// Closed-form large-N reference curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpReference {
    pub n_atoms: usize,
    pub curve: HpCurve,
}

impl HpReference {
    /// Value at `tau`; the time-independent curves ignore it.
    pub fn value(&self, tau: f64) -> f64 {
        match self.curve {
            HpCurve::VarSq => hp_variance(self.n_atoms, tau, HpKind::Squeezed),
            HpCurve::VarAsq => hp_variance(self.n_atoms, tau, HpKind::AntiSqueezed),
            HpCurve::ValidityTime => hp_validity_time(self.n_atoms),
            HpCurve::EntropyRatio => crate::entanglement::hp_entropy_ratio(self.n_atoms),
        }
    }
}

/// Measurement basis for one ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MeasurementBasis {
    XTilde,
    YTilde,
    Z,
    Angles { theta: f64, phi: f64 },
}

impl MeasurementBasis {
    pub fn angles(&self) -> (f64, f64) {
        match *self {
            MeasurementBasis::XTilde => (FRAC_PI_2, 0.0),
            MeasurementBasis::YTilde => (FRAC_PI_2, FRAC_PI_2),
            MeasurementBasis::Z => (0.0, 0.0),
            MeasurementBasis::Angles { theta, phi } => (theta, phi),
        }
    }

    pub fn rotated(&self, space: SpinSpace) -> RotatedBasis {
        let (theta, phi) = self.angles();
        build_rotated_basis(space, theta, phi)
    }
}

impl fmt::Display for MeasurementBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasurementBasis::XTilde => f.write_str("x"),
            MeasurementBasis::YTilde => f.write_str("y"),
            MeasurementBasis::Z => f.write_str("z"),
            MeasurementBasis::Angles { theta, phi } => write!(f, "({theta},{phi})"),
        }
    }
}

impl FromStr for MeasurementBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" | "xt" | "x~" => Ok(MeasurementBasis::XTilde),
            "y" | "yt" | "y~" => Ok(MeasurementBasis::YTilde),
            "z" => Ok(MeasurementBasis::Z),
            other => {
                let inner = other
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::invalid(format!("unknown basis `{other}`")))?;
                let mut parts = inner.split(',').map(|p| p.trim().parse::<f64>());
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(Ok(theta)), Some(Ok(phi)), None) => {
                        Ok(MeasurementBasis::Angles { theta, phi })
                    }
                    _ => Err(Error::invalid(format!("malformed basis angles `{other}`"))),
                }
            }
        }
    }
}

/// Outcome probabilities `p(k1, k2)` for measuring both ensembles.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    pub n_atoms: usize,
    pub basis1: MeasurementBasis,
    pub basis2: MeasurementBasis,
    pub probs: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRecord {
    pub k1: usize,
    pub k2: usize,
    pub p: f64,
}

impl JointDistribution {
    pub fn total(&self) -> f64 {
        self.probs.sum()
    }

    pub fn records(&self) -> Vec<ProbabilityRecord> {
        let d = self.probs.nrows();
        let mut out = Vec::with_capacity(d * d);
        for k1 in 0..d {
            for k2 in 0..d {
                out.push(ProbabilityRecord {
                    k1,
                    k2,
                    p: self.probs[(k1, k2)],
                });
            }
        }
        out
    }

    pub fn marginal(&self, ensemble: Ensemble) -> Vec<f64> {
        match ensemble {
            Ensemble::First => self.probs.row_iter().map(|r| r.sum()).collect(),
            Ensemble::Second => self.probs.column_iter().map(|c| c.sum()).collect(),
        }
    }

    /// Covariance of the outcome values `2k1 - N` and `2k2 - N`.
    pub fn covariance(&self) -> f64 {
        let n = self.n_atoms as f64;
        let val = |k: usize| 2.0 * k as f64 - n;
        let (mut m1, mut m2, mut m12) = (0.0, 0.0, 0.0);
        let d = self.probs.nrows();
        for k1 in 0..d {
            for k2 in 0..d {
                let p = self.probs[(k1, k2)];
                m1 += p * val(k1);
                m2 += p * val(k2);
                m12 += p * val(k1) * val(k2);
            }
        }
        m12 - m1 * m2
    }
}

/// State amplitudes as a matrix `Ψ[k1, k2]`.
fn amplitude_matrix(state: &JointState) -> DMatrix<C64> {
    let d = state.n_atoms + 1;
    match &state.amplitudes {
        Amplitudes::Sector(c) => {
            DMatrix::from_fn(d, d, |i, j| if i == j { c[i] } else { C64::new(0.0, 0.0) })
        }
        Amplitudes::Full(v) => DMatrix::from_fn(d, d, |i, j| v[full_index(state.n_atoms, i, j)]),
    }
}

/// `<k1|^(l1) <k2|^(l2) ψ` for all outcomes, i.e. `U1† Ψ conj(U2)`.
pub(crate) fn rotated_amplitudes(
    state: &JointState,
    u1: &DMatrix<C64>,
    u2: &DMatrix<C64>,
) -> DMatrix<C64> {
    let d = state.n_atoms + 1;
    let left = match &state.amplitudes {
        // U1† diag(c) scales column k of U1† by c_k
        Amplitudes::Sector(c) => {
            let mut m = u1.adjoint();
            for (k, &ck) in c.iter().enumerate() {
                for r in 0..d {
                    m[(r, k)] *= ck;
                }
            }
            m
        }
        Amplitudes::Full(_) => u1.adjoint() * amplitude_matrix(state),
    };
    left * u2.map(|z| z.conj())
}

pub fn joint_distribution(
    state: &JointState,
    basis1: MeasurementBasis,
    basis2: MeasurementBasis,
) -> Result<JointDistribution> {
    let space = state.space();
    let u1 = basis1.rotated(space);
    let u2 = basis2.rotated(space);
    let a = rotated_amplitudes(state, &u1.unitary, &u2.unitary);
    let probs = a.map(|z| z.norm_sqr());
    let total = probs.sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!(
            "joint distribution sums to {total}, state is not normalized"
        )));
    }
    Ok(JointDistribution {
        n_atoms: state.n_atoms,
        basis1,
        basis2,
        probs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EprSign {
    Plus,
    Minus,
}

impl FromStr for EprSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "plus" => Ok(EprSign::Plus),
            "-" | "minus" => Ok(EprSign::Minus),
            other => Err(Error::invalid(format!("unknown EPR sign `{other}`"))),
        }
    }
}

/// `i^k` for integer `k`.
fn i_pow(k: usize) -> C64 {
    match k % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

/// Sector coefficients `e_k` of the spin-EPR states in the squeezing frame.
///
/// `|EPR->` is `Σ_k |k>^(x~) |N-k>^(x~) / sqrt(N+1)`, which in the Fock basis
/// equals `Σ_k i^k |k,k>` up to a global phase. `|EPR+>` differs by
/// `e^{-i Sz2 π/2}`, giving `Σ_k (-i)^k |k,k>`.
pub fn epr_sector_coefficients(n_atoms: usize, sign: EprSign) -> Vec<C64> {
    let norm = 1.0 / ((n_atoms + 1) as f64).sqrt();
    (0..=n_atoms)
        .map(|k| {
            let p = i_pow(k);
            norm * match sign {
                EprSign::Minus => p,
                EprSign::Plus => p.conj(),
            }
        })
        .collect()
}

/// `|<EPR±|ψ>|^2` with the squeezing-frame spin-EPR states.
pub fn epr_fidelity(state: &JointState, sign: EprSign) -> Result<f64> {
    let c = state.to_sector(1e-10)?;
    let e = epr_sector_coefficients(state.n_atoms, sign);
    let overlap: C64 = e.iter().zip(&c).map(|(a, b)| a.conj() * b).sum();
    Ok(overlap.norm_sqr())
}

/// Fidelity with the unframed Fock-basis forms `Σ (±1)^k |k,k> / sqrt(N+1)`.
pub fn fock_epr_fidelity(state: &JointState, sign: EprSign) -> Result<f64> {
    let c = state.to_sector(1e-10)?;
    let overlap: C64 = c
        .iter()
        .enumerate()
        .map(|(k, &ck)| match sign {
            EprSign::Plus => ck,
            EprSign::Minus if k % 2 == 1 => -ck,
            EprSign::Minus => ck,
        })
        .sum();
    Ok(overlap.norm_sqr() / (state.n_atoms + 1) as f64)
}

fn check_full_limit(n: usize, what: &'static str) -> Result<()> {
    if n > FULL_SPACE_LIMIT {
        Err(Error::ResourceLimit {
            what,
            limit: FULL_SPACE_LIMIT,
            requested: n,
        })
    } else {
        Ok(())
    }
}

/// Full-space `Σ_k |k>^(θ,φ) ⊗ conj(|k>^(θ,φ)) / sqrt(N+1)`.
///
/// Pairing each rotated Fock state with its complex conjugate makes the
/// result independent of `(θ, φ)`: it is always `Σ_k |k,k> / sqrt(N+1)`.
/// The minus state applies `e^{i Sz2 π/2}` to the second ensemble.
pub fn epr_state_in_basis(n_atoms: usize, sign: EprSign, theta: f64, phi: f64) -> Result<Vec<C64>> {
    check_full_limit(n_atoms, "full-space spin-EPR state")?;
    let space = SpinSpace::new(n_atoms)?;
    let u = build_rotated_basis(space, theta, phi).unitary;
    let d = space.dim();
    let norm = 1.0 / (d as f64).sqrt();
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    for k in 0..d {
        for a in 0..d {
            for b in 0..d {
                v[full_index(n_atoms, a, b)] += u[(a, k)] * u[(b, k)].conj() * norm;
            }
        }
    }
    if sign == EprSign::Minus {
        for a in 0..d {
            for b in 0..d {
                let phase = C64::from_polar(1.0, space.sz_eigenvalue(b) * FRAC_PI_2);
                v[full_index(n_atoms, a, b)] *= phase;
            }
        }
    }
    Ok(v)
}

/// Full-space `Σ_k |k>^(x~) |N-k>^(x~) / sqrt(N+1)`.
pub fn x_tilde_epr_state(n_atoms: usize) -> Result<Vec<C64>> {
    check_full_limit(n_atoms, "full-space spin-EPR state")?;
    let space = SpinSpace::new(n_atoms)?;
    let u = RotatedBasis::x_tilde(space).unitary;
    let d = space.dim();
    let norm = 1.0 / (d as f64).sqrt();
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    for k in 0..d {
        for a in 0..d {
            for b in 0..d {
                v[full_index(n_atoms, a, b)] += u[(a, k)] * u[(b, n_atoms - k)] * norm;
            }
        }
    }
    Ok(v)
}

/// `|<u|v>|` for two dense vectors.
pub fn overlap_modulus(u: &[C64], v: &[C64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| a.conj() * b)
        .sum::<C64>()
        .norm()
}
