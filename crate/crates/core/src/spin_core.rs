//! Collective spin algebra for a single ensemble of `N` two-level atoms.
//!
//! Operators use the Schwinger-boson normalization in which `Sz` has the
//! integer spectrum `2k - N` and `[Sx, Sy] = 2i Sz`. Basis index `k` counts
//! atoms in the upper level `b`, so `S+ = b†a` raises `k` by one.
//!
//! Everything here is dense; dimensions stay at `N + 1 <= ~201`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fock basis of one ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinSpace {
    n_atoms: usize,
}

impl SpinSpace {
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::invalid("ensemble must contain at least one atom"));
        }
        Ok(Self { n_atoms })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    /// `Sz` eigenvalue `2k - N` of Fock state `|k>`.
    pub fn sz_eigenvalue(&self, k: usize) -> f64 {
        2.0 * k as f64 - self.n_atoms as f64
    }

    /// `<k+1| S+ |k> = sqrt((N - k)(k + 1))`, also equal to `<k| S- |k+1>`.
    pub fn ladder_coefficient(&self, k: usize) -> f64 {
        ladder_coefficient(self.n_atoms, k)
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k > self.n_atoms {
            Err(Error::invalid(format!(
                "Fock index {k} outside 0..={}",
                self.n_atoms
            )))
        } else {
            Ok(())
        }
    }
}

pub(crate) fn ladder_coefficient(n: usize, k: usize) -> f64 {
    debug_assert!(k < n);
    (((n - k) * (k + 1)) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorLabel {
    Sx,
    Sy,
    Sz,
    SPlus,
    SMinus,
    SxTilde,
    SyTilde,
    Custom,
}

impl OperatorLabel {
    pub fn is_hermitian(&self) -> bool {
        !matches!(
            self,
            OperatorLabel::SPlus | OperatorLabel::SMinus | OperatorLabel::Custom
        )
    }
}

impl fmt::Display for OperatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperatorLabel::Sx => "Sx",
            OperatorLabel::Sy => "Sy",
            OperatorLabel::Sz => "Sz",
            OperatorLabel::SPlus => "S+",
            OperatorLabel::SMinus => "S-",
            OperatorLabel::SxTilde => "Sx~",
            OperatorLabel::SyTilde => "Sy~",
            OperatorLabel::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for OperatorLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sx" | "x" => Ok(OperatorLabel::Sx),
            "sy" | "y" => Ok(OperatorLabel::Sy),
            "sz" | "z" => Ok(OperatorLabel::Sz),
            "s+" | "splus" | "plus" => Ok(OperatorLabel::SPlus),
            "s-" | "sminus" | "minus" => Ok(OperatorLabel::SMinus),
            "sx~" | "sxt" | "sx_tilde" | "xt" => Ok(OperatorLabel::SxTilde),
            "sy~" | "syt" | "sy_tilde" | "yt" => Ok(OperatorLabel::SyTilde),
            other => Err(Error::invalid(format!(
                "unknown spin operator label `{other}`"
            ))),
        }
    }
}

/// A single-ensemble operator written in the `Sz` Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinOperator {
    pub label: OperatorLabel,
    pub matrix: DMatrix<C64>,
}

impl SpinOperator {
    pub fn custom(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("operator matrix must be square"));
        }
        Ok(Self {
            label: OperatorLabel::Custom,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// Builds one of the named collective spin operators as a dense matrix.
pub fn build_operator(space: SpinSpace, label: OperatorLabel) -> Result<SpinOperator> {
    let n = space.n_atoms();
    let dim = space.dim();
    let mut splus = DMatrix::<C64>::zeros(dim, dim);
    for k in 0..n {
        splus[(k + 1, k)] = C64::new(space.ladder_coefficient(k), 0.0);
    }
    let sminus = splus.adjoint();
    let i = C64::i();
    let matrix = match label {
        OperatorLabel::SPlus => splus,
        OperatorLabel::SMinus => sminus,
        OperatorLabel::Sx => &splus + &sminus,
        OperatorLabel::Sy => (&splus - &sminus) * (-i),
        OperatorLabel::Sz => DMatrix::from_diagonal(&DVector::from_fn(dim, |k, _| {
            C64::new(space.sz_eigenvalue(k), 0.0)
        })),
        OperatorLabel::SxTilde | OperatorLabel::SyTilde => {
            let sx = &splus + &sminus;
            let sy = (&splus - &sminus) * (-i);
            let scale = C64::new(FRAC_1_SQRT_2, 0.0);
            if label == OperatorLabel::SxTilde {
                (sx + sy) * scale
            } else {
                (sy - sx) * scale
            }
        }
        OperatorLabel::Custom => {
            return Err(Error::invalid(
                "custom operators have no canonical matrix; use SpinOperator::custom",
            ))
        }
    };
    Ok(SpinOperator { label, matrix })
}

const LN_FACTORIAL_TABLE: usize = 4096;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACTORIAL_TABLE);
        t.push(0.0);
        let mut acc = 0.0;
        for k in 1..LN_FACTORIAL_TABLE {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// `ln(n!)`, tabulated by cumulative summation.
pub fn ln_factorial(n: usize) -> f64 {
    let table = ln_factorial_table();
    if n < table.len() {
        table[n]
    } else {
        let mut acc = table[table.len() - 1];
        for k in table.len()..=n {
            acc += (k as f64).ln();
        }
        acc
    }
}

/// `(sign, ln|x|^p)` of a real base raised to a non-negative integer power.
/// `0^0` is taken as one.
fn signed_ln_pow(x: f64, p: i64) -> Option<(f64, f64)> {
    debug_assert!(p >= 0);
    if p == 0 {
        return Some((1.0, 0.0));
    }
    if x == 0.0 {
        return None;
    }
    let sign = if x < 0.0 && p % 2 == 1 { -1.0 } else { 1.0 };
    Some((sign, p as f64 * x.abs().ln()))
}

/// Matrix element `<k| exp(-i Sy theta / 2) |k'>` from the closed-form
/// factorial sum, evaluated in log space with explicit sign tracking.
///
/// The sum alternates, so relative accuracy degrades for mid-range angles
/// once `N` exceeds roughly 40. Whole matrices should come from
/// [`sy_rotation_matrix`], which is stable for every `N`.
pub fn rotation_matrix_element(n: usize, k: usize, kp: usize, theta: f64) -> Result<f64> {
    let space = SpinSpace::new(n)?;
    space.check_index(k)?;
    space.check_index(kp)?;

    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let prefactor =
        0.5 * (ln_factorial(kp) + ln_factorial(n - kp) + ln_factorial(k) + ln_factorial(n - k));

    let (k, kp, n) = (k as i64, kp as i64, n as i64);
    let lo = 0.max(k - kp);
    let hi = k.min(n - kp);
    let mut total = 0.0;
    for m in lo..=hi {
        let cos_pow = k - kp + n - 2 * m;
        let sin_pow = 2 * m + kp - k;
        let (Some((sc, lc)), Some((ss, ls))) =
            (signed_ln_pow(c, cos_pow), signed_ln_pow(s, sin_pow))
        else {
            continue;
        };
        let denom = ln_factorial((k - m) as usize)
            + ln_factorial((n - kp - m) as usize)
            + ln_factorial(m as usize)
            + ln_factorial((kp - k + m) as usize);
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 } * sc * ss;
        total += sign * (prefactor - denom + lc + ls).exp();
    }
    Ok(total)
}

/// Eigenvectors of `Sx` (columns ordered by eigenvalue `2j - N`), cached per `N`.
fn sx_eigenvectors(n: usize) -> DMatrix<f64> {
    let dim = n + 1;
    let mut sx = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..n {
        let v = ladder_coefficient(n, k);
        sx[(k + 1, k)] = v;
        sx[(k, k + 1)] = v;
    }
    let eig = SymmetricEigen::new(sx);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])])
}

/// Full real matrix `exp(-i Sy theta / 2)` in the Fock basis.
///
/// Computed spectrally: `exp(-i Sy θ/2) = D exp(-i Sx θ/2) D†` with
/// `D = exp(-i Sz π/4)`, and the `Sx` eigenvalues taken as the exact integers
/// `2j - N`. Stable for all `N`, unlike the alternating closed-form sum.
pub fn sy_rotation_matrix(n: usize, theta: f64) -> Result<DMatrix<f64>> {
    let space = SpinSpace::new(n)?;
    let dim = space.dim();
    let v = sx_eigenvectors(n);
    let phases: Vec<C64> = (0..dim)
        .map(|j| C64::from_polar(1.0, -space.sz_eigenvalue(j) * theta / 2.0))
        .collect();
    let d: Vec<C64> = (0..dim)
        .map(|k| C64::from_polar(1.0, -space.sz_eigenvalue(k) * FRAC_PI_4))
        .collect();
    let mut out = DMatrix::<f64>::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..dim {
                acc += phases[j] * (v[(r, j)] * v[(c, j)]);
            }
            out[(r, c)] = (d[r] * acc * d[c].conj()).re;
        }
    }
    Ok(out)
}

/// Diagonal of `exp(-i Sz alpha / 2)`.
pub(crate) fn sz_phase_diagonal(space: SpinSpace, alpha: f64) -> Vec<C64> {
    (0..space.dim())
        .map(|k| C64::from_polar(1.0, -space.sz_eigenvalue(k) * alpha / 2.0))
        .collect()
}

/// Unitary whose column `k` is the rotated Fock state
/// `|k>^(θ,φ) = exp(-i Sz φ/2) exp(-i Sy~ θ/2) |k>`.
///
/// The polar rotation is about the `Sy~` axis, i.e. the `Sy` rotation
/// conjugated by the fixed `exp(-i Sz π/8)` frame change that maps `x` onto
/// `x~`. Consequently `|N>^(θ,φ)` points at polar angle `θ` and azimuth `φ`
/// measured from the `Sx~` axis.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatedBasis {
    pub theta: f64,
    pub phi: f64,
    pub unitary: DMatrix<C64>,
}

impl RotatedBasis {
    pub fn dim(&self) -> usize {
        self.unitary.nrows()
    }

    /// Eigenbasis of `Sx~` with eigenvalues `2k - N`.
    pub fn x_tilde(space: SpinSpace) -> Self {
        build_rotated_basis(space, FRAC_PI_2, 0.0)
    }

    /// Eigenbasis of `Sy~` with eigenvalues `2k - N`.
    pub fn y_tilde(space: SpinSpace) -> Self {
        build_rotated_basis(space, FRAC_PI_2, FRAC_PI_2)
    }

    pub fn z(space: SpinSpace) -> Self {
        build_rotated_basis(space, 0.0, 0.0)
    }

    /// Column `k` as an owned vector.
    pub fn state(&self, k: usize) -> DVector<C64> {
        self.unitary.column(k).into_owned()
    }

    /// `max |(U†U - I)_{ij}|`.
    pub fn unitarity_defect(&self) -> f64 {
        let g = self.unitary.adjoint() * &self.unitary;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).norm());
            }
        }
        worst
    }
}

pub fn build_rotated_basis(space: SpinSpace, theta: f64, phi: f64) -> RotatedBasis {
    let dim = space.dim();
    let d = sy_rotation_matrix(space.n_atoms(), theta).expect("space already validated");
    let frame = sz_phase_diagonal(space, FRAC_PI_4);
    let azimuth = sz_phase_diagonal(space, phi);
    let unitary = DMatrix::from_fn(dim, dim, |r, c| {
        azimuth[r] * frame[r] * d[(r, c)] * frame[c].conj()
    });
    RotatedBasis {
        theta,
        phi,
        unitary,
    }
}

/// Spin coherent state with every atom in `cos(θ/2) e^{-iφ/2}|b> + sin(θ/2) e^{iφ/2}|a>`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherentState {
    pub theta: f64,
    pub phi: f64,
    pub amplitudes: DVector<C64>,
}

pub fn coherent_state(space: SpinSpace, theta: f64, phi: f64) -> CoherentState {
    let n = space.n_atoms();
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let amplitudes = DVector::from_fn(space.dim(), |k, _| {
        let (Some((sc, lc)), Some((ss, ls))) =
            (signed_ln_pow(c, k as i64), signed_ln_pow(s, (n - k) as i64))
        else {
            return C64::new(0.0, 0.0);
        };
        let ln_binom = 0.5 * (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k));
        let modulus = sc * ss * (ln_binom + lc + ls).exp();
        let phase = phi / 2.0 * (n as f64 - 2.0 * k as f64);
        C64::from_polar(modulus, phase)
    });
    CoherentState {
        theta,
        phi,
        amplitudes,
    }
}

/// Half-integer stored as its double.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const fn from_doubled(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub fn new(value: f64) -> Result<Self> {
        let twice = 2.0 * value;
        if (twice - twice.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!("{value} is not a half-integer")));
        }
        Ok(HalfInt(twice.round() as i32))
    }

    pub const fn doubled(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

fn check_pair(j: HalfInt, m: HalfInt) -> Result<()> {
    if j.0 < 0 {
        return Err(Error::invalid(format!("negative angular momentum {j}")));
    }
    if m.0.abs() > j.0 {
        return Err(Error::invalid(format!("|m| = |{m}| exceeds j = {j}")));
    }
    if (j.0 - m.0) % 2 != 0 {
        return Err(Error::invalid(format!(
            "j - m must be an integer (j = {j}, m = {m})"
        )));
    }
    Ok(())
}

/// Clebsch-Gordan coefficient `<j1 m1; j2 m2 | J M>` in the Condon-Shortley
/// convention, from Racah's factorial sum in log space.
///
/// Like every alternating closed form it loses relative accuracy for large
/// angular momenta; it is exact to ~1e-12 for `j <= 15`.
pub fn clebsch_gordan(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j: HalfInt,
    m: HalfInt,
) -> Result<f64> {
    check_pair(j1, m1)?;
    check_pair(j2, m2)?;
    check_pair(j, m)?;
    Ok(clebsch_gordan_doubled(j1.0, m1.0, j2.0, m2.0, j.0, m.0))
}

/// Unchecked variant on doubled quantum numbers; arguments must already be
/// consistent (`|m| <= j`, `j - m` integral).
pub(crate) fn clebsch_gordan_doubled(
    tj1: i32,
    tm1: i32,
    tj2: i32,
    tm2: i32,
    tj: i32,
    tm: i32,
) -> f64 {
    if tm != tm1 + tm2 {
        return 0.0;
    }
    if tj < (tj1 - tj2).abs() || tj > tj1 + tj2 || (tj1 + tj2 + tj) % 2 != 0 {
        return 0.0;
    }
    // Work in ordinary integers: every combination below is (sum of doubled)/2.
    let h = |x: i32| -> i64 {
        debug_assert!(x % 2 == 0, "non-integral combination");
        (x / 2) as i64
    };
    let a = h(tj1 + tj2 - tj);
    let b = h(tj1 - tm1);
    let c = h(tj2 + tm2);
    let d = h(tj - tj2 + tm1);
    let e = h(tj - tj1 - tm2);

    let lf = |x: i64| ln_factorial(x as usize);
    let ln_pref = 0.5
        * (((tj + 1) as f64).ln() + lf(h(tj + tj1 - tj2)) + lf(h(tj - tj1 + tj2)) + lf(a)
            - lf(h(tj1 + tj2 + tj) + 1)
            + lf(h(tj + tm))
            + lf(h(tj - tm))
            + lf(h(tj1 - tm1))
            + lf(h(tj1 + tm1))
            + lf(h(tj2 - tm2))
            + lf(h(tj2 + tm2)));

    let lo = 0.max(-d).max(-e);
    let hi = a.min(b).min(c);
    let mut total = 0.0;
    for s in lo..=hi {
        let denom = lf(s) + lf(a - s) + lf(b - s) + lf(c - s) + lf(d + s) + lf(e + s);
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (ln_pref - denom).exp();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn max_abs(m: &DMatrix<C64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn op(n: usize, label: OperatorLabel) -> DMatrix<C64> {
        build_operator(SpinSpace::new(n).unwrap(), label)
            .unwrap()
            .matrix
    }

    #[test]
    fn sz_for_two_atoms() {
        let sz = op(2, OperatorLabel::Sz);
        for (k, expected) in [-2.0, 0.0, 2.0].into_iter().enumerate() {
            assert_eq!(sz[(k, k)], C64::new(expected, 0.0));
        }
        assert_eq!(sz[(0, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn sx_single_atom_is_pauli_x() {
        let sx = op(1, OperatorLabel::Sx);
        let pauli = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
            ],
        );
        assert_eq!(sx, pauli);
    }

    #[test]
    fn raising_operator_coefficient() {
        let sp = op(4, OperatorLabel::SPlus);
        let mut ket = DVector::<C64>::zeros(5);
        ket[1] = C64::new(1.0, 0.0);
        let out = sp * ket;
        assert_abs_diff_eq!(out[2].re, 6f64.sqrt(), epsilon = 1e-14);
        assert_eq!(out.iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn lowering_is_adjoint_of_raising() {
        let sp = op(7, OperatorLabel::SPlus);
        let sm = op(7, OperatorLabel::SMinus);
        assert!(max_abs(&(sp.adjoint() - sm)) == 0.0);
    }

    #[test]
    fn unknown_label_rejected() {
        assert!(matches!(
            "Sw".parse::<OperatorLabel>(),
            Err(Error::InvalidArgument(_))
        ));
        assert_eq!(
            "Sx~".parse::<OperatorLabel>().unwrap(),
            OperatorLabel::SxTilde
        );
        let space = SpinSpace::new(3).unwrap();
        assert!(build_operator(space, OperatorLabel::Custom).is_err());
    }

    #[test]
    fn zero_atoms_rejected() {
        assert!(SpinSpace::new(0).is_err());
    }

    #[test]
    fn commutators_close_cyclically() {
        for n in [1, 4, 9] {
            let (sx, sy, sz) = (
                op(n, OperatorLabel::Sx),
                op(n, OperatorLabel::Sy),
                op(n, OperatorLabel::Sz),
            );
            let two_i = C64::new(0.0, 2.0);
            let c = |a: &DMatrix<C64>, b: &DMatrix<C64>| a * b - b * a;
            assert!(max_abs(&(c(&sx, &sy) - &sz * two_i)) <= 1e-12);
            assert!(max_abs(&(c(&sy, &sz) - &sx * two_i)) <= 1e-12);
            assert!(max_abs(&(c(&sz, &sx) - &sy * two_i)) <= 1e-12);
            let (xt, yt) = (op(n, OperatorLabel::SxTilde), op(n, OperatorLabel::SyTilde));
            assert!(max_abs(&(c(&xt, &yt) - &sz * two_i)) <= 1e-12);
        }
    }

    #[test]
    fn hermitian_labels_are_hermitian() {
        let space = SpinSpace::new(6).unwrap();
        for label in [
            OperatorLabel::Sx,
            OperatorLabel::Sy,
            OperatorLabel::Sz,
            OperatorLabel::SxTilde,
            OperatorLabel::SyTilde,
        ] {
            assert!(build_operator(space, label).unwrap().hermiticity_defect() <= 1e-12);
        }
    }

    #[test]
    fn rotation_element_identity_and_qubit() {
        assert_abs_diff_eq!(
            rotation_matrix_element(10, 3, 3, 0.0).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            rotation_matrix_element(10, 3, 4, 0.0).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        for theta in [0.3, 1.1, 2.9] {
            let v = rotation_matrix_element(1, 0, 0, theta).unwrap();
            assert_abs_diff_eq!(v, (theta / 2.0).cos(), epsilon = 1e-14);
        }
        assert!(rotation_matrix_element(4, 5, 0, 0.1).is_err());
    }

    #[test]
    fn rotation_element_matches_dense_exponential() {
        let n = 6;
        let theta = 0.7;
        let sy = op(n, OperatorLabel::Sy);
        let dense = (sy * C64::new(0.0, -theta / 2.0)).exp();
        for k in 0..=n {
            for kp in 0..=n {
                let v = rotation_matrix_element(n, k, kp, theta).unwrap();
                assert!(
                    (dense[(k, kp)] - C64::new(v, 0.0)).norm() <= 1e-10,
                    "({k},{kp})"
                );
            }
        }
    }

    #[test]
    fn spectral_rotation_matches_closed_form() {
        for n in [3, 12, 25] {
            for theta in [0.4, PI / 2.0, 2.6] {
                let d = sy_rotation_matrix(n, theta).unwrap();
                for k in 0..=n {
                    for kp in 0..=n {
                        let v = rotation_matrix_element(n, k, kp, theta).unwrap();
                        assert!((d[(k, kp)] - v).abs() <= 1e-9, "N={n} ({k},{kp})");
                    }
                }
            }
        }
    }

    #[test]
    fn spectral_rotation_orthogonal_at_large_n() {
        let d = sy_rotation_matrix(200, 1.234).unwrap();
        let g = d.transpose() * &d;
        let defect = (g - DMatrix::<f64>::identity(201, 201)).abs().max();
        assert!(defect <= 1e-10, "defect {defect}");
    }

    #[test]
    fn closed_form_does_not_overflow_at_large_n() {
        // Near-identity angles keep the sum cancellation-free; what matters
        // here is that the factorials never overflow.
        let v = rotation_matrix_element(200, 100, 100, 1e-3).unwrap();
        let d = sy_rotation_matrix(200, 1e-3).unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, d[(100, 100)], epsilon = 1e-9);
    }

    #[test]
    fn rotated_basis_identity_at_origin() {
        let space = SpinSpace::new(5).unwrap();
        let b = build_rotated_basis(space, 0.0, 0.0);
        let defect = max_abs(&(b.unitary - DMatrix::<C64>::identity(6, 6)));
        assert!(defect <= 1e-12);
    }

    #[test]
    fn rotated_basis_is_unitary() {
        let space = SpinSpace::new(40).unwrap();
        for (theta, phi) in [(0.37, 2.1), (2.2, -0.8), (1.5, 3.0)] {
            assert!(build_rotated_basis(space, theta, phi).unitarity_defect() <= 1e-10);
        }
    }

    #[test]
    fn tilde_bases_diagonalize_tilde_operators() {
        for n in [1, 4, 7] {
            let space = SpinSpace::new(n).unwrap();
            for (basis, label) in [
                (RotatedBasis::x_tilde(space), OperatorLabel::SxTilde),
                (RotatedBasis::y_tilde(space), OperatorLabel::SyTilde),
            ] {
                let o = op(n, label);
                let diag = basis.unitary.adjoint() * o * &basis.unitary;
                let sz = op(n, OperatorLabel::Sz);
                assert!(max_abs(&(diag - sz)) <= 1e-10);
            }
        }
    }

    #[test]
    fn x_tilde_basis_matches_raw_sy_rotation_form() {
        // exp(-i Sz π/8) exp(-i Sy π/4)|k> equals |k>^(x~) up to a phase per column.
        let n = 6;
        let space = SpinSpace::new(n).unwrap();
        let sz = op(n, OperatorLabel::Sz);
        let sy = op(n, OperatorLabel::Sy);
        let raw = (sz * C64::new(0.0, -PI / 8.0)).exp() * (sy * C64::new(0.0, -PI / 4.0)).exp();
        let basis = RotatedBasis::x_tilde(space);
        for k in 0..=n {
            let overlap = basis.unitary.column(k).dotc(&raw.column(k));
            assert_abs_diff_eq!(overlap.norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn coherent_state_poles_and_norm() {
        let space = SpinSpace::new(8).unwrap();
        let north = coherent_state(space, 0.0, 0.3);
        assert_abs_diff_eq!(north.amplitudes[8].norm(), 1.0, epsilon = 1e-14);
        let south = coherent_state(space, PI, 0.3);
        assert_abs_diff_eq!(south.amplitudes[0].norm(), 1.0, epsilon = 1e-14);

        let big = SpinSpace::new(50).unwrap();
        for (theta, phi) in [(0.2, 1.0), (1.7, -2.0), (2.9, 0.4)] {
            let cs = coherent_state(big, theta, phi);
            assert_abs_diff_eq!(cs.amplitudes.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn coherent_state_points_along_bloch_vector() {
        let n = 5;
        let space = SpinSpace::new(n).unwrap();
        let (theta, phi) = (1.1, 0.6);
        let cs = coherent_state(space, theta, phi).amplitudes;
        let expect = |label| {
            let m = op(n, label);
            cs.dotc(&(m * &cs)).re
        };
        let nf = n as f64;
        assert_abs_diff_eq!(
            expect(OperatorLabel::Sx),
            nf * theta.sin() * phi.cos(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            expect(OperatorLabel::Sy),
            nf * theta.sin() * phi.sin(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expect(OperatorLabel::Sz), nf * theta.cos(), epsilon = 1e-12);
    }

    #[test]
    fn top_rotated_fock_state_is_coherent_state() {
        // |N>^(θ,φ) points along azimuth φ of the tilde frame, i.e. φ + π/4 of the standard frame.
        let space = SpinSpace::new(9).unwrap();
        for (theta, phi) in [(0.5, 0.2), (2.0, -1.3)] {
            let top = build_rotated_basis(space, theta, phi).state(9);
            let cs = coherent_state(space, theta, phi + FRAC_PI_4).amplitudes;
            assert_abs_diff_eq!(top.dotc(&cs).norm(), 1.0, epsilon = 1e-10);
        }
    }

    fn hi(x: f64) -> HalfInt {
        HalfInt::new(x).unwrap()
    }

    #[test]
    fn clebsch_gordan_singlet() {
        let v = clebsch_gordan(hi(0.5), hi(0.5), hi(0.5), hi(-0.5), hi(0.0), hi(0.0)).unwrap();
        assert_abs_diff_eq!(v, FRAC_1_SQRT_2, epsilon = 1e-14);
        let v = clebsch_gordan(hi(0.5), hi(-0.5), hi(0.5), hi(0.5), hi(0.0), hi(0.0)).unwrap();
        assert_abs_diff_eq!(v, -FRAC_1_SQRT_2, epsilon = 1e-14);
    }

    #[test]
    fn clebsch_gordan_selection_rules() {
        assert_eq!(
            clebsch_gordan(hi(1.0), hi(1.0), hi(1.0), hi(0.0), hi(2.0), hi(2.0)).unwrap(),
            0.0
        );
        assert_eq!(
            clebsch_gordan(hi(1.0), hi(1.0), hi(1.0), hi(0.0), hi(3.0), hi(1.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn clebsch_gordan_rejects_malformed() {
        assert!(clebsch_gordan(hi(1.0), hi(2.0), hi(1.0), hi(0.0), hi(1.0), hi(1.0)).is_err());
        assert!(clebsch_gordan(hi(1.0), hi(0.5), hi(1.0), hi(0.0), hi(1.0), hi(0.5)).is_err());
        assert!(HalfInt::new(0.3).is_err());
    }

    #[test]
    fn clebsch_gordan_known_value() {
        // <1 1; 1 -1 | 1 0> = 1/sqrt(2), <1 0; 1 0 | 2 0> = sqrt(2/3)
        let v = clebsch_gordan(hi(1.0), hi(1.0), hi(1.0), hi(-1.0), hi(1.0), hi(0.0)).unwrap();
        assert_abs_diff_eq!(v, FRAC_1_SQRT_2, epsilon = 1e-14);
        let v = clebsch_gordan(hi(1.0), hi(0.0), hi(1.0), hi(0.0), hi(2.0), hi(0.0)).unwrap();
        assert_abs_diff_eq!(v, (2.0f64 / 3.0).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn ln_factorial_values() {
        assert_eq!(ln_factorial(0), 0.0);
        assert_abs_diff_eq!(ln_factorial(5), 120f64.ln(), epsilon = 1e-13);
        let beyond = ln_factorial(5000);
        assert!(beyond > ln_factorial(4095));
    }
}
