//! Spin Wigner functions on the Bloch sphere.
//!
//! `W(θ, φ) = Σ_lm ρ_lm Y_lm(θ, φ)` with the multipole coefficients
//! `ρ_lm = Σ (-1)^{j - m1 - m} <j m1; j -m2 | l m> <j m1|ρ|j m2>`,
//! `j = N/2` and `|j m> = |k = j + m>`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::reduced_density;
use crate::error::{Error, Result};
use crate::evolution::{full_index, Amplitudes, JointState};
use crate::spin_core::{build_rotated_basis, clebsch_gordan_doubled};

/// Above this `N` the factorial sums inside the Clebsch-Gordan
/// coefficients start to lose digits.
pub const WIGNER_LIMIT: usize = 40;

const IMAG_TOL: f64 = 1e-10;

/// `ρ_lm` for `0 <= l <= N`, `|m| <= l`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultipoleDecomposition {
    pub n_atoms: usize,
    /// Row `l`, column `m + l`.
    coefficients: Vec<Vec<C64>>,
}

impl MultipoleDecomposition {
    pub fn j(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    pub fn l_max(&self) -> usize {
        self.n_atoms
    }

    pub fn get(&self, l: usize, m: i64) -> C64 {
        if l > self.l_max() || m.unsigned_abs() as usize > l {
            return C64::new(0.0, 0.0);
        }
        self.coefficients[l][(m + l as i64) as usize]
    }

    /// `Σ |ρ_lm|^2`, equal to `Tr ρ^2`.
    pub fn power(&self) -> f64 {
        self.coefficients
            .iter()
            .flatten()
            .map(|z| z.norm_sqr())
            .sum()
    }

    /// `W(θ, φ)` with its imaginary residue.
    pub fn evaluate(&self, theta: f64, phi: f64) -> C64 {
        let plm = normalized_legendre(self.l_max(), theta.cos());
        self.sum_row(&plm, phi)
    }

    fn sum_row(&self, plm: &[Vec<f64>], phi: f64) -> C64 {
        let mut w = C64::new(0.0, 0.0);
        for l in 0..=self.l_max() {
            w += self.get(l, 0) * plm[l][0];
            for m in 1..=l {
                let y = C64::from_polar(plm[l][m], m as f64 * phi);
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                // Y_{l,-m} = (-1)^m conj(Y_lm)
                w += self.get(l, m as i64) * y + self.get(l, -(m as i64)) * y.conj() * sign;
            }
        }
        w
    }
}

fn check_wigner_size(n: usize) -> Result<()> {
    if n > WIGNER_LIMIT {
        Err(Error::ResourceLimit {
            what: "multipole decomposition",
            limit: WIGNER_LIMIT,
            requested: n,
        })
    } else {
        Ok(())
    }
}

/// Multipole coefficients of a single-ensemble density matrix.
pub fn multipole(rho: &DMatrix<C64>) -> Result<MultipoleDecomposition> {
    if !rho.is_square() || rho.nrows() < 2 {
        return Err(Error::invalid(
            "density matrix must be square with dimension >= 2",
        ));
    }
    let n = rho.nrows() - 1;
    check_wigner_size(n)?;
    let tj = n as i32;
    let mut coefficients = Vec::with_capacity(n + 1);
    for l in 0..=n {
        let tl = 2 * l as i32;
        let mut row = vec![C64::new(0.0, 0.0); 2 * l + 1];
        for k1 in 0..=n {
            let tm1 = 2 * k1 as i32 - tj;
            for k2 in 0..=n {
                let tm2 = 2 * k2 as i32 - tj;
                let tm = tm1 - tm2;
                if tm.abs() > tl {
                    continue;
                }
                let cg = clebsch_gordan_doubled(tj, tm1, tj, -tm2, tl, tm);
                if cg == 0.0 {
                    continue;
                }
                // (-1)^{j - m1 - m} = (-1)^{N - 2 k1 + k2}
                let phase = (tj - tm1 - tm) / 2;
                let sign = if phase.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                row[((tm / 2) + l as i32) as usize] += rho[(k1, k2)] * (sign * cg);
            }
        }
        coefficients.push(row);
    }
    Ok(MultipoleDecomposition {
        n_atoms: n,
        coefficients,
    })
}

/// Multipole coefficients of the pure state `|v><v|`.
pub fn multipole_pure(v: &DVector<C64>) -> Result<MultipoleDecomposition> {
    multipole(&(v * v.adjoint()))
}

/// Orthonormal associated Legendre values `P̄_lm(x)` for `0 <= m <= l <= l_max`,
/// including the Condon-Shortley phase and the `1/sqrt(4π)` factor, so that
/// `Y_lm = P̄_lm(cos θ) e^{imφ}`.
pub fn normalized_legendre(l_max: usize, x: f64) -> Vec<Vec<f64>> {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut p: Vec<Vec<f64>> = (0..=l_max).map(|l| vec![0.0; l + 1]).collect();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            pmm *= -s * ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        }
        p[m][m] = pmm;
        if m < l_max {
            p[m + 1][m] = x * ((2 * m + 3) as f64).sqrt() * pmm;
        }
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    p
}

/// `Y_lm(θ, φ)` for any integer `m`.
pub fn spherical_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> C64 {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return C64::new(0.0, 0.0);
    }
    let p = normalized_legendre(l, theta.cos())[l][am];
    let y = C64::from_polar(p, am as f64 * phi);
    if m >= 0 {
        y
    } else if am.is_multiple_of(2) {
        y.conj()
    } else {
        -y.conj()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Projection {
    /// Plain `(φ, θ)` rectangle in the `(Sx, Sy, Sz)` frame.
    None,
    /// Transverse equirectangular map, `(Sx, Sy, Sz)` frame.
    Cassini,
    /// Mercator map in the `(Sx~, Sy~, Sz)` frame, latitude capped at ±85°.
    Mercator,
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Projection::None => "none",
            Projection::Cassini => "cassini",
            Projection::Mercator => "mercator",
        })
    }
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Projection::None),
            "cassini" => Ok(Projection::Cassini),
            "mercator" => Ok(Projection::Mercator),
            other => Err(Error::invalid(format!("unknown projection `{other}`"))),
        }
    }
}

impl Projection {
    /// Added to the plotted azimuth before evaluating `Y_lm`.
    pub fn frame_offset(&self) -> f64 {
        match self {
            Projection::Mercator => FRAC_PI_4,
            _ => 0.0,
        }
    }
}

const MERCATOR_MAX_LAT: f64 = 85.0 * PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Rows: polar angle, or map ordinate for projected grids.
    pub n_theta: usize,
    /// Columns: azimuth, or map abscissa.
    pub n_phi: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_theta: 181,
            n_phi: 361,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 2 || self.n_phi < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 points per axis, got {}x{}",
                self.n_theta, self.n_phi
            )));
        }
        Ok(())
    }
}

fn linspace(a: f64, b: f64, n: usize, i: usize) -> f64 {
    a + (b - a) * i as f64 / (n - 1) as f64
}

/// Map coordinates `(x, y)` of grid node `(row, col)` and the sphere point
/// `(θ, φ)` in the plotted frame.
fn grid_point(
    projection: Projection,
    grid: GridSpec,
    row: usize,
    col: usize,
) -> (f64, f64, f64, f64) {
    match projection {
        Projection::None => {
            let theta = linspace(0.0, PI, grid.n_theta, row);
            let phi = linspace(-PI, PI, grid.n_phi, col);
            (phi, theta, theta, phi)
        }
        Projection::Cassini => {
            let y = linspace(-FRAC_PI_2, FRAC_PI_2, grid.n_theta, row);
            let x = linspace(-PI, PI, grid.n_phi, col);
            let theta = (x.sin() * y.cos()).clamp(-1.0, 1.0).asin() + FRAC_PI_2;
            let phi = x.cos().atan2(y.tan());
            (x, y, theta, phi)
        }
        Projection::Mercator => {
            let y_max = (FRAC_PI_4 + MERCATOR_MAX_LAT / 2.0).tan().ln();
            let y = linspace(-y_max, y_max, grid.n_theta, row);
            let x = linspace(-PI, PI, grid.n_phi, col);
            let lat = y.sinh().atan();
            (x, y, FRAC_PI_2 - lat, x)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerSample {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub phi: f64,
    pub w: f64,
}

/// Sampled Wigner function, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerField {
    pub projection: Projection,
    pub grid: GridSpec,
    pub samples: Vec<WignerSample>,
    /// Largest discarded imaginary part.
    pub imag_residue: f64,
}

impl WignerField {
    pub fn row(&self, r: usize) -> &[WignerSample] {
        let c = self.grid.n_phi;
        &self.samples[r * c..(r + 1) * c]
    }

    pub fn argmax(&self) -> WignerSample {
        *self
            .samples
            .iter()
            .max_by(|a, b| a.w.total_cmp(&b.w))
            .expect("grid is non-empty")
    }

    pub fn argmin(&self) -> WignerSample {
        *self
            .samples
            .iter()
            .min_by(|a, b| a.w.total_cmp(&b.w))
            .expect("grid is non-empty")
    }
}

pub fn wigner_field(
    decomp: &MultipoleDecomposition,
    grid: GridSpec,
    projection: Projection,
) -> Result<WignerField> {
    grid.validate()?;
    let offset = projection.frame_offset();
    let rows: Vec<(Vec<WignerSample>, f64)> = (0..grid.n_theta)
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(grid.n_phi);
            let mut residue: f64 = 0.0;
            // Plain grids share θ along a row; the projections do not.
            let shared = (projection == Projection::None).then(|| {
                normalized_legendre(decomp.l_max(), grid_point(projection, grid, r, 0).2.cos())
            });
            for c in 0..grid.n_phi {
                let (x, y, theta, phi) = grid_point(projection, grid, r, c);
                let w = match &shared {
                    Some(plm) => decomp.sum_row(plm, phi + offset),
                    None => decomp.evaluate(theta, phi + offset),
                };
                residue = residue.max(w.im.abs());
                out.push(WignerSample {
                    x,
                    y,
                    theta,
                    phi,
                    w: w.re,
                });
            }
            (out, residue)
        })
        .collect();
    let imag_residue = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    if imag_residue > IMAG_TOL {
        return Err(Error::InvalidState(format!(
            "Wigner function has imaginary part {imag_residue:e}; input is not Hermitian"
        )));
    }
    Ok(WignerField {
        projection,
        grid,
        samples: rows.into_iter().flat_map(|r| r.0).collect(),
        imag_residue,
    })
}

/// Wigner function of the second ensemble's reduced state.
pub fn marginal_wigner(
    state: &JointState,
    grid: GridSpec,
    projection: Projection,
) -> Result<WignerField> {
    let rho = reduced_density(state);
    wigner_field(&multipole(&rho.matrix)?, grid, projection)
}

/// Outcome of projecting ensemble 1 onto `|k>^(θ,φ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalProjection {
    pub theta: f64,
    pub phi: f64,
    pub k: usize,
    pub probability: f64,
}

/// Normalized state of ensemble 2 after ensemble 1 is found in `|k>^(θ,φ)`.
pub fn conditional_state(
    state: &JointState,
    theta: f64,
    phi: f64,
    k: usize,
) -> Result<(DVector<C64>, ConditionalProjection)> {
    let n = state.n_atoms;
    if k > n {
        return Err(Error::invalid(format!("outcome {k} outside 0..={n}")));
    }
    let u = build_rotated_basis(state.space(), theta, phi).unitary;
    let w = match &state.amplitudes {
        Amplitudes::Sector(c) => DVector::from_fn(n + 1, |b, _| u[(b, k)].conj() * c[b]),
        Amplitudes::Full(v) => DVector::from_fn(n + 1, |b, _| {
            (0..=n)
                .map(|a| u[(a, k)].conj() * v[full_index(n, a, b)])
                .sum()
        }),
    };
    let probability = w.norm_squared();
    if probability < 1e-12 {
        return Err(Error::DegenerateOutcome { k, probability });
    }
    Ok((
        w / C64::new(probability.sqrt(), 0.0),
        ConditionalProjection {
            theta,
            phi,
            k,
            probability,
        },
    ))
}

/// Conditional Wigner function of ensemble 2.
pub fn conditional_wigner(
    state: &JointState,
    theta: f64,
    phi: f64,
    k: usize,
    grid: GridSpec,
    projection: Projection,
) -> Result<(WignerField, ConditionalProjection)> {
    let (v, info) = conditional_state(state, theta, phi, k)?;
    Ok((wigner_field(&multipole_pure(&v)?, grid, projection)?, info))
}

/// Local maximum of `W` near `(θ0, φ0)` (angles in the frame shifted by
/// `offset`), refined by shrinking-step coordinate search.
pub fn refine_peak(
    decomp: &MultipoleDecomposition,
    theta0: f64,
    phi0: f64,
    offset: f64,
) -> (f64, f64, f64) {
    let f = |t: f64, p: f64| decomp.evaluate(t, p + offset).re;
    let (mut t, mut p) = (theta0, phi0);
    let mut best = f(t, p);
    let mut step = 0.05;
    while step > 1e-7 {
        let mut moved = false;
        for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (nt, np) = ((t + dt).clamp(0.0, PI), p + dp);
            let v = f(nt, np);
            if v > best {
                best = v;
                t = nt;
                p = np;
                moved = true;
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    (t, p, best)
}

/// Great-circle angle between two points given in polar coordinates.
pub fn angular_distance(t1: f64, p1: f64, t2: f64, p2: f64) -> f64 {
    let c = t1.cos() * t2.cos() + t1.sin() * t2.sin() * (p1 - p2).cos();
    c.clamp(-1.0, 1.0).acos()
}
