//! Hamiltonians and exact time evolution.
//!
//! `S1+ S2+ + S1- S2-` changes both Fock numbers together, so `Sz1 - Sz2` is
//! conserved and `|N, N>` stays inside the `N + 1` states `|k, k>`. There the
//! Hamiltonian is a real symmetric tridiagonal matrix. The coupling `J` is
//! absorbed into the dimensionless time `τ`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_core::{ladder_coefficient, SpinSpace};

/// Largest `N` for which `(N+1)^2`-dimensional matrices are built.
pub const FULL_SPACE_LIMIT: usize = 64;

/// Default cap for the dense matrix-exponential oracle.
pub const ORACLE_LIMIT: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorHamiltonian {
    pub n_atoms: usize,
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl SectorHamiltonian {
    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut h = DMatrix::<f64>::from_diagonal(&self.diag.clone().into());
        for (k, &v) in self.offdiag.iter().enumerate() {
            h[(k, k + 1)] = v;
            h[(k + 1, k)] = v;
        }
        debug_assert_eq!(h.nrows(), dim);
        h
    }
}

/// `<k+1,k+1| H |k,k> = (k+1)(N-k)`.
pub fn build_sector_hamiltonian(n_atoms: usize) -> Result<SectorHamiltonian> {
    let space = SpinSpace::new(n_atoms)?;
    let offdiag = (0..n_atoms)
        .map(|k| ((k + 1) * (n_atoms - k)) as f64)
        .collect();
    Ok(SectorHamiltonian {
        n_atoms,
        diag: vec![0.0; space.dim()],
        offdiag,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HamiltonianKind {
    /// `S1+ S2+ + S1- S2-`
    TwoAxisTwoSpin,
    /// `Sz1 Sz2`
    OneAxisTwoSpin,
    /// `(S+)^2 + (S-)^2`
    TwoAxisOneSpin,
    /// `(Sz)^2`
    OneAxisOneSpin,
}

impl HamiltonianKind {
    pub fn is_two_spin(&self) -> bool {
        matches!(
            self,
            HamiltonianKind::TwoAxisTwoSpin | HamiltonianKind::OneAxisTwoSpin
        )
    }
}

/// A Hamiltonian on the full two-ensemble space (index `k1 (N+1) + k2`) or,
/// for the one-spin kinds, on a single ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianVariant {
    pub kind: HamiltonianKind,
    pub n_atoms: usize,
    pub matrix: DMatrix<f64>,
}

pub fn full_index(n_atoms: usize, k1: usize, k2: usize) -> usize {
    k1 * (n_atoms + 1) + k2
}

pub fn build_full_hamiltonian(n_atoms: usize, kind: HamiltonianKind) -> Result<HamiltonianVariant> {
    let space = SpinSpace::new(n_atoms)?;
    let n = n_atoms;
    let d = space.dim();
    let matrix = match kind {
        HamiltonianKind::TwoAxisTwoSpin | HamiltonianKind::OneAxisTwoSpin => {
            if n > FULL_SPACE_LIMIT {
                return Err(Error::ResourceLimit {
                    what: "full two-ensemble Hamiltonian",
                    limit: FULL_SPACE_LIMIT,
                    requested: n,
                });
            }
            let mut h = DMatrix::<f64>::zeros(d * d, d * d);
            if kind == HamiltonianKind::OneAxisTwoSpin {
                for k1 in 0..d {
                    for k2 in 0..d {
                        let i = full_index(n, k1, k2);
                        h[(i, i)] = space.sz_eigenvalue(k1) * space.sz_eigenvalue(k2);
                    }
                }
            } else {
                for k1 in 0..n {
                    for k2 in 0..n {
                        let v = ladder_coefficient(n, k1) * ladder_coefficient(n, k2);
                        let up = full_index(n, k1 + 1, k2 + 1);
                        let dn = full_index(n, k1, k2);
                        h[(up, dn)] = v;
                        h[(dn, up)] = v;
                    }
                }
            }
            h
        }
        HamiltonianKind::TwoAxisOneSpin => {
            let mut h = DMatrix::<f64>::zeros(d, d);
            for k in 0..n.saturating_sub(1) {
                let v = ladder_coefficient(n, k) * ladder_coefficient(n, k + 1);
                h[(k + 2, k)] = v;
                h[(k, k + 2)] = v;
            }
            h
        }
        HamiltonianKind::OneAxisOneSpin => DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                space.sz_eigenvalue(i).powi(2)
            } else {
                0.0
            }
        }),
    };
    Ok(HamiltonianVariant {
        kind,
        n_atoms,
        matrix,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Amplitudes {
    /// `c_k` on `|k>|k>`.
    Sector(Vec<C64>),
    /// Dense amplitudes indexed by [`full_index`].
    Full(Vec<C64>),
}

/// Pure state of both ensembles.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub n_atoms: usize,
    pub amplitudes: Amplitudes,
    pub tau: Option<f64>,
}

const NORM_TOL: f64 = 1e-10;

impl JointState {
    /// The double-polarized product state `|N>|N>`.
    pub fn initial(n_atoms: usize) -> Result<Self> {
        SpinSpace::new(n_atoms)?;
        let mut c = vec![C64::new(0.0, 0.0); n_atoms + 1];
        c[n_atoms] = C64::new(1.0, 0.0);
        Ok(Self {
            n_atoms,
            amplitudes: Amplitudes::Sector(c),
            tau: Some(0.0),
        })
    }

    pub fn from_sector(n_atoms: usize, amplitudes: Vec<C64>) -> Result<Self> {
        SpinSpace::new(n_atoms)?;
        if amplitudes.len() != n_atoms + 1 {
            return Err(Error::invalid(format!(
                "expected {} sector amplitudes, got {}",
                n_atoms + 1,
                amplitudes.len()
            )));
        }
        check_norm(&amplitudes)?;
        Ok(Self {
            n_atoms,
            amplitudes: Amplitudes::Sector(amplitudes),
            tau: None,
        })
    }

    pub fn from_full(n_atoms: usize, amplitudes: Vec<C64>) -> Result<Self> {
        SpinSpace::new(n_atoms)?;
        if amplitudes.len() != (n_atoms + 1).pow(2) {
            return Err(Error::invalid(format!(
                "expected {} full amplitudes, got {}",
                (n_atoms + 1).pow(2),
                amplitudes.len()
            )));
        }
        check_norm(&amplitudes)?;
        Ok(Self {
            n_atoms,
            amplitudes: Amplitudes::Full(amplitudes),
            tau: None,
        })
    }

    pub fn space(&self) -> SpinSpace {
        SpinSpace::new(self.n_atoms).expect("validated at construction")
    }

    pub fn is_sector(&self) -> bool {
        matches!(self.amplitudes, Amplitudes::Sector(_))
    }

    pub fn sector_amplitudes(&self) -> Option<&[C64]> {
        match &self.amplitudes {
            Amplitudes::Sector(c) => Some(c),
            Amplitudes::Full(_) => None,
        }
    }

    pub fn norm(&self) -> f64 {
        let v = match &self.amplitudes {
            Amplitudes::Sector(c) | Amplitudes::Full(c) => c,
        };
        v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Dense `(N+1)^2` amplitudes.
    pub fn to_full(&self) -> Result<Vec<C64>> {
        match &self.amplitudes {
            Amplitudes::Full(v) => Ok(v.clone()),
            Amplitudes::Sector(c) => {
                if self.n_atoms > FULL_SPACE_LIMIT {
                    return Err(Error::ResourceLimit {
                        what: "full two-ensemble state",
                        limit: FULL_SPACE_LIMIT,
                        requested: self.n_atoms,
                    });
                }
                let d = self.n_atoms + 1;
                let mut v = vec![C64::new(0.0, 0.0); d * d];
                for (k, &ck) in c.iter().enumerate() {
                    v[full_index(self.n_atoms, k, k)] = ck;
                }
                Ok(v)
            }
        }
    }

    /// Sector amplitudes, extracting them from a full state whose weight off
    /// the `k1 = k2` diagonal is at most `tol`.
    pub fn to_sector(&self, tol: f64) -> Result<Vec<C64>> {
        match &self.amplitudes {
            Amplitudes::Sector(c) => Ok(c.clone()),
            Amplitudes::Full(v) => {
                let n = self.n_atoms;
                let mut off = 0.0f64;
                for k1 in 0..=n {
                    for k2 in 0..=n {
                        if k1 != k2 {
                            off = off.max(v[full_index(n, k1, k2)].norm());
                        }
                    }
                }
                if off > tol {
                    return Err(Error::InvalidState(format!(
                        "state leaves the equal-Fock sector (max off-diagonal amplitude {off:e})"
                    )));
                }
                Ok((0..=n).map(|k| v[full_index(n, k, k)]).collect())
            }
        }
    }
}

fn check_norm(v: &[C64]) -> Result<()> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidState(format!("state norm {norm} is not 1")));
    }
    Ok(())
}

/// Cached eigendecomposition `H = V diag(λ) Vᵀ`.
///
/// All Hamiltonians here are real symmetric in the Fock basis, so `V` is
/// real orthogonal in both the sector and the full representation.
#[derive(Clone, Debug)]
pub struct Propagator {
    n_atoms: usize,
    full: bool,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `Vᵀ ψ(0)` for the initial state `|N, N>`.
    initial_weights: Vec<f64>,
}

impl Propagator {
    pub fn sector(n_atoms: usize) -> Result<Self> {
        let h = build_sector_hamiltonian(n_atoms)?;
        Ok(Self::from_matrix(n_atoms, false, h.to_dense(), n_atoms))
    }

    /// Propagator for the full 2A2S or 1A2S matrix (`N <= 64`).
    pub fn full(n_atoms: usize, kind: HamiltonianKind) -> Result<Self> {
        if !kind.is_two_spin() {
            return Err(Error::invalid(
                "full propagator requires a two-ensemble Hamiltonian",
            ));
        }
        let h = build_full_hamiltonian(n_atoms, kind)?;
        Ok(Self::from_matrix(
            n_atoms,
            true,
            h.matrix,
            full_index(n_atoms, n_atoms, n_atoms),
        ))
    }

    fn from_matrix(n_atoms: usize, full: bool, h: DMatrix<f64>, start: usize) -> Self {
        let eig = SymmetricEigen::new(h);
        let initial_weights = eig.eigenvectors.row(start).iter().copied().collect();
        Self {
            n_atoms,
            full,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
            initial_weights,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    /// `max |V diag(λ) Vᵀ - H|`, against the supplied dense matrix.
    pub fn reconstruction_error(&self, h: &DMatrix<f64>) -> f64 {
        let v = &self.eigenvectors;
        let lam = DMatrix::from_diagonal(&self.eigenvalues.clone().into());
        (v * lam * v.transpose() - h).abs().max()
    }

    fn apply(&self, weights: &[C64], tau: f64) -> Vec<C64> {
        let v = &self.eigenvectors;
        let phased: Vec<C64> = weights
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&w, &l)| w * C64::from_polar(1.0, -l * tau))
            .collect();
        (0..v.nrows())
            .map(|r| {
                let row = v.row(r);
                row.iter().zip(&phased).map(|(&x, &p)| p * x).sum()
            })
            .collect()
    }

    /// `e^{-iHτ} |N, N>`.
    pub fn evolve(&self, tau: f64) -> JointState {
        let amps = if tau == 0.0 {
            let mut v = vec![C64::new(0.0, 0.0); self.eigenvectors.nrows()];
            let start = if self.full {
                full_index(self.n_atoms, self.n_atoms, self.n_atoms)
            } else {
                self.n_atoms
            };
            v[start] = C64::new(1.0, 0.0);
            v
        } else {
            let w: Vec<C64> = self
                .initial_weights
                .iter()
                .map(|&x| C64::new(x, 0.0))
                .collect();
            self.apply(&w, tau)
        };
        JointState {
            n_atoms: self.n_atoms,
            amplitudes: if self.full {
                Amplitudes::Full(amps)
            } else {
                Amplitudes::Sector(amps)
            },
            tau: Some(tau),
        }
    }

    /// `e^{-iHτ} ψ` for an arbitrary state in this propagator's representation.
    pub fn propagate(&self, state: &JointState, tau: f64) -> Result<JointState> {
        if state.n_atoms != self.n_atoms {
            return Err(Error::invalid("state and propagator have different N"));
        }
        let psi = match (&state.amplitudes, self.full) {
            (Amplitudes::Sector(c), false) => c.clone(),
            (Amplitudes::Full(v), true) => v.clone(),
            (Amplitudes::Sector(_), true) => state.to_full()?,
            (Amplitudes::Full(_), false) => state.to_sector(1e-12)?,
        };
        let v = &self.eigenvectors;
        let weights: Vec<C64> = (0..v.ncols())
            .map(|j| v.column(j).iter().zip(&psi).map(|(&x, &p)| p * x).sum())
            .collect();
        let amps = self.apply(&weights, tau);
        Ok(JointState {
            n_atoms: self.n_atoms,
            amplitudes: if self.full {
                Amplitudes::Full(amps)
            } else {
                Amplitudes::Sector(amps)
            },
            tau: state.tau.map(|t| t + tau),
        })
    }
}

/// Brute-force reference: dense `exp(-iHτ)` of the full 2A2S matrix applied
/// to `|N, N>`, returned as full amplitudes.
pub fn dense_oracle_evolution(n_atoms: usize, tau: f64) -> Result<Vec<C64>> {
    if n_atoms > FULL_SPACE_LIMIT {
        return Err(Error::ResourceLimit {
            what: "dense matrix-exponential oracle",
            limit: FULL_SPACE_LIMIT,
            requested: n_atoms,
        });
    }
    let h = build_full_hamiltonian(n_atoms, HamiltonianKind::TwoAxisTwoSpin)?;
    let generator = h.matrix.map(|x| C64::new(0.0, -x * tau));
    let u = generator.exp();
    Ok(u.column(full_index(n_atoms, n_atoms, n_atoms))
        .iter()
        .copied()
        .collect())
}

/// Second-order Taylor amplitudes on `|N,N>`, `|N-1,N-1>`, `|N-2,N-2>`.
///
/// `<N,N| H^2 |N,N> = N^2`, so the leading correction is `-τ²N²/2`.
pub fn short_time_expansion(n_atoms: usize, tau: f64) -> [C64; 3] {
    let n = n_atoms as f64;
    [
        C64::new(1.0 - tau * tau * n * n / 2.0, 0.0),
        C64::new(0.0, -tau * n),
        C64::new(-tau * tau * n * (n - 1.0), 0.0),
    ]
}
