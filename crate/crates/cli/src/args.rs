use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use twoaxis::bell::ZeroSign;
use twoaxis::wigner::Projection;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "twoaxis",
    version,
    about = "Data files for two-axis two-spin squeezing between two spin ensembles"
)]
pub struct Cli {
    /// Directory for CSV and manifest output.
    #[arg(long, global = true, env = "TWOAXIS_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Squeezed and anti-squeezed variances with the bosonic references.
    Variances(TimeSeries),
    /// Collective spin expectation values of both ensembles.
    Expectations(TimeSeries),
    /// Joint outcome distributions in pairs of measurement bases.
    Probdist(ProbdistArgs),
    /// Entanglement entropy, <Sz> zeros and optimized entropy.
    Entanglement(EntanglementArgs),
    /// GMVT, DGCZ and HT separability criteria.
    Criteria(CriteriaArgs),
    /// Fidelities with the two spin-EPR states.
    Fidelity(FidelityArgs),
    /// Wigner function of one ensemble's reduced state.
    WignerMarginal(WignerMarginalArgs),
    /// Wigner function of ensemble 2 after projecting ensemble 1.
    WignerConditional(WignerConditionalArgs),
    /// Optimized CHSH violation with sign-binned spin measurements.
    Bell(BellArgs),
    /// Optimal interaction times and their log-over-N fits.
    OptimalTimes(OptimalTimesArgs),
    /// Fits a records file written by `optimal-times` or `bell`.
    Fit(FitArgs),
    /// Compares sector evolution against the dense full-space exponential.
    OracleCheck(OracleArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Variances(_) => "variances",
            Command::Expectations(_) => "expectations",
            Command::Probdist(_) => "probdist",
            Command::Entanglement(_) => "entanglement",
            Command::Criteria(_) => "criteria",
            Command::Fidelity(_) => "fidelity",
            Command::WignerMarginal(_) => "wigner-marginal",
            Command::WignerConditional(_) => "wigner-conditional",
            Command::Bell(_) => "bell",
            Command::OptimalTimes(_) => "optimal-times",
            Command::Fit(_) => "fit",
            Command::OracleCheck(_) => "oracle-check",
        }
    }
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct TimeGrid {
    #[arg(long, default_value_t = 0.0)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau_max: f64,
    /// Number of τ samples, endpoints included.
    #[arg(long, default_value_t = 501)]
    pub points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TimeSeries {
    /// Atoms per ensemble.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[command(flatten)]
    pub grid: TimeGrid,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbdistArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// One or more interaction times.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub tau: Vec<f64>,
    /// Basis pairs from {x, y, z}, e.g. `xx,zy` (x and y are the squeezing-frame axes).
    #[arg(long, value_delimiter = ',', default_value = "xx,yy,zz,xy,zx,zy")]
    pub bases: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EntanglementArgs {
    /// Ensemble sizes for the time series.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub n: Vec<usize>,
    #[command(flatten)]
    pub grid: TimeGrid,
    /// Sizes at which to optimize the entropy and compare optimal times.
    #[arg(long, value_delimiter = ',')]
    pub optimize_n: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CriteriaArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[command(flatten)]
    pub grid: TimeGrid,
    /// GMVT weight on the first ensemble's x component.
    #[arg(long, default_value_t = 1.0)]
    pub gx: f64,
    /// GMVT weight on the first ensemble's y component.
    #[arg(long, default_value_t = 1.0)]
    pub gy: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FidelityArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[command(flatten)]
    pub grid: TimeGrid,
    /// Sizes at which to optimize F- near its first peak.
    #[arg(long, value_delimiter = ',')]
    pub optimize_n: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct WignerGrid {
    /// Rows (polar angle, or map ordinate).
    #[arg(long, default_value_t = 181)]
    pub rows: usize,
    /// Columns (azimuth, or map abscissa).
    #[arg(long, default_value_t = 361)]
    pub cols: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct WignerMarginalArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Interaction times.
    #[arg(long, value_delimiter = ',', conflicts_with = "tau_sq_multiples")]
    pub tau: Vec<f64>,
    /// Interaction times as multiples of the optimal squeezing time.
    #[arg(long, value_delimiter = ',')]
    pub tau_sq_multiples: Vec<f64>,
    #[arg(long, default_value = "cassini", value_parser = parse_projection)]
    pub projection: Projection,
    #[command(flatten)]
    pub grid: WignerGrid,
}

/// Projection of ensemble 1 onto `|k>^(θ,φ)`; `k` may be given relative to N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionSetting {
    pub theta: f64,
    pub phi: f64,
    /// Outcome counted down from N when `from_top`.
    pub k: usize,
    pub from_top: bool,
}

impl ProjectionSetting {
    pub fn outcome(&self, n: usize) -> Option<usize> {
        if self.from_top {
            n.checked_sub(self.k)
        } else {
            Some(self.k)
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct WignerConditionalArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Interaction time (default: the optimal squeezing time).
    #[arg(long)]
    pub tau: Option<f64>,
    /// `theta:phi:k`, angles in radians or multiples of pi (`pi/4`, `-pi/2`), k as
    /// an integer or `N`, `N-1`, ...; repeatable.
    #[arg(long = "setting", required = true, value_parser = parse_setting)]
    pub settings: Vec<ProjectionSetting>,
    #[arg(long, default_value = "mercator", value_parser = parse_projection)]
    pub projection: Projection,
    #[command(flatten)]
    pub grid: WignerGrid,
}

#[derive(Debug, Args, Serialize)]
pub struct BellArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,9,17,33")]
    pub n: Vec<usize>,
    /// Centre of the τ search (default: the optimal squeezing time of each N).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Relative half-width of the τ search; 0 keeps τ fixed.
    #[arg(long, default_value_t = 0.2)]
    pub tau_window: f64,
    /// Value assigned to sgn(0) for even N: +1, -1 or 0.
    #[arg(long, default_value = "+1", allow_hyphen_values = true, value_parser = parse_zero_sign)]
    pub zero_sign: ZeroSign,
    /// Coarse samples of the Bell angle on (0, pi].
    #[arg(long, default_value_t = 180)]
    pub theta_points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimalTimesArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80,160")]
    pub n: Vec<usize>,
    /// Any of sq, asq, Sz, E, F.
    #[arg(long, value_delimiter = ',', default_value = "sq,asq,Sz,E,F")]
    pub kinds: Vec<String>,
    /// Coarse scan samples.
    #[arg(long, default_value_t = 400)]
    pub scan_points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// `optimal_times.csv` or `bell.csv`.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.37")]
    pub tau: Vec<f64>,
    /// Largest tolerated amplitude deviation.
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
}

fn parse_projection(s: &str) -> Result<Projection, String> {
    s.parse().map_err(|e: twoaxis::Error| e.to_string())
}

fn parse_zero_sign(s: &str) -> Result<ZeroSign, String> {
    s.parse().map_err(|e: twoaxis::Error| e.to_string())
}

/// Parses `1.2`, `pi`, `-pi/2`, `3pi/4`, `0.5*pi`.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim().to_ascii_lowercase();
    let Some(pos) = t.find("pi") else {
        return t.parse::<f64>().map_err(|_| format!("bad angle `{s}`"));
    };
    let head = t[..pos].trim_end_matches('*');
    let coeff = match head {
        "" | "+" => 1.0,
        "-" => -1.0,
        h => h.parse::<f64>().map_err(|_| format!("bad angle `{s}`"))?,
    };
    let tail = &t[pos + 2..];
    let div = match tail.strip_prefix('/') {
        Some(d) => d.parse::<f64>().map_err(|_| format!("bad angle `{s}`"))?,
        None if tail.is_empty() => 1.0,
        None => return Err(format!("bad angle `{s}`")),
    };
    Ok(coeff * PI / div)
}

fn parse_setting(s: &str) -> Result<ProjectionSetting, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [theta, phi, k] = parts[..] else {
        return Err(format!("expected theta:phi:k, got `{s}`"));
    };
    let k = k.trim();
    let (k, from_top) = if let Some(rest) = k.strip_prefix(['N', 'n']) {
        match rest.trim() {
            "" => (0, true),
            r => {
                let d = r
                    .strip_prefix('-')
                    .and_then(|d| d.trim().parse::<usize>().ok())
                    .ok_or_else(|| format!("bad outcome `{k}`"))?;
                (d, true)
            }
        }
    } else {
        (
            k.parse::<usize>()
                .map_err(|_| format!("bad outcome `{k}`"))?,
            false,
        )
    };
    Ok(ProjectionSetting {
        theta: parse_angle(theta)?,
        phi: parse_angle(phi)?,
        k,
        from_top,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("pi/2").unwrap(), FRAC_PI_2);
        assert_eq!(parse_angle("-pi/2").unwrap(), -FRAC_PI_2);
        assert_eq!(parse_angle("3pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_angle("0.5*pi").unwrap(), 0.5 * PI);
        assert_eq!(parse_angle("1.25").unwrap(), 1.25);
        assert!(parse_angle("pix").is_err());
        assert!(parse_angle("two").is_err());
    }

    #[test]
    fn settings() {
        let s = parse_setting("pi/2:pi/2:N").unwrap();
        assert_eq!(s.outcome(10), Some(10));
        let s = parse_setting("pi/4:-pi/2:N-1").unwrap();
        assert_eq!(
            (s.theta, s.phi, s.outcome(10)),
            (PI / 4.0, -FRAC_PI_2, Some(9))
        );
        assert_eq!(parse_setting("0:0:3").unwrap().outcome(10), Some(3));
        assert!(parse_setting("0:0").is_err());
        assert!(parse_setting("0:0:M").is_err());
    }
}
