use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use twoaxis::analysis::{
    find_optimal_time, find_optimal_time_with, fit_bell_scaling, fit_optimal_times,
    predicted_optimal_time, FitModel, FitResult, OptimalKind, OptimalTime,
};
use twoaxis::bell::{optimize_violation, BellSearch, ViolationOptimum};
use twoaxis::entanglement::{
    criterion, hp_entropy_ratio, max_entropy, sector_entropy, CriterionName, CriterionWeights,
};
use twoaxis::evolution::{dense_oracle_evolution, JointState, Propagator};
use twoaxis::observables::{
    epr_fidelity, expectation, hp_variance, joint_distribution, variance, Ensemble, EprSign,
    HpKind, MeasurementBasis, TwoSpinObservable,
};
use twoaxis::spin_core::OperatorLabel;
use twoaxis::wigner::{conditional_wigner, marginal_wigner, GridSpec, WignerField};

use crate::args::*;
use crate::error::CliError;
use crate::output::{cells, Cell, Table};

/// Tables to write, plus an error to report once they are on disk.
pub struct Outcome {
    pub tables: Vec<Table>,
    pub deferred: Option<CliError>,
}

impl From<Vec<Table>> for Outcome {
    fn from(tables: Vec<Table>) -> Self {
        Self {
            tables,
            deferred: None,
        }
    }
}

pub fn run(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Variances(a) => variances(a).map(Into::into),
        Command::Expectations(a) => expectations(a).map(Into::into),
        Command::Probdist(a) => probdist(a).map(Into::into),
        Command::Entanglement(a) => entanglement(a).map(Into::into),
        Command::Criteria(a) => criteria(a).map(Into::into),
        Command::Fidelity(a) => fidelity(a).map(Into::into),
        Command::WignerMarginal(a) => wigner_marginal(a).map(Into::into),
        Command::WignerConditional(a) => wigner_conditional(a).map(Into::into),
        Command::Bell(a) => bell(a),
        Command::OptimalTimes(a) => optimal_times_cmd(a),
        Command::Fit(a) => fit(a),
        Command::OracleCheck(a) => oracle_check(a),
    }
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn check_n(n: usize) -> Result<usize, CliError> {
    if n == 0 {
        return Err(input("N must be at least 1"));
    }
    Ok(n)
}

fn check_n_list(ns: &[usize]) -> Result<(), CliError> {
    if ns.is_empty() {
        return Err(input("empty N list"));
    }
    ns.iter().try_for_each(|&n| check_n(n).map(drop))
}

fn check_taus(taus: &[f64]) -> Result<(), CliError> {
    if taus.is_empty() {
        return Err(input("empty τ list"));
    }
    match taus.iter().find(|t| !t.is_finite()) {
        Some(t) => Err(input(format!("τ must be finite, got {t}"))),
        None => Ok(()),
    }
}

fn tau_grid(g: &TimeGrid) -> Result<Vec<f64>, CliError> {
    if g.points == 0 {
        return Err(input("τ grid needs at least one point"));
    }
    if !(g.tau_min.is_finite() && g.tau_max.is_finite()) || g.tau_max < g.tau_min {
        return Err(input(format!("bad τ range [{}, {}]", g.tau_min, g.tau_max)));
    }
    if g.points == 1 {
        return Ok(vec![g.tau_min]);
    }
    let step = (g.tau_max - g.tau_min) / (g.points - 1) as f64;
    Ok((0..g.points).map(|i| g.tau_min + i as f64 * step).collect())
}

fn states(n: usize, taus: &[f64]) -> Result<Vec<JointState>, CliError> {
    let p = Propagator::sector(check_n(n)?)?;
    Ok(taus.par_iter().map(|&t| p.evolve(t)).collect())
}

fn tau_sq(n: usize) -> Result<f64, CliError> {
    Ok(find_optimal_time(n, OptimalKind::Sq)?.tau)
}

fn variances(a: &TimeSeries) -> Result<Vec<Table>, CliError> {
    let taus = tau_grid(&a.grid)?;
    let obs = [
        TwoSpinObservable::squeezed_x(),
        TwoSpinObservable::squeezed_y(),
        TwoSpinObservable::antisqueezed_x(),
        TwoSpinObservable::antisqueezed_y(),
    ];
    let mut t = Table::new(
        "variances.csv",
        &[
            "tau",
            "var_sq_x",
            "var_sq_y",
            "var_asq_x",
            "var_asq_y",
            "hp_sq",
            "hp_asq",
        ],
    );
    for (s, &tau) in states(a.n, &taus)?.iter().zip(&taus) {
        let v: Vec<f64> = obs.iter().map(|o| variance(s, o)).collect();
        t.push(cells![
            tau,
            v[0],
            v[1],
            v[2],
            v[3],
            hp_variance(a.n, tau, HpKind::Squeezed),
            hp_variance(a.n, tau, HpKind::AntiSqueezed)
        ]);
    }
    Ok(vec![t])
}

fn expectations(a: &TimeSeries) -> Result<Vec<Table>, CliError> {
    let taus = tau_grid(&a.grid)?;
    let mut t = Table::new(
        "expectations.csv",
        &["tau", "sx1", "sy1", "sz1", "sx2", "sy2", "sz2"],
    );
    for (s, &tau) in states(a.n, &taus)?.iter().zip(&taus) {
        let mut row = cells![tau];
        for e in [Ensemble::First, Ensemble::Second] {
            for l in [OperatorLabel::Sx, OperatorLabel::Sy, OperatorLabel::Sz] {
                row.push(expectation(s, l, e)?.into());
            }
        }
        t.push(row);
    }
    Ok(vec![t])
}

fn parse_pair(pair: &str) -> Result<(MeasurementBasis, MeasurementBasis), CliError> {
    let chars: Vec<char> = pair.trim().chars().collect();
    let [b1, b2] = chars[..] else {
        return Err(input(format!(
            "basis pair must be two of x, y, z, got `{pair}`"
        )));
    };
    Ok((b1.to_string().parse()?, b2.to_string().parse()?))
}

fn probdist(a: &ProbdistArgs) -> Result<Vec<Table>, CliError> {
    check_taus(&a.tau)?;
    let pairs: Vec<(&str, (MeasurementBasis, MeasurementBasis))> = a
        .bases
        .iter()
        .map(|p| parse_pair(p).map(|b| (p.trim(), b)))
        .collect::<Result<_, _>>()?;
    let st = states(a.n, &a.tau)?;
    let mut tables = Vec::new();
    for (name, (b1, b2)) in pairs {
        let mut t = Table::new(format!("probdist_{name}.csv"), &["tau", "k1", "k2", "p"]);
        for (s, &tau) in st.iter().zip(&a.tau) {
            for r in joint_distribution(s, b1, b2)?.records() {
                t.push(cells![tau, r.k1, r.k2, r.p]);
            }
        }
        tables.push(t);
    }
    Ok(tables)
}

/// Zeros of `<Sz1>` bracketed by sign changes on the grid, refined by bisection.
fn sz_zeros(p: &Propagator, taus: &[f64], sz: &[f64]) -> Result<Vec<f64>, CliError> {
    let f = |t: f64| expectation(&p.evolve(t), OperatorLabel::Sz, Ensemble::First);
    let mut zeros = Vec::new();
    for i in 1..taus.len() {
        if sz[i] == 0.0 {
            zeros.push(taus[i]);
            continue;
        }
        if sz[i - 1] == 0.0 || sz[i - 1].signum() == sz[i].signum() {
            continue;
        }
        let (mut lo, mut hi, mut flo) = (taus[i - 1], taus[i], sz[i - 1]);
        while hi - lo > 1e-12 * hi.abs().max(1.0) {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        zeros.push(0.5 * (lo + hi));
    }
    Ok(zeros)
}

fn entanglement(a: &EntanglementArgs) -> Result<Vec<Table>, CliError> {
    check_n_list(&a.n)?;
    a.optimize_n
        .iter()
        .try_for_each(|&n| check_n(n).map(drop))?;
    let taus = tau_grid(&a.grid)?;
    let mut series = Table::new(
        "entanglement.csv",
        &["n", "tau", "entropy", "entropy_ratio", "sz1"],
    );
    let mut zeros = Table::new("sz_zeros.csv", &["n", "index", "tau"]);
    for &n in &a.n {
        let p = Propagator::sector(n)?;
        let st: Vec<JointState> = taus.par_iter().map(|&t| p.evolve(t)).collect();
        let mut sz = Vec::with_capacity(st.len());
        for (s, &tau) in st.iter().zip(&taus) {
            let c = s.to_sector(1e-10)?;
            let e = sector_entropy(&c);
            let z = expectation(s, OperatorLabel::Sz, Ensemble::First)?;
            sz.push(z);
            series.push(cells![n, tau, e, e / max_entropy(n), z]);
        }
        for (i, z) in sz_zeros(&p, &taus, &sz)?.into_iter().enumerate() {
            zeros.push(cells![n, i, z]);
        }
    }
    let mut tables = vec![series, zeros];
    if !a.optimize_n.is_empty() {
        let mut t = Table::new(
            "entanglement_optima.csv",
            &[
                "n",
                "tau_e",
                "entropy",
                "entropy_ratio",
                "hp_entropy_ratio",
                "delta_tau_sq",
                "delta_tau_asq",
                "delta_tau_sz",
            ],
        );
        let kinds = [
            OptimalKind::E,
            OptimalKind::Sq,
            OptimalKind::Asq,
            OptimalKind::Sz,
        ];
        let rows: Vec<(usize, Vec<OptimalTime>)> = a
            .optimize_n
            .par_iter()
            .map(|&n| {
                let opt = kinds
                    .iter()
                    .map(|&k| find_optimal_time(n, k))
                    .collect::<Result<_, _>>()?;
                Ok((n, opt))
            })
            .collect::<Result<_, twoaxis::Error>>()?;
        for (n, opt) in rows {
            let e = opt[0];
            t.push(cells![
                n,
                e.tau,
                e.value,
                e.value / max_entropy(n),
                hp_entropy_ratio(n),
                e.tau - opt[1].tau,
                e.tau - opt[2].tau,
                e.tau - opt[3].tau
            ]);
        }
        tables.push(t);
    }
    Ok(tables)
}

fn criteria(a: &CriteriaArgs) -> Result<Vec<Table>, CliError> {
    if !(a.gx.is_finite() && a.gy.is_finite()) || a.gx == 0.0 || a.gy == 0.0 {
        return Err(input("GMVT weights must be finite and non-zero"));
    }
    let taus = tau_grid(&a.grid)?;
    let weights = CriterionWeights { gx: a.gx, gy: a.gy };
    let mut t = Table::new(
        "criteria.csv",
        &["tau", "criterion", "lhs", "bound", "detected", "guard"],
    );
    for (s, &tau) in states(a.n, &taus)?.iter().zip(&taus) {
        for name in CriterionName::ALL {
            let r = criterion(s, name, Some(weights));
            t.push(cells![
                tau,
                name.to_string(),
                r.lhs,
                r.bound,
                r.detected,
                r.guard
            ]);
        }
    }
    Ok(vec![t])
}

fn fidelity(a: &FidelityArgs) -> Result<Vec<Table>, CliError> {
    a.optimize_n
        .iter()
        .try_for_each(|&n| check_n(n).map(drop))?;
    let taus = tau_grid(&a.grid)?;
    let mut t = Table::new("fidelity.csv", &["tau", "f_minus", "f_plus"]);
    for (s, &tau) in states(a.n, &taus)?.iter().zip(&taus) {
        t.push(cells![
            tau,
            epr_fidelity(s, EprSign::Minus)?,
            epr_fidelity(s, EprSign::Plus)?
        ]);
    }
    let mut tables = vec![t];
    if !a.optimize_n.is_empty() {
        let mut o = Table::new("fidelity_optima.csv", &["n", "tau", "f_minus"]);
        let best: Vec<OptimalTime> = a
            .optimize_n
            .par_iter()
            .map(|&n| find_optimal_time(n, OptimalKind::F))
            .collect::<Result<_, _>>()?;
        for r in best {
            o.push(cells![r.n_atoms, r.tau, r.value]);
        }
        tables.push(o);
    }
    Ok(tables)
}

fn grid_spec(g: &WignerGrid) -> GridSpec {
    GridSpec {
        n_theta: g.rows,
        n_phi: g.cols,
    }
}

fn push_field(t: &mut Table, lead: Cell, field: &WignerField) {
    let cols = field.grid.n_phi;
    for (i, s) in field.samples.iter().enumerate() {
        let mut row = vec![lead.clone()];
        row.extend(cells![i / cols, i % cols, s.x, s.y, s.theta, s.phi, s.w]);
        t.push(row);
    }
}

fn wigner_marginal(a: &WignerMarginalArgs) -> Result<Vec<Table>, CliError> {
    check_n(a.n)?;
    let taus = if !a.tau.is_empty() {
        a.tau.clone()
    } else {
        let multiples = if a.tau_sq_multiples.is_empty() {
            vec![1.0]
        } else {
            a.tau_sq_multiples.clone()
        };
        let base = tau_sq(a.n)?;
        multiples.iter().map(|m| m * base).collect()
    };
    check_taus(&taus)?;
    let grid = grid_spec(&a.grid);
    let mut t = Table::new(
        "wigner_marginal.csv",
        &["tau", "row", "col", "x", "y", "theta", "phi", "w"],
    );
    for (s, &tau) in states(a.n, &taus)?.iter().zip(&taus) {
        let field = marginal_wigner(s, grid, a.projection)?;
        push_field(&mut t, tau.into(), &field);
    }
    Ok(vec![t])
}

fn wigner_conditional(a: &WignerConditionalArgs) -> Result<Vec<Table>, CliError> {
    check_n(a.n)?;
    let tau = match a.tau {
        Some(t) => t,
        None => tau_sq(a.n)?,
    };
    check_taus(&[tau])?;
    let state = Propagator::sector(a.n)?.evolve(tau);
    let grid = grid_spec(&a.grid);
    let mut summary = Table::new(
        "wigner_conditional_settings.csv",
        &[
            "setting",
            "tau",
            "theta",
            "phi",
            "k",
            "probability",
            "w_max",
            "theta_max",
            "phi_max",
            "w_min",
            "theta_min",
            "phi_min",
        ],
    );
    let mut t = Table::new(
        "wigner_conditional.csv",
        &["setting", "row", "col", "x", "y", "theta", "phi", "w"],
    );
    for (i, s) in a.settings.iter().enumerate() {
        let k = s
            .outcome(a.n)
            .filter(|&k| k <= a.n)
            .ok_or_else(|| input(format!("outcome outside 0..={} in setting {}", a.n, i)))?;
        let (field, info) = conditional_wigner(&state, s.theta, s.phi, k, grid, a.projection)?;
        let (hi, lo) = (field.argmax(), field.argmin());
        summary.push(cells![
            i,
            tau,
            s.theta,
            s.phi,
            k,
            info.probability,
            hi.w,
            hi.theta,
            hi.phi,
            lo.w,
            lo.theta,
            lo.phi
        ]);
        push_field(&mut t, i.into(), &field);
    }
    Ok(vec![summary, t])
}

fn fit_table(file: &str) -> Table {
    Table::new(file, &["source", "model", "parameter", "value"])
}

fn model_name(m: FitModel) -> &'static str {
    match m {
        FitModel::LogOverN => "log_over_n",
        FitModel::LinearInverseN => "linear_inverse_n",
        FitModel::Pade => "pade",
    }
}

fn push_fit(t: &mut Table, source: &str, fit: &FitResult) {
    let names: &[&str] = match fit.model {
        FitModel::LogOverN => &["p0", "p1"],
        FitModel::LinearInverseN => &["slope"],
        FitModel::Pade => &["a", "b", "c"],
    };
    let model = model_name(fit.model);
    for (name, v) in names.iter().zip(&fit.parameters) {
        t.push(cells![source, model, *name, *v]);
    }
    for (name, v) in [
        ("r_squared", fit.r_squared),
        ("residual_norm", fit.residual_norm),
        ("data_norm", fit.data_norm),
    ] {
        t.push(cells![source, model, name, v]);
    }
}

fn bell_fits(records: &[ViolationOptimum], file: &str) -> (Option<Table>, Option<CliError>) {
    if records.len() < 3 {
        return (None, None);
    }
    match fit_bell_scaling(records) {
        Ok((lin, pade)) => {
            let mut t = fit_table(file);
            push_fit(&mut t, "chsh_excess", &lin);
            push_fit(&mut t, "theta_b", &pade);
            (Some(t), None)
        }
        Err(e) => (None, Some(e.into())),
    }
}

fn bell_table(records: &[ViolationOptimum]) -> Table {
    let mut t = Table::new(
        "bell.csv",
        &["n", "tau", "theta_b", "chsh", "excess_times_n"],
    );
    for r in records {
        t.push(cells![
            r.n_atoms,
            r.tau,
            r.theta_b,
            r.value,
            (r.value - 2.0) * r.n_atoms as f64
        ]);
    }
    t
}

fn bell(a: &BellArgs) -> Result<Outcome, CliError> {
    check_n_list(&a.n)?;
    if !(0.0..1.0).contains(&a.tau_window) {
        return Err(input("τ window must lie in [0, 1)"));
    }
    if let Some(t) = a.tau {
        if !(t.is_finite() && t > 0.0) {
            return Err(input("τ must be positive"));
        }
    }
    let search = BellSearch {
        theta_points: a.theta_points,
        tau_window: a.tau_window,
        zero: a.zero_sign,
        ..BellSearch::default()
    };
    let mut records = Vec::with_capacity(a.n.len());
    for &n in &a.n {
        let hint = match a.tau {
            Some(t) => t,
            None => tau_sq(n)?,
        };
        records.push(optimize_violation(n, hint, &search)?);
    }
    let mut tables = vec![bell_table(&records)];
    let (fits, deferred) = bell_fits(&records, "bell_fits.csv");
    tables.extend(fits);
    Ok(Outcome { tables, deferred })
}

fn optimal_table(records: &[OptimalTime]) -> Table {
    let mut t = Table::new(
        "optimal_times.csv",
        &["kind", "n", "tau", "value", "hp_time"],
    );
    for r in records {
        t.push(cells![
            r.kind.to_string(),
            r.n_atoms,
            r.tau,
            r.value,
            predicted_optimal_time(r.n_atoms)
        ]);
    }
    t
}

/// Per-kind log-over-N fits; kinds with too few sizes are skipped.
fn optimal_fits(records: &[OptimalTime], file: &str) -> (Option<Table>, Option<CliError>) {
    let mut by_kind: Vec<(OptimalKind, Vec<OptimalTime>)> = Vec::new();
    for r in records {
        match by_kind.iter_mut().find(|(k, _)| *k == r.kind) {
            Some((_, v)) => v.push(*r),
            None => by_kind.push((r.kind, vec![*r])),
        }
    }
    let mut t = fit_table(file);
    let mut deferred = None;
    for (kind, recs) in &by_kind {
        let distinct: std::collections::BTreeSet<usize> = recs.iter().map(|r| r.n_atoms).collect();
        if distinct.len() < 4 {
            continue;
        }
        match fit_optimal_times(recs) {
            Ok(f) => push_fit(&mut t, &kind.to_string(), &f),
            Err(e) => deferred = deferred.or(Some(e.into())),
        }
    }
    ((t.len() > 0).then_some(t), deferred)
}

fn optimal_times_cmd(a: &OptimalTimesArgs) -> Result<Outcome, CliError> {
    check_n_list(&a.n)?;
    if a.scan_points < 3 {
        return Err(input("scan needs at least 3 points"));
    }
    let kinds: Vec<OptimalKind> = a
        .kinds
        .iter()
        .map(|k| k.parse())
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(OptimalKind, usize)> = kinds
        .iter()
        .flat_map(|&k| a.n.iter().map(move |&n| (k, n)))
        .collect();
    let records: Vec<OptimalTime> = jobs
        .par_iter()
        .map(|&(k, n)| find_optimal_time_with(n, k, a.scan_points))
        .collect::<Result<_, _>>()?;
    let mut tables = vec![optimal_table(&records)];
    let (fits, deferred) = optimal_fits(&records, "optimal_time_fits.csv");
    tables.extend(fits);
    Ok(Outcome { tables, deferred })
}

fn read_records(path: &Path) -> Result<Vec<BTreeMap<String, String>>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        rows.push(
            header
                .iter()
                .cloned()
                .zip(rec.iter().map(str::to_string))
                .collect(),
        );
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(row: &BTreeMap<String, String>, key: &str) -> Result<T, CliError> {
    let raw = row
        .get(key)
        .ok_or_else(|| input(format!("input lacks column `{key}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| input(format!("bad value `{raw}` in column `{key}`")))
}

fn fit(a: &FitArgs) -> Result<Outcome, CliError> {
    let rows = read_records(&a.input)?;
    let Some(first) = rows.first() else {
        return Err(input("input file has no records"));
    };
    let (table, deferred) = if first.contains_key("kind") {
        let mut recs = Vec::with_capacity(rows.len());
        for r in &rows {
            let kind: String = field(r, "kind")?;
            recs.push(OptimalTime {
                n_atoms: field(r, "n")?,
                kind: kind.parse()?,
                tau: field(r, "tau")?,
                value: field(r, "value")?,
            });
        }
        optimal_fits(&recs, "fits.csv")
    } else if first.contains_key("theta_b") {
        let mut recs = Vec::with_capacity(rows.len());
        for r in &rows {
            recs.push(ViolationOptimum {
                n_atoms: field(r, "n")?,
                tau: field(r, "tau")?,
                theta_b: field(r, "theta_b")?,
                value: field(r, "chsh")?,
            });
        }
        if recs.len() < 3 {
            return Err(input("Bell fits need at least 3 records"));
        }
        bell_fits(&recs, "fits.csv")
    } else {
        return Err(input("input is neither an optimal-times nor a bell file"));
    };
    if let Some(e) = deferred {
        return Err(e);
    }
    let table = table.ok_or_else(|| input("no kind has the 4 distinct sizes a fit needs"))?;
    Ok(vec![table].into())
}

fn oracle_check(a: &OracleArgs) -> Result<Outcome, CliError> {
    check_n(a.n)?;
    check_taus(&a.tau)?;
    let p = Propagator::sector(a.n)?;
    let mut t = Table::new("oracle_check.csv", &["tau", "max_deviation"]);
    let mut worst: f64 = 0.0;
    for &tau in &a.tau {
        let fast = p.evolve(tau).to_full()?;
        let dense = dense_oracle_evolution(a.n, tau)?;
        let dev = fast
            .iter()
            .zip(&dense)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        worst = worst.max(dev);
        t.push(cells![tau, dev]);
    }
    println!("max deviation {worst:.3e} (tolerance {:.1e})", a.tolerance);
    let deferred = (worst.is_nan() || worst > a.tolerance).then(|| {
        CliError::Numerical(format!(
            "sector evolution deviates from the dense oracle by {worst:e}"
        ))
    });
    Ok(Outcome {
        tables: vec![t],
        deferred,
    })
}
