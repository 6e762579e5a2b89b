//! Verification studies with explicit pass/fail checks.

use serde::Serialize;
use serde_json::Value;

use fal_core::data::gen_separable_sphere;
use fal_core::federation::FalConfig;
use fal_core::rng::{dataset_stream, RngStream};
use fal_core::verification::{
    coupling_study, finite_diff_probe, fl_gap_study, uniform_approx_study, ConvergenceProbe,
    BOUNDED_RATIO,
};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition.
    pub condition: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            condition: format!("<= {limit:e}"),
            pass: value <= limit,
        }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            condition: format!(">= {limit:e}"),
            pass: value >= limit,
        }
    }

    pub fn below(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            condition: format!("< {limit:e}"),
            pass: value < limit,
        }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            condition: "holds".into(),
            pass: ok,
        }
    }
}

/// Study outcome: checks, a CSV table and the raw study as JSON.
#[derive(Clone, Debug, Serialize)]
pub struct StudySummary {
    pub study: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub details: Value,
    #[serde(skip)]
    pub table: String,
}

impl StudySummary {
    fn new(study: &str, checks: Vec<Check>, details: Value, table: String) -> Self {
        Self {
            study: study.into(),
            pass: checks.iter().all(|c| c.pass),
            checks,
            details,
            table,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("study types serialize")
}

pub const DEFAULT_M_GRID: [usize; 4] = [256, 1024, 4096, 16384];

#[derive(Clone, Debug)]
pub struct UniformApproxOptions {
    pub radius: f64,
    pub m_grid: Vec<usize>,
    pub d: usize,
    pub samples: usize,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for UniformApproxOptions {
    fn default() -> Self {
        Self {
            radius: 1.0,
            m_grid: DEFAULT_M_GRID.to_vec(),
            d: 3,
            samples: 10_000,
            seeds: 10,
            seed: 0,
        }
    }
}

/// Sup-gap decays with width: fitted slope ≤ −0.05 and the seed-median never
/// increases between neighbouring widths.
pub fn uniform_approx(opts: &UniformApproxOptions) -> fal_core::Result<StudySummary> {
    let s = uniform_approx_study(
        opts.radius,
        &opts.m_grid,
        opts.d,
        opts.samples,
        opts.seeds,
        &RngStream::new(opts.seed, 0),
    )?;
    let gap = s.study.series("sup_gap").expect("sup_gap series");
    let steps = opts.m_grid.len() - 1;
    let checks = vec![
        Check::at_most("sup_gap_slope", gap.slope, -0.05),
        Check::at_least("non_increasing_steps", gap.non_increasing_steps() as f64, steps as f64),
        Check::holds("pseudo_zero_at_init", s.pseudo_zero_at_init),
    ];
    Ok(StudySummary::new("uniform-approx", checks, to_value(&s), s.study.to_csv()))
}

#[derive(Clone, Debug)]
pub struct CouplingOptions {
    pub m_grid: Vec<usize>,
    pub n_clients: usize,
    pub per_client: usize,
    pub d: usize,
    pub delta: f64,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            m_grid: DEFAULT_M_GRID.to_vec(),
            n_clients: 4,
            per_client: 5,
            d: 8,
            delta: 0.3,
            seeds: 5,
            seed: 0,
        }
    }
}

/// Per-column bound exact, flip fraction decreasing in `m`, normalized gap
/// bounded across the grid.
pub fn coupling(opts: &CouplingOptions) -> fal_core::Result<StudySummary> {
    let ds = gen_separable_sphere::<f64>(opts.n_clients, opts.per_client, opts.d, opts.delta, &dataset_stream(opts.seed))?;
    let points: Vec<_> = ds.points().cloned().collect();
    let s = coupling_study(&points, &opts.m_grid, opts.seeds, &RngStream::new(opts.seed, 0))?;
    let series = |n: &str| s.study.series(n).expect("coupling series");
    let checks = vec![
        Check::holds("per_column_bound", s.per_column_bound_holds),
        Check::holds("zero_displacement_exact", s.zero_displacement_exact),
        Check::below("flip_fraction_slope", series("flip_fraction").slope, 0.0),
        Check::at_most("gap_normalized_ratio", series("gap_normalized").ratio, BOUNDED_RATIO),
    ];
    Ok(StudySummary::new("coupling", checks, to_value(&s), s.study.to_csv()))
}

#[derive(Clone, Debug)]
pub struct FlGapOptions {
    pub local_steps: usize,
    pub m_grid: Vec<usize>,
    pub n_clients: usize,
    pub per_client: usize,
    pub d: usize,
    pub delta: f64,
    pub rho: f64,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for FlGapOptions {
    fn default() -> Self {
        Self {
            local_steps: 4,
            m_grid: vec![256, 1024, 4096],
            n_clients: 2,
            per_client: 4,
            d: 3,
            delta: 0.499,
            rho: 0.05,
            rounds: 10,
            seed: 0,
        }
    }
}

pub const FL_IDENTITY_TOL: f64 = 1e-9;

/// `K = 1`: exact identity at every audited round. Otherwise the normalized
/// gap `max fl_gap_21 / m^{2/3}` stays bounded across the grid.
pub fn fl_gap(opts: &FlGapOptions) -> fal_core::Result<StudySummary> {
    let ds = gen_separable_sphere::<f64>(opts.n_clients, opts.per_client, opts.d, opts.delta, &dataset_stream(opts.seed))?;
    let mut cfg = FalConfig::theory(
        opts.n_clients,
        opts.per_client,
        opts.m_grid[0],
        opts.local_steps,
        opts.rounds,
        opts.rho,
    );
    cfg.seed = opts.seed;
    cfg.grad_audit_every = 1;
    let s = fl_gap_study(&cfg, &ds, &opts.m_grid)?;
    let series = |n: &str| s.study.series(n).expect("fl gap series");
    let min_gap = series("max_fl_gap_21").values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut checks = vec![
        Check::at_least("audited_rounds", s.audited_rounds as f64, (opts.rounds * opts.m_grid.len()) as f64),
        Check::at_least("fl_gap_non_negative", min_gap, 0.0),
    ];
    match s.identity_max_fro {
        Some(fro) => checks.push(Check::at_most("identity_max_fro", fro, FL_IDENTITY_TOL)),
        None => checks.push(Check::at_most("normalized_ratio", series("normalized").ratio, BOUNDED_RATIO)),
    }
    Ok(StudySummary::new("fl-gap", checks, to_value(&s), s.study.to_csv()))
}

#[derive(Clone, Debug)]
pub struct FiniteDiffOptions {
    pub seeds: usize,
    pub seed: u64,
    pub width: usize,
    pub d: usize,
    pub points: usize,
    pub probe: f64,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        Self {
            seeds: 10,
            seed: 0,
            width: 256,
            d: 5,
            points: 16,
            probe: 1e-6,
        }
    }
}

pub const FD_REAL_TOL: f64 = 1e-5;
pub const FD_PSEUDO_TOL: f64 = 1e-7;

pub fn finite_diff(opts: &FiniteDiffOptions) -> fal_core::Result<StudySummary> {
    let reports = (0..opts.seeds as u64)
        .map(|s| finite_diff_probe(opts.seed + s, opts.width, opts.d, opts.points, opts.probe))
        .collect::<fal_core::Result<Vec<_>>>()?;
    let real = reports.iter().map(|r| r.max_rel_error_real).fold(0.0, f64::max);
    let pseudo = reports.iter().map(|r| r.max_rel_error_pseudo).fold(0.0, f64::max);
    let checked = reports.iter().map(|r| r.checked_real.min(r.checked_pseudo)).min().unwrap_or(0);
    let mut table = String::from("seed,max_rel_error_real,max_rel_error_pseudo,checked_real,checked_pseudo\n");
    for (s, r) in reports.iter().enumerate() {
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            opts.seed + s as u64,
            fal_core::data::format_f64(r.max_rel_error_real),
            fal_core::data::format_f64(r.max_rel_error_pseudo),
            r.checked_real,
            r.checked_pseudo
        ));
    }
    let checks = vec![
        Check::at_most("max_rel_error", real, FD_REAL_TOL),
        Check::at_most("max_rel_error_pseudo", pseudo, FD_PSEUDO_TOL),
        Check::at_least("coordinates_checked", checked as f64, 1.0),
    ];
    Ok(StudySummary::new("finite-diff", checks, to_value(&reports), table))
}

pub fn convergence(probe: &ConvergenceProbe) -> fal_core::Result<StudySummary> {
    let (report, records) = probe.run()?;
    let checks = vec![
        Check::at_most(
            "min_over_initial",
            report.min_adv_loss / report.initial_adv_loss,
            report.target_fraction,
        ),
        Check::holds("min_le_mean", report.min_le_mean),
    ];
    let table = crate::output::metrics_csv(&records, false);
    let details = serde_json::json!({ "probe": to_value(probe), "report": to_value(&report) });
    Ok(StudySummary::new("convergence", checks, details, table))
}
