//! Numerical probes of the training dynamics: width-scaling studies for the
//! real/pseudo network gap, gradient coupling, the FL-gradient gap, plus
//! finite-difference gradient auditing and the convergence probe.
//!
//! Asymptotic `O(·)` statements are checked as boundedness of normalized
//! quantities across a width grid (max/min ratio) and signs of fitted
//! log-log slopes, never against absolute constants.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_separable_sphere, format_f64, DataPoint, FederatedDataset};
use crate::error::{FalError, Result};
use crate::federation::{coupling_measure, run_fal, FalConfig, RoundRecord};
use crate::linalg::Matrix;
use crate::manifold;
use crate::model::{
    batch_loss, grad_hidden, init_params, pseudo_batch_loss, pseudo_grad_hidden, InitAnchor,
    LossKind, NetParams,
};
use crate::rng::{dataset_stream, purpose, RngStream};

/// Largest max/min ratio of a normalized quantity accepted as "bounded".
pub const BOUNDED_RATIO: f64 = 10.0;

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(FalError::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(FalError::invalid("slope fit needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(FalError::invalid("slope fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FalError::invalid("slope fit needs distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// `max / min` of positive values; `+∞` if any value is zero.
pub fn spread_ratio(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_grid(m_grid: &[usize]) -> Result<()> {
    if m_grid.len() < 2 {
        return Err(FalError::invalid("width grid needs at least two entries"));
    }
    if m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FalError::invalid("width grid must be strictly increasing"));
    }
    if m_grid[0] == 0 {
        return Err(FalError::invalid("widths must be positive"));
    }
    Ok(())
}

/// One measured quantity over a width grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub name: String,
    /// Median over seeds, per width.
    pub values: Vec<f64>,
    /// `samples[i][s]`: width `i`, seed `s`.
    pub samples: Vec<Vec<f64>>,
    pub slope: f64,
    pub ratio: f64,
}

impl ScalingSeries {
    fn new(name: &str, m_grid: &[usize], samples: Vec<Vec<f64>>) -> Self {
        let values: Vec<f64> = samples.iter().map(|s| median(s)).collect();
        let xs: Vec<f64> = m_grid.iter().map(|&m| m as f64).collect();
        Self {
            name: name.to_string(),
            slope: log_log_slope(&xs, &values).unwrap_or(f64::NAN),
            ratio: spread_ratio(&values),
            values,
            samples,
        }
    }

    /// Number of consecutive grid steps where the median does not increase.
    pub fn non_increasing_steps(&self) -> usize {
        self.values.windows(2).filter(|w| w[1] <= w[0]).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub m_grid: Vec<usize>,
    pub series: Vec<ScalingSeries>,
}

impl ScalingStudy {
    pub fn series(&self, name: &str) -> Option<&ScalingSeries> {
        self.series.iter().find(|s| s.name == name)
    }

    /// One row per (width, seed) cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,seed");
        for s in &self.series {
            let _ = write!(out, ",{}", s.name);
        }
        out.push('\n');
        for (i, m) in self.m_grid.iter().enumerate() {
            let n_seeds = self.series.first().map_or(0, |s| s.samples[i].len());
            for seed in 0..n_seeds {
                let _ = write!(out, "{m},{seed}");
                for s in &self.series {
                    let _ = write!(out, ",{}", format_f64(s.samples[i][seed]));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Moves every column of `base` by an independent random direction of ℓ₂
/// norm exactly `radius`, so `‖U − U(0)‖₂,∞ = radius`.
pub fn perturb_columns(base: &Matrix<f64>, radius: f64, rng: &mut RngStream) -> Result<Matrix<f64>> {
    let (d, m) = base.shape();
    let mut data = Vec::with_capacity(d * m);
    for col in base.columns() {
        let dir = rng.unit_direction(d);
        data.extend(col.iter().zip(&dir).map(|(u, v)| u + radius * v));
    }
    Matrix::from_col_major(d, m, data)
}

fn run_cells<F>(m_grid: &[usize], n_seeds: usize, cell: F) -> Result<Vec<Vec<Vec<f64>>>>
where
    F: Fn(usize, usize) -> Result<Vec<f64>> + Sync,
{
    let cells: Vec<(usize, usize)> = (0..m_grid.len())
        .flat_map(|i| (0..n_seeds).map(move |s| (i, s)))
        .collect();
    let results: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(i, s)| cell(m_grid[i], s))
        .collect::<Result<_>>()?;
    // regroup as [width][seed][quantity]
    let mut grouped = vec![Vec::with_capacity(n_seeds); m_grid.len()];
    for ((i, _), r) in cells.into_iter().zip(results) {
        grouped[i].push(r);
    }
    Ok(grouped)
}

fn transpose_series(
    names: &[&str],
    m_grid: &[usize],
    grouped: &[Vec<Vec<f64>>],
) -> Vec<ScalingSeries> {
    names
        .iter()
        .enumerate()
        .map(|(q, name)| {
            let samples = grouped.iter().map(|seeds| seeds.iter().map(|v| v[q]).collect()).collect();
            ScalingSeries::new(name, m_grid, samples)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformApproxStudy {
    pub radius: f64,
    pub d: usize,
    pub n_samples: usize,
    /// Series `sup_gap`: `max |f_U(x) − g_U(x)|` over the sampled points.
    pub study: ScalingStudy,
    /// `g_{U(0)}(x) = 0` exactly at every sampled point of every cell.
    pub pseudo_zero_at_init: bool,
}

/// Sup-gap between the real and pseudo networks after moving every column by
/// `R / m^{2/3}`, estimated on `n_samples` uniform points of `𝒳`.
pub fn uniform_approx_study(
    radius: f64,
    m_grid: &[usize],
    d: usize,
    n_samples: usize,
    n_seeds: usize,
    rng: &RngStream,
) -> Result<UniformApproxStudy> {
    check_grid(m_grid)?;
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(FalError::invalid(format!("perturbation radius must be non-negative, got {radius}")));
    }
    if d < 2 || n_samples == 0 || n_seeds == 0 {
        return Err(FalError::invalid("need d >= 2, at least one sample and one seed"));
    }
    if let Some(&m) = m_grid.iter().find(|&&m| m < d) {
        return Err(FalError::invalid(format!("width {m} is below the input dimension {d}")));
    }
    let grouped = run_cells(m_grid, n_seeds, |m, s| {
        let cell = rng.derive(&[purpose::STUDY, 1, m as u64, s as u64]);
        let (params, anchor) = init_params::<f64>(m, d, &cell.derive(&[0]))?;
        let moved = perturb_columns(params.hidden(), radius / (m as f64).powf(2.0 / 3.0), &mut cell.derive(&[1]))?;
        let params = params.with_hidden(moved)?;
        let mut sample_rng = cell.derive(&[2]);
        let mut sup = 0.0f64;
        let mut zero_at_init = true;
        for _ in 0..n_samples {
            let x: Vec<f64> = manifold::sample(&mut sample_rng, d)?;
            let gap = (params.eval(&x) - anchor.pseudo_eval(&params, &x)).abs();
            sup = sup.max(gap);
            zero_at_init &= anchor.pseudo_eval(anchor.initial_params(), &x) == 0.0;
        }
        Ok(vec![sup, if zero_at_init { 1.0 } else { 0.0 }])
    })?;
    let pseudo_zero_at_init = grouped.iter().flatten().all(|v| v[1] == 1.0);
    let series = transpose_series(&["sup_gap"], m_grid, &grouped);
    Ok(UniformApproxStudy {
        radius,
        d,
        n_samples,
        study: ScalingStudy {
            m_grid: m_grid.to_vec(),
            series,
        },
        pseudo_zero_at_init,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingStudy {
    pub n_points: usize,
    /// Series: `coupling_gap_21`, `flip_count`, `flip_fraction`
    /// (`flip_count / m`), `gap_normalized` (`gap / (NJ·m^{13/24})`),
    /// `flips_normalized` (`flips / (NJ·m^{7/8})`).
    pub study: ScalingStudy,
    /// `coupling_gap_21 ≤ m^{-1/3}·flip_count` in every cell.
    pub per_column_bound_holds: bool,
    /// Zero displacement gives no flips and no gap, in every cell.
    pub zero_displacement_exact: bool,
}

/// Real vs pseudo gradient after a column displacement of exactly
/// `m^{-15/24}`, on `points` relabelled to `sign(y) ∈ {−1, +1}`.
///
/// With `|y| = 1` and both networks small near initialization the two loss
/// slopes agree, so every differing column is due to an activation flip.
pub fn coupling_study(
    points: &[DataPoint<f64>],
    m_grid: &[usize],
    n_seeds: usize,
    rng: &RngStream,
) -> Result<CouplingStudy> {
    check_grid(m_grid)?;
    if points.is_empty() || n_seeds == 0 {
        return Err(FalError::invalid("coupling study needs data points and at least one seed"));
    }
    let d = points[0].x.len();
    let batch: Vec<DataPoint<f64>> = points
        .iter()
        .map(|p| DataPoint {
            x: p.x.clone(),
            y: if p.y >= 0.0 { 1.0 } else { -1.0 },
        })
        .collect();
    let nj = batch.len() as f64;
    let loss = LossKind::Absolute;

    let grouped = run_cells(m_grid, n_seeds, |m, s| {
        let cell = rng.derive(&[purpose::STUDY, 2, m as u64, s as u64]);
        let (params, anchor) = init_params::<f64>(m, d, &cell.derive(&[0]))?;
        let still = coupling_measure(
            &grad_hidden(&params, &batch, loss)?,
            &pseudo_grad_hidden(&params, &anchor, &batch, loss)?,
        )?;
        let mf = m as f64;
        let moved = perturb_columns(params.hidden(), mf.powf(-15.0 / 24.0), &mut cell.derive(&[1]))?;
        let params = params.with_hidden(moved)?;
        let c = coupling_measure(
            &grad_hidden(&params, &batch, loss)?,
            &pseudo_grad_hidden(&params, &anchor, &batch, loss)?,
        )?;
        let flips = c.flip_count as f64;
        Ok(vec![
            c.gap_21,
            flips,
            flips / mf,
            c.gap_21 / (nj * mf.powf(13.0 / 24.0)),
            flips / (nj * mf.powf(7.0 / 8.0)),
            if c.bound_holds(m) { 1.0 } else { 0.0 },
            if still.flip_count == 0 && still.gap_21 == 0.0 { 1.0 } else { 0.0 },
        ])
    })?;
    let cells = grouped.iter().flatten();
    let per_column_bound_holds = cells.clone().all(|v| v[5] == 1.0);
    let zero_displacement_exact = cells.clone().all(|v| v[6] == 1.0);
    let series = transpose_series(
        &["coupling_gap_21", "flip_count", "flip_fraction", "gap_normalized", "flips_normalized"],
        m_grid,
        &grouped,
    );
    Ok(CouplingStudy {
        n_points: batch.len(),
        study: ScalingStudy {
            m_grid: m_grid.to_vec(),
            series,
        },
        per_column_bound_holds,
        zero_displacement_exact,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlGapStudy {
    pub local_steps: usize,
    /// Series: `max_fl_gap_21`, `max_fl_gap_fro` and `normalized`
    /// (`max_fl_gap_21 / m^{2/3}`), maxima over audited rounds.
    pub study: ScalingStudy,
    pub audited_rounds: usize,
    /// `K = 1` only: the largest Frobenius gap seen at any audited round.
    pub identity_max_fro: Option<f64>,
    /// Every audited coupling gap respected the per-column bound.
    pub coupling_bound_holds: bool,
}

/// Trains `base` (with its width replaced) at every width of the grid and
/// reports the real vs FL gradient gap over audited rounds.
pub fn fl_gap_study(base: &FalConfig, train: &FederatedDataset<f64>, m_grid: &[usize]) -> Result<FlGapStudy> {
    check_grid(m_grid)?;
    if base.grad_audit_every == 0 {
        return Err(FalError::invalid("FL gap study needs grad_audit_every > 0"));
    }
    let runs: Vec<Vec<RoundRecord>> = m_grid
        .iter()
        .map(|&m| {
            let mut cfg = base.clone();
            cfg.width = m;
            Ok(run_fal(&cfg, train, &[])?.records)
        })
        .collect::<Result<_>>()?;

    let mut audited = 0;
    let mut bound = true;
    let mut max_fro_all = 0.0f64;
    let grouped: Vec<Vec<Vec<f64>>> = m_grid
        .iter()
        .zip(&runs)
        .map(|(&m, records)| {
            let (mut g21, mut gfro) = (0.0f64, 0.0f64);
            for rep in records.iter().filter_map(|r| r.grad.as_ref()) {
                audited += 1;
                bound &= rep.coupling_bound_holds;
                g21 = g21.max(rep.fl_gap_21);
                gfro = gfro.max(rep.fl_gap_fro);
            }
            max_fro_all = max_fro_all.max(gfro);
            vec![vec![g21, gfro, g21 / (m as f64).powf(2.0 / 3.0)]]
        })
        .collect();
    let series = transpose_series(&["max_fl_gap_21", "max_fl_gap_fro", "normalized"], m_grid, &grouped);
    Ok(FlGapStudy {
        local_steps: base.local_steps,
        study: ScalingStudy {
            m_grid: m_grid.to_vec(),
            series,
        },
        audited_rounds: audited,
        identity_max_fro: (base.local_steps == 1).then_some(max_fro_all),
        coupling_bound_holds: bound,
    })
}

/// Smallest accepted denominator in relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-3;
/// Coordinates whose pre-activations or loss arguments lie this close to a
/// kink are skipped.
pub const KINK_MARGIN: f64 = 1e-4;
/// Largest step used for pseudo-network differences.
pub const PSEUDO_PROBE_CAP: f64 = 1e-2;
/// Coordinates compared per audit.
pub const AUDIT_COORDS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDiffReport {
    pub probe: f64,
    pub max_rel_error_real: f64,
    pub max_rel_error_pseudo: f64,
    pub checked_real: usize,
    pub checked_pseudo: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares [`grad_hidden`] and [`pseudo_grad_hidden`] against central
/// differences of the corresponding mean losses on up to [`AUDIT_COORDS`]
/// random coordinates.
///
/// Real-network differences use step `probe`. The pseudo-network is piecewise
/// linear in `U` with kinks only from the loss, so its differences use the
/// largest step (up to [`PSEUDO_PROBE_CAP`]) that cannot reach a kink.
pub fn finite_diff_audit(
    params: &NetParams<f64>,
    anchor: &InitAnchor<f64>,
    batch: &[DataPoint<f64>],
    loss: LossKind,
    probe: f64,
    rng: &mut RngStream,
) -> Result<FiniteDiffReport> {
    if !(probe > 0.0 && probe.is_finite()) {
        return Err(FalError::invalid(format!("probe must be positive, got {probe}")));
    }
    let real = grad_hidden(params, batch, loss)?;
    let pseudo = pseudo_grad_hidden(params, anchor, batch, loss)?;
    let (d, m) = params.hidden().shape();

    let real_ok = |r: usize| {
        batch.iter().all(|p| {
            params.pre_activation(r, &p.x).abs() >= KINK_MARGIN
                && loss.kink_distance(params.eval(&p.x), p.y) >= KINK_MARGIN
        })
    };
    let pseudo_kink = batch
        .iter()
        .map(|p| loss.kink_distance(anchor.pseudo_eval(params, &p.x), p.y))
        .fold(f64::INFINITY, f64::min);
    let pseudo_smooth = pseudo_kink >= KINK_MARGIN;
    // g is linear in U_{i,r} with slope a_r·x_i·1{...}; this step keeps every
    // loss argument on its side of the kink, so the difference is exact up to
    // rounding
    let pseudo_probe = |i: usize, r: usize| {
        let a = params.output()[r].abs();
        let reach = batch.iter().map(|p| a * p.x[i].abs()).fold(0.0, f64::max);
        if reach > 0.0 {
            PSEUDO_PROBE_CAP.min(0.5 * pseudo_kink / reach)
        } else {
            PSEUDO_PROBE_CAP
        }
    };

    let shifted = |i: usize, r: usize, h: f64| -> Result<NetParams<f64>> {
        let mut u = params.hidden().clone();
        u.set(i, r, u.get(i, r) + h);
        params.with_hidden(u)
    };

    let mut report = FiniteDiffReport {
        probe,
        max_rel_error_real: 0.0,
        max_rel_error_pseudo: 0.0,
        checked_real: 0,
        checked_pseudo: 0,
    };
    let mut attempts = 0;
    while report.checked_real.max(report.checked_pseudo) < AUDIT_COORDS && attempts < 10 * AUDIT_COORDS {
        attempts += 1;
        let (i, r) = (rng.index(d), rng.index(m));
        let plus = shifted(i, r, probe)?;
        let minus = shifted(i, r, -probe)?;
        if real_ok(r) && report.checked_real < AUDIT_COORDS {
            let fd = (batch_loss(&plus, batch, loss)? - batch_loss(&minus, batch, loss)?) / (2.0 * probe);
            report.max_rel_error_real = report.max_rel_error_real.max(rel_error(real.get(i, r), fd));
            report.checked_real += 1;
        }
        if pseudo_smooth && report.checked_pseudo < AUDIT_COORDS {
            let h = pseudo_probe(i, r);
            let fd = (pseudo_batch_loss(&shifted(i, r, h)?, anchor, batch, loss)?
                - pseudo_batch_loss(&shifted(i, r, -h)?, anchor, batch, loss)?)
                / (2.0 * h);
            report.max_rel_error_pseudo = report.max_rel_error_pseudo.max(rel_error(pseudo.get(i, r), fd));
            report.checked_pseudo += 1;
        }
    }
    Ok(report)
}

/// Builds a displaced network on fresh manifold data and audits it: width
/// `m`, `n_points` points in dimension `d`, every column moved by
/// `m^{-1/2}` so the pseudo-network is non-trivial.
pub fn finite_diff_probe(seed: u64, m: usize, d: usize, n_points: usize, probe: f64) -> Result<FiniteDiffReport> {
    let root = RngStream::new(seed, 0).derive(&[purpose::STUDY, 4]);
    let (params, anchor) = init_params::<f64>(m, d, &root.derive(&[0]))?;
    let moved = perturb_columns(params.hidden(), (m as f64).powf(-0.5), &mut root.derive(&[1]))?;
    let params = params.with_hidden(moved)?;
    let mut data_rng = root.derive(&[2]);
    let batch = (0..n_points)
        .map(|_| {
            let x = manifold::sample(&mut data_rng, d)?;
            DataPoint::new(x, 2.0 * data_rng.uniform01() - 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    finite_diff_audit(&params, &anchor, &batch, LossKind::Absolute, probe, &mut root.derive(&[3]))
}

/// `min_t L_A(f_{U(t)})`.
pub fn min_adv_loss(records: &[RoundRecord]) -> Result<f64> {
    records
        .iter()
        .map(|r| r.adv_loss)
        .reduce(f64::min)
        .ok_or(FalError::Empty("round records"))
}

pub fn mean_adv_loss(records: &[RoundRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(FalError::Empty("round records"));
    }
    Ok(records.iter().map(|r| r.adv_loss).sum::<f64>() / records.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub initial_adv_loss: f64,
    pub min_adv_loss: f64,
    pub mean_adv_loss: f64,
    pub argmin_round: usize,
    /// `min ≤ target_fraction · initial`
    pub target_fraction: f64,
    pub reached: bool,
    pub min_le_mean: bool,
}

pub fn convergence_report(records: &[RoundRecord], target_fraction: f64) -> Result<ConvergenceReport> {
    let min = min_adv_loss(records)?;
    let mean = mean_adv_loss(records)?;
    let initial = records[0].adv_loss;
    let argmin = records.iter().position(|r| r.adv_loss == min).unwrap_or(0);
    Ok(ConvergenceReport {
        initial_adv_loss: initial,
        min_adv_loss: min,
        mean_adv_loss: mean,
        argmin_round: argmin,
        target_fraction,
        reached: min <= target_fraction * initial,
        min_le_mean: min <= mean,
    })
}

/// Parameters of the convergence probe on separable manifold data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceProbe {
    pub n_clients: usize,
    pub per_client: usize,
    pub d: usize,
    pub delta: f64,
    pub rho: f64,
    pub width: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for ConvergenceProbe {
    fn default() -> Self {
        Self {
            n_clients: 2,
            per_client: 4,
            d: 3,
            // the largest admissible separation below 1/2
            delta: 0.499,
            rho: 0.05,
            width: 4096,
            local_steps: 2,
            rounds: 500,
            seed: 0,
        }
    }
}

impl ConvergenceProbe {
    pub fn config(&self) -> FalConfig {
        let mut cfg = FalConfig::theory(self.n_clients, self.per_client, self.width, self.local_steps, self.rounds, self.rho);
        cfg.seed = self.seed;
        cfg
    }

    pub fn dataset(&self) -> Result<FederatedDataset<f64>> {
        gen_separable_sphere(
            self.n_clients,
            self.per_client,
            self.d,
            self.delta,
            &dataset_stream(self.seed),
        )
    }

    pub fn run(&self) -> Result<(ConvergenceReport, Vec<RoundRecord>)> {
        let records = run_fal(&self.config(), &self.dataset()?, &[])?.records;
        Ok((convergence_report(&records, 0.5)?, records))
    }
}
