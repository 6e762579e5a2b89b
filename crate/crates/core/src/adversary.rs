//! ρ-bounded adversaries.
//!
//! - `L2Sphere`: normalized gradient ascent on `ℓ(f(x̃), y)`, each step
//!   projected back onto `B₂(x, ρ) ∩ 𝒳`.
//! - `LinfBox`: signed-gradient ascent clipped to the box `[x − ρ, x + ρ]`,
//!   no manifold constraint.
//! - `GridOracle`: exhaustive search of the feasible arc when `d = 3`, where
//!   `𝒳` is the circle `x₁² + x₂² = 3/4, x₃ = 1/2`.

use serde::{Deserialize, Serialize};

use crate::data::DataPoint;
use crate::error::{FalError, Result};
use crate::linalg::{distance, dot, norm2, Vector};
use crate::manifold;
use crate::model::{LossKind, NetParams};
use crate::rng::{purpose, RngStream};
use crate::scalar::Real;

/// Feasibility slack on every generated point.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    L2Sphere,
    LinfBox,
    GridOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub mode: AdversaryMode,
    pub rho: f64,
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
}

fn default_grid_resolution() -> usize {
    2048
}

impl AdversaryConfig {
    pub fn l2_sphere(rho: f64, steps: usize, step_size: f64) -> Self {
        Self {
            mode: AdversaryMode::L2Sphere,
            rho,
            steps,
            step_size,
            restarts: 1,
            grid_resolution: default_grid_resolution(),
        }
    }

    /// Box PGD with radius 0.0314, 7 steps of 0.00784.
    pub fn linf_pgd() -> Self {
        Self {
            mode: AdversaryMode::LinfBox,
            rho: 0.0314,
            steps: 7,
            step_size: 0.00784,
            restarts: 1,
            grid_resolution: default_grid_resolution(),
        }
    }

    pub fn grid(rho: f64, resolution: usize) -> Self {
        Self {
            mode: AdversaryMode::GridOracle,
            rho,
            steps: 1,
            step_size: 0.0,
            restarts: 1,
            grid_resolution: resolution,
        }
    }

    /// Checks ranges; `theory` additionally requires `ρ < 1/2`.
    pub fn validate(&self, theory: bool) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(FalError::invalid(format!("rho must be non-negative, got {}", self.rho)));
        }
        if theory && self.rho >= 0.5 {
            return Err(FalError::invalid(format!("rho must be below 1/2, got {}", self.rho)));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(FalError::invalid("adversary steps and restarts must be at least 1"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(FalError::invalid("adversary step size must be non-negative"));
        }
        if self.mode == AdversaryMode::GridOracle && self.grid_resolution < 100 {
            return Err(FalError::invalid("grid resolution must be at least 100"));
        }
        Ok(())
    }

    /// Distance used for the ρ-bound in this mode.
    pub fn distance<T: Real>(&self, a: &[T], b: &[T]) -> f64 {
        match self.mode {
            AdversaryMode::LinfBox => a
                .iter()
                .zip(b)
                .map(|(x, y)| (*x - *y).abs().to_f64_lossy())
                .fold(0.0, f64::max),
            _ => distance(a, b).to_f64_lossy(),
        }
    }
}

/// Scalar function of the input with a (sub)gradient.
pub trait InputModel<T> {
    fn value(&self, x: &[T]) -> T;
    fn input_grad(&self, x: &[T]) -> Vec<T>;

    /// Bound on `|f(x) − f(x')| / ‖x − x'‖₂`, if known.
    fn lipschitz(&self) -> Option<T> {
        None
    }
}

impl<T: Real> InputModel<T> for NetParams<T> {
    fn value(&self, x: &[T]) -> T {
        self.eval(x)
    }

    fn input_grad(&self, x: &[T]) -> Vec<T> {
        self.grad_input_unchecked(x)
    }

    fn lipschitz(&self) -> Option<T> {
        Some(self.input_lipschitz())
    }
}

/// Adapts a pair of closures to [`InputModel`].
pub struct FnModel<F, G> {
    pub eval: F,
    pub grad: G,
}

impl<T, F, G> InputModel<T> for FnModel<F, G>
where
    F: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    fn value(&self, x: &[T]) -> T {
        (self.eval)(x)
    }

    fn input_grad(&self, x: &[T]) -> Vec<T> {
        (self.grad)(x)
    }
}

fn check_center<T: Real>(center: &[T]) -> Result<()> {
    if center.len() < 2 {
        return Err(FalError::Projection(format!(
            "manifold is empty for d={}",
            center.len()
        )));
    }
    if !manifold::contains(center, T::tolerance(FEASIBILITY_TOL)) {
        return Err(FalError::Projection("center is off the unit manifold".into()));
    }
    Ok(())
}

/// Nearest point of `B₂(center, ρ) ∩ 𝒳` to `candidate`.
///
/// Inside the hyperplane `x_d = 1/2` the feasible set is the spherical cap of
/// head directions within angle `θ` of the center's, `cos θ = 1 − ρ²/(2r²)`.
/// The nearest cap point to any candidate depends only on the candidate's head
/// direction: the direction itself if it lies in the cap, otherwise the cap
/// boundary point on the great circle towards it. A candidate with a zero head
/// maps to `center`.
pub fn project_ball_manifold<T: Real>(candidate: &[T], center: &[T], rho: T) -> Result<Vector<T>> {
    check_center(center)?;
    if candidate.len() != center.len() {
        return Err(FalError::DimensionMismatch {
            expected: center.len(),
            found: candidate.len(),
        });
    }
    if !(rho >= T::zero()) {
        return Err(FalError::Projection("negative radius".into()));
    }
    let mut p = candidate.to_vec();
    if manifold::retract(&mut p).is_none() {
        p = center.to_vec();
    } else if distance(&p, center) > rho {
        p = cap_boundary_towards(&p, center, rho).unwrap_or_else(|| center.to_vec());
    }
    let within = distance(&p, center) <= rho + T::lit(T::tolerance(FEASIBILITY_TOL));
    if !within || !manifold::contains(&p, T::tolerance(FEASIBILITY_TOL)) {
        return Err(FalError::Projection(format!(
            "projection left the feasible set (distance {}, radius {})",
            distance(&p, center),
            rho
        )));
    }
    Vector::from_vec(p)
}

/// Point at chord `ρ` from `center` on the great circle through the head
/// directions of `center` and `q` (both on `𝒳`). `None` when no direction
/// orthogonal to the center's head exists (`d = 2`).
fn cap_boundary_towards<T: Real>(q: &[T], center: &[T], rho: T) -> Option<Vec<T>> {
    let k = center.len() - 1;
    let r = T::lit(manifold::head_radius());
    let c_hat: Vec<T> = center[..k].iter().map(|v| *v / r).collect();
    let along = dot(&q[..k], &c_hat);
    let mut w: Vec<T> = q[..k].iter().zip(&c_hat).map(|(qi, ci)| *qi - along * *ci).collect();
    let mut wn = norm2(&w);
    if !(wn > T::lit(1e-12)) {
        // candidate head is (anti)parallel to the center's: pick a fixed
        // orthogonal direction
        let e = (0..k).min_by(|&a, &b| c_hat[a].abs().partial_cmp(&c_hat[b].abs()).unwrap())?;
        w = c_hat.iter().map(|ci| -c_hat[e] * *ci).collect();
        w[e] = w[e] + T::one();
        wn = norm2(&w);
        if !(wn > T::lit(1e-12)) {
            return None;
        }
    }
    let cos = (T::one() - rho * rho / (T::lit(2.0) * r * r)).max(-T::one());
    let sin = (T::one() - cos * cos).max(T::zero()).sqrt();
    let mut p: Vec<T> = c_hat
        .iter()
        .zip(&w)
        .map(|(ci, wi)| r * (cos * *ci + sin * *wi / wn))
        .collect();
    p.push(T::lit(manifold::LAST_COORD));
    Some(p)
}

/// Gradient of `x ↦ ℓ(f(x), y)` given `fx = f(x)`.
fn loss_input_grad<T: Real, M: InputModel<T> + ?Sized>(model: &M, loss: LossKind, x: &[T], fx: T, y: T) -> Vec<T> {
    let slope = loss.subgrad(fx, y);
    if slope == T::zero() {
        return vec![T::zero(); x.len()];
    }
    let mut g = model.input_grad(x);
    for gi in g.iter_mut() {
        *gi = *gi * slope;
    }
    g
}

struct Ascent<T> {
    last: Vec<T>,
    best_loss: T,
}

fn ascend<T: Real, M: InputModel<T> + ?Sized>(
    cfg: &AdversaryConfig,
    model: &M,
    loss: LossKind,
    point: &DataPoint<T>,
    start: Vec<T>,
) -> Result<Ascent<T>> {
    let x = point.x.as_slice();
    let rho = T::lit(cfg.rho);
    let step = T::lit(cfg.step_size);
    let mut cur = start;
    let mut value = model.value(&cur);
    let mut best_loss = loss.eval(value, point.y);
    for _ in 0..cfg.steps {
        let g = loss_input_grad(model, loss, &cur, value, point.y);
        match cfg.mode {
            AdversaryMode::L2Sphere => {
                let n = norm2(&g);
                if n == T::zero() {
                    break;
                }
                let cand: Vec<T> = cur.iter().zip(&g).map(|(c, gi)| *c + step * *gi / n).collect();
                cur = project_ball_manifold(&cand, x, rho)?.into_vec();
            }
            AdversaryMode::LinfBox => {
                for ((c, gi), xi) in cur.iter_mut().zip(&g).zip(x) {
                    let moved = *c + step * sign(*gi);
                    *c = moved.max(*xi - rho).min(*xi + rho);
                }
            }
            AdversaryMode::GridOracle => unreachable!("grid oracle does not ascend"),
        }
        value = model.value(&cur);
        let l = loss.eval(value, point.y);
        if l > best_loss {
            best_loss = l;
        }
    }
    Ok(Ascent {
        last: cur,
        best_loss,
    })
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check_point<T: Real>(cfg: &AdversaryConfig, point: &DataPoint<T>, d: Option<usize>) -> Result<()> {
    if let Some(d) = d {
        if point.x.len() != d {
            return Err(FalError::DimensionMismatch {
                expected: d,
                found: point.x.len(),
            });
        }
    }
    if matches!(cfg.mode, AdversaryMode::L2Sphere | AdversaryMode::GridOracle) {
        check_center(&point.x)?;
    }
    Ok(())
}

/// One adversarial example for `point`, starting the ascent at the clean input.
///
/// `rng` is only consumed by randomized modes; the current modes are
/// deterministic given the model.
pub fn perturb<T: Real, M: InputModel<T> + ?Sized>(
    cfg: &AdversaryConfig,
    model: &M,
    loss: LossKind,
    point: &DataPoint<T>,
    _rng: &mut RngStream,
) -> Result<Vector<T>> {
    check_point(cfg, point, None)?;
    if cfg.rho == 0.0 {
        return Ok(point.x.clone());
    }
    match cfg.mode {
        AdversaryMode::GridOracle => Ok(grid_search(model, loss, point, cfg.rho, cfg.grid_resolution)?.1),
        _ => {
            let run = ascend(cfg, model, loss, point, point.x.to_vec())?;
            Ok(Vector::from_vec_unchecked(run.last))
        }
    }
}

fn random_start<T: Real>(cfg: &AdversaryConfig, x: &[T], rng: &mut RngStream) -> Result<Vec<T>> {
    let d = x.len();
    match cfg.mode {
        AdversaryMode::LinfBox => Ok(x
            .iter()
            .map(|xi| *xi + T::lit(cfg.rho * (2.0 * rng.uniform01() - 1.0)))
            .collect()),
        _ => {
            let dir = rng.unit_direction(d);
            let r = cfg.rho * rng.uniform01().powf(1.0 / d as f64);
            let cand: Vec<T> = x.iter().zip(&dir).map(|(xi, u)| *xi + T::lit(r * u)).collect();
            Ok(project_ball_manifold(&cand, x, T::lit(cfg.rho))?.into_vec())
        }
    }
}

/// Lower bound on `max_{x̃ ∈ B(x, ρ)} ℓ(f(x̃), y)`: the best iterate over
/// `restarts` ascents. The first ascent is exactly [`perturb`]; later ones
/// start at random feasible points drawn from streams derived per restart, so
/// the value never decreases as `restarts` grows.
pub fn worst_case_loss<T: Real, M: InputModel<T> + ?Sized>(
    cfg: &AdversaryConfig,
    model: &M,
    loss: LossKind,
    point: &DataPoint<T>,
    rng: &RngStream,
) -> Result<T> {
    check_point(cfg, point, None)?;
    let clean = loss.eval(model.value(&point.x), point.y);
    if cfg.rho == 0.0 {
        return Ok(clean);
    }
    if cfg.mode == AdversaryMode::GridOracle {
        return Ok(grid_search(model, loss, point, cfg.rho, cfg.grid_resolution)?.0.max(clean));
    }
    let mut best = clean;
    for restart in 0..cfg.restarts {
        let start = if restart == 0 {
            point.x.to_vec()
        } else {
            let mut r = rng.derive(&[purpose::RESTART, restart as u64]);
            random_start(cfg, &point.x, &mut r)?
        };
        let run = ascend(cfg, model, loss, point, start)?;
        best = best.max(run.best_loss);
    }
    Ok(best)
}

/// Angles of the grid on the feasible arc around `center` (d = 3).
fn arc_grid(center_angle: f64, rho: f64, resolution: usize) -> Vec<f64> {
    let r = manifold::head_radius();
    if rho >= 2.0 * r {
        let step = std::f64::consts::TAU / resolution as f64;
        (0..resolution)
            .map(|k| center_angle - std::f64::consts::PI + step * k as f64)
            .collect()
    } else {
        let half = 2.0 * (rho / (2.0 * r)).asin();
        let step = 2.0 * half / (resolution - 1) as f64;
        (0..resolution).map(|k| center_angle - half + step * k as f64).collect()
    }
}

/// Euclidean spacing between neighbouring grid points.
pub fn grid_spacing(rho: f64, resolution: usize) -> f64 {
    let r = manifold::head_radius();
    let dtheta = if rho >= 2.0 * r {
        std::f64::consts::TAU / resolution as f64
    } else {
        4.0 * (rho / (2.0 * r)).asin() / (resolution - 1) as f64
    };
    2.0 * r * (dtheta / 2.0).sin()
}

fn grid_search<T: Real, M: InputModel<T> + ?Sized>(
    model: &M,
    loss: LossKind,
    point: &DataPoint<T>,
    rho: f64,
    resolution: usize,
) -> Result<(T, Vector<T>)> {
    if point.x.len() != 3 {
        return Err(FalError::invalid(format!(
            "grid oracle needs d = 3, got d = {}",
            point.x.len()
        )));
    }
    if resolution < 100 {
        return Err(FalError::invalid(format!("grid resolution must be >= 100, got {resolution}")));
    }
    check_center(&point.x)?;
    let r = manifold::head_radius();
    let theta0 = point.x[1].to_f64_lossy().atan2(point.x[0].to_f64_lossy());
    let mut best_loss = loss.eval(model.value(&point.x), point.y);
    let mut best = point.x.to_vec();
    for theta in arc_grid(theta0, rho, resolution) {
        let cand = [T::lit(r * theta.cos()), T::lit(r * theta.sin()), T::lit(manifold::LAST_COORD)];
        let l = loss.eval(model.value(&cand), point.y);
        if l > best_loss {
            best_loss = l;
            best = cand.to_vec();
        }
    }
    Ok((best_loss, Vector::from_vec_unchecked(best)))
}

/// Maximum of `ℓ(f(x̃), y)` over `resolution` equally spaced points of the
/// feasible arc (and the clean point). Requires `d = 3`.
pub fn grid_oracle_worst_case<T: Real, M: InputModel<T> + ?Sized>(
    model: &M,
    loss: LossKind,
    point: &DataPoint<T>,
    rho: f64,
    resolution: usize,
) -> Result<T> {
    Ok(grid_search(model, loss, point, rho, resolution)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn manifold_point(rng: &mut RngStream, d: usize, y: f64) -> DataPoint<f64> {
        DataPoint::new(manifold::sample(rng, d).unwrap(), y).unwrap()
    }

    fn zero_model(m: usize, d: usize) -> NetParams<f64> {
        let (p, _) = init_params::<f64>(m, d, &RngStream::new(0, 0)).unwrap();
        NetParams::new(p.hidden().clone(), Vector::zeros(m), p.bias().clone()).unwrap()
    }

    #[test]
    fn projection_fixed_point() {
        let c = [0.75f64.sqrt(), 0.0, 0.5];
        let out = project_ball_manifold(&c, &c, 0.2).unwrap();
        assert!(distance(&out, &c) < 1e-15);
    }

    #[test]
    fn projection_lands_on_the_arc_at_radius() {
        let r = 0.75f64.sqrt();
        let center = [r, 0.0, 0.5];
        let out = project_ball_manifold(&[0.0, r, 0.5], &center, 0.2).unwrap();
        // oracle: the circle point at chord 0.2 on the side of the candidate
        let theta = 2.0 * (0.2 / (2.0 * r)).asin();
        let expected = [r * theta.cos(), r * theta.sin(), 0.5];
        assert!(distance(&out, &expected) <= 1e-6, "{out:?} vs {expected:?}");
        assert!((distance(&out, &center) - 0.2).abs() <= 1e-6);
        assert!((out[0] * out[0] + out[1] * out[1] - 0.75).abs() <= 1e-9);
    }

    #[test]
    fn projection_errors() {
        assert!(project_ball_manifold(&[1.0], &[1.0], 0.1).is_err());
        assert!(project_ball_manifold(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn projection_contract_on_random_candidates() {
        let mut rng = RngStream::new(3, 3);
        for d in [2usize, 3, 5, 10] {
            for _ in 0..500 {
                let center: Vec<f64> = manifold::sample(&mut rng, d).unwrap();
                let cand: Vec<f64> = (0..d).map(|_| 2.0 * rng.standard_normal()).collect();
                let rho = 0.49 * rng.uniform01();
                let out = project_ball_manifold(&cand, &center, rho).unwrap();
                assert!(distance(&out, &center) <= rho + 1e-9);
                assert!(manifold::contains(&out, 1e-9));
            }
        }
    }

    #[test]
    fn linf_box_bound_with_paper_hyperparameters() {
        let (p, _) = init_params::<f64>(128, 2, &RngStream::new(1, 0)).unwrap();
        let cfg = AdversaryConfig::linf_pgd();
        let mut rng = RngStream::new(2, 0);
        for _ in 0..200 {
            let pt = DataPoint::new(vec![3.0 * rng.standard_normal(), 3.0 * rng.standard_normal()], 1.0).unwrap();
            let adv = perturb(&cfg, &p, LossKind::Absolute, &pt, &mut rng).unwrap();
            for (a, x) in adv.iter().zip(pt.x.iter()) {
                assert!((a - x).abs() <= 0.0314 + 1e-12);
            }
        }
    }

    #[test]
    fn zero_model_leaves_points_unchanged() {
        let model = zero_model(8, 3);
        let mut rng = RngStream::new(4, 0);
        let pt = manifold_point(&mut rng, 3, 0.4);
        for cfg in [AdversaryConfig::l2_sphere(0.1, 5, 0.05), AdversaryConfig { rho: 0.1, ..AdversaryConfig::linf_pgd() }] {
            let adv = perturb(&cfg, &model, LossKind::Absolute, &pt, &mut rng).unwrap();
            assert_eq!(adv, pt.x);
        }
        let oracle = grid_oracle_worst_case(&model, LossKind::Absolute, &pt, 0.1, 200).unwrap();
        assert_eq!(oracle, 0.4);
    }

    #[test]
    fn tiny_steps_barely_move() {
        let (p, _) = init_params::<f64>(32, 2, &RngStream::new(5, 0)).unwrap();
        let cfg = AdversaryConfig {
            step_size: 1e-12,
            ..AdversaryConfig::linf_pgd()
        };
        let pt = DataPoint::new(vec![0.3, -0.2], 1.0).unwrap();
        let adv = perturb(&cfg, &p, LossKind::Absolute, &pt, &mut RngStream::new(0, 0)).unwrap();
        assert!(cfg.distance(&adv, &pt.x) <= 7e-12 * (1.0 + 1e-3));
        let clean = LossKind::Absolute.eval(p.eval(&pt.x), 1.0);
        let after = LossKind::Absolute.eval(p.eval(&adv), 1.0);
        assert!(after >= clean - 1e-10);
    }

    #[test]
    fn worst_case_dominates_clean_and_single_run() {
        let (p, _) = init_params::<f64>(64, 3, &RngStream::new(6, 0)).unwrap();
        let mut rng = RngStream::new(7, 0);
        let mut cfg = AdversaryConfig::l2_sphere(0.2, 20, 0.05);
        cfg.restarts = 4;
        for i in 0..50 {
            let pt = manifold_point(&mut rng, 3, 0.5 - 0.02 * i as f64);
            let clean = LossKind::Absolute.eval(p.eval(&pt.x), pt.y);
            let single = perturb(&cfg, &p, LossKind::Absolute, &pt, &mut rng).unwrap();
            let single_loss = LossKind::Absolute.eval(p.eval(&single), pt.y);
            let wc = worst_case_loss(&cfg, &p, LossKind::Absolute, &pt, &rng.derive(&[i])).unwrap();
            assert!(wc >= clean && wc >= single_loss);
        }
    }

    #[test]
    fn restarts_are_monotone() {
        let (p, _) = init_params::<f64>(64, 3, &RngStream::new(8, 0)).unwrap();
        let mut rng = RngStream::new(9, 0);
        let pt = manifold_point(&mut rng, 3, -0.1);
        let base = RngStream::new(10, 0);
        let mut prev = f64::NEG_INFINITY;
        for restarts in 1..8 {
            let mut cfg = AdversaryConfig::l2_sphere(0.3, 10, 0.05);
            cfg.restarts = restarts;
            let v = worst_case_loss(&cfg, &p, LossKind::Absolute, &pt, &base).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn grid_oracle_requires_three_dimensions() {
        let model = zero_model(4, 4);
        let mut rng = RngStream::new(11, 0);
        let pt = manifold_point(&mut rng, 4, 0.0);
        assert!(grid_oracle_worst_case(&model, LossKind::Absolute, &pt, 0.1, 200).is_err());
        let model3 = zero_model(4, 3);
        let pt3 = manifold_point(&mut rng, 3, 0.0);
        assert!(grid_oracle_worst_case(&model3, LossKind::Absolute, &pt3, 0.1, 50).is_err());
    }

    #[test]
    fn full_circle_grid_when_radius_covers_it() {
        let (p, _) = init_params::<f64>(32, 3, &RngStream::new(12, 0)).unwrap();
        let mut rng = RngStream::new(13, 0);
        let pt = manifold_point(&mut rng, 3, 0.2);
        let big = grid_oracle_worst_case(&p, LossKind::Absolute, &pt, 2.0, 720).unwrap();
        let r = manifold::head_radius();
        let full = (0..720)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 720.0;
                LossKind::Absolute.eval(p.eval(&[r * t.cos(), r * t.sin(), 0.5]), 0.2)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        // both grids sample the full circle at the same spacing, offset by a rotation
        let slack = p.input_lipschitz() * grid_spacing(2.0, 720);
        assert!((big - full).abs() <= slack);
    }

    #[test]
    fn grid_refinement_change_is_lipschitz_bounded() {
        let mut rng = RngStream::new(14, 0);
        for s in 0..20 {
            let (p, _) = init_params::<f64>(64, 3, &RngStream::new(100 + s, 0)).unwrap();
            let pt = manifold_point(&mut rng, 3, 0.3);
            let rho = 0.25;
            let coarse = grid_oracle_worst_case(&p, LossKind::Absolute, &pt, rho, 101).unwrap();
            let fine = grid_oracle_worst_case(&p, LossKind::Absolute, &pt, rho, 201).unwrap();
            let bound = p.input_lipschitz() * grid_spacing(rho, 101);
            assert!((fine - coarse).abs() <= bound + 1e-15);
        }
    }

    #[test]
    fn closure_models_work() {
        // f(x) = x₁, maximized on the arc toward +x₁
        let model = FnModel {
            eval: |x: &[f64]| x[0],
            grad: |x: &[f64]| {
                let mut g = vec![0.0; x.len()];
                g[0] = 1.0;
                g
            },
        };
        let r = manifold::head_radius();
        let pt = DataPoint::new(vec![0.0, r, 0.5], -1.0).unwrap();
        let cfg = AdversaryConfig::l2_sphere(0.3, 50, 0.02);
        let adv = perturb(&cfg, &model, LossKind::Absolute, &pt, &mut RngStream::new(0, 0)).unwrap();
        let oracle = grid_oracle_worst_case(&model, LossKind::Absolute, &pt, 0.3, 4001).unwrap();
        let got = LossKind::Absolute.eval(adv[0], -1.0);
        assert!(got >= 0.99 * oracle);
    }

    #[test]
    fn l2_and_grid_perturbations_stay_feasible() {
        let (p, _) = init_params::<f64>(32, 3, &RngStream::new(15, 0)).unwrap();
        let mut rng = RngStream::new(16, 0);
        for cfg in [AdversaryConfig::l2_sphere(0.15, 10, 0.04), AdversaryConfig::grid(0.15, 300)] {
            for _ in 0..100 {
                let pt = manifold_point(&mut rng, 3, 0.9);
                let adv = perturb(&cfg, &p, LossKind::Absolute, &pt, &mut rng).unwrap();
                assert!(distance(&adv, &pt.x) <= 0.15 + 1e-9);
                assert!(manifold::contains(&adv, 1e-9));
            }
        }
    }
}
