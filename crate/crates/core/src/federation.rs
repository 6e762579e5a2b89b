//! Federated adversarial training.
//!
//! Each round `t`:
//! 1. every client copies the global hidden matrix `W_c ← U(t)` and takes `K`
//!    local steps `W_c ← W_c − η_loc ∇L(f_{W_c}, S̃_c)` where `S̃_c` holds
//!    adversarial examples freshly generated against the current `W_c`;
//! 2. the server averages the client displacements
//!    `ΔU(t) = (1/N) Σ_c (W_c(t, K) − U(t))` in client order and applies
//!    `U(t+1) = U(t) + η_glo ΔU(t)`.
//!
//! FedAvg is the same loop with the adversary replaced by the identity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{perturb, AdversaryConfig};
use crate::data::{ClientDataset, DataMode, DataPoint, FederatedDataset};
use crate::error::{FalError, Result};
use crate::linalg::{norm2, Matrix, Vector};
use crate::model::{
    batch_loss, grad_hidden, init_params, pseudo_batch_loss, pseudo_grad_hidden, InitAnchor,
    LossKind, NetParams,
};
use crate::rng::{purpose, RngStream};
use crate::scalar::Real;

/// Stream tag for the network initialization of a run.
const INIT_TAG: u64 = 0xA11;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Unit-manifold data, full-batch local steps, `η_loc = 1/K`, `ρ < 1/2`.
    #[default]
    Theory,
    /// Unnormalized classification data, minibatches allowed.
    Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalConfig {
    pub regime: Regime,
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Local steps per round `K`.
    pub local_steps: usize,
    pub eta_local: f64,
    pub eta_global: f64,
    /// Hidden width `m`.
    pub width: usize,
    pub loss: LossKind,
    pub adversary: AdversaryConfig,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub parallel_clients: bool,
    /// Record a [`GradientReport`] every this many rounds; 0 disables.
    pub grad_audit_every: usize,
    /// Train each local step on every adversarial example generated so far in
    /// the round rather than only the freshest batch.
    pub accumulate_adv_set: bool,
}

impl FalConfig {
    /// Theory preset: `η_loc = 1/K`, `η_glo = 0.5/(NJ)`, full batch, ℓ₂
    /// adversary on the manifold.
    pub fn theory(n_clients: usize, per_client: usize, width: usize, local_steps: usize, rounds: usize, rho: f64) -> Self {
        Self {
            regime: Regime::Theory,
            rounds,
            local_steps,
            eta_local: 1.0 / local_steps.max(1) as f64,
            eta_global: 0.5 / (n_clients * per_client).max(1) as f64,
            width,
            loss: LossKind::Absolute,
            adversary: AdversaryConfig::l2_sphere(rho, 5, rho / 2.0),
            batch_size: None,
            seed: 0,
            parallel_clients: true,
            grad_audit_every: 0,
            accumulate_adv_set: false,
        }
    }

    /// Classification preset: width 128, box PGD, batch 50, 100 rounds,
    /// `η_glo = 1`, local SGD at rate `lr`.
    pub fn experiment(lr: f64) -> Self {
        Self {
            regime: Regime::Experiment,
            rounds: 100,
            local_steps: EXPERIMENT_LOCAL_STEPS,
            eta_local: lr,
            eta_global: 1.0,
            width: 128,
            loss: LossKind::Absolute,
            adversary: AdversaryConfig::linf_pgd(),
            batch_size: Some(50),
            seed: 0,
            parallel_clients: true,
            grad_audit_every: 0,
            accumulate_adv_set: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(FalError::invalid("local_steps (K) must be at least 1"));
        }
        if self.width == 0 {
            return Err(FalError::invalid("width (m) must be at least 1"));
        }
        for (name, v) in [("eta_local", self.eta_local), ("eta_global", self.eta_global)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FalError::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.batch_size == Some(0) {
            return Err(FalError::invalid("batch_size must be positive"));
        }
        let theory = self.regime == Regime::Theory;
        self.adversary.validate(theory)?;
        if theory {
            let expected = 1.0 / self.local_steps as f64;
            if (self.eta_local - expected).abs() > 1e-12 * expected {
                return Err(FalError::invalid(format!(
                    "theory regime requires eta_local = 1/K = {expected}, got {}",
                    self.eta_local
                )));
            }
            if self.batch_size.is_some() {
                return Err(FalError::invalid("theory regime uses full-batch local steps"));
            }
        }
        Ok(())
    }
}

/// Local SGD steps per round in the classification preset: fifty epochs of
/// the 200-point client shards at batch size 50.
pub const EXPERIMENT_LOCAL_STEPS: usize = 200;

/// Gradient coupling measurements at one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// `‖∇(f,t) − ∇̃(f,t)‖₂,₁`
    pub fl_gap_21: f64,
    /// `‖∇(f,t) − ∇̃(f,t)‖_F`
    pub fl_gap_fro: f64,
    /// `‖∇(g,t) − ∇(f,t)‖₂,₁`
    pub coupling_gap_21: f64,
    /// Columns where the pseudo and real gradients differ.
    pub flip_count: usize,
    /// `coupling_gap_21 ≤ m^{-1/3} · flip_count`
    pub coupling_bound_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// Loss of `f_{U(t)}` on the round's adversarial examples.
    pub adv_loss: f64,
    pub clean_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// `‖U(t) − U(0)‖₂,∞`
    pub dist_init_2inf: f64,
    /// `‖ΔU(t)‖_F`
    pub delta_u_fro: f64,
    pub grad: Option<GradientReport>,
}

/// Output of one client's local training.
#[derive(Clone, Debug)]
pub struct ClientUpdate<T> {
    pub client: usize,
    /// `W_c(t, K) − U(t)`
    pub delta: Matrix<T>,
    /// The freshest adversarial example for each of the client's points.
    pub adv_set: Vec<DataPoint<T>>,
    /// Every adversarial example generated in the round, when accumulating.
    pub accumulated: Option<Vec<DataPoint<T>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Attack {
    Adversarial,
    Identity,
}

fn client_update_with<T: Real>(
    client: &ClientDataset<T>,
    t: usize,
    global: &NetParams<T>,
    cfg: &FalConfig,
    root: &RngStream,
    attack: Attack,
) -> Result<ClientUpdate<T>> {
    let pts = &client.points;
    let j_count = pts.len();
    if j_count == 0 {
        return Err(FalError::Empty("client has no points"));
    }
    let c = client.id as u64;
    let eta = T::lit(cfg.eta_local);

    let mut local = global.clone();
    let mut latest: Vec<Option<Vector<T>>> = vec![None; j_count];
    let mut accumulated: Vec<DataPoint<T>> = Vec::new();

    let batch = cfg.batch_size.unwrap_or(j_count).min(j_count);
    let mut order: Vec<usize> = (0..j_count).collect();
    let mut cursor = j_count;
    let mut epoch = 0u64;

    for k in 0..cfg.local_steps {
        let idx: Vec<usize> = if batch == j_count {
            (0..j_count).collect()
        } else {
            let mut idx = Vec::with_capacity(batch);
            while idx.len() < batch {
                if cursor == j_count {
                    order = (0..j_count).collect();
                    root.derive(&[purpose::SHUFFLE, t as u64, c, epoch]).shuffle(&mut order);
                    epoch += 1;
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            idx
        };

        let mut fresh = Vec::with_capacity(idx.len());
        for &j in &idx {
            let x_adv = match attack {
                Attack::Identity => pts[j].x.clone(),
                Attack::Adversarial => {
                    let mut rng = root.derive(&[purpose::ADVERSARY, t as u64, c, j as u64, k as u64]);
                    perturb(&cfg.adversary, &local, cfg.loss, &pts[j], &mut rng)?
                }
            };
            latest[j] = Some(x_adv.clone());
            fresh.push(DataPoint { x: x_adv, y: pts[j].y });
        }

        let grad = if cfg.accumulate_adv_set {
            accumulated.extend(fresh);
            grad_hidden(&local, &accumulated, cfg.loss)?
        } else {
            grad_hidden(&local, &fresh, cfg.loss)?
        };
        local.hidden_mut().add_scaled(-eta, &grad)?;
    }

    let mut adv_set = Vec::with_capacity(j_count);
    for (j, slot) in latest.into_iter().enumerate() {
        let x = match slot {
            Some(x) => x,
            // not visited this round: attack the final local model
            None => match attack {
                Attack::Identity => pts[j].x.clone(),
                Attack::Adversarial => {
                    let mut rng = root.derive(&[purpose::ADVERSARY, t as u64, c, j as u64, u64::MAX]);
                    perturb(&cfg.adversary, &local, cfg.loss, &pts[j], &mut rng)?
                }
            },
        };
        adv_set.push(DataPoint { x, y: pts[j].y });
    }

    Ok(ClientUpdate {
        client: client.id,
        delta: local.hidden().sub(global.hidden())?,
        adv_set,
        accumulated: cfg.accumulate_adv_set.then_some(accumulated),
    })
}

/// Local adversarial training of client `client` in round `t`.
pub fn client_update<T: Real>(
    client: &ClientDataset<T>,
    t: usize,
    global: &NetParams<T>,
    cfg: &FalConfig,
    root: &RngStream,
) -> Result<ClientUpdate<T>> {
    client_update_with(client, t, global, cfg, root, Attack::Adversarial)
}

/// `(1/N) Σ_c ΔU_c`, summed in client order.
pub fn aggregate<T: Real>(deltas: &[Option<&Matrix<T>>]) -> Result<Matrix<T>> {
    let first = deltas
        .iter()
        .flatten()
        .next()
        .ok_or(FalError::Empty("no client deltas"))?;
    let mut sum = Matrix::zeros(first.rows(), first.cols())?;
    for (c, d) in deltas.iter().enumerate() {
        let d = d.ok_or(FalError::MissingClientDelta(c))?;
        sum.add_scaled(T::one(), d)?;
    }
    Ok(sum.scaled(T::one() / T::lit(deltas.len() as f64)))
}

/// FL gradient `∇̃(f,t) = −(1/N) Σ_c ΔU_c(t)`.
///
/// With `K = 1` and `η_loc = 1` this equals the gradient of the global loss
/// over the union of the clients' adversarial batches.
pub fn fl_gradient<T: Real>(deltas: &[Matrix<T>]) -> Result<Matrix<T>> {
    let refs: Vec<Option<&Matrix<T>>> = deltas.iter().map(Some).collect();
    Ok(aggregate(&refs)?.scaled(-T::one()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalLosses {
    pub clean: f64,
    pub adv: f64,
    pub pseudo: f64,
}

/// Mean losses over aligned clean and adversarial point sets: the real network
/// on both, and the pseudo-network on the adversarial set.
pub fn global_losses<T: Real>(
    params: &NetParams<T>,
    anchor: &InitAnchor<T>,
    clean: &[DataPoint<T>],
    adv: &[DataPoint<T>],
    loss: LossKind,
) -> Result<GlobalLosses> {
    if clean.is_empty() || adv.is_empty() {
        return Err(FalError::Empty("loss evaluation set"));
    }
    Ok(GlobalLosses {
        clean: batch_loss(params, clean, loss)?.to_f64_lossy(),
        adv: batch_loss(params, adv, loss)?.to_f64_lossy(),
        pseudo: pseudo_batch_loss(params, anchor, adv, loss)?.to_f64_lossy(),
    })
}

/// Fraction of points where `sign(f(x))` matches the label's sign
/// (`f(x) = 0` predicts the positive class).
pub fn accuracy<T: Real>(params: &NetParams<T>, points: &[DataPoint<T>]) -> f64 {
    if points.is_empty() {
        return f64::NAN;
    }
    let hits = points
        .iter()
        .filter(|p| (params.eval(&p.x) >= T::zero()) == (p.y >= T::zero()))
        .count();
    hits as f64 / points.len() as f64
}

/// Compares the real, FL and pseudo gradients at `U(t)` over `S(t)`.
pub fn gradient_report<T: Real>(
    params: &NetParams<T>,
    anchor: &InitAnchor<T>,
    adv_set: &[DataPoint<T>],
    deltas: &[Matrix<T>],
    loss: LossKind,
) -> Result<GradientReport> {
    let real = grad_hidden(params, adv_set, loss)?;
    let fl = fl_gradient(deltas)?;
    let pseudo = pseudo_grad_hidden(params, anchor, adv_set, loss)?;
    let fl_diff = real.sub(&fl)?;
    let coupling = coupling_measure(&real, &pseudo)?;
    Ok(GradientReport {
        fl_gap_21: fl_diff.norm_2_1().to_f64_lossy(),
        fl_gap_fro: fl_diff.frobenius().to_f64_lossy(),
        coupling_gap_21: coupling.gap_21,
        flip_count: coupling.flip_count,
        coupling_bound_holds: coupling.bound_holds(params.width()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub gap_21: f64,
    pub flip_count: usize,
}

impl Coupling {
    /// Each differing column contributes at most `m^{-1/3}`.
    pub fn bound_holds(&self, width: usize) -> bool {
        let bound = (width as f64).powf(-1.0 / 3.0) * self.flip_count as f64;
        self.gap_21 <= bound * (1.0 + 1e-12)
    }
}

/// `‖pseudo − real‖₂,₁` and the number of columns that differ at all.
pub fn coupling_measure<T: Real>(real: &Matrix<T>, pseudo: &Matrix<T>) -> Result<Coupling> {
    if real.shape() != pseudo.shape() {
        return Err(FalError::DimensionMismatch {
            expected: real.as_slice().len(),
            found: pseudo.as_slice().len(),
        });
    }
    let mut gap = 0.0;
    let mut flips = 0;
    for (a, b) in real.columns().zip(pseudo.columns()) {
        if a != b {
            flips += 1;
            let diff: Vec<T> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
            gap += norm2(&diff).to_f64_lossy();
        }
    }
    Ok(Coupling {
        gap_21: gap,
        flip_count: flips,
    })
}

/// Global model and its frozen initialization.
#[derive(Clone, Debug)]
pub struct FalState<T> {
    pub params: NetParams<T>,
    pub anchor: InitAnchor<T>,
}

impl<T: Real> FalState<T> {
    pub fn init(cfg: &FalConfig, dim: usize) -> Result<Self> {
        let root = RngStream::new(cfg.seed, 0);
        let (params, anchor) = init_params(cfg.width, dim, &root.derive(&[INIT_TAG]))?;
        Ok(Self { params, anchor })
    }
}

/// Applies one round's client updates: records metrics at `U(t)`, then moves
/// to `U(t+1)`.
pub fn server_round<T: Real>(
    t: usize,
    state: &mut FalState<T>,
    updates: &[Option<ClientUpdate<T>>],
    cfg: &FalConfig,
    train: &FederatedDataset<T>,
    test: &[DataPoint<T>],
) -> Result<RoundRecord> {
    if updates.len() != train.n_clients() {
        return Err(FalError::MissingClientDelta(updates.len().min(train.n_clients())));
    }
    let deltas: Vec<Option<&Matrix<T>>> = updates.iter().map(|u| u.as_ref().map(|u| &u.delta)).collect();
    let delta = aggregate(&deltas)?;
    let updates: Vec<&ClientUpdate<T>> = updates.iter().flatten().collect();

    let adv_set: Vec<DataPoint<T>> = updates.iter().flat_map(|u| u.adv_set.iter().cloned()).collect();
    let clean: Vec<DataPoint<T>> = train.points().cloned().collect();
    let params = &state.params;
    let losses = global_losses(params, &state.anchor, &clean, &adv_set, cfg.loss)?;

    let grad = if cfg.grad_audit_every > 0 && t.is_multiple_of(cfg.grad_audit_every) {
        let owned: Vec<Matrix<T>> = updates.iter().map(|u| u.delta.clone()).collect();
        Some(gradient_report(params, &state.anchor, &adv_set, &owned, cfg.loss)?)
    } else {
        None
    };

    let record = RoundRecord {
        t,
        adv_loss: losses.adv,
        clean_loss: losses.clean,
        train_acc: accuracy(params, &clean),
        test_acc: (!test.is_empty()).then(|| accuracy(params, test)),
        dist_init_2inf: state.anchor.displacement(params)?.norm_2_inf().to_f64_lossy(),
        delta_u_fro: delta.frobenius().to_f64_lossy(),
        grad,
    };

    state
        .params
        .hidden_mut()
        .add_scaled(T::lit(cfg.eta_global), &delta)?;
    Ok(record)
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub records: Vec<RoundRecord>,
    pub state: FalState<T>,
}

/// `η_glo · η_loc · t · K · m^{-1/3}`: the largest `‖U(t) − U(0)‖₂,∞` reachable
/// with unit-norm inputs.
pub fn displacement_bound(cfg: &FalConfig, t: usize) -> f64 {
    cfg.eta_global * cfg.eta_local * t as f64 * cfg.local_steps as f64 * (cfg.width as f64).powf(-1.0 / 3.0)
}

fn run<T: Real>(
    cfg: &FalConfig,
    train: &FederatedDataset<T>,
    test: &[DataPoint<T>],
    attack: Attack,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    if cfg.regime == Regime::Theory && train.mode() != DataMode::Sphere {
        return Err(FalError::invalid("theory regime needs unit-manifold data"));
    }
    let root = RngStream::new(cfg.seed, 0);
    let mut state = FalState::init(cfg, train.dim())?;
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let global = &state.params;
        let step = |client: &ClientDataset<T>| client_update_with(client, t, global, cfg, &root, attack);
        let updates: Vec<ClientUpdate<T>> = if cfg.parallel_clients {
            train.clients().par_iter().map(step).collect::<Result<_>>()?
        } else {
            train.clients().iter().map(step).collect::<Result<_>>()?
        };
        let updates: Vec<Option<ClientUpdate<T>>> = updates.into_iter().map(Some).collect();
        let record = server_round(t, &mut state, &updates, cfg, train, test)?;

        if cfg.regime == Regime::Theory {
            let bound = displacement_bound(cfg, t);
            if record.dist_init_2inf > bound * (1.0 + 1e-12) + 1e-15 {
                return Err(FalError::Invariant(format!(
                    "round {t}: ‖U(t) − U(0)‖₂,∞ = {} exceeds {bound}",
                    record.dist_init_2inf
                )));
            }
        }
        records.push(record);
    }

    if !state.anchor.matches(&state.params) {
        return Err(FalError::Invariant("output weights or biases changed during training".into()));
    }
    Ok(RunOutcome { records, state })
}

/// Federated adversarial learning.
pub fn run_fal<T: Real>(
    cfg: &FalConfig,
    train: &FederatedDataset<T>,
    test: &[DataPoint<T>],
) -> Result<RunOutcome<T>> {
    run(cfg, train, test, Attack::Adversarial)
}

/// The same loop without an adversary.
pub fn run_fedavg<T: Real>(
    cfg: &FalConfig,
    train: &FederatedDataset<T>,
    test: &[DataPoint<T>],
) -> Result<RunOutcome<T>> {
    run(cfg, train, test, Attack::Identity)
}
