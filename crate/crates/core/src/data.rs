//! Synthetic federated datasets and their CSV persistence.
//!
//! Two generators:
//! - [`gen_separable_sphere`]: points on the manifold `𝒳` with a guaranteed
//!   minimum pairwise distance, labels uniform in `[−1, 1]`;
//! - [`gen_gaussian_clusters`]: the two-dimensional four-cluster binary
//!   classification set, labels in `{−1, +1}`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FalError, Result};
use crate::linalg::{distance, Vector};
use crate::manifold;
use crate::rng::{purpose, RngStream};
use crate::scalar::Real;

/// Consecutive rejections after which a packing attempt counts as stalled.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;

/// Fresh packing attempts before giving up on a separation request.
pub const MAX_PACKING_ATTEMPTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct DataPoint<T> {
    pub x: Vector<T>,
    pub y: T,
}

impl<T: Real> DataPoint<T> {
    pub fn new(x: Vec<T>, y: T) -> Result<Self> {
        if !y.is_finite() {
            return Err(FalError::NonFinite("label"));
        }
        Ok(Self {
            x: Vector::from_vec(x)?,
            y,
        })
    }

    pub fn cast<U: Real>(&self) -> DataPoint<U> {
        DataPoint {
            x: self.x.cast(),
            y: U::lit(self.y.to_f64_lossy()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Unit-norm points with last coordinate `1/2`.
    #[default]
    Sphere,
    /// Unnormalized Gaussian clusters.
    Clusters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset<T> {
    pub id: usize,
    pub points: Vec<DataPoint<T>>,
}

/// `N` clients holding `J` points each.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset<T> {
    clients: Vec<ClientDataset<T>>,
    mode: DataMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityStats {
    pub delta_min: f64,
    pub gamma_bound: f64,
}

impl<T: Real> FederatedDataset<T> {
    pub fn new(clients: Vec<ClientDataset<T>>, mode: DataMode) -> Result<Self> {
        let first = clients.first().ok_or(FalError::Empty("dataset has no clients"))?;
        let j = first.points.len();
        if j == 0 {
            return Err(FalError::Empty("client has no points"));
        }
        let d = first.points[0].x.len();
        for (c, client) in clients.iter().enumerate() {
            if client.id != c {
                return Err(FalError::invalid(format!(
                    "client ids must be 0..N in order; position {c} holds id {}",
                    client.id
                )));
            }
            if client.points.len() != j {
                return Err(FalError::invalid(format!(
                    "every client must hold {j} points; client {c} holds {}",
                    client.points.len()
                )));
            }
            for p in &client.points {
                if p.x.len() != d {
                    return Err(FalError::DimensionMismatch {
                        expected: d,
                        found: p.x.len(),
                    });
                }
                if mode == DataMode::Sphere
                    && (!manifold::contains(&p.x, T::tolerance(manifold::TOLERANCE)) || p.y.abs() > T::one())
                {
                    return Err(FalError::invalid(format!(
                        "client {c} has a point off the unit manifold or with |y| > 1"
                    )));
                }
            }
        }
        Ok(Self { clients, mode })
    }

    pub fn clients(&self) -> &[ClientDataset<T>] {
        &self.clients
    }

    pub fn mode(&self) -> DataMode {
        self.mode
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn points_per_client(&self) -> usize {
        self.clients[0].points.len()
    }

    pub fn dim(&self) -> usize {
        self.clients[0].points[0].x.len()
    }

    pub fn len(&self) -> usize {
        self.n_clients() * self.points_per_client()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points in client order, then index order.
    pub fn points(&self) -> impl Iterator<Item = &DataPoint<T>> + '_ {
        self.clients.iter().flat_map(|c| c.points.iter())
    }

    pub fn separability_stats(&self, rho: f64) -> SeparabilityStats {
        let pts: Vec<&DataPoint<T>> = self.points().collect();
        separability_of(pts.iter().map(|p| p.x.as_slice()), rho)
    }
}

fn separability_of<'a, T: Real>(xs: impl Iterator<Item = &'a [T]>, rho: f64) -> SeparabilityStats {
    let xs: Vec<&[T]> = xs.collect();
    let mut delta_min = f64::INFINITY;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            delta_min = delta_min.min(distance(xs[i], xs[j]).to_f64_lossy());
        }
    }
    SeparabilityStats {
        delta_min,
        gamma_bound: delta_min * (delta_min - 2.0 * rho),
    }
}

/// Minimum pairwise distance `δ` over all points and `γ ≤ δ(δ − 2ρ)`.
///
/// A single-point dataset has `δ = +∞`.
pub fn separability_stats<T: Real>(ds: &FederatedDataset<T>, rho: f64) -> SeparabilityStats {
    ds.separability_stats(rho)
}

/// `N·J` points on `𝒳` with pairwise distance at least `delta`.
pub fn gen_separable_sphere<T: Real>(
    n_clients: usize,
    per_client: usize,
    d: usize,
    delta: f64,
    rng: &RngStream,
) -> Result<FederatedDataset<T>> {
    if d < 3 {
        return Err(FalError::invalid(format!("separable sphere data needs d >= 3, got {d}")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(FalError::invalid(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    if n_clients == 0 || per_client == 0 {
        return Err(FalError::invalid("need at least one client and one point per client"));
    }
    let total = n_clients * per_client;
    let mut point_rng = rng.derive(&[purpose::DATA, 0]);
    let mut label_rng = rng.derive(&[purpose::DATA, 1]);

    let mut best = 0;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(total);
    'attempts: for _ in 0..MAX_PACKING_ATTEMPTS {
        accepted.clear();
        let mut rejections = 0;
        while accepted.len() < total {
            let cand: Vec<f64> = manifold::sample(&mut point_rng, d)?;
            if accepted.iter().all(|a| distance(a, &cand) >= delta) {
                accepted.push(cand);
                rejections = 0;
            } else {
                rejections += 1;
                if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                    best = best.max(accepted.len());
                    continue 'attempts;
                }
            }
        }
        break;
    }
    if accepted.len() < total {
        return Err(FalError::PackingInfeasible {
            requested: total,
            placed: best,
            delta,
        });
    }

    let mut it = accepted.into_iter();
    let clients = (0..n_clients)
        .map(|c| {
            let points = (0..per_client)
                .map(|_| {
                    let x = it.next().expect("accepted holds N*J points");
                    let y = 2.0 * label_rng.uniform01() - 1.0;
                    DataPoint::new(x.into_iter().map(T::lit).collect(), T::lit(y))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClientDataset { id: c, points })
        })
        .collect::<Result<Vec<_>>>()?;
    FederatedDataset::new(clients, DataMode::Sphere)
}

/// Parameters of the four-cluster binary classification set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSpec {
    pub scale: f64,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub flip_rate: f64,
    pub n_clients: usize,
    /// `means[class][cluster]`, before scaling.
    pub means: [[[f64; 2]; 2]; 2],
    pub std: f64,
    /// Give each client a contiguous run of cluster-sorted points instead of
    /// a shuffled shard.
    pub shard_by_cluster: bool,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            scale: 1.0,
            per_class_train: 400,
            per_class_test: 100,
            flip_rate: 0.05,
            n_clients: 4,
            means: [[[-2.0, 0.0], [0.0, 2.0]], [[2.0, 0.0], [0.0, -2.0]]],
            std: 1.0,
            shard_by_cluster: false,
        }
    }
}

/// Class index → label.
pub fn class_label(class: usize) -> f64 {
    if class == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Four-cluster training set split across clients, plus an unflipped test set.
pub fn gen_gaussian_clusters<T: Real>(
    spec: &ClusterSpec,
    rng: &RngStream,
) -> Result<(FederatedDataset<T>, Vec<DataPoint<T>>)> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(FalError::invalid(format!("scale must be positive, got {}", spec.scale)));
    }
    if !(0.0..0.5).contains(&spec.flip_rate) {
        return Err(FalError::invalid(format!(
            "flip rate must lie in [0, 0.5), got {}",
            spec.flip_rate
        )));
    }
    if !(spec.std > 0.0) {
        return Err(FalError::invalid("cluster std must be positive"));
    }
    if spec.n_clients == 0 || spec.per_class_train == 0 {
        return Err(FalError::invalid("need clients and training points"));
    }
    if !spec.per_class_train.is_multiple_of(spec.n_clients) {
        return Err(FalError::invalid(format!(
            "{} training points per class do not divide evenly over {} clients",
            spec.per_class_train, spec.n_clients
        )));
    }

    let mut sample_rng = rng.derive(&[purpose::DATA, 2]);
    // (cluster id, point) with cluster id = 2*class + sub-cluster
    let mut draw = |per_class: usize| -> Vec<(usize, [f64; 2], f64)> {
        let mut out = Vec::with_capacity(2 * per_class);
        for class in 0..2 {
            for i in 0..per_class {
                let sub = i % 2;
                let mean = spec.means[class][sub];
                let x = [
                    spec.scale * (mean[0] + spec.std * sample_rng.standard_normal()),
                    spec.scale * (mean[1] + spec.std * sample_rng.standard_normal()),
                ];
                out.push((2 * class + sub, x, class_label(class)));
            }
        }
        out
    };
    let mut train = draw(spec.per_class_train);
    let test = draw(spec.per_class_test);

    let n_flip = (spec.flip_rate * train.len() as f64).round() as usize;
    let mut flip_rng = rng.derive(&[purpose::DATA, 3]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    flip_rng.shuffle(&mut order);
    for &i in &order[..n_flip] {
        train[i].2 = -train[i].2;
    }

    let mut shard_rng = rng.derive(&[purpose::SHUFFLE, 0]);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    shard_rng.shuffle(&mut idx);
    if spec.shard_by_cluster {
        idx.sort_by_key(|&i| train[i].0);
    }
    let per_client = train.len() / spec.n_clients;
    let to_point = |(_, x, y): &(usize, [f64; 2], f64)| {
        DataPoint::new(vec![T::lit(x[0]), T::lit(x[1])], T::lit(*y))
    };
    let clients = idx
        .chunks(per_client)
        .enumerate()
        .map(|(c, chunk)| {
            let points = chunk.iter().map(|&i| to_point(&train[i])).collect::<Result<Vec<_>>>()?;
            Ok(ClientDataset { id: c, points })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = test.iter().map(to_point).collect::<Result<Vec<_>>>()?;
    Ok((FederatedDataset::new(clients, DataMode::Clusters)?, test))
}

fn csv_header(d: usize) -> String {
    let mut h = String::from("client,index,y");
    for i in 0..d {
        let _ = write!(h, ",x{i}");
    }
    h
}

/// 17 significant digits; parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv<T: Real>(ds: &FederatedDataset<T>) -> String {
    let mut out = csv_header(ds.dim());
    out.push('\n');
    for client in ds.clients() {
        for (j, p) in client.points.iter().enumerate() {
            let _ = write!(out, "{},{},{}", client.id, j, format_f64(p.y.to_f64_lossy()));
            for v in p.x.iter() {
                out.push(',');
                out.push_str(&format_f64(v.to_f64_lossy()));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_csv<T: Real>(ds: &FederatedDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv(ds))?;
    Ok(())
}

/// Single-client dataset holding `points`, for writing test sets.
pub fn points_as_dataset<T: Real>(points: &[DataPoint<T>], mode: DataMode) -> Result<FederatedDataset<T>> {
    FederatedDataset::new(
        vec![ClientDataset {
            id: 0,
            points: points.to_vec(),
        }],
        mode,
    )
}

/// Parses the CSV format written by [`to_csv`]. The mode is [`DataMode::Sphere`]
/// when every point lies on the manifold with `|y| ≤ 1`, otherwise
/// [`DataMode::Clusters`].
pub fn from_csv<T: Real>(text: &str) -> Result<FederatedDataset<T>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(FalError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let fields: Vec<&str> = header.trim().split(',').collect();
    let d = fields.len().saturating_sub(3);
    if d == 0 || header.trim() != csv_header(d) {
        return Err(FalError::Parse {
            line: 1,
            message: format!("expected header `client,index,y,x0,...`, found `{}`", header.trim()),
        });
    }

    let mut rows: Vec<(usize, usize, DataPoint<T>, usize)> = Vec::new();
    for (line, raw) in lines {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != d + 3 {
            return Err(FalError::Parse {
                line,
                message: format!("expected {} fields, found {}", d + 3, cols.len()),
            });
        }
        let parse_usize = |s: &str, what: &str| {
            s.trim().parse::<usize>().map_err(|e| FalError::Parse {
                line,
                message: format!("bad {what} `{s}`: {e}"),
            })
        };
        let parse_f = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| FalError::Parse {
                line,
                message: format!("bad number `{s}`: {e}"),
            })
        };
        let client = parse_usize(cols[0], "client")?;
        let index = parse_usize(cols[1], "index")?;
        let y = parse_f(cols[2])?;
        let x = cols[3..].iter().map(|s| parse_f(s).map(T::lit)).collect::<Result<Vec<_>>>()?;
        let point = DataPoint::new(x, T::lit(y)).map_err(|e| FalError::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push((client, index, point, line));
    }
    if rows.is_empty() {
        return Err(FalError::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }

    let n = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let mut grouped: Vec<Vec<Option<DataPoint<T>>>> = vec![Vec::new(); n];
    for (client, index, point, line) in rows {
        let slot = &mut grouped[client];
        if slot.len() <= index {
            slot.resize(index + 1, None);
        }
        if slot[index].is_some() {
            return Err(FalError::Parse {
                line,
                message: format!("duplicate row for client {client} index {index}"),
            });
        }
        slot[index] = Some(point);
    }
    let clients = grouped
        .into_iter()
        .enumerate()
        .map(|(c, pts)| {
            let points = pts
                .into_iter()
                .enumerate()
                .map(|(j, p)| {
                    p.ok_or_else(|| FalError::Parse {
                        line: 0,
                        message: format!("client {c} is missing index {j}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClientDataset { id: c, points })
        })
        .collect::<Result<Vec<_>>>()?;
    let on_manifold = clients.iter().flat_map(|c| &c.points).all(|p| {
        manifold::contains(&p.x, T::tolerance(manifold::TOLERANCE)) && p.y.abs() <= T::one()
    });
    let mode = if on_manifold {
        DataMode::Sphere
    } else {
        DataMode::Clusters
    };
    FederatedDataset::new(clients, mode)
}

pub fn load_csv<T: Real>(path: impl AsRef<Path>) -> Result<FederatedDataset<T>> {
    from_csv(&fs::read_to_string(path)?)
}
