//! The input manifold `𝒳 = {x ∈ R^d : ‖x‖₂ = 1, x_d = 1/2}`.
//!
//! For `d ≥ 2` this is a sphere of radius `√3/2` in the first `d − 1`
//! coordinates, lifted to the hyperplane `x_d = 1/2`.

use crate::error::{FalError, Result};
use crate::linalg::norm2;
use crate::rng::RngStream;
use crate::scalar::Real;

pub const LAST_COORD: f64 = 0.5;

/// Radius of the head coordinates, `√(1 − 1/4)`.
pub fn head_radius() -> f64 {
    0.75f64.sqrt()
}

/// Default membership tolerance.
pub const TOLERANCE: f64 = 1e-9;

pub fn contains<T: Real>(x: &[T], tol: f64) -> bool {
    if x.len() < 2 {
        return false;
    }
    let last = x[x.len() - 1].to_f64_lossy();
    let norm = norm2(x).to_f64_lossy();
    (last - LAST_COORD).abs() <= tol && (norm - 1.0).abs() <= tol
}

/// Sets the last coordinate to `1/2` and rescales the head to norm `√3/2`.
///
/// Returns `None` when the head is (numerically) zero, where the radial
/// direction is undefined.
pub fn retract<T: Real>(x: &mut [T]) -> Option<()> {
    let d = x.len();
    if d < 2 {
        return None;
    }
    let (head, last) = x.split_at_mut(d - 1);
    let n = norm2(head);
    if !(n > T::lit(1e-300)) {
        return None;
    }
    let s = T::lit(head_radius()) / n;
    for h in head.iter_mut() {
        *h = *h * s;
    }
    last[0] = T::lit(LAST_COORD);
    Some(())
}

/// Uniform sample on `𝒳`.
pub fn sample<T: Real>(rng: &mut RngStream, d: usize) -> Result<Vec<T>> {
    if d < 2 {
        return Err(FalError::invalid(format!("manifold needs d >= 2, got d={d}")));
    }
    let r = head_radius();
    let mut x: Vec<T> = rng
        .unit_direction(d - 1)
        .into_iter()
        .map(|v| T::lit(r * v))
        .collect();
    x.push(T::lit(LAST_COORD));
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_lie_on_manifold() {
        let mut rng = RngStream::new(1, 2);
        for d in 2..8 {
            for _ in 0..100 {
                let x: Vec<f64> = sample(&mut rng, d).unwrap();
                assert!(contains(&x, TOLERANCE));
            }
        }
        assert!(sample::<f64>(&mut rng, 1).is_err());
    }

    #[test]
    fn retract_maps_onto_manifold() {
        let mut x = vec![3.0, -1.0, 7.0];
        retract(&mut x).unwrap();
        assert!(contains(&x, 1e-12));
        let mut degenerate = vec![0.0, 0.0, 0.3];
        assert!(retract(&mut degenerate).is_none());
    }
}
