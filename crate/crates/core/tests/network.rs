use fal_core::data::DataPoint;
use fal_core::model::{
    batch_loss, forward, grad_hidden, init_params, pseudo_forward, pseudo_grad_hidden, LossKind,
};
use fal_core::{manifold, Matrix, RngStream};
use proptest::prelude::*;

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Direct double loop over hidden units.
fn oracle_forward(u: &Matrix, a: &[f64], b: &[f64], x: &[f64]) -> f64 {
    let (d, m) = u.shape();
    let mut out = 0.0;
    for r in 0..m {
        let mut z = b[r];
        for (i, xi) in x.iter().enumerate().take(d) {
            z += u.get(i, r) * xi;
        }
        out += a[r] * relu(z);
    }
    out
}

fn points(seed: u64, n: usize, d: usize) -> Vec<DataPoint<f64>> {
    let mut rng = RngStream::new(seed, 11);
    (0..n)
        .map(|_| {
            let x = manifold::sample::<f64>(&mut rng, d).unwrap();
            let y = 2.0 * rng.uniform01() - 1.0;
            DataPoint::new(x, y).unwrap()
        })
        .collect()
}

#[test]
fn forward_matches_loop_oracle() {
    let (p, _) = init_params::<f64>(64, 4, &RngStream::new(1, 0)).unwrap();
    for pt in points(2, 20, 4) {
        let got = forward(&p, &pt.x).unwrap();
        let want = oracle_forward(p.hidden(), p.output(), p.bias(), &pt.x);
        assert!((got - want).abs() <= 1e-14, "{got} vs {want}");
    }
}

#[test]
fn initialization_ranges() {
    let m = 4096;
    let (p, anchor) = init_params::<f64>(m, 3, &RngStream::new(5, 0)).unwrap();
    let cap = (m as f64).powf(-1.0 / 3.0);
    assert!(p.output().iter().all(|a| a.abs() <= cap));
    // U and b entries have variance 1/m
    let var = p.hidden().as_slice().iter().map(|u| u * u).sum::<f64>() / (3 * m) as f64;
    assert!((var * m as f64 - 1.0).abs() < 0.1, "{var}");
    let bvar = p.bias().iter().map(|b| b * b).sum::<f64>() / m as f64;
    assert!((bvar * m as f64 - 1.0).abs() < 0.1, "{bvar}");
    assert!(anchor.matches(&p));
}

#[test]
fn pseudo_net_is_zero_at_init() {
    let (p, anchor) = init_params::<f64>(128, 5, &RngStream::new(3, 0)).unwrap();
    for pt in points(4, 10, 5) {
        assert_eq!(pseudo_forward(&p, &anchor, &pt.x).unwrap(), 0.0);
    }
}

#[test]
fn gradient_matches_loop_oracle() {
    let (p, _) = init_params::<f64>(32, 3, &RngStream::new(8, 0)).unwrap();
    let batch = points(9, 6, 3);
    let g = grad_hidden(&p, &batch, LossKind::Absolute).unwrap();
    let (d, m) = p.hidden().shape();
    for r in 0..m {
        for i in 0..d {
            let mut want = 0.0;
            for pt in &batch {
                let f = oracle_forward(p.hidden(), p.output(), p.bias(), &pt.x);
                let s = if f > pt.y { 1.0 } else if f < pt.y { -1.0 } else { 0.0 };
                let z: f64 = p.bias()[r] + (0..d).map(|k| p.hidden().get(k, r) * pt.x[k]).sum::<f64>();
                if z >= 0.0 {
                    want += s * p.output()[r] * pt.x[i];
                }
            }
            want /= batch.len() as f64;
            assert!((g.get(i, r) - want).abs() <= 1e-15, "({i},{r})");
        }
    }
}

#[test]
fn real_and_pseudo_gradients_agree_at_init() {
    let (p, anchor) = init_params::<f64>(64, 3, &RngStream::new(12, 0)).unwrap();
    let mut batch = points(13, 8, 3);
    for pt in &mut batch {
        pt.y = if pt.y >= 0.0 { 1.0 } else { -1.0 };
    }
    let real = grad_hidden(&p, &batch, LossKind::Absolute).unwrap();
    let pseudo = pseudo_grad_hidden(&p, &anchor, &batch, LossKind::Absolute).unwrap();
    assert_eq!(real, pseudo);
}

#[test]
fn single_precision_tracks_double() {
    let (p, _) = init_params::<f64>(256, 3, &RngStream::new(21, 0)).unwrap();
    let (p32, _) = init_params::<f32>(256, 3, &RngStream::new(21, 0)).unwrap();
    let batch = points(22, 16, 3);
    let batch32: Vec<DataPoint<f32>> = batch.iter().map(|p| p.cast()).collect();
    let l64 = batch_loss(&p, &batch, LossKind::Absolute).unwrap();
    let l32 = batch_loss(&p32, &batch32, LossKind::Absolute).unwrap();
    assert!((l64 - l32 as f64).abs() < 1e-5, "{l64} vs {l32}");
}

#[test]
fn absolute_loss_values() {
    assert_eq!(LossKind::Absolute.eval(0.25_f64, -0.5), 0.75);
    assert_eq!(LossKind::Absolute.subgrad(0.25_f64, -0.5), 1.0);
    assert_eq!(LossKind::Absolute.subgrad(-1.0_f64, 0.5), -1.0);
    assert_eq!(LossKind::Absolute.subgrad(0.5_f64, 0.5), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_is_positively_homogeneous_in_hidden_and_bias(seed in 0u64..1000, c in 0.1f64..4.0) {
        let (p, _) = init_params::<f64>(16, 3, &RngStream::new(seed, 0)).unwrap();
        let x = points(seed, 1, 3).remove(0).x;
        let u = p.hidden().scaled(c);
        let b: Vec<f64> = p.bias().iter().map(|b| b * c).collect();
        let scaled = oracle_forward(&u, p.output(), &b, &x);
        let base = forward(&p, &x).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-12 * (1.0 + base.abs()));
    }

    #[test]
    fn pseudo_net_is_linear_in_displacement(seed in 0u64..1000, c in -3.0f64..3.0) {
        let (p, anchor) = init_params::<f64>(32, 4, &RngStream::new(seed, 0)).unwrap();
        let mut rng = RngStream::new(seed, 1);
        let delta = Matrix::from_col_major(4, 32, (0..128).map(|_| rng.standard_normal() * 0.01).collect()).unwrap();
        let mut u1 = p.hidden().clone();
        u1.add_scaled(1.0, &delta).unwrap();
        let mut uc = p.hidden().clone();
        uc.add_scaled(c, &delta).unwrap();
        let x = points(seed, 1, 4).remove(0).x;
        let g1 = pseudo_forward(&p.with_hidden(u1).unwrap(), &anchor, &x).unwrap();
        let gc = pseudo_forward(&p.with_hidden(uc).unwrap(), &anchor, &x).unwrap();
        prop_assert!((gc - c * g1).abs() <= 1e-12);
    }
}
