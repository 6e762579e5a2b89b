use fal_core::data::{gen_gaussian_clusters, gen_separable_sphere, ClusterSpec};
use fal_core::federation::{
    client_update, displacement_bound, fl_gradient, server_round, FalState,
};
use fal_core::model::grad_hidden;
use fal_core::rng::dataset_stream;
use fal_core::{run_fal, run_fedavg, FalConfig, FederatedDataset, RngStream};
use proptest::prelude::*;

fn sphere(n: usize, j: usize, d: usize, seed: u64) -> FederatedDataset {
    gen_separable_sphere(n, j, d, 0.3, &dataset_stream(seed)).unwrap()
}

#[test]
fn same_seed_same_records() {
    let ds = sphere(3, 4, 4, 1);
    let mut cfg = FalConfig::theory(3, 4, 128, 3, 6, 0.1);
    cfg.grad_audit_every = 2;
    let a = run_fal(&cfg, &ds, &[]).unwrap();
    let b = run_fal(&cfg, &ds, &[]).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.state.params, b.state.params);
    cfg.seed = 1;
    let c = run_fal(&cfg, &ds, &[]).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn parallel_and_sequential_clients_agree_bitwise() {
    let ds = sphere(4, 3, 3, 2);
    let mut cfg = FalConfig::theory(4, 3, 64, 2, 5, 0.05);
    cfg.grad_audit_every = 1;
    let par = run_fal(&cfg, &ds, &[]).unwrap();
    cfg.parallel_clients = false;
    let seq = run_fal(&cfg, &ds, &[]).unwrap();
    assert_eq!(par.records, seq.records);
}

#[test]
fn one_local_step_fl_gradient_is_the_real_gradient() {
    for (n, j, m) in [(1, 1, 16), (2, 3, 64), (4, 5, 256)] {
        let ds = sphere(n, j, 4, 7);
        let mut cfg = FalConfig::theory(n, j, m, 1, 4, 0.1);
        cfg.grad_audit_every = 1;
        let out = run_fal(&cfg, &ds, &[]).unwrap();
        for r in &out.records {
            let g = r.grad.as_ref().expect("audited");
            assert!(g.fl_gap_fro <= 1e-9, "N={n} J={j} m={m}: {}", g.fl_gap_fro);
        }
    }
}

#[test]
fn single_round_matches_manual_aggregation() {
    let ds = sphere(3, 2, 3, 4);
    let cfg = FalConfig::theory(3, 2, 32, 1, 1, 0.1);
    let root = RngStream::new(cfg.seed, 0);
    let mut state = FalState::<f64>::init(&cfg, 3).unwrap();
    let start = state.params.hidden().clone();
    let updates: Vec<_> = ds
        .clients()
        .iter()
        .map(|c| Some(client_update(c, 0, &state.params, &cfg, &root).unwrap()))
        .collect();
    let deltas: Vec<_> = updates.iter().map(|u| u.as_ref().unwrap().delta.clone()).collect();
    // with K = 1 each delta is −η_loc times the gradient on that client's batch
    for (u, c) in updates.iter().zip(ds.clients()) {
        let u = u.as_ref().unwrap();
        let g = grad_hidden(&state.params, &u.adv_set, cfg.loss).unwrap();
        assert!(u.delta.sub(&g.scaled(-cfg.eta_local)).unwrap().frobenius() <= 1e-15);
        assert_eq!(u.client, c.id);
    }
    let fl = fl_gradient(&deltas).unwrap();
    server_round(0, &mut state, &updates, &cfg, &ds, &[]).unwrap();
    let mut want = start;
    want.add_scaled(-cfg.eta_global, &fl).unwrap();
    assert!(state.params.hidden().sub(&want).unwrap().frobenius() <= 1e-15);

    let mut missing = updates;
    missing[1] = None;
    assert!(server_round(1, &mut state, &missing, &cfg, &ds, &[]).is_err());
}

#[test]
fn output_layer_and_bias_never_move() {
    let ds = sphere(2, 3, 3, 5);
    let cfg = FalConfig::theory(2, 3, 64, 4, 8, 0.2);
    let out = run_fal(&cfg, &ds, &[]).unwrap();
    let init = FalState::<f64>::init(&cfg, 3).unwrap();
    assert_eq!(out.state.params.output(), init.params.output());
    assert_eq!(out.state.params.bias(), init.params.bias());
    assert_ne!(out.state.params.hidden(), init.params.hidden());
}

#[test]
fn single_precision_run_tracks_double() {
    let ds = sphere(2, 3, 3, 6);
    let ds32: fal_core::data::FederatedDataset<f32> = gen_separable_sphere(2, 3, 3, 0.3, &dataset_stream(6)).unwrap();
    let cfg = FalConfig::theory(2, 3, 128, 2, 5, 0.05);
    let a = run_fal(&cfg, &ds, &[]).unwrap();
    let b = run_fal(&cfg, &ds32, &[]).unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!((x.clean_loss - y.clean_loss).abs() < 1e-4);
    }
}

#[test]
fn fedavg_learns_separated_clusters() {
    let spec = ClusterSpec {
        scale: 2.5,
        per_class_train: 100,
        per_class_test: 50,
        ..ClusterSpec::default()
    };
    let (train, test) = gen_gaussian_clusters::<f64>(&spec, &dataset_stream(0)).unwrap();
    let mut cfg = FalConfig::experiment(1e-3);
    cfg.rounds = 20;
    cfg.local_steps = 20;
    let out = run_fedavg(&cfg, &train, &test).unwrap();
    let last = out.records.last().unwrap();
    assert!(last.train_acc > 0.8, "{}", last.train_acc);
    assert!(last.test_acc.unwrap() > 0.8);
    assert!(last.clean_loss < out.records[0].clean_loss);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn displacement_stays_within_bound(
        seed in 0u64..1000,
        n in 1usize..4,
        j in 1usize..4,
        k in 1usize..5,
        m in prop::sample::select(vec![8usize, 64, 512]),
        rho in 0.0f64..0.4,
    ) {
        let ds = sphere(n, j, 3, seed);
        let mut cfg = FalConfig::theory(n, j, m, k, 6, rho);
        cfg.seed = seed;
        cfg.eta_global = 1.0;
        let out = run_fal(&cfg, &ds, &[]).unwrap();
        for r in &out.records {
            prop_assert!(r.dist_init_2inf <= displacement_bound(&cfg, r.t) * (1.0 + 1e-12) + 1e-15);
        }
    }
}
