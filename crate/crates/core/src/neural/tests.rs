use rand::Rng as _;

use super::*;
use crate::rng::rng_from_seed;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng_from_seed(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn targets(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng_from_seed(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| f64::from(u8::from(r.random_bool(0.5))))
            .collect(),
    )
    .unwrap()
}

fn classes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn tiny_mlp() -> Network {
    let cfg = MlpConfig {
        context: 3,
        hidden: vec![7, 5],
        dropout: 0.0,
        activation: Activation::Tanh,
    };
    Network::new(NetConfig::Mlp(cfg), 4, classes(2), 1).unwrap()
}

fn tiny_cnn() -> Network {
    let c = |channels, kernel, stride, pool| ConvSpec {
        channels,
        kernel,
        stride,
        pool,
    };
    let cfg = CnnConfig {
        context: 9,
        convs: vec![c(3, 3, 1, 2), c(4, 3, 2, 0)],
        fc: vec![6],
        dropout: 0.0,
    };
    Network::new(NetConfig::Cnn(cfg), 8, classes(2), 2).unwrap()
}

fn tiny_ast(head: AstHead) -> Network {
    let cfg = AstConfig {
        window_tokens: 2,
        embed: 32,
        layers: 2,
        heads: 4,
        mlp_ratio: 2,
        head,
        ..Default::default()
    };
    Network::new(NetConfig::Ast(cfg), 32, classes(2), 3).unwrap()
}

/// Worst relative error between the analytic directional derivative and a central
/// difference along random unit directions.
fn gradient_error(net: &Network, x: &Matrix, y: &Matrix, directions: usize) -> f64 {
    let (_, g) = net.loss_and_grad(x, y, None).unwrap();
    let g = g.flat();
    let theta = net.params.flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut r = rng_from_seed(99);
    for _ in 0..directions {
        let v: Vec<f64> = (0..theta.len())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|a| a / norm).collect();
        let at = |s: f64| {
            let mut n = net.clone();
            n.params.set_flat(
                &theta
                    .iter()
                    .zip(&v)
                    .map(|(t, d)| t + s * d)
                    .collect::<Vec<_>>(),
            );
            n.loss(x, y).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mlp = tiny_mlp();
    assert!(gradient_error(&mlp, &random(5, 12, 10), &targets(5, 2, 11), 10) <= 1e-4);
    let cnn = tiny_cnn();
    assert!(gradient_error(&cnn, &random(3, 72, 12), &targets(3, 2, 13), 10) <= 1e-4);
    for head in [AstHead::Cls, AstHead::Seq] {
        let ast = tiny_ast(head);
        let x = random(2, 32 * 32, 14);
        let y = targets(2 * ast.outputs_per_window(), 2, 15);
        let e = gradient_error(&ast, &x, &y, 10);
        assert!(e <= 1e-4, "{head:?}: {e}");
    }
}

#[test]
fn zero_output_layer_gives_one_half() {
    for mut net in [tiny_mlp(), tiny_cnn(), tiny_ast(AstHead::Cls)] {
        for p in net
            .params
            .items
            .iter_mut()
            .filter(|p| p.name.starts_with("head."))
        {
            p.value.data_mut().fill(0.0);
        }
        let x = random(3, net.input_dim(), 4);
        assert!(net.predict(&x).unwrap().data().iter().all(|&v| v == 0.5));
    }
}

#[test]
fn inference_is_deterministic_with_dropout_configured() {
    let cfg = MlpConfig {
        context: 3,
        hidden: vec![16],
        dropout: 0.5,
        ..Default::default()
    };
    let net = Network::new(NetConfig::Mlp(cfg), 4, classes(1), 5).unwrap();
    let x = random(4, 12, 6);
    assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    let mut r = rng_from_seed(1);
    let (a, _) = net
        .loss_and_grad(&x, &targets(4, 1, 2), Some(&mut r))
        .unwrap();
    let (b, _) = net.loss_and_grad(&x, &targets(4, 1, 2), None).unwrap();
    assert_ne!(a, b, "dropout active in training");
    assert!(net.predict(&random(4, 11, 0)).is_err());
}

#[test]
fn patch_arithmetic() {
    let (p, padded) = patchify(&random(128, 128, 1), PatchPadding::Repeat).unwrap();
    assert_eq!((p.rows(), p.cols(), padded), (64, 256, false));
    let cfg = AstConfig {
        window_tokens: 8,
        embed: 32,
        layers: 1,
        heads: 2,
        ..Default::default()
    };
    let net = Network::new(NetConfig::Ast(cfg), 128, classes(1), 0).unwrap();
    let reps = net.representations(&random(1, 128 * 128, 2)).unwrap();
    assert_eq!(reps[0].rows(), 65);
    let (p, padded) = patchify(&random(40, 32, 1), PatchPadding::Repeat).unwrap();
    assert_eq!((p.rows(), padded), (6, true));
    assert_eq!(
        patchify(&random(40, 32, 1), PatchPadding::Truncate)
            .unwrap()
            .0
            .rows(),
        4
    );
    assert!(matches!(
        patchify(&random(16, 40, 1), PatchPadding::Repeat),
        Err(Error::Config(_))
    ));
    let seq = AstConfig {
        window_tokens: 10,
        embed: 16,
        layers: 1,
        heads: 2,
        head: AstHead::Seq,
        ..Default::default()
    };
    let net = Network::new(NetConfig::Ast(seq), 16, classes(3), 0).unwrap();
    assert_eq!(net.predict(&random(1, 160 * 16, 3)).unwrap().rows(), 10);
}

#[test]
fn padding_repeats_the_last_frame() {
    let spec = random(20, 16, 3);
    let (p, _) = patchify(&spec, PatchPadding::Repeat).unwrap();
    // second patch rows 4..16 are copies of frame 19
    for dt in 4..16 {
        assert_eq!(&p.row(1)[dt * 16..(dt + 1) * 16], spec.row(19));
    }
}

#[test]
fn patch_projection_is_local() {
    let net = tiny_ast(AstHead::Seq);
    let a = random(1, 32 * 32, 7);
    let mut b = a.clone();
    // frame 3, bin 20 sits in time column 0, band 1
    b.set(0, 3 * 32 + 20, 5.0);
    let (ea, eb) = (
        net.patch_embeddings(&a).unwrap(),
        net.patch_embeddings(&b).unwrap(),
    );
    for k in 0..ea.rows() {
        assert_eq!(ea.row(k) == eb.row(k), k != 1, "patch {k}");
    }
}

#[test]
fn attention_pooled_mean_is_permutation_invariant_without_positions() {
    let cfg = AstConfig {
        window_tokens: 3,
        embed: 16,
        layers: 2,
        heads: 2,
        head: AstHead::Seq,
        positional: false,
        ..Default::default()
    };
    let net = Network::new(NetConfig::Ast(cfg), 32, classes(1), 4).unwrap();
    let a = random(1, 48 * 32, 8);
    // swap the patch at (column 0, band 0) with the one at (column 2, band 1)
    let mut b = a.clone();
    for dt in 0..16 {
        for df in 0..16 {
            let (i, j) = (dt * 32 + df, (32 + dt) * 32 + 16 + df);
            let (u, v) = (a.get(0, i), a.get(0, j));
            b.set(0, i, v);
            b.set(0, j, u);
        }
    }
    let mean = |m: &Matrix| {
        (0..m.cols())
            .map(|c| m.column(c).iter().sum::<f64>() / m.rows() as f64)
            .collect::<Vec<_>>()
    };
    let (ra, rb) = (
        net.representations(&a).unwrap(),
        net.representations(&b).unwrap(),
    );
    for (x, y) in mean(&ra[0]).iter().zip(mean(&rb[0])) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn equal_patches_give_equal_sequence_outputs() {
    let cfg = AstConfig {
        window_tokens: 6,
        embed: 16,
        layers: 2,
        heads: 2,
        head: AstHead::Seq,
        positional: false,
        ..Default::default()
    };
    let net = Network::new(NetConfig::Ast(cfg), 32, classes(2), 4).unwrap();
    let patch: Vec<f64> = random(16, 16, 9).into_vec();
    let mut x = Matrix::zeros(1, 96 * 32);
    for t in 0..96 {
        for f in 0..32 {
            x.set(0, t * 32 + f, patch[(t % 16) * 16 + f % 16]);
        }
    }
    let p = net.predict(&x).unwrap();
    for r in 1..p.rows() {
        for c in 0..2 {
            assert!((p.get(r, c) - p.get(0, c)).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_maps_are_row_stochastic() {
    let net = tiny_ast(AstHead::Cls);
    let maps = net.attention(&random(1, 32 * 32, 1)).unwrap();
    assert_eq!(maps.len() * maps[0].len(), 2 * 4);
    for m in maps.iter().flatten() {
        assert_eq!(m.rows(), 5);
        for r in m.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    let single = AstConfig {
        window_tokens: 1,
        embed: 8,
        layers: 1,
        heads: 2,
        head: AstHead::Seq,
        ..Default::default()
    };
    let net = Network::new(NetConfig::Ast(single), 16, classes(1), 0).unwrap();
    let maps = net.attention(&random(1, 256, 2)).unwrap();
    assert!(maps[0].iter().all(|m| m.data() == [1.0]));
    let dir = tempfile::tempdir().unwrap();
    write_attention_csv(&dir.path().join("a.csv"), &maps).unwrap();
    assert!(tiny_mlp().attention(&random(1, 12, 0)).is_err());
}

#[test]
fn early_stop_trace() {
    let mut s = EarlyStopper::new(3, 1e-5, 3);
    let verdicts: Vec<_> = [0.5, 0.6, 0.7, 0.8, 0.9]
        .iter()
        .map(|&l| s.observe(l))
        .collect();
    assert_eq!(verdicts[..3], [None, None, None]);
    assert_eq!(verdicts[3], Some(StopReason::Diverged { best_epoch: 1 }));
    let mut s = EarlyStopper::new(3, 1e-5, 3);
    let v: Vec<_> = [0.5, 0.4, 0.4, 0.4, 0.4]
        .iter()
        .map(|&l| s.observe(l))
        .collect();
    assert_eq!(v[4], Some(StopReason::Converged));
    assert_eq!(v[3], None);
}

#[test]
fn ramp_factors() {
    let f = FineTune::default();
    let factors: Vec<f64> = (1..=14).map(|e| f.backbone_factor(e)).collect();
    assert!(factors[..10].iter().all(|&v| v == 0.0));
    assert_eq!(factors[10], 0.01);
    assert_eq!(factors[11], 0.505);
    assert_eq!(factors[12..], [1.0, 1.0]);
}

fn toy_data(n: usize, seed: u64) -> (Matrix, Matrix) {
    let x = random(n, 12, seed);
    let y = Matrix::from_vec(
        n,
        2,
        x.iter_rows()
            .flat_map(|r| {
                [
                    f64::from(u8::from(r[0] > 0.0)),
                    f64::from(u8::from(r[5] + r[7] > 0.0)),
                ]
            })
            .collect(),
    )
    .unwrap();
    (x, y)
}

#[test]
fn overfits_ten_samples() {
    let cfg = MlpConfig {
        context: 3,
        hidden: vec![32],
        dropout: 0.0,
        ..Default::default()
    };
    let mut net = Network::new(NetConfig::Mlp(cfg), 4, classes(2), 0).unwrap();
    let (x, y) = toy_data(10, 1);
    let sched = TrainSchedule {
        lr: 0.01,
        batch_size: 10,
        max_epochs: 2000,
        patience: 2000,
        convergence_epochs: 0,
        ..Default::default()
    };
    let out = train(&mut net, &(&x, &y), &(&x, &y), &sched).unwrap();
    assert!(net.loss(&x, &y).unwrap() < 0.01, "{:?}", out.history.last());
}

#[test]
fn frozen_backbone_then_ramp() {
    let mut net = tiny_mlp();
    let (x, y) = toy_data(16, 2);
    let (dx, dy) = toy_data(8, 3);
    let lr = 0.05;
    let sched = TrainSchedule {
        optimizer: Optimizer::Sgd,
        lr,
        batch_size: 16,
        max_epochs: 14,
        patience: 100,
        convergence_epochs: 0,
        fine_tune: Some(FineTune::default()),
        ..Default::default()
    };
    let start = net.backbone_values();
    let mut snaps = vec![net.clone()];
    train_observed(&mut net, &(&x, &y), &(&dx, &dy), &sched, &mut |_, n| {
        snaps.push(n.clone())
    })
    .unwrap();
    for s in &snaps[1..=10] {
        assert_eq!(s.backbone_values(), start);
    }
    assert_ne!(snaps[10].head_values(), snaps[0].head_values());
    // one full batch per epoch: the backbone step equals factor * lr * gradient
    for (epoch, factor) in [(11, 0.01), (12, 0.505), (13, 1.0)] {
        let before = &snaps[epoch - 1];
        let (_, g) = before.loss_and_grad(&x, &y, None).unwrap();
        let mut k = 0;
        for (p, gp) in before.params.items.iter().zip(&g.0) {
            let after = &snaps[epoch].params.items[k].value;
            k += 1;
            let f = if p.backbone { factor } else { 1.0 };
            for ((a, b), gv) in p.value.data().iter().zip(after.data()).zip(gp.data()) {
                assert_eq!(*b, a - f * lr * gv, "epoch {epoch} {}", p.name);
            }
        }
    }
}

#[test]
fn rewinds_to_best_dev_epoch() {
    let mut net = tiny_mlp();
    let (x, y) = toy_data(32, 4);
    let (dx, dy) = toy_data(16, 5);
    // a large step on a tiny dev set diverges quickly
    let sched = TrainSchedule {
        lr: 0.3,
        batch_size: 4,
        max_epochs: 60,
        ..Default::default()
    };
    let mut snaps = Vec::new();
    let out = train_observed(&mut net, &(&x, &y), &(&dx, &dy), &sched, &mut |_, n| {
        snaps.push(n.params.clone())
    })
    .unwrap();
    assert_eq!(net.params, snaps[out.best_epoch - 1]);
    let best = out
        .history
        .iter()
        .map(|r| r.dev_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.history[out.best_epoch - 1].dev_loss, best);
}

#[test]
fn training_is_deterministic() {
    let (x, y) = toy_data(40, 6);
    let (dx, dy) = toy_data(10, 7);
    let cfg = MlpConfig {
        context: 3,
        hidden: vec![8],
        dropout: 0.2,
        ..Default::default()
    };
    let run = || {
        let mut net = Network::new(NetConfig::Mlp(cfg.clone()), 4, classes(2), 3).unwrap();
        let sched = TrainSchedule {
            max_epochs: 5,
            batch_size: 8,
            lr: 0.01,
            seed: 11,
            ..Default::default()
        };
        train(&mut net, &(&x, &y), &(&dx, &dy), &sched)
            .unwrap()
            .history
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_loss_aborts() {
    let mut net = tiny_mlp();
    let (mut x, y) = toy_data(8, 1);
    x.set(0, 0, f64::NAN);
    let err = train(&mut net, &(&x, &y), &(&x, &y), &TrainSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
}

#[test]
fn export_import_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for net in [tiny_mlp(), tiny_cnn(), tiny_ast(AstHead::Seq)] {
        let p = dir.path().join("w.emd");
        net.save(&p).unwrap();
        let back = Network::load(&p).unwrap();
        let x = random(2, net.input_dim(), 3);
        assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 9]).unwrap();
        let mut target =
            Network::new(net.config().clone(), net.bins(), net.classes().to_vec(), 77).unwrap();
        let before = target.params.clone();
        assert!(matches!(
            target.import_weights_from(&p, ImportScope::All),
            Err(Error::Format(_))
        ));
        assert_eq!(target.params, before);
    }
}

#[test]
fn topology_mismatch_names_blocks() {
    let small = tiny_ast(AstHead::Seq);
    let cfg = AstConfig {
        window_tokens: 2,
        embed: 16,
        layers: 2,
        heads: 4,
        mlp_ratio: 2,
        head: AstHead::Seq,
        ..Default::default()
    };
    let mut other = Network::new(NetConfig::Ast(cfg), 32, classes(2), 0).unwrap();
    let before = other.params.clone();
    let err = other
        .import_weights(&small.to_container().unwrap(), ImportScope::All)
        .unwrap_err();
    match err {
        Error::Topology(items) => assert!(items
            .iter()
            .any(|s| s.starts_with("patch_embed.weight: expected 16x256"))),
        e => panic!("{e}"),
    }
    assert_eq!(other.params, before);
}

#[test]
fn heads_share_a_backbone() {
    let cls = tiny_ast(AstHead::Cls);
    let mut seq = tiny_ast(AstHead::Seq);
    let head_before = seq.head_values();
    seq.import_weights(&cls.to_container().unwrap(), ImportScope::Backbone)
        .unwrap();
    assert_eq!(seq.backbone_values(), cls.backbone_values());
    assert_eq!(seq.head_values(), head_before);
}

#[test]
fn token_target_pooling() {
    let grid = Matrix::from_rows(&[[0.0], [0.0], [1.0], [0.0], [0.0]]).unwrap();
    // tokens [0, .16), [.16, .32), [.32, .48)
    let t = token_targets(&grid, 0.0, 0.0, 3, 0.16);
    assert_eq!(t.column(0), vec![0.0, 1.0, 0.0]);
}
