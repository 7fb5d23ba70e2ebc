use super::*;
use crate::dataset::Generator;
use crate::solvers::Phi41Config;
use crate::testutil::Fixture;
use proptest::prelude::*;

fn tiny_data(samples: usize) -> Dataset {
    Generator::Phi41(Phi41Config {
        n_x: 16,
        t_end: 0.007,
        samples,
        ..Phi41Config::default()
    })
    .collect()
    .unwrap()
}

fn tiny_nspde() -> NspdeConfig {
    NspdeConfig {
        d_h: 4,
        width: 4,
        time_modes: 2,
        space_modes: vec![4],
        depth: 2,
        ..NspdeConfig::default()
    }
}

fn tiny_fno() -> FnoConfig {
    FnoConfig {
        d_h: 4,
        time_modes: 2,
        space_modes: vec![4],
        ..FnoConfig::default()
    }
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        train_n: Some(12),
        test_n: Some(4),
        ..TrainConfig::default()
    }
}

fn model(kind: ModelKind, task: Task, data: &Dataset) -> OperatorModel {
    OperatorModel::build(kind, task, tiny_nspde(), tiny_fno(), &data.meta).unwrap()
}

#[test]
fn l2_loss_examples() {
    let t = GridFunction::from_fn(&[2, 3], |i| (i[0] + i[1]) as f64);
    assert_eq!(l2_loss(&t, &t).unwrap(), 0.0);
    let ones = GridFunction::real(&[1, 2, 2], vec![1.0; 4]).unwrap();
    assert_eq!(l2_loss(&GridFunction::zeros(&[1, 2, 2]), &ones).unwrap(), 4.0);
    assert!(l2_loss(&t, &ones).is_err());
}

#[test]
fn l2_loss_matches_loop() {
    let mut fx = Fixture::new(1);
    let (p, t) = (fx.real(&[3, 2, 5]), fx.real(&[3, 2, 5]));
    let mut total = 0.0;
    for b in 0..3 {
        let mut s = 0.0;
        for c in 0..2 {
            for x in 0..5 {
                let i = (b * 2 + c) * 5 + x;
                s += (p.re()[i] - t.re()[i]).powi(2);
            }
        }
        total += s;
    }
    assert_eq!(l2_loss(&p, &t).unwrap(), total / 3.0);
}

#[test]
fn relative_l2_examples() {
    let t = Fixture::new(2).real(&[4, 6]);
    assert_eq!(relative_l2(&t, &t).unwrap(), 0.0);
    assert!((relative_l2(&GridFunction::zeros(&[4, 6]), &t).unwrap() - 1.0).abs() < 1e-15);
    let p = GridFunction::real(&[4, 6], t.re().iter().map(|v| 1.1 * v).collect()).unwrap();
    assert!((relative_l2(&p, &t).unwrap() - 0.1).abs() < 1e-14);
}

proptest! {
    #[test]
    fn relative_l2_is_scale_invariant(seed in 0u64..1000, a in 0.01f64..100.0) {
        let mut fx = Fixture::new(seed);
        let (p, t) = (fx.real(&[3, 7]), fx.real(&[3, 7]));
        let s = |g: &GridFunction| GridFunction::real(g.shape(), g.re().iter().map(|v| a * v).collect()).unwrap();
        let r0 = relative_l2(&p, &t).unwrap();
        prop_assert!((relative_l2(&s(&p), &s(&t)).unwrap() - r0).abs() < 1e-12 * r0.max(1.0));
        prop_assert!(l2_loss(&p, &t).unwrap() >= 0.0);
    }
}

#[test]
fn adam_first_step_is_lr() {
    let mut p = vec![Param::new("w", GridFunction::real(&[2], vec![1.0, -1.0]).unwrap())];
    p[0].grad = GridFunction::real(&[2], vec![3.0, -0.5]).unwrap();
    let mut adam = Adam::new(&p);
    adam.step(&mut p, 0.01);
    assert!((p[0].value.re()[0] - 0.99).abs() < 1e-6 * 0.01);
    assert!((p[0].value.re()[1] + 0.99).abs() < 1e-6 * 0.01);
}

#[test]
fn adam_ignores_zero_gradients() {
    let mut p = vec![
        Param::new("w", GridFunction::real(&[3], vec![1.0, 2.0, 3.0]).unwrap()),
        Param::new("k", Fixture::new(3).complex(&[2])),
    ];
    let before = p.clone();
    let mut adam = Adam::new(&p);
    for _ in 0..5 {
        adam.step(&mut p, 0.1);
    }
    assert_eq!(p, before);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let target = [0.1, -0.2, 0.15];
    let ztarget = crate::tensor::C64::new(0.05, -0.1);
    let mut p = vec![
        Param::new("w", GridFunction::zeros(&[3])),
        Param::new("z", GridFunction::complex_zeros(&[1])),
    ];
    let mut adam = Adam::new(&p);
    for step in 0..100 {
        // f = |w - w*|^2 + |z - z*|^2; dz stored in the halved convention
        let w = p[0].value.re().to_vec();
        for (g, (w, t)) in p[0].grad.re_mut().iter_mut().zip(w.iter().zip(target)) {
            *g = 2.0 * (w - t);
        }
        let z = p[1].value.cx()[0];
        p[1].grad.cx_mut()[0] = z - ztarget;
        let lr = 0.1 * 0.5f64.powi(step / 25);
        adam.step(&mut p, lr);
    }
    let dist: f64 = p[0].value.re().iter().zip(target).map(|(w, t)| (w - t).powi(2)).sum::<f64>()
        + (p[1].value.cx()[0] - ztarget).norm_sqr();
    assert!(dist.sqrt() < 1e-3, "distance {}", dist.sqrt());
}

#[test]
fn lr_halves_every_period() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-3);
    assert_eq!(cfg.lr_at(99), 1e-3);
    assert_eq!(cfg.lr_at(100), 5e-4);
    assert_eq!(cfg.lr_at(499), 1e-3 / 16.0);
}

#[test]
fn split_is_disjoint_sized_and_seeded() {
    let (a, b) = split(50, 30, 15, 4).unwrap();
    assert_eq!((a.len(), b.len()), (30, 15));
    assert!(a.iter().all(|i| !b.contains(i)));
    assert_eq!(split(50, 30, 15, 4).unwrap(), (a.clone(), b));
    assert_ne!(split(50, 30, 15, 5).unwrap().0, a);
    assert!(split(10, 8, 3, 0).is_err());
}

#[test]
fn default_split_is_eighty_twenty() {
    assert_eq!(TrainConfig::default().split_sizes(1200).unwrap(), (960, 240));
    let cfg = TrainConfig {
        train_n: Some(1000),
        test_n: Some(200),
        ..TrainConfig::default()
    };
    assert_eq!(cfg.split_sizes(1200).unwrap(), (1000, 200));
    assert!(cfg.split_sizes(1100).is_err());
}

#[test]
fn batch_layout() {
    let data = tiny_data(3);
    let b = make_batch(&data, &[2, 0], Task::U0xi).unwrap();
    assert_eq!(b.u_in.shape(), &[2, 1, 8, 16]);
    assert_eq!(b.u_in.re()[5 * 16 + 3], data.u_in.re()[2 * 16 + 3]);
    let xi = b.xi_dot.unwrap();
    assert_eq!(xi.re()[16 + 4], data.xi.re()[2 * 7 * 16 + 16 + 4] / 1e-3);
    assert!(xi.re()[7 * 16..8 * 16].iter().all(|v| *v == 0.0));
    assert_eq!(b.target.re()[..128], data.u_out.re()[2 * 128..3 * 128]);
    assert!(make_batch(&data, &[0], Task::U0).unwrap().xi_dot.is_none());
    assert!(make_batch(&data, &[3], Task::U0).is_err());
}

#[test]
fn fno_rejects_the_pair_task() {
    let data = tiny_data(2);
    let err = OperatorModel::build(ModelKind::Fno, Task::U0xi, tiny_nspde(), tiny_fno(), &data.meta).unwrap_err();
    assert!(err.to_string().contains("(u0, xi)"), "{err}");
    let cfg = TrainConfig {
        model: ModelKind::Fno,
        task: Task::U0xi,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn u0_task_drops_the_noise_branch() {
    let data = tiny_data(2);
    match model(ModelKind::Nspde, Task::U0, &data) {
        OperatorModel::Nspde(m) => assert!(m.g.is_none()),
        _ => unreachable!(),
    }
}

#[test]
fn zero_epochs_keeps_the_initialization() {
    let data = tiny_data(16);
    let mut m = model(ModelKind::Nspde, Task::Xi, &data);
    let init = m.clone();
    let metrics = train(&tiny_cfg(0), &mut m, &data, &mut |_| {}).unwrap();
    assert_eq!(m, init);
    assert_eq!(metrics.records.len(), 1);
    assert!(metrics.records[0].test_rel_l2.is_finite());
    assert_eq!(metrics.to_csv().lines().count(), 3);
}

#[test]
fn one_small_step_lowers_the_loss() {
    let data = tiny_data(16);
    for kind in [ModelKind::Nspde, ModelKind::Fno] {
        let mut m = model(kind, Task::Xi, &data);
        let cfg = TrainConfig {
            lr: 1e-4,
            batch_size: 12,
            model: kind,
            ..tiny_cfg(1)
        };
        let (train_idx, _) = split(16, 12, 4, cfg.seed).unwrap();
        let before = batch_loss(&m, &data, &train_idx, Task::Xi).unwrap();
        train(&cfg, &mut m, &data, &mut |_| {}).unwrap();
        let after = batch_loss(&m, &data, &train_idx, Task::Xi).unwrap();
        assert!(after < before, "{}: {after} >= {before}", kind.label());
    }
}

#[test]
fn training_is_reproducible() {
    let data = tiny_data(16);
    let run = || {
        let mut m = model(ModelKind::Nspde, Task::U0xi, &data);
        let metrics = train(&tiny_cfg(2), &mut m, &data, &mut |_| {}).unwrap();
        (metrics.to_csv(), m)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_eq!(a.lines().count(), 5);
}

#[test]
fn nan_loss_aborts_with_epoch() {
    let data = tiny_data(16);
    let mut m = model(ModelKind::Fno, Task::Xi, &data);
    if let OperatorModel::Fno(f) = &mut m {
        let b = f.proj.second.b;
        f.params[b].value.re_mut()[0] = f64::NAN;
    }
    let cfg = TrainConfig {
        model: ModelKind::Fno,
        ..tiny_cfg(3)
    };
    assert!(matches!(train(&cfg, &mut m, &data, &mut |_| {}), Err(Error::NanLoss { epoch: 1 })));
}

#[test]
fn mismatched_model_rejected() {
    let data = tiny_data(16);
    let mut m = model(ModelKind::Fno, Task::Xi, &data);
    assert!(train(&tiny_cfg(1), &mut m, &data, &mut |_| {}).is_err());
}
