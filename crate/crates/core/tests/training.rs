use bcmem::data::{stratified_split_indices, Dataset, CLASSES, PIXELS};
use bcmem::quad_reg::QuadLossMode;
use bcmem::train::{checkpoint_bytes, evaluate, extract_embeddings, train_on, TrainConfig};
use bcmem::Error;

fn synthetic(n: usize) -> Dataset {
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let labels: Vec<u8> = (0..n).map(|i| (i % CLASSES) as u8).collect();
    for (i, &c) in labels.iter().enumerate() {
        for p in 0..PIXELS {
            let col = p % 28;
            let lit = (2 * c as usize + 3..2 * c as usize + 6).contains(&col);
            let noise = ((i * 131 + p * 71) % 47) as u8;
            pixels.push(if lit { 200 + noise } else { noise });
        }
    }
    Dataset::new(pixels, labels).unwrap()
}

fn splits() -> (Dataset, Dataset) {
    let full = synthetic(400);
    let (t, v) = stratified_split_indices(full.labels(), 100, 3).unwrap();
    (full.subset(&t), full.subset(&v))
}

fn config(lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 32,
        lambda,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn best_checkpoint_has_lowest_validation_loss() {
    let (train, val) = splits();
    let mut seen = 0;
    let outcome = train_on(&config(0.1), &train, &val, |r| {
        assert_eq!(r.epoch, seen);
        assert!(r.train_task_loss.is_finite() && r.train_quad_loss.is_finite());
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(outcome.reports.len(), 3);
    assert!(outcome.reports.iter().all(|r| outcome.best_val_loss <= r.val_loss));
    assert_eq!(outcome.reports[outcome.best_epoch].val_loss, outcome.best_val_loss);
    // learning rate never increases
    assert!(outcome.reports.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert_eq!(outcome.reports[0].lr, 1e-3);
}

#[test]
fn zero_lambda_reports_zero_regularizer() {
    let (train, val) = splits();
    let outcome = train_on(&config(0.0), &train, &val, |_| Ok(())).unwrap();
    for r in &outcome.reports {
        assert_eq!(r.train_quad_loss, 0.0);
        assert_eq!(r.val_quad_loss, 0.0);
        assert_eq!(r.val_loss, r.val_task_loss);
    }
    // mode none is the same baseline arm
    let none = TrainConfig { mode: QuadLossMode::None, lambda: 0.1, ..config(0.0) };
    let other = train_on(&none, &train, &val, |_| Ok(())).unwrap();
    let strip = |r: &bcmem::train::EpochReport| (r.train_task_loss, r.val_task_loss, r.val_accuracy);
    let a: Vec<_> = outcome.reports.iter().map(strip).collect();
    let b: Vec<_> = other.reports.iter().map(strip).collect();
    assert_eq!(a, b);
}

#[test]
fn training_is_deterministic() {
    let (train, val) = splits();
    let cfg = config(0.1);
    let a = train_on(&cfg, &train, &val, |_| Ok(())).unwrap();
    let b = train_on(&cfg, &train, &val, |_| Ok(())).unwrap();
    assert_eq!(checkpoint_bytes(&cfg, &a).unwrap(), checkpoint_bytes(&cfg, &b).unwrap());
}

#[test]
fn patience_stops_early() {
    let (train, val) = splits();
    let cfg = TrainConfig { epochs: 30, patience: 1, lr: 1e-9, ..config(0.0) };
    let outcome = train_on(&cfg, &train, &val, |_| Ok(())).unwrap();
    assert!(outcome.reports.len() < 30);
}

#[test]
fn divergence_names_a_tensor() {
    let (train, val) = splits();
    let cfg = TrainConfig { lr: 1e150, epochs: 2, ..config(0.1) };
    match train_on(&cfg, &train, &val, |_| Ok(())) {
        Err(Error::NonFinite { tensor, .. }) => assert!(!tensor.is_empty()),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e150 did not diverge"),
    }
}

#[test]
fn evaluation_bounds_and_export_shape() {
    let (train, val) = splits();
    let mut outcome = train_on(&config(0.1), &train, &val, |_| Ok(())).unwrap();
    let report = evaluate(&mut outcome.best, &val, QuadLossMode::Cube).unwrap();
    assert!((0.0..=1.0).contains(&report.accuracy));
    assert!(report.residual >= 0.0);
    assert_eq!(report.samples, val.len());
    let rows = extract_embeddings(&mut outcome.best, &val).unwrap();
    assert_eq!(rows.len(), val.len());
    assert!(rows.iter().zip(val.labels()).all(|(r, l)| r.label == *l));
    assert!(rows.iter().all(|r| r.z.iter().all(|v| v.is_finite())));
}

#[test]
fn synthetic_classes_are_learnable() {
    let (train, val) = splits();
    let cfg = TrainConfig { epochs: 4, ..config(0.0) };
    let outcome = train_on(&cfg, &train, &val, |_| Ok(())).unwrap();
    let last = outcome.reports.last().unwrap();
    assert!(last.val_accuracy > 0.5, "{last:?}");
}
