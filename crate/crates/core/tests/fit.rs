use cl4srec::corpus::Phase;
use cl4srec::encoder::EncoderHyper;
use cl4srec::evaluator::{evaluate, EvalConfig};
use cl4srec::synthetic::{planted, PlantedConfig, PLANTED_ITEM};
use cl4srec::trainer::{TrainConfig, TrainMode, Trainer};
use cl4srec::Scorer;

fn planted_setup(mode: TrainMode, epochs: usize) -> (Trainer<f32>, cl4srec::corpus::SplitDataset) {
    let data = planted(&PlantedConfig::default()).unwrap();
    let split = data.split();
    let hyper = EncoderHyper {
        dim: 32,
        ffn_dim: 32,
        max_len: 20,
        dropout: 0.1,
        ..EncoderHyper::new(data.num_items)
    };
    let config = TrainConfig {
        mode,
        batch_size: 32,
        lr: 0.005,
        max_epochs: epochs,
        patience: epochs,
        seed: 3,
        ..TrainConfig::default()
    };
    (Trainer::new(hyper, config, &split).unwrap(), split)
}

#[test]
fn planted_item_ranks_first() {
    let (mut trainer, split) = planted_setup(TrainMode::Cl4srec, 30);
    let mut losses = Vec::new();
    trainer
        .fit(&split, |_, line, _| {
            losses.push(line.main_loss);
            Ok(())
        })
        .unwrap();
    assert!(losses[4] < losses[0], "{losses:?}");
    let histories: Vec<_> = split.users.iter().map(|u| u.history(Phase::Test)).collect();
    let scores = trainer.encoder.score_histories(&histories).unwrap();
    let top1 = scores
        .rows()
        .into_iter()
        .filter(|row| {
            let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            best as u32 + 1 == PLANTED_ITEM
        })
        .count();
    let share = top1 as f64 / split.users.len() as f64;
    println!("planted top-1 share {share:.3}, losses {losses:?}");
    assert!(share > 0.9, "{share}");
    let report = evaluate(&trainer.encoder, &split, Phase::Test, &EvalConfig::default()).unwrap();
    assert!(report.is_monotone());
}

fn small_setup(mode: TrainMode, lambda: f64, augment: bool, epochs: usize) -> (Trainer<f64>, cl4srec::corpus::SplitDataset) {
    let data = planted(&PlantedConfig {
        users: 60,
        items: 25,
        seed: 21,
        ..PlantedConfig::default()
    })
    .unwrap();
    let split = data.split();
    let hyper = EncoderHyper {
        dim: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 8,
        max_len: 8,
        dropout: 0.2,
        ..EncoderHyper::new(data.num_items)
    };
    let mut config = TrainConfig {
        mode,
        batch_size: 16,
        max_epochs: epochs,
        patience: epochs,
        seed: 5,
        ..TrainConfig::default()
    };
    config.loss.lambda = lambda;
    if !augment {
        config.augment.clear();
    }
    (Trainer::new(hyper, config, &split).unwrap(), split)
}

fn state_of(t: &Trainer<f64>) -> String {
    let mut c = t.checkpoint();
    c.config.mode = TrainMode::Sasrec;
    c.config.loss.lambda = 0.0;
    c.config.augment.clear();
    c.to_json().unwrap()
}

#[test]
fn sasrec_equals_cl4srec_without_contrastive_branch() {
    let (mut a, split) = small_setup(TrainMode::Sasrec, 0.1, true, 3);
    let (mut b, _) = small_setup(TrainMode::Cl4srec, 0.0, true, 3);
    let (mut c, _) = small_setup(TrainMode::Cl4srec, 0.1, false, 3);
    for t in [&mut a, &mut b, &mut c] {
        t.fit(&split, |_, _, _| Ok(())).unwrap();
    }
    assert_eq!(state_of(&a), state_of(&b));
    assert_eq!(state_of(&a), state_of(&c));
}

#[test]
fn sasrec_aug_differs_but_never_computes_cl() {
    let (mut a, split) = small_setup(TrainMode::SasrecAug, 0.1, true, 1);
    let stats = a.train_epoch(&split).unwrap();
    assert_eq!(stats.cl_loss, 0.0);
    let (mut s, _) = small_setup(TrainMode::Sasrec, 0.1, true, 1);
    s.train_epoch(&split).unwrap();
    assert_ne!(a.encoder.params, s.encoder.params);
}

#[test]
fn total_is_main_plus_lambda_cl() {
    use cl4srec::encoder::Mode;
    use cl4srec::trainer::{batch_loss, build_batch};
    use rand::SeedableRng;
    let (t, split) = small_setup(TrainMode::Cl4srec, 0.1, true, 1);
    let users: Vec<_> = split.users.iter().take(16).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let batch = build_batch(&users, &t.config, split.num_items, t.encoder.hyper.max_len, &mut rng).unwrap();
    let l = batch_loss(&t.encoder, &batch, &t.config, Mode::Train { seed: 1 }).unwrap();
    assert!(l.cl > 0.0);
    assert_eq!(l.total, l.main + 0.1 * l.cl);
    let (mut s, _) = small_setup(TrainMode::Sasrec, 0.1, true, 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let batch = build_batch(&users, &s.config, split.num_items, 8, &mut rng).unwrap();
    assert!(batch.view_rows.is_empty());
    assert_eq!(batch.windows.len(), users.len());
    assert_eq!(s.train_epoch(&split).unwrap().cl_loss, 0.0);
}

#[test]
fn same_seed_same_epoch_losses() {
    let (mut a, split) = small_setup(TrainMode::Cl4srec, 0.1, true, 1);
    let (mut b, _) = small_setup(TrainMode::Cl4srec, 0.1, true, 1);
    assert_eq!(a.train_epoch(&split).unwrap(), b.train_epoch(&split).unwrap());
    assert_eq!(a.encoder.params, b.encoder.params);
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    let dir = std::env::temp_dir().join(format!("cl4srec-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("ckpt_last");

    let (mut full, split) = small_setup(TrainMode::Cl4srec, 0.1, true, 4);
    let full_log = full.fit(&split, |_, _, _| Ok(())).unwrap().log;

    let (mut first, _) = small_setup(TrainMode::Cl4srec, 0.1, true, 4);
    let mut saved = false;
    let _ = first.fit(&split, |t, line, _| {
        if line.epoch == 1 {
            t.checkpoint().save(&path).unwrap();
            saved = true;
            return Err(cl4srec::Error::InvalidArgument("interrupted".into()));
        }
        Ok(())
    });
    assert!(saved);
    let ckpt = cl4srec::trainer::Checkpoint::load(&path).unwrap();
    let mut resumed = Trainer::<f64>::from_checkpoint(&ckpt).unwrap();
    let rest = resumed.fit(&split, |_, _, _| Ok(())).unwrap().log;

    assert_eq!(rest.len(), 2);
    for (a, b) in full_log[2..].iter().zip(&rest) {
        assert_eq!((a.epoch, a.lr, a.main_loss, a.cl_loss, a.valid_ndcg10), (b.epoch, b.lr, b.main_loss, b.cl_loss, b.valid_ndcg10));
    }
    assert_eq!(full.checkpoint().to_json().unwrap(), resumed.checkpoint().to_json().unwrap());
    assert_eq!(full.best_encoder(), resumed.best_encoder());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn patience_zero_stops_on_first_miss() {
    let (mut t, split) = small_setup(TrainMode::Sasrec, 0.0, false, 10);
    t.config.patience = 0;
    let scores = [0.5, 0.4, 0.9, 0.9];
    let out = t.fit_with(&split, |_, e| Ok((0.0, scores[e])), |_, _, _| Ok(())).unwrap();
    assert_eq!(out.log.len(), 2);
    assert_eq!(out.best_epoch, Some(0));
}

#[test]
fn improving_metric_runs_to_max_epochs() {
    let (mut t, split) = small_setup(TrainMode::Sasrec, 0.0, false, 6);
    t.config.patience = 1;
    let mut best_params = None;
    let out = t
        .fit_with(
            &split,
            |_, e| Ok((0.0, e as f64)),
            |tr, _, improved| {
                if improved {
                    best_params = Some(tr.encoder.params.clone());
                }
                Ok(())
            },
        )
        .unwrap();
    assert_eq!(out.log.len(), 6);
    assert_eq!(out.best_epoch, Some(5));
    assert_eq!(Some(out.best.params), best_params);
}

#[test]
fn learning_rate_decays_linearly_per_step() {
    let (mut t, split) = small_setup(TrainMode::Sasrec, 0.0, false, 5);
    let schedule = t.schedule();
    let total = t.progress.total_steps;
    assert_eq!(total, 5 * 4);
    for step in 0..total {
        let lr = schedule.lr_at(step);
        assert!(lr >= 0.0);
        let linear = 1e-3 * (1.0 - step as f64 / total as f64);
        assert!((lr - linear.max(1e-4)).abs() < 1e-15);
        if (step as f64) <= 0.9 * total as f64 {
            assert!((lr - linear).abs() < 1e-15);
        }
    }
    let stats = t.train_epoch(&split).unwrap();
    assert_eq!(stats.batches, 4);
    assert_eq!(stats.lr, schedule.lr_at(3));
}
