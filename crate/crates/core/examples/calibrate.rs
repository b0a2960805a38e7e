//! Scale calibration for the acceptance experiments. Run with
//! `cargo run --release -p memaudit --example calibrate -- <phase>`.

use memaudit::canary::{build_probe_triple, inject_into, render_glyph, sample_random_patch, PatchKind};
use memaudit::data::{make_ood_set, synth, Dataset, Split};
use memaudit::influence::{select_checkpoints, tracin_dataset, tracin_self_influence, CheckpointSet};
use memaudit::nn::{build_model, Arch, Mode, Model, ModelRegs};
use memaudit::rng::{derive_seed, StreamRng};
use memaudit::score::{m_score, mw_score, ScoreMeta, TTestKind};
use memaudit::trainer::{train, CheckpointPolicy, TrainConfig};
use std::time::Instant;

fn probe_triple(n: usize, seed: u64) -> memaudit::canary::ProbeTriple {
    let src = synth::texture_probe_source(n, seed ^ 0xabc, 32, 32, 3).unwrap();
    let ood = make_ood_set(&src, (28, 28, 1), n, seed).unwrap();
    build_probe_triple(&ood, &render_glyph('A').unwrap(), seed).unwrap()
}

fn mlp_config(seed: u64, max_epochs: usize, patience: usize) -> TrainConfig {
    let mut c = TrainConfig::for_arch(Arch::Mlp1);
    c.dataset = "synth".into();
    c.seed = seed;
    c.max_epochs = max_epochs;
    c.patience = patience;
    c.checkpoint_policy = CheckpointPolicy::BestOnly;
    c
}

fn baseline() {
    let t0 = Instant::now();
    let data = synth::glyph_classification(10_000, 77, 28, 28, 1, Split::Train).unwrap();
    let test = synth::glyph_classification(2_000, 77, 28, 28, 1, Split::Test).unwrap();
    let cfg = mlp_config(1, 500, 10);
    let run = train(&cfg, &data).unwrap();
    let (loss, acc) = memaudit::trainer::evaluate(&run.model, &test, 256).unwrap();
    println!(
        "[mlp-baseline] epochs={} best={} val_acc={:.4} test_acc={:.4} test_loss={:.4} wall={:.1}s total={:.1}s",
        run.epochs_run,
        run.best_epoch,
        run.metrics[run.best_epoch].val_acc,
        acc,
        loss,
        run.wall_secs,
        t0.elapsed().as_secs_f64()
    );

    let t1 = Instant::now();
    let data = synth::glyph_classification(4_000, 78, 32, 32, 3, Split::Train).unwrap();
    let test = synth::glyph_classification(1_000, 78, 32, 32, 3, Split::Test).unwrap();
    let mut cfg = TrainConfig::for_arch(Arch::Cnn2);
    cfg.dataset = "synth-rgb".into();
    cfg.seed = 2;
    cfg.max_epochs = 20;
    cfg.patience = 5;
    cfg.batch_size = 128;
    cfg.checkpoint_policy = CheckpointPolicy::BestOnly;
    let run = train(&cfg, &data).unwrap();
    let (_, acc) = memaudit::trainer::evaluate(&run.model, &test, 256).unwrap();
    println!(
        "[cnn2-baseline] epochs={} val_acc={:.4} test_acc={:.4} wall={:.1}s total={:.1}s",
        run.epochs_run,
        run.metrics[run.best_epoch].val_acc,
        acc,
        run.wall_secs,
        t1.elapsed().as_secs_f64()
    );
}

fn null_calibration() {
    let t0 = Instant::now();
    let mut over = 0;
    let mut ms = Vec::new();
    for seed in 0..20u64 {
        let model: Model<f32> = build_model(Arch::Mlp1, 10, ModelRegs::default(), seed).unwrap();
        // A/A null: both probe sets get fresh per-image random patches.
        let src = synth::texture_probe_source(400, seed ^ 0xabc, 32, 32, 3).unwrap();
        let ood = make_ood_set(&src, (28, 28, 1), 400, seed).unwrap();
        let triple = memaudit::canary::build_null_probe_triple(&ood, seed).unwrap();
        let r = m_score(&model, &triple, TTestKind::Welch, ScoreMeta::default()).unwrap();
        if r.p_value > 0.05 {
            over += 1;
        }
        ms.push(r.m);
        println!("  seed {seed}: M={:+.6} p={:.3}", r.m, r.p_value);
    }
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let var = ms.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (ms.len() - 1) as f64;
    let se = (var / ms.len() as f64).sqrt();
    println!(
        "[null] p>0.05 in {over}/20, mean M = {mean:+.6} (2SE = {:.6}) wall={:.1}s",
        2.0 * se,
        t0.elapsed().as_secs_f64()
    );
}

fn escalation() {
    let t0 = Instant::now();
    let data = synth::glyph_classification(12_000, 99, 28, 28, 1, Split::Train).unwrap();
    let class0: Vec<usize> = data.indices_with_label(0);
    println!("class 0 count: {}", class0.len());
    let z_u = render_glyph('A').unwrap();
    for k in [1usize, 10, 100, 1000] {
        let mut ms = Vec::new();
        let mut ps = Vec::new();
        for seed in 0..5u64 {
            let mut injected = data.clone();
            let mut rng = StreamRng::stream(derive_seed(1000, "escalation", &[k as u64, seed]), "pick", &[]);
            let picks = rng.sample_indices(class0.len(), k);
            let targets: Vec<usize> = picks.iter().map(|p| class0[*p]).collect();
            let (h, w, c) = injected.shape();
            for &t in &targets {
                inject_into(injected.image_mut(t), h, w, c, &z_u).unwrap();
            }
            let mut cfg = mlp_config(derive_seed(7, "esc-seed", &[k as u64, seed]), 10, 4);
            cfg.canary_indices = targets;
            let run = train(&cfg, &injected).unwrap();
            let triple = probe_triple(800, 5);
            let r = m_score(&run.model, &triple, TTestKind::Welch, ScoreMeta::default()).unwrap();
            ms.push(r.m);
            ps.push(r.p_value);
        }
        let mut sorted = ms.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "[escalation] k={k:<5} median M={:+.6} Ms={:?} ps={:?} ({:.0}s)",
            sorted[2],
            ms.iter().map(|m| format!("{m:+.4}")).collect::<Vec<_>>(),
            ps.iter().map(|p| format!("{p:.2e}")).collect::<Vec<_>>(),
            t0.elapsed().as_secs_f64()
        );
    }
}

fn whitebox() {
    let t0 = Instant::now();
    let n_train = 4_000;
    let data = synth::glyph_classification(n_train, 55, 28, 28, 1, Split::Train).unwrap();

    // Select canaries by self-influence from one clean run.
    let mut cfg = mlp_config(3, 10, 4);
    cfg.checkpoint_policy = CheckpointPolicy::EveryEpoch;
    let run = train(&cfg, &data).unwrap();
    let history = run.train_loss_history();
    let picks = select_checkpoints(&history, 10);
    let set = CheckpointSet {
        checkpoints: run
            .checkpoints
            .iter()
            .filter(|c| picks.contains(&c.epoch))
            .cloned()
            .collect(),
        cutoff_epoch: memaudit::influence::loss_cutoff_epoch(&history),
    };
    let mut scratch = run.model.clone();
    let records = tracin_dataset(&mut scratch, &set, &data, None).unwrap();
    let (top, _) = memaudit::influence::rank_canaries(&records, 10).unwrap();
    println!("top-influence canaries: {top:?} ({:.0}s)", t0.elapsed().as_secs_f64());

    let z_u = render_glyph('A').unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut pos = 0;
    let mut neg = 0;
    let mut hit = 0;
    for &canary in &top {
        for seed in 0..5u64 {
            let injected = memaudit::canary::build_canary_dataset(&data, canary, &z_u).unwrap();
            let mut cfg = mlp_config(derive_seed(11, "wb", &[canary as u64, seed]), 10, 4);
            cfg.canary_indices = vec![canary];
            let run = train(&cfg, &injected).unwrap();
            let label = data.label(canary);
            let members = data.indices_with_label(label);
            let d_y = data.subset(&members, "d_y");
            let r = mw_score(&run.model, &d_y, label, &z_u, seed, ScoreMeta::default()).unwrap();
            if r.m_w > 0.0 {
                pos += 1;
            } else if r.m_w < 0.0 {
                neg += 1;
            }
            if r.m_w >= 0.05 && r.p_value < 0.05 {
                hit += 1;
            }
            best = best.max(r.m_w);
            println!(
                "  canary {canary} seed {seed}: M_w={:+.4} p={:.3} Pu={:.3} Pr={:.3}",
                r.m_w, r.p_value, r.mean_p_unique, r.mean_p_random
            );
        }
    }
    println!(
        "[whitebox] best M_w={best:+.4} hits(M_w>=0.05,p<0.05)={hit} pos={pos} neg={neg} wall={:.0}s",
        t0.elapsed().as_secs_f64()
    );
}

fn latent() {
    let t0 = Instant::now();
    let n_models = 20;
    let data = synth::glyph_classification(2_000, 21, 28, 28, 1, Split::Train).unwrap();
    let z_u = render_glyph('A').unwrap();
    let (h, w, c) = data.shape();
    let mut models = Vec::new();
    let mut clean_images = Vec::new();
    let mut unique_images = Vec::new();
    let mut random_images = Vec::new();
    let mut rng = StreamRng::new(31);
    for i in 0..n_models {
        let canary = rng.below(data.len());
        let injected = memaudit::canary::build_canary_dataset(&data, canary, &z_u).unwrap();
        // Fixed training seed across the ensemble; only the canary varies.
        let mut cfg = mlp_config(1234, 60, 10);
        cfg.canary_indices = vec![canary];
        let run = train(&cfg, &injected).unwrap();
        let clean = data.image(canary).to_vec();
        let unique = memaudit::canary::inject(&clean, h, w, c, &z_u).unwrap();
        let zr = sample_random_patch(derive_seed(91, "latent-zr", &[i as u64]));
        let random = memaudit::canary::inject(&clean, h, w, c, &zr).unwrap();
        clean_images.extend(clean);
        unique_images.extend(unique);
        random_images.extend(random);
        models.push(run.model);
        eprint!(".");
    }
    eprintln!();
    let clean = Dataset::new("c", Split::Probe, h, w, c, clean_images, None).unwrap();
    let unique = Dataset::new("u", Split::Probe, h, w, c, unique_images, None).unwrap();
    let random = Dataset::new("r", Split::Probe, h, w, c, random_images, None).unwrap();
    for m in &mut models {
        m.set_mode(Mode::Eval);
    }
    let mask_u =
        memaudit::analysis::latent_localisation(&models, &unique, &clean, PatchKind::Unique)
            .unwrap();
    let mask_r =
        memaudit::analysis::latent_localisation(&models, &random, &clean, PatchKind::Random)
            .unwrap();
    let mut qualifying = Vec::new();
    for (i, (u, r)) in mask_u.values.iter().zip(&mask_r.values).enumerate() {
        if *u >= 0.5 {
            qualifying.push((i, *u, *r));
        }
    }
    println!("[latent] units with unique>=0.5: {qualifying:?}");
    let hit = qualifying.iter().any(|(_, _, r)| *r <= 0.2);
    println!(
        "[latent] existence pattern satisfied: {hit} wall={:.0}s",
        t0.elapsed().as_secs_f64()
    );
}

fn influence_shift() {
    let t0 = Instant::now();
    let data = synth::glyph_classification(10_000, 13, 28, 28, 1, Split::Train).unwrap();
    let mut cfg = mlp_config(17, 60, 10);
    cfg.batch_size = 64;
    cfg.checkpoint_policy = CheckpointPolicy::EveryEpoch;
    let run = train(&cfg, &data).unwrap();
    let history = run.train_loss_history();
    let picks = select_checkpoints(&history, 10);
    let set = CheckpointSet {
        checkpoints: run
            .checkpoints
            .iter()
            .filter(|ck| picks.contains(&ck.epoch))
            .cloned()
            .collect(),
        cutoff_epoch: memaudit::influence::loss_cutoff_epoch(&history),
    };
    let mut scratch = run.model.clone();
    let records = tracin_dataset(&mut scratch, &set, &data, None).unwrap();
    let (_, bottom) = memaudit::influence::rank_canaries(&records, 1).unwrap();
    let lowest = bottom[0];
    let before_rec = records.iter().find(|r| r.sample_index == lowest).unwrap();
    let before = before_rec.self_influence;
    println!("before terms: {:?}", before_rec.per_checkpoint.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
    let max_influence = records
        .iter()
        .map(|r| r.self_influence)
        .fold(f64::NEG_INFINITY, f64::max);

    // Inject and retrain with the same seed.
    let z_u = render_glyph('A').unwrap();
    let injected = memaudit::canary::build_canary_dataset(&data, lowest, &z_u).unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.canary_indices = vec![lowest];
    let run2 = train(&cfg2, &injected).unwrap();
    let history2 = run2.train_loss_history();
    let picks2 = select_checkpoints(&history2, 10);
    let set2 = CheckpointSet {
        checkpoints: run2
            .checkpoints
            .iter()
            .filter(|ck| picks2.contains(&ck.epoch))
            .cloned()
            .collect(),
        cutoff_epoch: memaudit::influence::loss_cutoff_epoch(&history2),
    };
    let mut scratch2 = run2.model.clone();
    let after_rec = tracin_self_influence(
        &mut scratch2,
        &set2,
        injected.image(lowest),
        injected.label(lowest),
        lowest,
    )
    .unwrap();
    println!("after terms: {:?}", after_rec.per_checkpoint.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
    let after = after_rec.self_influence;
    println!(
        "[shift] sample {lowest}: before={before:.3e} after={after:.3e} ratio={:.1e} dataset_max={max_influence:.3e} wall={:.0}s",
        after / before.max(1e-300),
        t0.elapsed().as_secs_f64()
    );
}

fn main() {
    let phase = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    match phase.as_str() {
        "baseline" => baseline(),
        "null" => null_calibration(),
        "escalation" => escalation(),
        "whitebox" => whitebox(),
        "latent" => latent(),
        "shift" => influence_shift(),
        _ => {
            baseline();
            null_calibration();
            escalation();
            whitebox();
            latent();
            influence_shift();
        }
    }
}
