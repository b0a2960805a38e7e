//! One-off probe of per-epoch canary gradient dynamics at several scales.

use memaudit::canary::render_glyph;
use memaudit::data::{synth, Split};
use memaudit::influence::{tracin_self_influence, CheckpointSet};
use memaudit::nn::Arch;
use memaudit::trainer::{train, CheckpointPolicy, TrainConfig};

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_000);
    let batch: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(128);
    let data = synth::glyph_classification(n, 13, 28, 28, 1, Split::Train).unwrap();
    let mut cfg = TrainConfig::for_arch(Arch::Mlp1);
    cfg.dataset = "synth".into();
    cfg.seed = 17;
    cfg.max_epochs = 12;
    cfg.patience = 10;
    cfg.batch_size = batch;
    cfg.checkpoint_policy = CheckpointPolicy::EveryEpoch;

    // Clean run: find a very low influence sample cheaply via the final
    // checkpoint only (proxy), then print full per-epoch terms for it.
    let run = train(&cfg, &data).unwrap();
    let all = CheckpointSet {
        checkpoints: run.checkpoints.clone(),
        cutoff_epoch: 0,
    };
    let mut scratch = run.model.clone();
    // Full-dataset influence at the selected TracInCP checkpoints.
    let history = run.train_loss_history();
    let picked = memaudit::influence::select_checkpoints(&history, 10);
    let selected = CheckpointSet {
        checkpoints: run
            .checkpoints
            .iter()
            .filter(|c| picked.contains(&c.epoch))
            .cloned()
            .collect(),
        cutoff_epoch: memaudit::influence::loss_cutoff_epoch(&history),
    };
    eprintln!("selected checkpoint epochs: {picked:?}");
    let recs = memaudit::influence::tracin_dataset(&mut scratch, &selected, &data, None).unwrap();
    let mut sorted: Vec<&memaudit::influence::InfluenceRecord> = recs.iter().collect();
    sorted.sort_by(|a, b| a.self_influence.partial_cmp(&b.self_influence).unwrap());
    eprintln!(
        "lowest five: {:?}",
        sorted[..5]
            .iter()
            .map(|r| (r.sample_index, format!("{:.1e}", r.self_influence)))
            .collect::<Vec<_>>()
    );
    eprintln!(
        "highest: {:?}",
        (format!("{:.1e}", sorted.last().unwrap().self_influence), sorted.last().unwrap().sample_index)
    );
    let lowest = sorted[0].sample_index;

    let before = tracin_self_influence(
        &mut scratch,
        &all,
        data.image(lowest),
        data.label(lowest),
        lowest,
    )
    .unwrap();
    println!(
        "n={n} batch={batch} lowest={lowest} label={} before terms (all epochs): {:?}",
        data.label(lowest),
        before
            .per_checkpoint
            .iter()
            .map(|v| format!("{v:.1e}"))
            .collect::<Vec<_>>()
    );

    let z_u = render_glyph('A').unwrap();
    let injected = memaudit::canary::build_canary_dataset(&data, lowest, &z_u).unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.canary_indices = vec![lowest];
    let run2 = train(&cfg2, &injected).unwrap();
    let all2 = CheckpointSet {
        checkpoints: run2.checkpoints.clone(),
        cutoff_epoch: 0,
    };
    let mut scratch2 = run2.model.clone();
    let after = tracin_self_influence(
        &mut scratch2,
        &all2,
        injected.image(lowest),
        injected.label(lowest),
        lowest,
    )
    .unwrap();
    println!(
        "after terms (all epochs): {:?}",
        after
            .per_checkpoint
            .iter()
            .map(|v| format!("{v:.1e}"))
            .collect::<Vec<_>>()
    );
    println!(
        "sum before={:.2e} after={:.2e} ratio={:.1e}",
        before.self_influence,
        after.self_influence,
        after.self_influence / before.self_influence.max(1e-300)
    );
}
