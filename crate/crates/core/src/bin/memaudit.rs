//! Command-line surface for the memorisation audit toolkit.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use memaudit::analysis::latent_localisation;
use memaudit::canary::{build_canary_dataset, build_probe_triple, render_glyph, PatchKind};
use memaudit::config::{
    config_hash, dataset_available, load_named_dataset, write_manifest, ExperimentConfig,
};
use memaudit::data::{make_ood_set, write_cifar10, write_idx, Dataset, Split};
use memaudit::influence::{
    loss_cutoff_epoch, rank_canaries, select_checkpoints, tracin_dataset, write_influence_csv,
    Checkpoint, CheckpointSet,
};
use memaudit::nn::{build_model, checkpoint, Mode, Model, ModelRegs};
use memaudit::score::{m_score, mw_score, ScoreMeta, TTestKind};
use memaudit::trainer::{evaluate, train_with_progress, write_run_dir};
use memaudit::{plot, report, Error};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "memaudit",
    about = "Detect and quantify unique-feature memorisation in image classifiers",
    version
)]
struct Cli {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (defaults to the CPU count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inject a glyph canary into one training image and write the dataset
    /// plus a side-by-side preview.
    Inject {
        /// Dataset name (mnist, fashion-mnist, cifar10, synth, synth-rgb).
        #[arg(long)]
        dataset: Option<String>,
        /// Training-set index of the canary image.
        #[arg(long)]
        index: Option<usize>,
        /// Glyph letter A-Z.
        #[arg(long)]
        letter: Option<char>,
    },
    /// Train a model per the experiment config into a run directory.
    Train,
    /// Compute the black-box M score of a completed run (and optionally the
    /// white-box score).
    Audit {
        /// Run directory produced by `train`.
        #[arg(long)]
        run_dir: PathBuf,
        /// Probe-set size (overrides the config's ood_n).
        #[arg(long)]
        n: Option<usize>,
        /// Use the paired t-test on per-image divergence differences.
        #[arg(long)]
        paired: bool,
        /// Additionally compute the white-box M_w score (needs training data
        /// access and the canary's label).
        #[arg(long)]
        white_box: bool,
    },
    /// Self-influence of every training sample at the TracInCP checkpoints.
    Influence {
        #[arg(long)]
        run_dir: PathBuf,
        /// Number of top/bottom canaries to select.
        #[arg(long, default_value_t = 15)]
        k: usize,
        /// Number of TracInCP checkpoints.
        #[arg(long, default_value_t = 10)]
        checkpoints: usize,
    },
    /// Characterisation analyses over one or more runs.
    Analyze {
        #[command(subcommand)]
        mode: AnalyzeMode,
    },
    /// Aggregate audit results into tables and figure analogues.
    Report {
        /// Directory holding results.csv (or run directories with one).
        #[arg(long)]
        experiment_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnalyzeMode {
    /// M score at every stored checkpoint of a run.
    Profile {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Seed-variation report over a results table.
    Seeds {
        /// results.csv with one row per (canary, seed) audit.
        #[arg(long)]
        results: PathBuf,
    },
    /// Latent localisation over an ensemble of completed runs.
    Latent {
        /// Directory whose immediate subdirectories are run dirs.
        #[arg(long)]
        experiment_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit(); // prints and exits 0
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("warning: could not set worker count: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for usage/config mistakes, 2 for runtime failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::UnknownArchitecture(_)
        | Error::UnsupportedGlyph(_)
        | Error::IndexOutOfRange { .. } => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Inject {
            dataset,
            index,
            letter,
        } => cmd_inject(&cfg, &cli.out, dataset, index, letter),
        Command::Train => cmd_train(&cfg, cli.config.as_deref(), &cli.out),
        Command::Audit {
            run_dir,
            n,
            paired,
            white_box,
        } => cmd_audit(&run_dir, n, paired, white_box, cli.seed),
        Command::Influence {
            run_dir,
            k,
            checkpoints,
        } => cmd_influence(&run_dir, k, checkpoints),
        Command::Analyze { mode } => match mode {
            AnalyzeMode::Profile { run_dir, n } => cmd_profile(&run_dir, n),
            AnalyzeMode::Seeds { results } => cmd_seeds(&results, &cli.out),
            AnalyzeMode::Latent { experiment_dir } => cmd_latent(&experiment_dir),
        },
        Command::Report { experiment_dir } => cmd_report(&experiment_dir),
    }
}

fn out_dir(cfg: &ExperimentConfig, cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_inject(
    cfg: &ExperimentConfig,
    cli_out: &Option<PathBuf>,
    dataset: Option<String>,
    index: Option<usize>,
    letter: Option<char>,
) -> Result<(), Error> {
    let dataset_name = dataset.unwrap_or_else(|| cfg.dataset.clone());
    let index = index
        .or(cfg.canary_index)
        .ok_or_else(|| Error::Config("no canary index given (--index or [canary] index)".into()))?;
    let letter = letter.unwrap_or(cfg.canary_letter);
    let patch = render_glyph(letter)?;
    let data = load_named_dataset(
        &dataset_name,
        cfg.dataset_root(&dataset_name).as_deref(),
        Split::Train,
        cfg.seed,
        cfg.limit,
    )?;
    let canary = build_canary_dataset(&data, index, &patch)?;

    let dir = out_dir(cfg, cli_out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let (h, w, c) = canary.shape();
    if c == 1 {
        write_idx(
            &canary,
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
        )?;
    } else {
        write_cifar10(&canary, &dir.join("data_batch_1.bin"))?;
    }
    let preview = plot::image_pair_svg(
        (data.image(index), "original"),
        (canary.image(index), "injected"),
        h,
        w,
        c,
        &format!("canary {index}: glyph {letter}"),
    );
    write(&dir.join("preview.svg"), &preview)?;
    let meta = serde_json::json!({
        "dataset": dataset_name,
        "index": index,
        "letter": letter,
        "label": canary.label(index),
        "patch_offset": patch.offset(),
        "patch_size": patch.size(),
    });
    write(&dir.join("canary.json"), &serde_json::to_string_pretty(&meta)?)?;
    println!(
        "wrote canary dataset ({} images) and preview to {}",
        canary.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(
    cfg: &ExperimentConfig,
    config_path: Option<&Path>,
    cli_out: &Option<PathBuf>,
) -> Result<(), Error> {
    let dir = out_dir(cfg, cli_out);
    if dir.join("report.json").exists() {
        eprintln!(
            "warning: {} already holds a completed run; leaving it unchanged",
            dir.display()
        );
        return Ok(());
    }
    let config_path = config_path.ok_or_else(|| Error::Config("train needs --config".into()))?;
    let config_text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;
    write_manifest(config_path, &config_text, &dir, &cfg.name)?;

    let base = cfg.load_train()?;
    let (data, train_cfg) = match cfg.canary_index {
        Some(index) => {
            let patch = render_glyph(cfg.canary_letter)?;
            (build_canary_dataset(&base, index, &patch)?, cfg.train_config()?)
        }
        None => (base, cfg.train_config()?),
    };
    eprintln!(
        "training {} on {} ({} images, seed {}, config {})",
        cfg.arch,
        cfg.dataset,
        data.len(),
        train_cfg.seed,
        &config_hash(&config_text)[..12],
    );
    let run = train_with_progress(&train_cfg, &data, |m| {
        eprintln!(
            "epoch {:>3}: train {:.4}  val {:.4}  acc {:.4}",
            m.epoch, m.train_loss, m.val_loss, m.val_acc
        );
    })?;
    write_run_dir(&run, &dir)?;

    // Test-split evaluation when the test files exist (synthetic always does).
    if dataset_available(&cfg.dataset, cfg.dataset_root(&cfg.dataset).as_deref()) {
        if let Ok(test) = cfg.load_test() {
            let (loss, acc) = evaluate(&run.model, &test, train_cfg.batch_size)?;
            let path = dir.join("test_metrics.json");
            write(
                &path,
                &serde_json::to_string_pretty(&serde_json::json!({
                    "test_loss": loss,
                    "test_acc": acc,
                }))?,
            )?;
            eprintln!("test: loss {loss:.4} acc {acc:.4}");
        }
    }
    println!(
        "run complete: best epoch {} (val acc {:.4}) in {:.1}s -> {}",
        run.best_epoch,
        run.metrics[run.best_epoch].val_acc,
        run.wall_secs,
        dir.display()
    );
    Ok(())
}

/// Load the run's config and rebuild its final model from final.maud.
fn load_run(run_dir: &Path) -> Result<(ExperimentConfig, Model<f32>), Error> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.cfg"))?;
    let arch = cfg.arch()?;
    let mut model: Model<f32> = build_model(
        arch,
        cfg.num_classes,
        ModelRegs {
            dropout: cfg.dropout,
            batchnorm: cfg.batchnorm,
        },
        0,
    )?;
    let final_path = run_dir.join("final.maud");
    if !final_path.exists() {
        return Err(Error::Checkpoint(format!(
            "{} has no final.maud; run `memaudit train` first",
            run_dir.display()
        )));
    }
    checkpoint::load_model(&mut model, &final_path)?;
    model.set_mode(Mode::Eval);
    Ok((cfg, model))
}

fn build_triple_for(
    cfg: &ExperimentConfig,
    model: &Model<f32>,
    n: Option<usize>,
) -> Result<memaudit::canary::ProbeTriple, Error> {
    let ood_source = cfg.load_ood_source()?;
    let n = n.unwrap_or(cfg.ood_n).min(ood_source.len());
    let target = model.input_shape();
    let ood = make_ood_set(&ood_source, (target.0, target.1, target.2), n, cfg.seed)?;
    let z_u = render_glyph(cfg.canary_letter)?;
    build_probe_triple(&ood, &z_u, cfg.seed)
}

fn cmd_audit(
    run_dir: &Path,
    n: Option<usize>,
    paired: bool,
    white_box: bool,
    seed_override: Option<u64>,
) -> Result<(), Error> {
    let (mut cfg, model) = load_run(run_dir)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let triple = build_triple_for(&cfg, &model, n)?;
    let kind = if paired { TTestKind::Paired } else { cfg.t_test };
    let meta = ScoreMeta {
        canary_id: cfg
            .canary_index
            .map_or("none".to_string(), |i| i.to_string()),
        dataset: cfg.dataset.clone(),
        model_id: cfg.arch.clone(),
        seed: cfg.seed,
    };
    let result = m_score(&model, &triple, kind, meta)?;
    let json_path = run_dir.join("mscore.json");
    write(&json_path, &serde_json::to_string_pretty(&result)?)?;
    result.append_csv(&run_dir.join("results.csv"))?;
    let hist = plot::histogram_svg(
        &[("X_u", &result.x_u), ("X_r", &result.x_r)],
        40,
        "per-image KL divergences",
        "KL divergence",
    );
    write(&run_dir.join("histogram.svg"), &hist)?;
    println!(
        "M = {:.6}  t = {:.3}  p = {:.4}  (n = {}, {})",
        result.m,
        result.t_stat,
        result.p_value,
        result.n,
        if paired { "paired" } else { "welch" }
    );

    if white_box {
        let index = cfg.canary_index.ok_or_else(|| {
            Error::Config("white-box audit needs [canary] index in the run config".into())
        })?;
        let train = cfg.load_train()?;
        let label = train.label(index);
        let members = train.indices_with_label(label);
        let d_y = train.subset(&members, "d_y");
        let z_u = render_glyph(cfg.canary_letter)?;
        let meta = ScoreMeta {
            canary_id: index.to_string(),
            dataset: cfg.dataset.clone(),
            model_id: cfg.arch.clone(),
            seed: cfg.seed,
        };
        let mw = mw_score(&model, &d_y, label, &z_u, cfg.seed, meta)?;
        write(&run_dir.join("mw.json"), &serde_json::to_string_pretty(&mw)?)?;
        println!(
            "M_w = {:.6}  mean P(y|x_u) = {:.4}  mean P(y|x_r) = {:.4}  (|D_y| = {})",
            mw.m_w,
            mw.mean_p_unique,
            mw.mean_p_random,
            mw.terms.len()
        );
    }
    Ok(())
}

/// Read the per-epoch checkpoints a run wrote to disk.
fn load_checkpoints(run_dir: &Path, learning_rate: f64) -> Result<Vec<Checkpoint>, Error> {
    let dir = run_dir.join("checkpoints");
    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    let rd = std::fs::read_dir(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(num) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".maud"))
        {
            let epoch: usize = num
                .parse()
                .map_err(|_| Error::Checkpoint(format!("unparseable checkpoint name {name}")))?;
            entries.push((epoch, entry.path()));
        }
    }
    entries.sort();
    let mut out = Vec::with_capacity(entries.len());
    for (epoch, path) in entries {
        let file =
            std::fs::File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let weights = checkpoint::read_tensors::<f32, _>(std::io::BufReader::new(file))?;
        out.push(Checkpoint {
            epoch,
            learning_rate,
            weights,
        });
    }
    if out.is_empty() {
        return Err(Error::Checkpoint(format!(
            "no checkpoints under {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn read_loss_history(run_dir: &Path) -> Result<Vec<f64>, Error> {
    let path = run_dir.join("metrics.csv");
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() >= 2 {
            out.push(fields[1].parse().map_err(|_| {
                Error::Checkpoint(format!("bad metrics row in {}", path.display()))
            })?);
        }
    }
    Ok(out)
}

fn cmd_influence(run_dir: &Path, k: usize, n_checkpoints: usize) -> Result<(), Error> {
    let (cfg, mut model) = load_run(run_dir)?;
    let all = load_checkpoints(run_dir, cfg.learning_rate)?;
    let history = read_loss_history(run_dir)?;
    let picked_epochs = select_checkpoints(&history, n_checkpoints);
    let set = CheckpointSet {
        checkpoints: all
            .into_iter()
            .filter(|c| picked_epochs.contains(&c.epoch))
            .collect(),
        cutoff_epoch: loss_cutoff_epoch(&history),
    };
    if set.checkpoints.is_empty() {
        return Err(Error::Checkpoint(
            "selected checkpoints are not on disk; retrain with checkpoint_policy = every-epoch"
                .into(),
        ));
    }
    // The same dataset the run trained on, canary included when configured.
    let base = cfg.load_train()?;
    let data = match cfg.canary_index {
        Some(index) => build_canary_dataset(&base, index, &render_glyph(cfg.canary_letter)?)?,
        None => base,
    };
    eprintln!(
        "tracing {} samples over {} checkpoints (cutoff epoch {})",
        data.len(),
        set.checkpoints.len(),
        set.cutoff_epoch
    );
    let records = tracin_dataset(&mut model, &set, &data, None)?;
    write_influence_csv(&records, &data, &run_dir.join("influence.csv"))?;
    let (top, bottom) = rank_canaries(&records, k)?;
    let selected = serde_json::json!({
        "k": k,
        "checkpoint_epochs": set.checkpoints.iter().map(|c| c.epoch).collect::<Vec<_>>(),
        "cutoff_epoch": set.cutoff_epoch,
        "learning_rate_note": "eta_i fixed to the configured base learning rate (Adam has no scalar step size)",
        "top": top,
        "bottom": bottom,
    });
    write(
        &run_dir.join("canaries.json"),
        &serde_json::to_string_pretty(&selected)?,
    )?;
    println!(
        "influence table: {} rows -> {}",
        records.len(),
        run_dir.join("influence.csv").display()
    );
    Ok(())
}

fn cmd_profile(run_dir: &Path, n: Option<usize>) -> Result<(), Error> {
    let (cfg, model) = load_run(run_dir)?;
    let checkpoints = load_checkpoints(run_dir, cfg.learning_rate)?;
    let triple = build_triple_for(&cfg, &model, n.or(Some(cfg.ood_n.min(500))))?;
    let meta = ScoreMeta {
        canary_id: cfg
            .canary_index
            .map_or("none".to_string(), |i| i.to_string()),
        dataset: cfg.dataset.clone(),
        model_id: cfg.arch.clone(),
        seed: cfg.seed,
    };
    let mut scratch = model.clone();
    let mut rows = Vec::new();
    for ck in &checkpoints {
        scratch.load_tensors(&ck.weights)?;
        let r = m_score(&scratch, &triple, cfg.t_test, meta.clone())?;
        rows.push((ck.epoch, r.m, r.p_value));
    }
    let mut csv = String::from("epoch,M,p_value\n");
    for (e, m, p) in &rows {
        csv.push_str(&format!("{e},{m},{p}\n"));
    }
    write(&run_dir.join("profile.csv"), &csv)?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|(e, m, _)| (*e as f64, *m)).collect();
    write(
        &run_dir.join("profile.svg"),
        &plot::line_svg(&pts, "M score during training", "epoch", "M"),
    )?;
    println!("profile over {} checkpoints -> {}", rows.len(), run_dir.display());
    Ok(())
}

fn cmd_seeds(results: &Path, cli_out: &Option<PathBuf>) -> Result<(), Error> {
    let text = std::fs::read_to_string(results)
        .map_err(|e| Error::io(results.display().to_string(), e))?;
    let rows = report::parse_results_csv(&text)?;
    let dir = cli_out
        .clone()
        .unwrap_or_else(|| results.parent().unwrap_or(Path::new(".")).to_path_buf());
    let ranges = report::seed_ranges(&rows)?;
    let mut csv = String::from("canary_id,min,max\n");
    for (c, lo, hi) in &ranges {
        csv.push_str(&format!("{c},{lo},{hi}\n"));
    }
    write(&dir.join("seed_ranges.csv"), &csv)?;
    write(
        &dir.join("seed_ranges.svg"),
        &plot::range_svg(&ranges, "M score range across seeds", "M"),
    )?;
    println!("seed ranges for {} canaries -> {}", ranges.len(), dir.display());
    Ok(())
}

fn cmd_latent(experiment_dir: &Path) -> Result<(), Error> {
    // Every immediate subdirectory holding a final.maud joins the ensemble.
    let mut run_dirs: Vec<PathBuf> = std::fs::read_dir(experiment_dir)
        .map_err(|e| Error::io(experiment_dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("final.maud").exists())
        .collect();
    run_dirs.sort();
    if run_dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no completed runs under {}",
            experiment_dir.display()
        )));
    }
    let mut models = Vec::new();
    let mut clean_images: Vec<f32> = Vec::new();
    let mut unique_images: Vec<f32> = Vec::new();
    let mut random_images: Vec<f32> = Vec::new();
    let mut shape = (0usize, 0usize, 0usize);
    for (i, rd) in run_dirs.iter().enumerate() {
        let (cfg, model) = load_run(rd)?;
        let index = cfg.canary_index.ok_or_else(|| {
            Error::InvalidArgument(format!("{} was trained without a canary", rd.display()))
        })?;
        let train = cfg.load_train()?;
        shape = train.shape();
        let (h, w, c) = shape;
        let clean = train.image(index).to_vec();
        let z_u = render_glyph(cfg.canary_letter)?;
        let unique = memaudit::canary::inject(&clean, h, w, c, &z_u)?;
        let zr = memaudit::canary::sample_random_patch(memaudit::rng::derive_seed(
            cfg.seed,
            "latent-zr",
            &[i as u64],
        ));
        let random = memaudit::canary::inject(&clean, h, w, c, &zr)?;
        clean_images.extend(clean);
        unique_images.extend(unique);
        random_images.extend(random);
        models.push(model);
    }
    let (h, w, c) = shape;
    let clean = Dataset::new("clean", Split::Probe, h, w, c, clean_images, None)?;
    let unique = Dataset::new("unique", Split::Probe, h, w, c, unique_images, None)?;
    let random = Dataset::new("random", Split::Probe, h, w, c, random_images, None)?;
    let unique_mask = latent_localisation(&models, &unique, &clean, PatchKind::Unique)?;
    let random_mask = latent_localisation(&models, &random, &clean, PatchKind::Random)?;

    let mut csv = String::from("unit,unique_mask,random_mask\n");
    for (i, (u, r)) in unique_mask
        .values
        .iter()
        .zip(&random_mask.values)
        .enumerate()
    {
        csv.push_str(&format!("{i},{u},{r}\n"));
    }
    write(&experiment_dir.join("latent_masks.csv"), &csv)?;
    write(
        &experiment_dir.join("latent_unique.svg"),
        &plot::bar_svg(
            &unique_mask.values,
            "unique-feature activation mask",
            "unit",
            "frequency",
        ),
    )?;
    write(
        &experiment_dir.join("latent_random.svg"),
        &plot::bar_svg(
            &random_mask.values,
            "random-feature activation mask",
            "unit",
            "frequency",
        ),
    )?;
    println!(
        "latent masks over {} models -> {}",
        models.len(),
        experiment_dir.display()
    );
    Ok(())
}

fn cmd_report(experiment_dir: &Path) -> Result<(), Error> {
    // A top-level results.csv, or the union of run-dir results.csv files.
    let mut rows = Vec::new();
    let top = experiment_dir.join("results.csv");
    if top.exists() {
        let text =
            std::fs::read_to_string(&top).map_err(|e| Error::io(top.display().to_string(), e))?;
        rows.extend(report::parse_results_csv(&text)?);
    } else {
        let rd = std::fs::read_dir(experiment_dir)
            .map_err(|e| Error::io(experiment_dir.display().to_string(), e))?;
        let mut paths: Vec<PathBuf> = rd
            .filter_map(|e| e.ok())
            .map(|e| e.path().join("results.csv"))
            .filter(|p| p.exists())
            .collect();
        paths.sort();
        for p in paths {
            let text =
                std::fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
            rows.extend(report::parse_results_csv(&text)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no audit results under {}",
            experiment_dir.display()
        )));
    }
    let md = report::render_markdown(&rows)?;
    write(&experiment_dir.join("report.md"), &md)?;
    write(
        &experiment_dir.join("summary.csv"),
        &report::render_summary_csv(&rows),
    )?;
    let ranges = report::seed_ranges(&rows).unwrap_or_default();
    if !ranges.is_empty() {
        write(
            &experiment_dir.join("seed_ranges.svg"),
            &plot::range_svg(&ranges, "M score range across seeds", "M"),
        )?;
    }
    println!(
        "report over {} audit rows -> {}",
        rows.len(),
        experiment_dir.join("report.md").display()
    );
    Ok(())
}
