//! Command-line pipeline: simulate -> downsample -> train -> recover /
//! baseline -> reconstruct -> evaluate, plus a gradient-check command.
//!
//! Every stage reads an [`ExperimentConfig`] (`--config`, overridable with
//! repeated `--set key=value`), writes its artifacts under `--out` and drops
//! a manifest with checksums beside them, so any stage can be re-run and
//! verified from its manifest alone. `SMFORGE_THREADS` caps the worker pool.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use smforge_core::baseline::{create_baseline, recover_matrix};
use smforge_core::dataset::build_dataset;
use smforge_core::error::Error;
use smforge_core::io::{
    load_sm, manifest_chain, save_sm, sha256_file, write_csv_matrix, write_pgm, write_reports,
    ExperimentConfig, Manifest, MANIFEST_NAME,
};
use smforge_core::loss::{create_loss, gradient_check, LOSS_NAMES};
use smforge_core::metric::{nrmse, psnr, MetricReport};
use smforge_core::model::{load_checkpoint, train};
use smforge_core::recon::{kaczmarz_solve, make_phantom, PhantomShape};
use smforge_core::sim::{add_noise, simulate_sm, simulate_voltage};
use smforge_core::sm::ScaleFactor;
use smforge_core::Result;

#[derive(Parser)]
#[command(name = "smforge", version, about = "System-matrix super-resolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. --set sim.gradient_x=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut overrides = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            overrides.push((k.to_string(), v.to_string()));
        }
        base.with_overrides(&overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the ground-truth system matrix (plus optional noise).
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stride-downsample a matrix file.
    Downsample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "in")]
        input: PathBuf,
        /// Scale factor; defaults to the config's scale.
        #[arg(long)]
        scale: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the super-resolution model on a simulated dataset directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding sm_hr.smf and its manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a trained checkpoint to a low-resolution matrix.
    Recover {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a classical recovery baseline (bicubic, strided, cs).
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        method: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scale: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a phantom image through a (recovered) system matrix.
    Reconstruct {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Matrix used for reconstruction.
        #[arg(long)]
        sm: PathBuf,
        /// Matrix generating the phantom voltages (defaults to --sm).
        #[arg(long)]
        source_sm: Option<PathBuf>,
        /// point | two_point | disk | letter_e
        #[arg(long)]
        phantom: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a recovered matrix against ground truth: nRMSE + error maps.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Restrict to the test split of the training manifest chain and
        /// refuse test-set contamination.
        #[arg(long)]
        split: Option<String>,
        /// Extra directories searched when walking the manifest chain.
        #[arg(long = "search-dir")]
        search_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic loss gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Entry point shared by the binary and the tests. Returns the exit code:
/// 0 success, 1 failed invariants or I/O, 2 usage errors.
pub fn run(args: &[String]) -> i32 {
    init_thread_pool();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (help/version go to stdout).
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("SMFORGE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // Ignore the error if a pool already exists (e.g. repeated
                // in-process invocations).
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { cfg, out } => cmd_simulate(&cfg.load()?, &out),
        Command::Downsample { cfg, input, scale, out } => {
            let cfg = cfg.load()?;
            let s = match scale {
                Some(v) => ScaleFactor::new(v)?,
                None => cfg.scale,
            };
            cmd_downsample(&cfg, &input, s, &out)
        }
        Command::Train { cfg, data, out } => cmd_train(&cfg.load()?, &data, &out),
        Command::Recover { cfg: _, checkpoint, input, out } => cmd_recover(&checkpoint, &input, &out),
        Command::Baseline { cfg, method, input, scale, out } => {
            let cfg = cfg.load()?;
            let s = match scale {
                Some(v) => ScaleFactor::new(v)?,
                None => cfg.scale,
            };
            cmd_baseline(&cfg, &method, &input, s, &out)
        }
        Command::Reconstruct { cfg, sm, source_sm, phantom, out } => {
            cmd_reconstruct(&cfg.load()?, &sm, source_sm.as_deref(), &phantom, &out)
        }
        Command::Evaluate { cfg: _, pred, gt, split, search_dirs, out } => {
            cmd_evaluate(&pred, &gt, split.as_deref(), &search_dirs, &out)
        }
        Command::Gradcheck { cfg, seed } => cmd_gradcheck(&cfg.load()?, seed),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut sm = simulate_sm(&cfg.sim)?;
    if let Some(snr) = cfg.noise_snr_db {
        sm = add_noise(&sm, snr, cfg.seed)?;
    }
    save_sm(&sm, &out.join("sm_hr.smf"))?;
    let mut manifest = Manifest::new("dataset", cfg.hash()?, cfg.seed);
    manifest.splits = Some(cfg.split.splits(sm.k())?);
    manifest.add_file(out, "sm_hr.smf")?;
    manifest.write(out)?;
    println!("simulated {} rows over a {}x{} grid -> {}", sm.k(), sm.grid().ny(), sm.grid().nx(), out.display());
    Ok(())
}

fn cmd_downsample(cfg: &ExperimentConfig, input: &Path, s: ScaleFactor, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let sm = load_sm(input)?;
    let lr = sm.downsample(s)?;
    save_sm(&lr, &out.join("sm_lr.smf"))?;
    let mut manifest = Manifest::new("downsample", cfg.hash()?, cfg.seed);
    manifest.scale_factors = vec![s.value() as u32];
    manifest.add_file(out, "sm_lr.smf")?;
    manifest.chain_parent(input)?;
    manifest.write(out)?;
    println!("downsampled {}x -> {}", s.value(), out.display());
    Ok(())
}

/// Splits come from the dataset manifest when present (enforcing the split
/// the data was declared with), else from the config rule.
fn dataset_splits(cfg: &ExperimentConfig, data: &Path, k: usize) -> Result<smforge_core::dataset::Splits> {
    let manifest_path = data.join(MANIFEST_NAME);
    if manifest_path.exists() {
        let manifest = Manifest::load(&manifest_path)?;
        if let Some(splits) = manifest.splits {
            splits.validate(k)?;
            return Ok(splits);
        }
    }
    cfg.split.splits(k)
}

fn cmd_train(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let sm = load_sm(&data.join("sm_hr.smf"))?;
    let splits = dataset_splits(cfg, data, sm.k())?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.scale = cfg.scale;
    let dataset = build_dataset(&sm, cfg.scale, cfg.train.rim_enabled, splits.clone())?;
    let (model, report) = train(&model_cfg, &cfg.train, &cfg.loss, &dataset, Some(out))?;
    let test_nrmse = if splits.test.is_empty() {
        None
    } else {
        Some(smforge_core::model::dataset_nrmse(&model, &dataset, &splits.test)?)
    };
    let mut reports = vec![MetricReport {
        name: format!("train_loss_{}", cfg.train.loss_name),
        value: report.final_loss(),
        per_row: None,
    }];
    if let Some((_, v)) = report.val_nrmse.last() {
        reports.push(MetricReport { name: "val_nrmse".into(), value: *v, per_row: None });
    }
    if let Some(v) = test_nrmse {
        reports.push(MetricReport { name: "test_nrmse".into(), value: v, per_row: None });
    }
    write_reports(&out.join("report.jsonl"), &reports)?;
    let mut manifest = Manifest::new("train", cfg.hash()?, cfg.train.rng_seed);
    manifest.scale_factors = vec![cfg.scale.value() as u32];
    manifest.splits = Some(splits);
    manifest.add_file(out, "checkpoint_final.smck")?;
    manifest.add_file(out, "curves.csv")?;
    manifest.add_file(out, "report.jsonl")?;
    manifest.chain_parent(&data.join("sm_hr.smf"))?;
    manifest.write(out)?;
    println!(
        "trained {} iterations ({}), final loss {:.6} -> {}",
        report.iterations_run,
        cfg.train.loss_name,
        report.final_loss(),
        out.display()
    );
    Ok(())
}

fn cmd_recover(checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (model, _meta) = load_checkpoint(checkpoint)?;
    let lr = load_sm(input)?;
    let start = std::time::Instant::now();
    let hr = model.recover(&lr)?;
    let elapsed = start.elapsed().as_secs_f64();
    save_sm(&hr, &out.join("sm_recovered.smf"))?;
    let mut manifest = Manifest::new("recover", sha256_file(checkpoint)?, 0);
    manifest.scale_factors = vec![model.cfg.scale.value() as u32];
    manifest.add_file(out, "sm_recovered.smf")?;
    // The checkpoint's training manifest comes first so its splits take
    // precedence when evaluation resolves the test rows.
    manifest.chain_parent(checkpoint)?;
    manifest.chain_parent(input)?;
    manifest.write(out)?;
    println!("recovered {} rows at {}x in {elapsed:.2}s -> {}", hr.k(), model.cfg.scale.value(), out.display());
    Ok(())
}

fn cmd_baseline(cfg: &ExperimentConfig, method: &str, input: &Path, s: ScaleFactor, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let ups = create_baseline(method, &cfg.cs)?;
    let lr = load_sm(input)?;
    let hr = recover_matrix(ups.as_ref(), &lr, s)?;
    let file = format!("sm_{method}.smf");
    save_sm(&hr, &out.join(&file))?;
    let mut manifest = Manifest::new("baseline", cfg.hash()?, cfg.seed);
    manifest.scale_factors = vec![s.value() as u32];
    manifest.add_file(out, &file)?;
    manifest.chain_parent(input)?;
    manifest.write(out)?;
    println!("{method} recovery at {}x -> {}", s.value(), out.display());
    Ok(())
}

fn parse_phantom(name: &str, grid: &smforge_core::Grid) -> Result<PhantomShape> {
    let (nx, ny) = (grid.nx(), grid.ny());
    match name {
        "point" => Ok(PhantomShape::Point { x: nx / 2, y: ny / 2 }),
        "two_point" => Ok(PhantomShape::TwoPoint { x1: nx / 3, y1: ny / 2, x2: 2 * nx / 3, y2: ny / 2 }),
        "disk" => Ok(PhantomShape::Disk {
            cx: (nx / 2) as f64,
            cy: (ny / 2) as f64,
            radius: nx as f64 / 6.0,
        }),
        "letter_e" => Ok(PhantomShape::LetterE),
        other => Err(Error::Config(format!(
            "unknown phantom '{other}', expected point|two_point|disk|letter_e"
        ))),
    }
}

fn cmd_reconstruct(
    cfg: &ExperimentConfig,
    sm_path: &Path,
    source_path: Option<&Path>,
    phantom_name: &str,
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let sm = load_sm(sm_path)?;
    let source = match source_path {
        Some(p) => load_sm(p)?,
        None => sm.clone(),
    };
    if source.grid() != sm.grid() {
        return Err(Error::ShapeMismatch("reconstruction and source grids differ".into()));
    }
    let shape = parse_phantom(phantom_name, sm.grid())?;
    let phantom = make_phantom(*sm.grid(), &shape)?;
    let u = simulate_voltage(&source, &phantom)?;
    let image = kaczmarz_solve(&sm, &u, &cfg.recon)?;
    write_pgm(&out.join("recon.pgm"), &image)?;
    write_csv_matrix(&out.join("recon.csv"), &image)?;
    write_pgm(&out.join("phantom.pgm"), phantom.concentration())?;
    let quality = psnr(&image, phantom.concentration())?;
    write_reports(&out.join("metrics.jsonl"), &[quality.clone()])?;
    let mut manifest = Manifest::new("reconstruct", cfg.hash()?, cfg.recon.seed);
    for f in ["recon.pgm", "recon.csv", "phantom.pgm", "metrics.jsonl"] {
        manifest.add_file(out, f)?;
    }
    manifest.chain_parent(sm_path)?;
    manifest.write(out)?;
    println!("reconstructed '{phantom_name}' with pSNR {:.2} dB -> {}", quality.value, out.display());
    Ok(())
}

fn cmd_evaluate(
    pred_path: &Path,
    gt_path: &Path,
    split: Option<&str>,
    search_dirs: &[PathBuf],
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let mut pred = load_sm(pred_path)?;
    let mut gt = load_sm(gt_path)?;

    if let Some(split_name) = split {
        if split_name != "test" {
            return Err(Error::Config(format!("only the test split can be evaluated, got '{split_name}'")));
        }
        let rows = test_rows_checked(pred_path, gt_path, search_dirs)?;
        pred = pred.select_rows(&rows)?;
        gt = gt.select_rows(&rows)?;
    }

    let report = nrmse(&pred, &gt)?;
    // Per-frequency CSV.
    let mut csv = String::from("row,bin,freq_hz,channel,nrmse\n");
    if let Some(per_row) = &report.per_row {
        for (k, v) in per_row.iter().enumerate() {
            let d = gt.freqs()[k];
            csv.push_str(&format!("{k},{},{},{},{v}\n", d.bin, d.freq_hz, d.channel));
        }
    }
    smforge_core::io::atomic_write(&out.join("nrmse_per_frequency.csv"), csv.as_bytes())?;
    // Error maps |pred - gt| per row, exact CSV plus normalized PGM.
    let maps = out.join("error_maps");
    ensure_dir(&maps)?;
    for k in 0..gt.k() {
        let p = pred.row_image(k)?;
        let g = gt.row_image(k)?;
        let err = ndarray::Array2::from_shape_fn((g.grid().ny(), g.grid().nx()), |(i, j)| {
            (p.values()[[i, j]] - g.values()[[i, j]]).norm()
        });
        write_pgm(&maps.join(format!("err_{k:04}.pgm")), &err)?;
        write_csv_matrix(&maps.join(format!("err_{k:04}.csv")), &err)?;
    }
    write_reports(&out.join("metrics.jsonl"), &[report.clone()])?;
    println!("nRMSE {:.6} over {} rows -> {}", report.value, gt.k(), out.display());
    Ok(())
}

/// Resolve the test rows for a prediction from its manifest chain and refuse
/// test-set contamination: no train-kind manifest in the chain may hold a
/// requested test row in its train or val split.
fn test_rows_checked(pred_path: &Path, gt_path: &Path, extra_dirs: &[PathBuf]) -> Result<Vec<usize>> {
    let pred_manifest = pred_path
        .parent()
        .map(|d| d.join(MANIFEST_NAME))
        .filter(|p| p.exists())
        .ok_or_else(|| Error::Config("--split needs a manifest next to --pred".into()))?;
    let mut dirs: Vec<PathBuf> = extra_dirs.to_vec();
    for p in [pred_path, gt_path] {
        if let Some(d) = p.parent() {
            dirs.push(d.to_path_buf());
        }
    }
    let chain = manifest_chain(&pred_manifest, &dirs)?;
    // Prefer the declared training split; fall back to any split in the chain.
    let rows = chain
        .iter()
        .filter(|m| m.kind == "train")
        .find_map(|m| m.splits.as_ref().map(|s| s.test.clone()))
        .or_else(|| chain.iter().find_map(|m| m.splits.as_ref().map(|s| s.test.clone())))
        .ok_or_else(|| Error::Config("no manifest in the chain declares splits".into()))?;
    for m in &chain {
        if m.kind == "train" {
            if let Some(s) = &m.splits {
                for r in &rows {
                    if s.train.contains(r) || s.val.contains(r) {
                        return Err(Error::Config(format!(
                            "test-set contamination: row {r} was used for training"
                        )));
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn cmd_gradcheck(cfg: &ExperimentConfig, seed: u64) -> Result<()> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut worst_overall: f64 = 0.0;
    println!("{:<8} {:>14} {:>8}", "loss", "max rel err", "status");
    for name in LOSS_NAMES {
        let loss = create_loss(name, &cfg.loss)?;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let pred = ndarray::Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
            let gt = ndarray::Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
            worst = worst.max(gradient_check(loss.as_ref(), &pred, &gt, 1e-5)?);
        }
        let status = if worst <= 1e-4 { "ok" } else { "FAIL" };
        println!("{name:<8} {worst:>14.3e} {status:>8}");
        worst_overall = worst_overall.max(worst);
    }
    if worst_overall > 1e-4 {
        return Err(Error::Contract(format!(
            "gradient check failed: max relative error {worst_overall:e} > 1e-4"
        )));
    }
    Ok(())
}
