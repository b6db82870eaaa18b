use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use direg::data::{load_cloud, write_dataset, EvalSet, Split, SplitSizes, SynthConfig, TrainingSet};
use direg::distill::{write_history, Bootstrap, DistillSchedule, TeacherMode, TrainConfig, TrainOutcome};
use direg::eval::{evaluate, register, EvalConfig, EvalReport, Matcher};
use direg::features::{load_checkpoint, param_init, save_checkpoint, Checkpoint};
use direg::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "direg", version, about = "Unsupervised point-cloud registration by self-distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (PLY clouds plus manifest.json).
    Generate(GenerateArgs),
    /// Train a descriptor network on a manifest's train and val splits.
    Train(TrainArgs),
    /// Register two cloud files and print the transform as JSON.
    Register(RegisterArgs),
    /// Score a matcher on a manifest split with ground truth.
    Eval(EvalArgs),
    /// Run the ablation grid over seeds and write a CSV table.
    Ablate(AblateArgs),
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Voxel size; defaults to 0.1 in 3D and 0.5 in 2D.
    #[arg(long)]
    voxel_size: Option<f64>,
    /// Inlier threshold, default 2 × voxel size.
    #[arg(long)]
    tau1: Option<f64>,
    /// Label refinement threshold, default 2 × voxel size.
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    ransac_iters: usize,
    #[arg(long)]
    use_icp: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn voxel(&self, dim: usize) -> f64 {
        self.voxel_size.unwrap_or(if dim == 2 { 0.5 } else { 0.1 })
    }

    fn eval_config(&self, dim: usize) -> EvalConfig {
        let v = self.voxel(dim);
        let mut cfg = EvalConfig::for_voxel(v, dim);
        cfg.ransac.max_iterations = self.ransac_iters;
        cfg.ransac.seed = self.seed;
        if let Some(t) = self.tau1 {
            cfg.ransac.inlier_threshold = t;
            cfg.thresholds.tau1 = t;
        }
        if let Some(t) = self.tau2 {
            cfg.refine.refine_threshold = t;
        }
        cfg.refine.use_icp = self.use_icp;
        cfg
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = parse_dim)]
    dim: usize,
    #[arg(long, default_value_t = 40)]
    n_train: usize,
    #[arg(long, default_value_t = 10)]
    n_val: usize,
    #[arg(long, default_value_t = 10)]
    n_test: usize,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    overlap_min: Option<f64>,
    #[arg(long)]
    overlap_max: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    outliers: Option<f64>,
    /// Extra per-point feature channels.
    #[arg(long)]
    features: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Direg,
    DiregShared,
    Sgp,
    EyocAug,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BootstrapArg {
    Random,
    Fpfh,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Mode::Direg)]
    mode: Mode,
    #[arg(long, default_value_t = 0.9)]
    alpha_start: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_end: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = BootstrapArg::Random)]
    bootstrap: BootstrapArg,
    /// Reject pseudo-labels below this IR; 0 disables the verifier.
    #[arg(long, default_value_t = 0.0)]
    verifier_threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Label refresh period for `--mode sgp`.
    #[arg(long, default_value_t = 1)]
    refresh_every: usize,
}

impl TrainFlags {
    fn configs(&self, dim: usize) -> (TrainConfig, DistillSchedule) {
        let v = self.solver.voxel(dim);
        let mut cfg = TrainConfig::for_voxel(v, dim);
        cfg.epochs = self.epochs;
        cfg.seed = self.solver.seed;
        cfg.learning_rate = self.learning_rate;
        cfg.ransac.max_iterations = self.solver.ransac_iters;
        if let Some(t) = self.solver.tau1 {
            cfg.ransac.inlier_threshold = t;
        }
        if let Some(t) = self.solver.tau2 {
            cfg.refine.refine_threshold = t;
        }
        cfg.refine.use_icp = self.solver.use_icp;
        cfg.verifier_threshold = self.verifier_threshold;
        cfg.augment_teacher = self.mode == Mode::EyocAug;
        cfg.bootstrap = match self.bootstrap {
            BootstrapArg::Random => Bootstrap::RandomTeacher,
            BootstrapArg::Fpfh => Bootstrap::Fpfh,
        };
        let mode = match self.mode {
            Mode::Direg | Mode::EyocAug => TeacherMode::ContinuousEma,
            Mode::DiregShared => TeacherMode::Shared,
            Mode::Sgp => TeacherMode::PeriodicSgp,
        };
        let schedule = DistillSchedule {
            alpha_start: self.alpha_start,
            alpha_end: self.alpha_end,
            refresh_every_epochs: self.refresh_every,
            ..DistillSchedule::new(mode, 0)
        };
        (cfg, schedule)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for checkpoints and history.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_dim)]
    dim: Option<usize>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct RegisterArgs {
    a: PathBuf,
    b: PathBuf,
    /// Network checkpoint; FPFH descriptors are used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Network checkpoint; FPFH descriptors are used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_parser = parse_dim)]
    dim: Option<usize>,
    /// Report path; the CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Direg,
    EyocAug,
    DiregShared,
    Sgp,
    Verifier,
    Icp,
    Untrained,
    Fpfh,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "direg,eyoc-aug,direg-shared,verifier,icp,untrained,fpfh")]
    variants: Vec<Variant>,
    #[command(flatten)]
    flags: TrainFlags,
}

fn parse_dim(s: &str) -> std::result::Result<usize, String> {
    match s {
        "2" => Ok(2),
        "3" => Ok(3),
        _ => Err(format!("dimension must be 2 or 3, got {s}")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn check_dim(expected: Option<usize>, actual: usize) -> Result<()> {
    match expected {
        Some(d) if d != actual => Err(Error::DimensionMismatch { expected: d, actual }),
        _ => Ok(()),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::InvalidConfig(format!("unknown split {s:?}"))),
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let base = SynthConfig::for_dim(args.dim);
    let cfg = SynthConfig {
        points_per_cloud: args.points.unwrap_or(base.points_per_cloud),
        overlap_min: args.overlap_min.unwrap_or(base.overlap_min),
        overlap_max: args.overlap_max.unwrap_or(base.overlap_max),
        noise_sigma: args.noise.unwrap_or(base.noise_sigma),
        outlier_fraction: args.outliers.unwrap_or(base.outlier_fraction),
        feature_channels: args.features.unwrap_or(base.feature_channels),
        seed: args.seed,
        ..base
    };
    let sizes = SplitSizes {
        train: args.n_train,
        val: args.n_val,
        test: args.n_test,
    };
    let manifest = write_dataset(&args.out, &cfg, sizes)?;
    println!("{}", serde_json::json!({ "manifest": manifest, "pairs": sizes.total() }));
    Ok(())
}

fn save_outcome(dir: &Path, out: &TrainOutcome, cfg: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let ckpt = |p| Checkpoint::new(p, cfg.encoding.clone(), cfg.voxel_size, cfg.normalize);
    save_checkpoint(&dir.join("student.json"), &ckpt(out.student.clone()))?;
    save_checkpoint(&dir.join("teacher.json"), &ckpt(out.teacher.clone()))?;
    save_checkpoint(&dir.join("best.json"), &ckpt(out.best_student.clone()))?;
    write_text(&dir.join("optimizer.json"), &serde_json::to_string(&out.optimizer)?)?;
    let mut hist = create(&dir.join("history.csv"))?;
    write_history(&mut hist, &out.history)?;
    hist.flush().map_err(|e| Error::Io {
        path: dir.join("history.csv"),
        source: e,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let set = TrainingSet::load(&args.manifest)?;
    check_dim(args.dim, set.dim)?;
    let (cfg, schedule) = args.flags.configs(set.dim);
    let out = direg::distill::train_loop(&set, &cfg, &schedule)?;
    save_outcome(&args.out, &out, &cfg)?;
    #[derive(Serialize)]
    struct Summary {
        best_epoch: usize,
        initial_val_fmr: f64,
        final_val_fmr: Option<f64>,
        epochs: usize,
    }
    let summary = Summary {
        best_epoch: out.best_epoch,
        initial_val_fmr: out.initial_val_fmr,
        final_val_fmr: out.history.last().map(|h| h.val_fmr_unsup),
        epochs: out.history.len(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_register(args: &RegisterArgs) -> Result<()> {
    let a = load_cloud(&args.a)?;
    let b = load_cloud(&args.b)?;
    let ckpt = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut cfg = args.solver.eval_config(a.dim());
    if let (Some(c), None) = (&ckpt, args.solver.voxel_size) {
        let v = c.voxel_size;
        cfg = SolverArgs {
            voxel_size: Some(v),
            ..args.solver.clone()
        }
        .eval_config(a.dim());
    }
    let matcher = match &ckpt {
        Some(c) => Matcher::Net(c),
        None => Matcher::Fpfh,
    };
    let reg = register(&a, &b, &matcher, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&reg)?);
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    write_text(out, &report.to_json()?)?;
    let csv_path = out.with_extension("csv");
    let mut csv = create(&csv_path)?;
    report.write_csv(&mut csv)?;
    csv.flush().map_err(|e| Error::Io {
        path: csv_path,
        source: e,
    })
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let set = EvalSet::load(&args.manifest, parse_split(&args.split)?)?;
    check_dim(args.dim, set.dim)?;
    let ckpt = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let solver = SolverArgs {
        voxel_size: args.solver.voxel_size.or(ckpt.as_ref().map(|c| c.voxel_size)),
        ..args.solver.clone()
    };
    let cfg = solver.eval_config(set.dim);
    let matcher = match &ckpt {
        Some(c) => Matcher::Net(c),
        None => Matcher::Fpfh,
    };
    let report = evaluate(&set, &matcher, &cfg)?;
    write_report(&report, &args.out)?;
    println!("{}", serde_json::to_string(&report.aggregates)?);
    Ok(())
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Direg => "direg",
        Variant::EyocAug => "eyoc-aug",
        Variant::DiregShared => "direg-shared",
        Variant::Sgp => "sgp",
        Variant::Verifier => "verifier",
        Variant::Icp => "icp",
        Variant::Untrained => "untrained",
        Variant::Fpfh => "fpfh",
    }
}

/// First epoch whose validation FMR reaches `level`; 0 when the initial
/// model already does.
fn epoch_reaching(out: &TrainOutcome, level: f64) -> Option<usize> {
    if out.initial_val_fmr >= level {
        return Some(0);
    }
    out.history.iter().find(|h| h.val_fmr_unsup >= level).map(|h| h.epoch)
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let train = TrainingSet::load(&args.manifest)?;
    let test = EvalSet::load(&args.manifest, Split::Test)?;
    let mut table = create(&args.out)?;
    let io = |e| Error::Io {
        path: args.out.clone(),
        source: e,
    };
    writeln!(table, "variant,seed,rr,fmr_gt,fmr_unsup,mean_ir_gt,best_epoch,epoch_fmr_half").map_err(io)?;
    for &seed in &args.seeds {
        for &variant in &args.variants {
            let mut flags = args.flags.clone();
            flags.solver.seed = seed;
            match variant {
                Variant::EyocAug => flags.mode = Mode::EyocAug,
                Variant::DiregShared => flags.mode = Mode::DiregShared,
                Variant::Sgp => flags.mode = Mode::Sgp,
                Variant::Verifier => flags.verifier_threshold = 0.3,
                Variant::Icp => flags.solver.use_icp = true,
                _ => {}
            }
            let (cfg, schedule) = flags.configs(train.dim);
            let mut ecfg = flags.solver.eval_config(train.dim);
            ecfg.refine.use_icp = variant == Variant::Icp;
            let (report, trained) = match variant {
                Variant::Fpfh => (evaluate(&test, &Matcher::Fpfh, &ecfg)?, None),
                Variant::Untrained => {
                    let k = train.train[0].a.num_features();
                    let params = param_init(&cfg.layer_dims(k), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
                    let ckpt = Checkpoint::new(params, cfg.encoding.clone(), cfg.voxel_size, cfg.normalize);
                    (evaluate(&test, &Matcher::Net(&ckpt), &ecfg)?, None)
                }
                _ => {
                    let out = direg::distill::train_loop(&train, &cfg, &schedule)?;
                    let ckpt = Checkpoint::new(out.best_student.clone(), cfg.encoding.clone(), cfg.voxel_size, cfg.normalize);
                    (evaluate(&test, &Matcher::Net(&ckpt), &ecfg)?, Some(out))
                }
            };
            let a = &report.aggregates;
            let best = trained.as_ref().map(|o| o.best_epoch.to_string()).unwrap_or_default();
            let half = trained
                .as_ref()
                .and_then(|o| epoch_reaching(o, 0.5))
                .map(|e| e.to_string())
                .unwrap_or_default();
            writeln!(
                table,
                "{},{},{:?},{:?},{:?},{:?},{},{}",
                variant_name(variant),
                seed,
                a.rr,
                a.fmr_gt,
                a.fmr_unsup,
                a.mean_ir_gt,
                best,
                half
            )
            .map_err(io)?;
        }
    }
    table.flush().map_err(io)
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Register(a) => cmd_register(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), e.exit_code() as u8),
    }
}
