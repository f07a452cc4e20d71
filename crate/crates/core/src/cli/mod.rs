//! Command-line driver: corpus preparation, training, prediction,
//! evaluation, gradient checks and ablations.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{
    evaluate, evaluate_checkpoint, predict_frames, zero_velocity_report, EvalOptions, HorizonReport, DEFAULT_EVAL_SEED,
    DEFAULT_NUM_SEQUENCES,
};
use crate::mocap::dataset::{write_corpus, STATS_FILE};
use crate::mocap::synth::{generate, SynthConfig};
use crate::mocap::{
    Corpus, Dataset, FrameMatrix, Manifest, NormalizationStats, RawTrial, DEFAULT_CONST_EPSILON, DEFAULT_GLOBAL_DIMS,
};
use crate::model::KernelShape;
use crate::tensor::GradCheckOptions;
use crate::training::{check_discriminator, check_generator, CheckSetup, Checkpoint, TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "convmotion", version, about = "Convolutional human motion prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit normalization statistics on the training split.
    Prep(PrepArgs),
    /// Write a synthetic corpus in the dataset layout.
    Synth(SynthCmdArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Predict a continuation of a seed file with a checkpoint.
    Predict(PredictArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Finite-difference check of every gradient on the small model.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one model per setting of an ablation axis.
    Ablate(AblateArgs),
}

#[derive(Args, Debug, Clone)]
struct SynthShape {
    /// Number of synthetic joints.
    #[arg(long)]
    joints: Option<usize>,
    /// Frames per synthetic trial.
    #[arg(long)]
    frames: Option<usize>,
    /// Lower edge of the fundamental frequency band in Hz.
    #[arg(long)]
    freq_lo: Option<f64>,
    /// Upper edge of the fundamental frequency band in Hz.
    #[arg(long)]
    freq_hi: Option<f64>,
    /// Comma-separated subject labels.
    #[arg(long, value_delimiter = ',')]
    subjects: Option<Vec<String>>,
    /// Comma-separated action labels.
    #[arg(long, value_delimiter = ',')]
    actions: Option<Vec<String>>,
    /// Trials per subject and action.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated held-out subjects.
    #[arg(long, value_delimiter = ',', default_value = "S5")]
    test_subjects: Vec<String>,
}

impl SynthShape {
    fn config(&self, seed: u64) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            joints: self.joints.unwrap_or(d.joints),
            frames: self.frames.unwrap_or(d.frames),
            freq_band: (self.freq_lo.unwrap_or(d.freq_band.0), self.freq_hi.unwrap_or(d.freq_band.1)),
            seed,
            subjects: self.subjects.clone().unwrap_or(d.subjects),
            actions: self.actions.clone().unwrap_or(d.actions),
            trials_per_action: self.trials.unwrap_or(d.trials_per_action),
        }
    }

    fn manifest(&self) -> Manifest {
        Manifest { test_subjects: self.test_subjects.clone(), ..Manifest::default() }
    }
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset root holding <subject>/<action>_<trial>.txt and manifest.txt.
    #[arg(long, conflicts_with = "synthetic")]
    data_root: Option<PathBuf>,
    /// Generate the corpus in memory instead of reading --data-root.
    #[arg(long)]
    synthetic: bool,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
    #[command(flatten)]
    shape: SynthShape,
    /// Normalization statistics; defaults to <data-root>/stats.json when it
    /// exists, otherwise they are fitted on the training split.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting configuration when no --config is given.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Override one configuration key, e.g. --set batch_size=8.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed for parameter initialization, batches and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Total number of training iterations.
    #[arg(long)]
    iters: Option<u64>,
    /// Blend weight of predictions inside the training window.
    #[arg(long)]
    eta: Option<f64>,
    /// Short-term window length C.
    #[arg(long)]
    window: Option<usize>,
    /// Convolution kernel as TEMPORALxSPATIAL, e.g. 2x7.
    #[arg(long)]
    kernel: Option<KernelShape>,
    /// Disable the long-term encoder.
    #[arg(long)]
    no_long_term: bool,
    /// Disable the adversarial term and discriminator updates.
    #[arg(long)]
    no_adv: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Default,
    Tiny,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => TrainConfig::load(path)?,
            (None, Preset::Default) => TrainConfig::default(),
            (None, Preset::Tiny) => TrainConfig::tiny(),
        };
        for kv in &self.overrides {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| Error::Invalid(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.schedule.seed = s;
        }
        if let Some(n) = self.iters {
            cfg.schedule.iterations = n;
        }
        if let Some(e) = self.eta {
            cfg.hyper.eta = e;
        }
        if let Some(c) = self.window {
            cfg.hyper.window = c;
        }
        if let Some(k) = self.kernel {
            cfg.model.kernel = k;
        }
        if self.no_long_term {
            cfg.model.long_term = false;
        }
        if self.no_adv {
            cfg.hyper.adversarial = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct PrepArgs {
    /// Dataset root.
    #[arg(long)]
    data_root: PathBuf,
    /// Output path; defaults to <data-root>/stats.json.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Dimensions whose standard deviation is below this are dropped.
    #[arg(long, default_value_t = DEFAULT_CONST_EPSILON)]
    epsilon: f64,
    /// Leading global dimensions that are always dropped.
    #[arg(long, default_value_t = DEFAULT_GLOBAL_DIMS)]
    global_dims: usize,
}

#[derive(Args, Debug)]
struct SynthCmdArgs {
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    shape: SynthShape,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for config, statistics, report and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint; its configuration is used and only
    /// --iters applies.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Statistics the checkpoint was trained with.
    #[arg(long)]
    stats: PathBuf,
    /// Raw frame file; its last seed_len frames seed the prediction.
    #[arg(long)]
    input: PathBuf,
    /// Output frame file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed of the window sampler.
    #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
    seed: u64,
    /// Windows drawn per action.
    #[arg(long, default_value_t = DEFAULT_NUM_SEQUENCES)]
    num_sequences: usize,
    /// Also report the zero-velocity baseline.
    #[arg(long)]
    baseline: bool,
    /// Directory receiving every predicted and true continuation.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Directory receiving eval.csv, eval.txt and eval.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Number of random points, seeded 0..N.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = GradCheckOptions::default().step)]
    step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = GradCheckOptions::default().tolerance)]
    tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    Window,
    Kernel,
    LongTerm,
    Adv,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Setting to vary.
    #[arg(long, value_enum)]
    axis: Axis,
    /// Directory receiving ablate_<axis>.csv and per-setting reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the evaluation window sampler.
    #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
    eval_seed: u64,
    /// Evaluation windows drawn per action.
    #[arg(long, default_value_t = DEFAULT_NUM_SEQUENCES)]
    num_sequences: usize,
}

/// Train and test trials with the statistics that normalize both.
struct Data {
    train: Vec<RawTrial>,
    test: Vec<RawTrial>,
    stats: Arc<NormalizationStats>,
    source: String,
}

impl Data {
    fn load(args: &DataArgs, log: &mut dyn Write) -> Result<Data> {
        let (dataset, source) = match (&args.data_root, args.synthetic) {
            (Some(root), false) => (Dataset::open(root)?, root.display().to_string()),
            (None, true) => {
                let cfg = args.shape.config(args.synth_seed);
                let trials = generate(&cfg)?;
                let ds = Dataset { root: PathBuf::new(), manifest: args.shape.manifest(), trials };
                (ds, format!("synthetic (seed {}, {} joints, {} frames)", cfg.seed, cfg.joints, cfg.frames))
            }
            _ => return Err(Error::Invalid("pass either --data-root DIR or --synthetic".into())),
        };
        let train = dataset.train();
        let test = dataset.test();
        let default_stats = args.data_root.as_ref().map(|_| dataset.stats_path()).filter(|p| p.exists());
        let stats = match args.stats.clone().or(default_stats) {
            Some(path) => {
                say(log, format_args!("stats: {}", path.display()))?;
                NormalizationStats::load(&path)?
            }
            None => {
                if train.is_empty() {
                    return Err(Error::Invalid(format!("{source}: the training split is empty")));
                }
                say(log, format_args!("stats: fitted on {} training trials", train.len()))?;
                NormalizationStats::fit_trials(&train, DEFAULT_CONST_EPSILON, DEFAULT_GLOBAL_DIMS)?
            }
        };
        say(log, format_args!("data: {source}, {} train / {} test trials", train.len(), test.len()))?;
        Ok(Data { train, test, stats: Arc::new(stats), source })
    }

    fn train_corpus(&self) -> Result<Corpus> {
        if self.train.is_empty() {
            return Err(Error::Invalid(format!("{}: the training split is empty", self.source)));
        }
        Corpus::new(&self.train, Arc::clone(&self.stats))
    }

    fn test_corpus(&self) -> Result<Corpus> {
        if self.test.is_empty() {
            return Err(Error::Invalid(format!(
                "{}: the test split is empty; name held-out subjects in the manifest",
                self.source
            )));
        }
        Corpus::new(&self.test, Arc::clone(&self.stats))
    }
}

fn say(log: &mut dyn Write, args: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(log, "{args}").map_err(|e| Error::io("<output>", e))
}

fn log_config(log: &mut dyn Write, cfg: &TrainConfig) -> Result<()> {
    for line in cfg.to_text().lines() {
        say(log, format_args!("config: {line}"))?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prep(a: PrepArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = Dataset::open(&a.data_root)?;
    let train = ds.train();
    if train.is_empty() {
        return Err(Error::Invalid(format!("{}: the training split is empty", a.data_root.display())));
    }
    let stats = NormalizationStats::fit_trials(&train, a.epsilon, a.global_dims)?;
    let path = a.stats.unwrap_or_else(|| ds.stats_path());
    stats.save(&path)?;
    say(out, format_args!("trials: {} train, {} test", train.len(), ds.test().len()))?;
    say(out, format_args!("raw dims: {}", stats.raw_dim()))?;
    say(out, format_args!("reducedDim: {}", stats.reduced_dim()))?;
    say(out, format_args!("fingerprint: {}", stats.fingerprint()))?;
    say(out, format_args!("wrote {}", path.display()))?;
    Ok(0)
}

fn synth(a: SynthCmdArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.shape.config(a.seed);
    let trials = generate(&cfg)?;
    write_corpus(&a.out, &trials, &a.shape.manifest())?;
    say(
        out,
        format_args!(
            "wrote {} trials ({} frames x {} dims, seed {}) to {}",
            trials.len(),
            cfg.frames,
            cfg.raw_dim(),
            cfg.seed,
            a.out.display()
        ),
    )?;
    Ok(0)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let data = Data::load(&a.data, out)?;
    let corpus = data.train_corpus()?;
    create_dir(&a.out)?;
    let mut trainer = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load_for(path, &data.stats)?;
            say(out, format_args!("resuming {} at iteration {}", path.display(), ck.iteration))?;
            Trainer::resume(ck, corpus)?
        }
        None => Trainer::new(a.config.resolve()?, corpus)?,
    };
    if let Some(n) = a.config.iters {
        trainer.config.schedule.iterations = n;
    }
    if trainer.config.schedule.validate_every > 0 && !data.test.is_empty() {
        trainer = trainer.with_validation(&data.test_corpus()?)?;
    }
    log_config(out, &trainer.config)?;
    trainer.config.save(&a.out.join("config.txt"))?;
    data.stats.save(&a.out.join(STATS_FILE))?;
    let report_path = a.out.join("train.csv");
    let file = if trainer.iteration == 0 {
        File::create(&report_path)
    } else {
        File::options().append(true).create(true).open(&report_path)
    }
    .map_err(|e| Error::io(&report_path, e))?;
    let mut report = BufWriter::new(file);
    let summary = trainer.run(trainer.config.schedule.iterations, Some(&a.out), &mut report)?;
    if let Some(last) = &summary.last {
        say(out, format_args!("iteration {}: mse {} total {}", last.iteration, last.mse, last.total))?;
    }
    if summary.stopped_early {
        say(out, format_args!("stopped early after {} stale validations", trainer.validation.stale))?;
    }
    for p in &summary.checkpoints {
        say(out, format_args!("wrote {}", p.display()))?;
    }
    Ok(0)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let stats = Arc::new(NormalizationStats::load(&a.stats)?);
    let ck = Checkpoint::load_for(&a.checkpoint, &stats)?;
    let (t, tt) = (ck.model.hyper.seed_len, ck.model.hyper.target_len);
    let frames = FrameMatrix::read(&a.input)?;
    if frames.rows() < t {
        return Err(Error::Invalid(format!(
            "{} holds {} frames but the model needs {t} seed frames",
            a.input.display(),
            frames.rows()
        )));
    }
    let result = predict_frames(&ck.model, &stats, &frames)?;
    result.write(&a.out)?;
    say(out, format_args!("seeded with frames {}..{} of {}", frames.rows() - t, frames.rows() - 1, a.input.display()))?;
    say(out, format_args!("wrote {tt} frames to {}", a.out.display()))?;
    Ok(0)
}

fn print_report(out: &mut dyn Write, title: &str, report: &HorizonReport) -> Result<()> {
    say(out, format_args!("{title}"))?;
    out.write_all(report.to_table().as_bytes()).map_err(|e| Error::io("<output>", e))
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let data = Data::load(&a.data, out)?;
    let corpus = data.test_corpus()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let opts = EvalOptions { num_sequences: a.num_sequences, seed: a.seed };
    say(out, format_args!("eval: seed {} with {} sequences per action", opts.seed, opts.num_sequences))?;
    log_config(out, &ck.config)?;
    let evaluation = evaluate_checkpoint(&ck, &corpus, &opts)?;
    print_report(out, "model", &evaluation.report)?;
    let baseline = if a.baseline {
        let h = &ck.model.hyper;
        let r = zero_velocity_report(&corpus, h.seed_len, h.target_len, &opts)?;
        print_report(out, "zero-velocity baseline", &r)?;
        Some(r)
    } else {
        None
    };
    if let Some(dir) = &a.out {
        evaluation.report.write(dir, "eval")?;
        if let Some(r) = &baseline {
            r.write(dir, "zero_velocity")?;
        }
        say(out, format_args!("wrote reports to {}", dir.display()))?;
    }
    if let Some(dir) = &a.dump {
        evaluation.write_sequences(dir)?;
        say(out, format_args!("wrote {} sequences to {}", evaluation.sequences.len(), dir.display()))?;
    }
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let setup = CheckSetup::tiny();
    let opts = GradCheckOptions { step: a.step, tolerance: a.tolerance, ..GradCheckOptions::default() };
    say(out, format_args!("gradcheck: step {} tolerance {} floor {}", opts.step, opts.tolerance, opts.floor))?;
    let mut worst = 0.0f64;
    let mut failed = 0;
    for seed in 0..a.seeds {
        let mut reports: Vec<(String, _)> =
            check_generator(&setup, seed, &opts)?.into_iter().map(|(o, r)| (o.label().to_string(), r)).collect();
        reports.push(("discriminator".into(), check_discriminator(&setup, seed, &opts)?));
        for (label, r) in reports {
            worst = worst.max(r.max_rel_error());
            let verdict = if r.passed() { "ok" } else { "FAILED" };
            say(
                out,
                format_args!(
                    "seed {seed} {label}: {verdict} max rel err {:.3e} over {} entries ({} refined, {} straddled)",
                    r.max_rel_error(),
                    r.checked(),
                    r.refined(),
                    r.straddled()
                ),
            )?;
            if !r.passed() {
                failed += 1;
                for p in r.failures().take(5) {
                    say(out, format_args!("  {p:?}"))?;
                }
            }
        }
    }
    say(out, format_args!("max rel err {worst:.3e}, {failed} failing report(s)"))?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn ablation_settings(axis: Axis, base: &TrainConfig, log: &mut dyn Write) -> Result<Vec<(String, TrainConfig)>> {
    let mut out = Vec::new();
    match axis {
        Axis::Window => {
            for c in [5, 10, 20] {
                if c > base.hyper.seed_len {
                    say(log, format_args!("skipping window {c}: exceeds seed length {}", base.hyper.seed_len))?;
                    continue;
                }
                let mut cfg = base.clone();
                cfg.hyper.window = c;
                out.push((c.to_string(), cfg));
            }
        }
        Axis::Kernel => {
            for k in KernelShape::ABLATION {
                let mut cfg = base.clone();
                cfg.model.kernel = k;
                out.push((k.to_string(), cfg));
            }
        }
        Axis::LongTerm => {
            for on in [true, false] {
                let mut cfg = base.clone();
                cfg.model.long_term = on;
                out.push(((if on { "on" } else { "off" }).to_string(), cfg));
            }
        }
        Axis::Adv => {
            for on in [true, false] {
                let mut cfg = base.clone();
                cfg.hyper.adversarial = on;
                out.push(((if on { "on" } else { "off" }).to_string(), cfg));
            }
        }
    }
    Ok(out)
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Window => "window",
        Axis::Kernel => "kernel",
        Axis::LongTerm => "long-term",
        Axis::Adv => "adv",
    }
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<i32> {
    let data = Data::load(&a.data, out)?;
    let train = data.train_corpus()?;
    let test = data.test_corpus()?;
    let base = a.config.resolve()?;
    log_config(out, &base)?;
    let opts = EvalOptions { num_sequences: a.num_sequences, seed: a.eval_seed };
    let name = axis_name(a.axis);
    let mut csv = String::new();
    let mut header_done = false;
    for (setting, cfg) in ablation_settings(a.axis, &base, out)? {
        cfg.validate()?;
        say(out, format_args!("ablate {name}={setting}: training {} iterations", cfg.schedule.iterations))?;
        let dir = a.out.as_ref().map(|d| d.join(format!("{name}_{setting}")));
        if let Some(d) = &dir {
            create_dir(d)?;
            cfg.save(&d.join("config.txt"))?;
        }
        let mut trainer = Trainer::new(cfg.clone(), train.clone())?;
        let mut sink = Vec::new();
        let summary = trainer.run(cfg.schedule.iterations, dir.as_deref(), &mut sink)?;
        let report = evaluate(&trainer.model, &test, &opts)?.report;
        if let Some(d) = &dir {
            std::fs::write(d.join("train.csv"), &sink).map_err(|e| Error::io(d.join("train.csv"), e))?;
            report.write(d, "eval")?;
        }
        if !header_done {
            csv.push_str("axis,setting,iterations,final_mse");
            for ms in &report.horizons_ms {
                write!(csv, ",err_{ms}ms").expect("writing to a String");
            }
            csv.push('\n');
            header_done = true;
        }
        let mse = summary.last.as_ref().map_or(f64::NAN, |r| r.mse);
        write!(csv, "{name},{setting},{},{mse}", trainer.iteration).expect("writing to a String");
        for e in &report.average {
            write!(csv, ",{e}").expect("writing to a String");
        }
        csv.push('\n');
    }
    if let Some(d) = &a.out {
        let path = d.join(format!("ablate_{name}.csv"));
        std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
        say(out, format_args!("wrote {}", path.display()))?;
    }
    out.write_all(csv.as_bytes()).map_err(|e| Error::io("<output>", e))?;
    Ok(0)
}

fn hint(e: &Error) -> Option<&'static str> {
    match e {
        Error::Fingerprint { .. } => Some(
            "the checkpoint was trained with other statistics; pass the stats.json written next to it with --stats",
        ),
        Error::Io { .. } => Some("check that the path exists and is readable"),
        Error::Parse { .. } => Some("fix the offending line and retry"),
        _ => None,
    }
}

/// Parse `argv` (program name first) and run the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the process exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    let result = match cli.command {
        Command::Prep(a) => prep(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Ablate(a) => ablate(a, out),
    };
    let _ = out.flush();
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let Some(h) = hint(&e) {
                let _ = writeln!(err, "hint: {h}");
            }
            1
        }
    }
}

/// [`run_with`] on the process's standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(std::iter::once("convmotion").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_flags_and_commands_rejected() {
        assert_eq!(run_capture(&["train", "--bogus"]).0, 2);
        assert_eq!(run_capture(&["frobnicate"]).0, 2);
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("gradcheck"));
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "window = 10\nseed = 3\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            preset: Preset::Default,
            overrides: vec!["batch_size=8".into()],
            seed: Some(9),
            iters: Some(5),
            eta: Some(0.5),
            window: None,
            kernel: Some(KernelShape::new(4, 4)),
            no_long_term: true,
            no_adv: true,
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.hyper.window, 10);
        assert_eq!(cfg.hyper.batch_size, 8);
        assert_eq!(cfg.schedule.seed, 9);
        assert_eq!(cfg.schedule.iterations, 5);
        assert_eq!(cfg.hyper.eta, 0.5);
        assert_eq!(cfg.model.kernel, KernelShape::new(4, 4));
        assert!(!cfg.model.long_term && !cfg.hyper.adversarial);
    }

    #[test]
    fn invalid_values_fail_with_message() {
        let (code, _, err) = run_capture(&["train", "--synthetic", "--out", "/nonexistent/x", "--window", "80"]);
        assert_eq!(code, 1);
        assert!(err.contains("window 80 exceeds seed length 50"), "{err}");
        let (code, _, err) = run_capture(&["prep", "--data-root", "/nonexistent/corpus"]);
        assert_eq!(code, 1);
        assert!(err.contains("hint:"), "{err}");
    }

    #[test]
    fn window_axis_skips_windows_longer_than_seed() {
        let mut log = Vec::new();
        let s = ablation_settings(Axis::Window, &TrainConfig::tiny(), &mut log).unwrap();
        let names: Vec<&str> = s.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["5", "10"]);
        assert!(String::from_utf8(log.clone()).unwrap().contains("skipping window 20"));
        assert_eq!(ablation_settings(Axis::Window, &TrainConfig::default(), &mut log).unwrap().len(), 3);
    }
}
