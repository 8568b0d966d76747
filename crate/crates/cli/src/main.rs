use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tsinv::clustering::{read_labels, write_labels};
use tsinv::dataset::{self, MultiStreamTrial, WindowMode};
use tsinv::harness::{
    self, read_report, report_kind, round_sig, write_report, AblationReport, ClusteringConfig, DisentanglementReport,
    EvalReport, ExperimentConfig, GradientSuiteReport, KSelectionReport, ProbeConfig, ProbeReport, ReportKind,
};
use tsinv::invariance::{export_embeddings, train_minimax, write_embeddings, Model, TrainTrace, VariantKind};
use tsinv::{Error, Result};

#[derive(Parser)]
#[command(name = "tsinv", version, about = "Invariance-induced state estimation on multi-stream time series")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults to desk-scale settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment and generator seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "causal")]
    mode: WindowMode,
    #[arg(long, global = true, default_value = "full")]
    variant: VariantKind,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Dataset directory; when omitted, trials are generated from the config.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        techniques: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Kinematics observation noise.
        #[arg(long)]
        noise: Option<f64>,
        /// Visual observation noise.
        #[arg(long)]
        vis_noise: Option<f64>,
    },
    /// Cluster trial kinematics and write the technique-label file.
    Cluster {
        #[command(flatten)]
        data: DataArg,
        /// Cluster count; scanned with the config's k range when omitted.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Scan cluster counts and write the k-selection report and labels.
    SelectK {
        #[command(flatten)]
        data: DataArg,
    },
    /// Train one variant on a dataset and save the checkpoint.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Technique-label file; the full variant clusters the data when omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Also write the per-epoch loss trace report here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or run the cross-validated experiment without one.
    Evaluate {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the na/no/full ablation on identical folds.
    Ablate {
        #[command(flatten)]
        data: DataArg,
    },
    /// Finite-difference check of every layer and of the full loss.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write per-instance mean codes of a checkpoint as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: PathBuf,
        /// Also write the state-silhouette report here.
        #[arg(long)]
        disentanglement: Option<PathBuf>,
        /// Also write the technique probe report here.
        #[arg(long)]
        probe: Option<PathBuf>,
        /// Technique-label file for the probe; the trials' own technique ids otherwise.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Print a summary of a report file.
    Report { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.generator.seed = seed;
    }
    Ok(cfg)
}

fn trials_for(data: &DataArg, cfg: &ExperimentConfig) -> Result<Vec<MultiStreamTrial>> {
    match &data.data {
        Some(dir) => Ok(dataset::load(dir)?.0),
        None => dataset::generate_from_config(&cfg.generator),
    }
}

fn out_or(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn fmt(x: f64) -> String {
    round_sig(x).to_string()
}

fn run(command: Command, common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    match command {
        Command::Generate { states, techniques, users, trials, noise, vis_noise } => {
            let g = &mut cfg.generator;
            g.states = states.unwrap_or(g.states);
            g.techniques = techniques.unwrap_or(g.techniques);
            g.users = users.unwrap_or(g.users);
            g.trials = trials.unwrap_or(g.trials);
            g.nuisance.noise = noise.unwrap_or(g.nuisance.noise);
            g.nuisance.vis_noise = vis_noise.unwrap_or(g.nuisance.vis_noise);
            g.validate()?;
            let out = common.out.clone().ok_or_else(|| Error::Config("generate needs --out <dir>".into()))?;
            let data = dataset::generate_from_config(&cfg.generator)?;
            dataset::save(&data, &out, Some(&cfg.generator))?;
            println!("wrote {} trials to {}", data.len(), out.display());
        }
        Command::Cluster { data, k } => {
            let trials = trials_for(&data, &cfg)?;
            let mut clustering = cfg.clustering.clone();
            if let Some(k) = k.or(clustering.fixed_k) {
                clustering = ClusteringConfig { k_min: k, k_max: k, fixed_k: None, ..clustering };
            }
            let (report, labels) = harness::k_selection_report(&trials, &clustering, cfg.seed)?;
            let out = out_or(common, "technique_labels.csv");
            write_labels(&out, &labels)?;
            println!("k = {}, labels for {} trials written to {}", report.chosen_k, labels.len(), out.display());
        }
        Command::SelectK { data } => {
            let trials = trials_for(&data, &cfg)?;
            let (report, labels) = harness::k_selection_report(&trials, &cfg.clustering, cfg.seed)?;
            let dir = out_or(common, "k_selection");
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            write_report(&dir.join("k_selection.json"), ReportKind::KSelection, &report)?;
            write_labels(&dir.join("technique_labels.csv"), &labels)?;
            print_k_selection(&report);
        }
        Command::Train { data, labels, trace } => {
            let trials = trials_for(&data, &cfg)?;
            let (model, trace_body) = train(&trials, &cfg, common, labels.as_deref())?;
            let out = out_or(common, "model.json");
            model.save(&out)?;
            if let Some(path) = trace {
                write_report(&path, ReportKind::Training, &trace_body)?;
            }
            let last = trace_body.epochs.last().map_or(f64::NAN, |e| e.estimator.state);
            println!("{} model trained for {} epochs, final state loss {}, saved to {}", model.variant, trace_body.epochs.len(), fmt(last), out.display());
        }
        Command::Evaluate { data, model } => {
            let trials = trials_for(&data, &cfg)?;
            let report = match model {
                Some(path) => {
                    let model = Model::load(&path)?;
                    let mut r = harness::evaluate(&model, &trials, common.mode, cfg.seed)?;
                    r.config = None;
                    r
                }
                None => harness::run_experiment(&trials, &cfg, common.variant, common.mode, cfg.seed)?,
            };
            let out = out_or(common, "eval_report.json");
            write_report(&out, ReportKind::Eval, &report)?;
            print_eval(&report);
        }
        Command::Ablate { data } => {
            let trials = trials_for(&data, &cfg)?;
            let report = harness::run_ablation(&trials, &cfg, common.mode, cfg.seed)?;
            let out = out_or(common, "ablation_report.json");
            write_report(&out, ReportKind::Ablation, &report)?;
            print_ablation(&report);
        }
        Command::Gradcheck { tolerance } => {
            let report = harness::gradient_suite(cfg.seed, tolerance)?;
            if let Some(out) = &common.out {
                write_report(out, ReportKind::Gradients, &report)?;
            }
            print_gradients(&report);
            if !report.passed() {
                return Err(Error::Domain(format!("gradient check above tolerance {}", fmt(tolerance))));
            }
        }
        Command::ExportEmbeddings { data, model, disentanglement, probe, labels } => {
            let trials = trials_for(&data, &cfg)?;
            let model = Model::load(&model)?;
            let records = export_embeddings(&model, &trials)?;
            let out = out_or(common, "embeddings.csv");
            write_embeddings(&out, &records)?;
            println!("{} state instances written to {}", records.len(), out.display());
            if let Some(path) = disentanglement {
                let r = harness::disentanglement_report(&model, &trials)?;
                write_report(&path, ReportKind::Disentanglement, &r)?;
                print_disentanglement(&r);
            }
            if let Some(path) = probe {
                let techniques = technique_ids(&trials, labels.as_deref())?;
                let classes = techniques.iter().max().map_or(0, |m| m + 1);
                let cfg = ProbeConfig { seed: cfg.seed, ..ProbeConfig::default() };
                let r = harness::technique_probe(&model, &trials, &techniques, classes, PROBE_BLOCK, &cfg)?;
                write_report(&path, ReportKind::Probe, &r)?;
                print_probe(&r);
            }
        }
        Command::Report { input } => summarize(&input)?,
    }
    Ok(())
}

/// Frames per alternating probe block (one second at the stored frame rate).
const PROBE_BLOCK: usize = 10;

/// Technique label per trial, from a label file or the trials themselves.
fn technique_ids(trials: &[MultiStreamTrial], labels: Option<&Path>) -> Result<Vec<usize>> {
    let Some(path) = labels else {
        return Ok(trials.iter().map(|t| t.technique).collect());
    };
    let records = read_labels(path)?;
    trials
        .iter()
        .map(|t| {
            records
                .iter()
                .find(|r| r.trial_id == t.id)
                .map(|r| r.label)
                .ok_or_else(|| Error::Data(format!("{} has no label for trial {}", path.display(), t.id)))
        })
        .collect()
}

fn train(
    trials: &[MultiStreamTrial],
    cfg: &ExperimentConfig,
    common: &Common,
    labels: Option<&Path>,
) -> Result<(Model, TrainTrace)> {
    let refs: Vec<&MultiStreamTrial> = trials.iter().collect();
    let techniques = match (common.variant, labels) {
        (VariantKind::Full, Some(path)) => Some(technique_ids(trials, Some(path))?),
        (VariantKind::Full, None) => {
            let c = harness::cluster_techniques(&refs, &cfg.clustering, cfg.seed)?;
            Some(c.labels)
        }
        _ => None,
    };
    let count = techniques.as_ref().map_or(cfg.model.techniques, |t| t.iter().max().map_or(0, |m| m + 1).max(2));
    let model_cfg = harness::model_config_for(&cfg.model, &refs, count, common.mode, cfg.seed)?;
    let mut model = Model::new(model_cfg, common.variant, cfg.weights)?;
    let schedule = tsinv::invariance::TrainSchedule { seed: cfg.seed, ..cfg.schedule.clone() };
    let trace = train_minimax(&mut model, trials, techniques.as_deref(), &schedule)?;
    Ok((model, trace))
}

fn summarize(path: &Path) -> Result<()> {
    match report_kind(path)? {
        ReportKind::Eval => print_eval(&read_report(path, ReportKind::Eval)?),
        ReportKind::Ablation => print_ablation(&read_report(path, ReportKind::Ablation)?),
        ReportKind::Disentanglement => print_disentanglement(&read_report(path, ReportKind::Disentanglement)?),
        ReportKind::KSelection => print_k_selection(&read_report(path, ReportKind::KSelection)?),
        ReportKind::Probe => print_probe(&read_report(path, ReportKind::Probe)?),
        ReportKind::Gradients => print_gradients(&read_report(path, ReportKind::Gradients)?),
        ReportKind::Training => {
            let t: TrainTrace = read_report(path, ReportKind::Training)?;
            println!("epoch  state  recon  f1  f2  disc  total");
            for e in &t.epochs {
                let l = &e.estimator;
                println!(
                    "{}  {}  {}  {}  {}  {}  {}",
                    e.epoch,
                    fmt(l.state),
                    fmt(l.recon),
                    fmt(l.f1),
                    fmt(l.f2),
                    fmt(l.disc),
                    fmt(l.total)
                );
            }
        }
    }
    Ok(())
}

fn print_eval(r: &EvalReport) {
    println!("{} variant, {} windows, seed {}", r.variant, r.mode, r.seed);
    for f in &r.folds {
        let k = f.chosen_k.map_or(String::new(), |k| format!(", k = {k}"));
        println!("  fold {}: {}% over {} frames{k}", f.index, fmt(f.accuracy), f.frames);
    }
    println!("accuracy {} ± {}%", fmt(r.mean_accuracy), fmt(r.std_accuracy));
}

fn print_ablation(r: &AblationReport) {
    println!("ablation over {} folds, {} windows, seed {}", r.folds.len(), r.mode, r.seed);
    for e in &r.reports {
        println!("  {}: {} ± {}%", e.variant, fmt(e.mean_accuracy), fmt(e.std_accuracy));
    }
    for d in &r.deltas {
        println!("  {} -> {}: {:+} points", d.from, d.to, round_sig(d.points));
    }
}

fn print_k_selection(r: &KSelectionReport) {
    println!("k  inertia  normalized  silhouette");
    for i in 0..r.ks.len() {
        println!("{}  {}  {}  {}", r.ks[i], fmt(r.inertia[i]), fmt(r.normalized_inertia[i]), fmt(r.silhouette[i]));
    }
    println!("chosen k = {}", r.chosen_k);
}

fn print_disentanglement(r: &DisentanglementReport) {
    println!(
        "state silhouette: e1 {}, e2 {} over {} instances",
        fmt(r.e1_silhouette),
        fmt(r.e2_silhouette),
        r.instances
    );
}

fn print_probe(r: &ProbeReport) {
    println!(
        "technique probe over {} classes (chance {}): e1 {}, H {}",
        r.classes,
        fmt(r.chance),
        fmt(r.e1_accuracy),
        fmt(r.h_accuracy)
    );
}

fn print_gradients(r: &GradientSuiteReport) {
    for e in &r.entries {
        println!("{} {}: max relative error {}", if e.passed { "ok  " } else { "FAIL" }, e.name, fmt(e.max_rel_error));
    }
    println!("tolerance {}, worst {}", fmt(r.tolerance), fmt(r.max_rel_error()));
}
