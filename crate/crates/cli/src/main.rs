use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dense_core::io::write_notes_csv_file;
use dense_core::pipeline::{error_kind, Pipeline, PipelineConfig, Stage};
use dense_core::synth::{generate_synthetic_corpus, SyntheticCorpusSpec};
use dense_core::taxonomy::{validate_rules, NoteType, RuleIssue, RuleSet, FIXTURES};

#[derive(Parser)]
#[command(name = "dense", version, about = "Longitudinal SOAP progress notes from heterogeneous clinical notes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// Pipeline config (TOML).
    #[arg(long, short, default_value = "dense.toml")]
    config: PathBuf,
    /// Re-run stages even when their checkpoint is current.
    #[arg(long)]
    force: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Use the hashing embedder and mock generator whatever the config says.
    #[arg(long)]
    offline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic note corpus as CSV.
    Synth {
        #[arg(long, default_value_t = 56)]
        patients: usize,
        #[arg(long, default_value_t = 10)]
        min_visits: usize,
        #[arg(long, default_value_t = 57)]
        max_visits: usize,
        /// Defaults to the config's seed, or 1.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Override one type's visit coverage, e.g. `progress_notes=0.3`.
        #[arg(long = "coverage", value_parser = parse_coverage)]
        coverage: Vec<(NoteType, f64)>,
    },
    /// Read the input CSV.
    Ingest(RunOpts),
    /// Assign each note one of the sixteen types.
    Classify(RunOpts),
    /// Group notes into visits and patient timelines.
    Pivot(RunOpts),
    /// Clean text and standardize section headers.
    Preprocess(RunOpts),
    /// Split sections into overlapping windows.
    Chunk(RunOpts),
    /// Embed chunks into the vector index.
    Index(RunOpts),
    /// Generate one SOAP note per visit.
    Generate(RunOpts),
    /// Score generated notes against gold progress notes.
    Evaluate(RunOpts),
    /// Aggregate scores into report.json and report.txt.
    Report(RunOpts),
    /// Run every stage, skipping those already up to date.
    Run(RunOpts),
    /// Check a rule file against the built-in label fixtures.
    ValidateRules {
        /// Rule file; defaults to the shipped rules.
        rules: Option<PathBuf>,
    },
}

fn parse_coverage(s: &str) -> Result<(NoteType, f64), String> {
    let (t, p) = s.split_once('=').ok_or("expected TYPE=FRACTION")?;
    let t: NoteType = t.trim().parse().map_err(|e: dense_core::Error| e.to_string())?;
    let p: f64 = p.trim().parse().map_err(|_| format!("bad fraction '{p}'"))?;
    Ok((t, p))
}

fn load_config(opts: &RunOpts) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&opts.config).with_context(|| format!("loading {}", opts.config.display()))?;
    cfg.apply_env();
    if opts.offline {
        cfg.force_offline();
    }
    Ok(cfg)
}

fn run_stages(opts: &RunOpts, stages: &[Stage]) -> anyhow::Result<()> {
    let mut pipeline = Pipeline::new(load_config(opts)?)?;
    pipeline.force = opts.force;
    pipeline.jobs = opts.jobs;
    for o in pipeline.run(stages)? {
        println!("{:<10} {:<8} {}", o.stage, if o.ran { "ran" } else { "skipped" }, o.summary);
    }
    if stages.contains(&Stage::Report) {
        print!("{}", std::fs::read_to_string(pipeline.path("report.txt"))?);
    }
    Ok(())
}

fn synth(
    patients: usize,
    visits: (usize, usize),
    seed: Option<u64>,
    config: Option<&Path>,
    out: &Path,
    coverage: Vec<(NoteType, f64)>,
) -> anyhow::Result<()> {
    let seed = match (seed, config) {
        (Some(s), _) => s,
        (None, Some(c)) => PipelineConfig::load(c)?.seed,
        (None, None) => 1,
    };
    let mut spec = SyntheticCorpusSpec {
        patient_count: patients,
        visits_per_patient: visits,
        seed,
        ..SyntheticCorpusSpec::default()
    };
    spec.coverage.extend(coverage);
    let notes = generate_synthetic_corpus(&spec)?;
    write_notes_csv_file(out, &notes)?;
    println!("wrote {} notes for {patients} patients to {}", notes.len(), out.display());
    Ok(())
}

fn describe(issue: &RuleIssue) -> String {
    match issue {
        RuleIssue::DuplicatePriority { priority, fixture } => format!("priority {priority}: several rules match '{fixture}'"),
        RuleIssue::SharedPriority { priority } => format!("priority {priority} is shared by several rules"),
        RuleIssue::Unreachable { priority, pattern } => format!("rule {priority} /{pattern}/ never fires"),
    }
}

fn validate(path: Option<&Path>) -> anyhow::Result<()> {
    let rules = match path {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::default_rules(),
    };
    let report = validate_rules(&rules, FIXTURES);
    for w in &report.warnings {
        println!("warning: {}", describe(w));
    }
    for e in &report.errors {
        println!("error: {}", describe(e));
    }
    if !report.is_ok() {
        bail!("{} rule errors", report.errors.len());
    }
    println!("{} rules ok over {} fixtures", rules.rules().len(), FIXTURES.len());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dense_core::Error>().map(error_kind) {
        Some("config") => 2,
        Some("missing_stage") => 3,
        Some("provider") => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { patients, min_visits, max_visits, seed, config, out, coverage } => {
            synth(patients, (min_visits, max_visits), seed, config.as_deref(), &out, coverage)
        }
        Command::Ingest(o) => run_stages(&o, &[Stage::Ingest]),
        Command::Classify(o) => run_stages(&o, &[Stage::Classify]),
        Command::Pivot(o) => run_stages(&o, &[Stage::Pivot]),
        Command::Preprocess(o) => run_stages(&o, &[Stage::Preprocess]),
        Command::Chunk(o) => run_stages(&o, &[Stage::Chunk]),
        Command::Index(o) => run_stages(&o, &[Stage::Index]),
        Command::Generate(o) => run_stages(&o, &[Stage::Generate]),
        Command::Evaluate(o) => run_stages(&o, &[Stage::Evaluate]),
        Command::Report(o) => run_stages(&o, &[Stage::Report]),
        Command::Run(o) => run_stages(&o, &Stage::ALL),
        Command::ValidateRules { rules } => validate(rules.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
