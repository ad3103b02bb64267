use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use claimvec::eval::render_text;
use claimvec::pipeline::{load_reports, sha256_hex, Pipeline, PipelineConfig};
use claimvec::synth::{generate, PopulationSpec};

#[derive(Parser)]
#[command(
    name = "claimvec",
    version,
    about = "Claims-code embeddings for prospective risk scoring"
)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config (or the population seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Embedding worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the config's work directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic claims population.
    Synth {
        /// Population spec (JSON); the bundled default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's patient count.
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Build the two-year cohort from claims and members.
    Cohort,
    /// Compute risk labels and the train/test split.
    Label,
    /// Run the embedding hyperparameter grid.
    Grid,
    /// Train the document embedding.
    Embed,
    /// Write baseline and embedding feature matrices.
    Featurize,
    /// Fit ridge and boosted trees on both representations.
    Fit,
    /// Score the four fitted models.
    Evaluate,
    /// Run every stage.
    Run,
    /// Render the reports of a completed run.
    Report {
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let Some(path) = &cli.config else {
        bail!("this subcommand needs --config <file>");
    };
    let mut config = PipelineConfig::from_json_file(path)?;
    config.apply_overrides(cli.seed, cli.workers, cli.workdir.clone());
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let mut buf = String::new();
    match &cli.command {
        Command::Synth {
            spec,
            out,
            n_patients,
        } => {
            let mut spec = match spec {
                Some(p) => PopulationSpec::from_json_file(p)?,
                None => PopulationSpec::default_population(),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(n) = n_patients {
                spec.n_patients = *n;
            }
            let pop = generate(&spec)?;
            pop.write_to_dir(out)?;
            let claims = pop.claims_csv()?;
            let members = pop.members_csv()?;
            writeln!(
                buf,
                "members.csv  {:>9} rows  sha256 {}",
                pop.members.len(),
                sha256_hex(members.as_bytes())
            )?;
            writeln!(
                buf,
                "claims.csv   {:>9} rows  sha256 {}",
                pop.claims.len(),
                sha256_hex(claims.as_bytes())
            )?;
        }
        Command::Report { format } => {
            let workdir = match (&cli.workdir, &cli.config) {
                (Some(w), _) => w.clone(),
                (None, Some(_)) => load_config(&cli)?.paths.workdir,
                (None, None) => bail!("report needs --workdir or --config"),
            };
            let reports = load_reports(&workdir)?;
            match format {
                Format::Text => write!(buf, "{}", render_text(&reports))?,
                Format::Json => writeln!(buf, "{}", serde_json::to_string_pretty(&reports)?)?,
            }
        }
        cmd => {
            let pipeline = Pipeline::new(load_config(&cli)?)?;
            match cmd {
                Command::Cohort => {
                    let c = pipeline.stage_cohort()?;
                    writeln!(buf, "cohort: {} patients", c.len())?;
                }
                Command::Label => {
                    let l = pipeline.stage_label()?;
                    writeln!(buf, "labels: {} patients", l.len())?;
                }
                Command::Grid => {
                    let g = pipeline.stage_grid()?;
                    for e in &g.entries {
                        let p = e.point;
                        match e.cv_r2 {
                            Some(r2) => writeln!(
                                buf,
                                "{:8} dim {:>4} window {:>3}  cv R2 {r2:.4}",
                                p.model.as_str(),
                                p.dim,
                                p.window
                            )?,
                            None => writeln!(
                                buf,
                                "{:8} dim {:>4} window {:>3}  failed: {}",
                                p.model.as_str(),
                                p.dim,
                                p.window,
                                e.error.as_deref().unwrap_or("")
                            )?,
                        }
                    }
                    let best = g.best.context("no grid entry succeeded")?;
                    writeln!(
                        buf,
                        "best: {} dim {} window {}",
                        best.point.model.as_str(),
                        best.point.dim,
                        best.point.window
                    )?;
                }
                Command::Embed => {
                    let m = pipeline.stage_embed()?;
                    writeln!(
                        buf,
                        "embedding: {} documents, {} codes, dim {}",
                        m.n_docs(),
                        m.vocab().len(),
                        m.dim()
                    )?;
                }
                Command::Featurize => {
                    pipeline.stage_featurize()?;
                    writeln!(buf, "features written")?;
                }
                Command::Fit => {
                    let models = pipeline.stage_fit()?;
                    writeln!(buf, "fitted {} models", models.len())?;
                }
                Command::Evaluate | Command::Run => {
                    let reports = if matches!(cmd, Command::Run) {
                        pipeline.run()?
                    } else {
                        pipeline.stage_evaluate()?
                    };
                    write!(buf, "{}", render_text(&reports))?;
                }
                Command::Synth { .. } | Command::Report { .. } => unreachable!("handled above"),
            }
        }
    }
    Ok(buf)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => match std::io::stdout().lock().write_all(out.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                eprintln!("error: writing output: {e}");
                ExitCode::FAILURE
            }
            _ => ExitCode::SUCCESS,
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
