use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spdmlr::classifier::{hyperplane_cloud, write_cloud, CloudGrid, Hyperplane};
use spdmlr::geometry::{MetricSpec, THETA_CANDIDATES};
use spdmlr::harness::checks::{equivalence_check, gradcheck, GradcheckSpec};
use spdmlr::harness::config::RunConfig;
use spdmlr::harness::dataset::{load_dataset, save_dataset, synth_generate, Dataset};
use spdmlr::harness::train::{train, RunReport, TrainedModel};
use spdmlr::linalg::{SpdMatrix, SymMatrix};
use spdmlr::network::HeadSpec;
use spdmlr::{Error, Result};

#[derive(Parser)]
#[command(name = "spdmlr", version, about = "SPD multinomial logistic regression under pullback Euclidean metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write report.json and model.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// An spdcsv file, or `synth` for the built-in synthetic task.
        #[arg(long, default_value = "synth")]
        data: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Train once per candidate of this hyperparameter.
        #[arg(long)]
        sweep: Option<Sweep>,
    },
    /// Score a trained model on a dataset.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an LEM head and a LogEig MLR in lockstep and report the loss gap.
    Equivcheck {
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        metric: MetricArgs,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 300)]
        per_class: usize,
        #[arg(long, default_value_t = 0.15)]
        spread: f64,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample points of a 2×2 SPD hyperplane as `x y z flag` lines.
    HyperplaneCloud {
        #[command(flatten)]
        metric: MetricArgs,
        /// Four row-major entries, or three cone coordinates `x,y,z`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        shift: Vec<f64>,
        /// Four row-major entries, or three coordinates `x,y,z`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        normal: Vec<f64>,
        #[arg(long, default_value_t = CloudGrid::default().resolution)]
        resolution: usize,
        #[arg(long, default_value_t = CloudGrid::default().extent)]
        extent: f64,
        #[arg(long, default_value_t = CloudGrid::default().band)]
        band: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Beta,
    Theta,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    Lem,
    Lcm,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long, value_enum, default_value = "lem")]
    metric: MetricKind,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    theta: f64,
}

impl MetricArgs {
    fn spec(&self) -> MetricSpec {
        match self.metric {
            MetricKind::Lem => MetricSpec::lem(self.alpha, self.beta),
            MetricKind::Lcm => MetricSpec::lcm(self.theta),
        }
    }
}

/// Synthetic task used by `train --data synth`.
const SYNTH_CLASSES: usize = 3;
const SYNTH_PER_CLASS: usize = 300;
const SYNTH_SPREAD: f64 = 0.15;

fn load_data(spec: &str, config: &RunConfig) -> Result<Dataset> {
    let mut data = if spec == "synth" {
        synth_generate(
            config.widths[0],
            SYNTH_CLASSES,
            SYNTH_PER_CLASS,
            SYNTH_SPREAD,
            MetricSpec::lem(1.0, 0.0),
            config.seed,
        )?
    } else {
        load_dataset(Path::new(spec))?
    };
    data.split(config.train_fraction, config.seed)?;
    Ok(data)
}

fn run_one(config: &RunConfig, data: &Dataset, out: &Path, tag: &str) -> Result<RunReport> {
    let (report, model) = train(config, data)?;
    fs::write(out.join(format!("report{tag}.json")), serde_json::to_string_pretty(&report)?)?;
    model.save(&out.join(format!("model{tag}.json")))?;
    println!("{}", report.summary());
    Ok(report)
}

fn parse_2x2(values: &[f64], what: &str) -> Result<Vec<f64>> {
    match values {
        [a, b, c, d] => Ok(vec![*a, *b, *c, *d]),
        [x, y, z] => Ok(vec![*x, *y, *y, *z]),
        _ => Err(Error::Config(format!("--{what} takes 4 matrix entries or 3 coordinates, got {}", values.len()))),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, data, out, sweep } => {
            let config = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let dataset = load_data(&data, &config)?;
            fs::create_dir_all(&out)?;
            let n = *config.widths.last().expect("validated widths");
            let variants: Vec<(String, RunConfig)> = match sweep {
                None => vec![(String::new(), config.clone())],
                Some(Sweep::Beta) => MetricSpec::beta_candidates(n)
                    .iter()
                    .enumerate()
                    .map(|(i, &beta)| {
                        let head = HeadSpec::Mlr { metric: MetricSpec::lem(1.0, beta) };
                        (format!("-beta{i}"), RunConfig { head, ..config.clone() })
                    })
                    .collect(),
                Some(Sweep::Theta) => THETA_CANDIDATES
                    .iter()
                    .map(|&theta| {
                        let head = HeadSpec::Mlr { metric: MetricSpec::lcm(theta) };
                        (format!("-theta{theta}"), RunConfig { head, ..config.clone() })
                    })
                    .collect(),
            };
            for (tag, cfg) in &variants {
                run_one(cfg, &dataset, &out, tag)?;
            }
            Ok(())
        }
        Command::Eval { params, data } => {
            let model = TrainedModel::load(&params)?;
            let dataset = load_dataset(&data)?;
            let all: Vec<usize> = (0..dataset.len()).collect();
            let eval = model.evaluate(&dataset, &all)?;
            if eval.empty_class {
                eprintln!("warning: some classes have no samples; balanced accuracy averages the others");
            }
            println!("{}", serde_json::to_string_pretty(&eval)?);
            Ok(())
        }
        Command::Gradcheck { seed } => {
            let report = gradcheck(&GradcheckSpec::default(), seed, None)?;
            for t in &report.tensors {
                println!("{:<24} {:<10} {:.3e}", t.head, t.tensor, t.rel_error);
            }
            if report.passed() {
                println!("gradcheck passed (tolerance {:e})", report.tolerance);
                Ok(())
            } else {
                let names: Vec<String> = report.failures().iter().map(|t| format!("{}/{}", t.head, t.tensor)).collect();
                Err(Error::Validation {
                    line: 0,
                    message: format!("gradient check failed for {}", names.join(", ")),
                })
            }
        }
        Command::Equivcheck { steps, seed, metric } => {
            let report = equivalence_check(steps, seed, metric.spec())?;
            println!("{}: max loss gap over {steps} steps = {:.3e}", report.metric, report.max_gap());
            Ok(())
        }
        Command::Synth {
            n,
            classes,
            per_class,
            spread,
            metric,
            seed,
            out,
        } => {
            let data = synth_generate(n, classes, per_class, spread, metric.spec(), seed)?;
            save_dataset(&data, &out)?;
            println!("wrote {} samples to {}", data.len(), out.display());
            Ok(())
        }
        Command::HyperplaneCloud {
            metric,
            shift,
            normal,
            resolution,
            extent,
            band,
            out,
        } => {
            let shift = SpdMatrix::from_row_slice(2, &parse_2x2(&shift, "shift")?)?;
            let normal = SymMatrix::from_row_slice(2, &parse_2x2(&normal, "normal")?)?;
            let h = Hyperplane::new(metric.spec(), shift, normal)?;
            let points = hyperplane_cloud(&h, &CloudGrid { resolution, extent, band })?;
            match out {
                Some(path) => write_cloud(fs::File::create(path)?, &h, &points)?,
                None => write_cloud(std::io::stdout().lock(), &h, &points)?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap's own usage exit code would collide with the numerical one
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
