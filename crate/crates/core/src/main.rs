use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use gcnstab::bounds::{deterministic_bound_with, expected_bound_report, BoundVariant, Candidate, TermOptions};
use gcnstab::config::{load_config, ExperimentConfig, ExperimentKind, Scale};
use gcnstab::experiments::run_experiment;
use gcnstab::gcn::{lipschitz_constant, perturbed_interval, GcnLayer};
use gcnstab::graph::{laplacian, EdgePerturbation, Graph};
use gcnstab::manifest::{unix_now, verify_manifest, write_manifest};
use gcnstab::spectral::{eigendecompose, eigengap_report, DEFAULT_GAP_TOL};
use gcnstab::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

/// Stability bounds for single-layer graph convolutional networks under
/// edge perturbations, and the SBM experiments that exercise them.
///
/// Exit codes: 0 success, 1 failure, 2 configuration error, 3 more than 5%
/// of trials skipped for degenerate spectra.
#[derive(Parser)]
#[command(name = "gcnstab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment: fig1, fig2, fig3 or edges (edge-criticality).
    ///
    /// Writes results.csv, report.json, dataset.json, graphs/ and
    /// manifest.json (plus train_log.csv for fig3) into the output
    /// directory. Without --config the experiment defaults are used; print
    /// them with `gcnstab defaults <experiment>`.
    Run {
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Count preset: desk (10 graphs x 100 trials; fig3 60/30 graphs)
        /// or paper (50 x 1000; fig3 200/100).
        #[arg(long)]
        scale: Option<String>,
        /// Base seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file and report every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a run directory against its manifest.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print the default config of an experiment as TOML.
    Defaults {
        experiment: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print eigenvalues, eigenvectors and the eigengap of a graph file.
    Spectrum { graph: PathBuf },
    /// Evaluate the bound for one perturbation of a graph under a model.
    Bound {
        graph: PathBuf,
        model: PathBuf,
        /// Edge changes such as `+0-2,-0-1`.
        #[arg(long, allow_hyphen_values = true)]
        perturb: String,
        /// Perturb every listed edge with this probability and report the
        /// expected bound.
        #[arg(long)]
        probability: Option<f64>,
        #[arg(long, default_value = "as-printed")]
        variant: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> gcnstab::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cmd: Command) -> gcnstab::Result<u8> {
    match cmd {
        Command::Run {
            experiment,
            config,
            scale,
            seed,
            out,
        } => {
            let kind: ExperimentKind = experiment.parse()?;
            let mut cfg = match &config {
                Some(path) => load_config(path)?,
                None => ExperimentConfig::defaults(kind),
            };
            if cfg.experiment != kind {
                return Err(Error::Config(vec![format!(
                    "config is for `{}` but `{}` was requested",
                    cfg.experiment, kind
                )]));
            }
            if let Some(s) = scale {
                cfg.apply_scale(s.parse::<Scale>()?);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            cfg.validate()?;
            run(&cfg)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("ok: {} config with seed {}", cfg.experiment, cfg.seed);
            Ok(0)
        }
        Command::Verify { dir } => {
            let ok = verify_manifest(&dir)?;
            println!("{ok}");
            Ok(if ok { 0 } else { EXIT_FAILURE })
        }
        Command::Defaults { experiment, out } => {
            let cfg = ExperimentConfig::defaults(experiment.parse()?);
            match out {
                Some(p) => cfg.save(&p)?,
                None => print!("{}", cfg.to_toml_string()?),
            }
            Ok(0)
        }
        Command::Spectrum { graph } => spectrum(&graph),
        Command::Bound {
            graph,
            model,
            perturb,
            probability,
            variant,
        } => bound(&graph, &model, &perturb, probability, &variant),
    }
}

fn run(cfg: &ExperimentConfig) -> gcnstab::Result<u8> {
    let dir = &cfg.output.dir;
    let started = unix_now();
    let summary = run_experiment(cfg, dir)?;
    let manifest = write_manifest(dir, cfg, &summary, started)?;
    println!(
        "{}: {} rows, {} graphs, {} of {} trials skipped -> {}",
        cfg.experiment,
        summary.rows,
        summary.graphs.len(),
        summary.skips.skipped,
        summary.skips.trials,
        dir.display()
    );
    println!("slice hash {}", manifest.slice_hash);
    if summary.skips.flagged {
        eprintln!(
            "warning: {:.1}% of trials hit a coupled degenerate eigenvalue pair",
            100.0 * summary.skips.skip_rate
        );
        return Ok(EXIT_DEGENERATE);
    }
    Ok(0)
}

#[derive(Serialize)]
struct SpectrumDump {
    n: usize,
    eigenvalues: Vec<f64>,
    /// Column `i` of the eigenvector matrix, as row `i` here.
    eigenvectors: Vec<Vec<f64>>,
    eigengap: gcnstab::spectral::EigengapReport,
}

fn spectrum(path: &Path) -> gcnstab::Result<u8> {
    let g = Graph::load(path)?;
    let sd = eigendecompose(&laplacian(&g))?;
    print_json(&SpectrumDump {
        n: g.n(),
        eigenvalues: sd.eigenvalues().iter().copied().collect(),
        eigenvectors: sd
            .eigenvectors()
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect(),
        eigengap: eigengap_report(&sd, DEFAULT_GAP_TOL),
    })?;
    Ok(0)
}

fn bound(
    graph: &Path,
    model: &Path,
    perturb: &str,
    probability: Option<f64>,
    variant: &str,
) -> gcnstab::Result<u8> {
    let variant = match variant {
        "as-printed" => BoundVariant::AsPrinted,
        "gap-weighted" => BoundVariant::GapWeighted,
        other => {
            return Err(Error::Config(vec![format!(
                "unknown variant `{other}`; valid: as-printed, gap-weighted"
            )]))
        }
    };
    let g = Graph::load(graph)?;
    let layer = GcnLayer::load(model)?;
    let p: EdgePerturbation = perturb.parse()?;
    p.validate_against(&g)?;
    let sd = eigendecompose(&laplacian(&g))?;
    let c_filter = lipschitz_constant(
        &layer.filter,
        perturbed_interval(sd.lambda_max(), p.insertion_count()).min(g.n() as f64),
    );
    let c_sigma = layer.nonlinearity.lipschitz();
    let opts = TermOptions {
        variant,
        gap_tol: DEFAULT_GAP_TOL,
    };
    let report = match probability {
        None => deterministic_bound_with(&sd, &p, c_filter, c_sigma, opts)?,
        Some(prob) => {
            let cands: Vec<Candidate> = p
                .items()
                .iter()
                .map(|&(edge, sign)| Candidate {
                    edge,
                    sign,
                    probability: prob,
                })
                .collect();
            expected_bound_report(&sd, &cands, c_filter, c_sigma, opts)?
        }
    };
    print_json(&report)?;
    Ok(0)
}
