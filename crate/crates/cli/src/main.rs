//! `descatter`: dataset generation, model fitting, descattering,
//! reconstruction and the experiment sweeps, driven by one JSON config.
//!
//! Settings resolve as flags > config file > built-in defaults. Exit codes:
//! 0 on success, 1 on configuration or input errors, 2 on numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use descatter_core::config::{RunConfig, SpectrumSpec};
use descatter_core::container::Container;
use descatter_core::descatter::{descatter, descatter_with_model, write_trace_csv, Mode};
use descatter_core::experiments::{
    self, recon_config, run_eval, run_noise, run_oracle_fit, run_scatter_estimation, run_scatter_scale,
    run_sweep_neighbors, thread_pool, write_csv, Dataset, EvalReport, Experiment,
};
use descatter_core::local_fit::{fit_global, fit_local};
use descatter_core::recon::{made, reconstruct};
use descatter_core::scatter_models::{save_model, ModelClass};
use descatter_core::Error;

#[derive(Parser, Debug)]
#[command(name = "descatter", version, about = "Local scatter models and fixed-point descattering for radiographs")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON run configuration; unspecified keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Full-resolution grid size (1 mod 4).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Dataset seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base seed for additive noise; image i uses seed + i.
    #[arg(long, global = true)]
    noise_seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict neighbour distances to the ROI.
    #[arg(long, global = true, value_enum)]
    nn_mask: Option<Switch>,
    /// Scatter model class: single_field, convolutional, parametric or multikernel.
    #[arg(long, global = true)]
    model: Option<ModelClass>,
    /// Fit models per image (local) or once on the whole training set (global).
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Neighbour count G for local mode (implies local mode).
    #[arg(long, global = true)]
    neighbors: Option<usize>,
    /// Fixed-point iterations.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// `mono:<xi>`, `poly:default` or `poly:<spectrum.csv>,<attenuation.csv>`.
    #[arg(long, global = true)]
    spectrum: Option<SpectrumSpec>,
    /// Scatter oracle parameter file.
    #[arg(long, global = true)]
    oracle: Option<PathBuf>,
    /// Number of training phantoms.
    #[arg(long, global = true)]
    train: Option<usize>,
    /// Number of test phantoms, taken after the training phantoms.
    #[arg(long, global = true)]
    test: Option<usize>,
    /// Existing dataset written by `generate`; regenerated in memory when absent.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Local,
    Global,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the phantom dataset into `<out>/dataset`.
    Generate,
    /// Fit one model (global, or local to a test image) into `<out>/model`.
    Fit {
        /// Test phantom whose total selects the neighbours; first test image by default.
        #[arg(long)]
        phantom: Option<usize>,
    },
    /// Descatter one total radiograph into `<out>/descatter`.
    Descatter {
        #[arg(long)]
        phantom: Option<usize>,
        /// Container holding the total to descatter instead of a dataset image.
        #[arg(long, requires = "entry")]
        input: Option<PathBuf>,
        #[arg(long)]
        entry: Option<String>,
    },
    /// Reconstruct the central density slice of a transmission entry into `<out>/reconstruct`.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        entry: String,
        /// Dataset phantom whose truth slice scores the result.
        #[arg(long)]
        phantom: Option<usize>,
    },
    /// Descatter every test image with every class, local and global.
    Eval {
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<ModelClass>>,
    },
    /// Local convolutional descattering over neighbour counts.
    SweepNeighbors {
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// RMSE of descattered images against additive noise level.
    Noise {
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Descattering of a density-scaled test phantom.
    ScatterScale {
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
    },
    /// Models fitted to each test pair alone.
    OracleFit {
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<ModelClass>>,
    },
    /// Scatter predicted from the true direct image versus descattering.
    ScatterEstimation {
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<ModelClass>>,
    },
}

impl Overrides {
    fn resolve(&self) -> descatter_core::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.grid {
            c.grid_size = v;
        }
        if let Some(v) = self.seed {
            c.seeds.dataset = v;
        }
        if let Some(v) = self.noise_seed {
            c.seeds.noise = v;
        }
        if let Some(v) = &self.out {
            c.output = v.clone();
        }
        if let Some(v) = self.nn_mask {
            c.nn_mask = matches!(v, Switch::On);
        }
        if let Some(v) = self.model {
            c.model_class = v;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = &self.spectrum {
            c.spectrum = v.clone();
        }
        if let Some(v) = &self.oracle {
            c.oracle = Some(v.clone());
        }
        if let Some(v) = self.train {
            c.split.train = v;
        }
        if let Some(v) = self.test {
            c.split.test = v;
        }
        let g = match c.mode {
            Mode::Local { g } => g,
            Mode::Global => 3,
        };
        c.mode = match (self.mode, self.neighbors) {
            (Some(ModeArg::Global), _) => Mode::Global,
            (Some(ModeArg::Local), n) | (None, n @ Some(_)) => Mode::Local { g: n.unwrap_or(g) },
            (None, None) => c.mode,
        };
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports usage errors with code 2, which is reserved for numerical failures here
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numerical));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = cli.overrides.resolve()?;
    let pool = thread_pool()?;
    pool.install(|| dispatch(config, cli.overrides.dataset.as_deref(), cli.command))
}

fn load_experiment(config: RunConfig, dataset: Option<&Path>) -> anyhow::Result<Experiment> {
    let data = match dataset {
        Some(dir) => {
            let data = Dataset::read(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
            let stored = Container::open(dir)?.manifest().metadata.get("config_hash").cloned();
            if stored.as_ref().and_then(|v| v.as_str()) != Some(config.hash()?.as_str()) {
                log::warn!("dataset {} was generated from a different configuration", dir.display());
            }
            data
        }
        None => Dataset::generate(&config)?,
    };
    Ok(Experiment::new(config, data)?)
}

fn test_phantom(exp: &Experiment, phantom: Option<usize>) -> anyhow::Result<usize> {
    let id = phantom.unwrap_or(exp.data.train);
    if id >= exp.data.len() {
        return Err(Error::InvalidInput(format!("phantom {id} is outside the dataset of {}", exp.data.len())).into());
    }
    Ok(id)
}

fn prepare_out(config: &RunConfig) -> anyhow::Result<PathBuf> {
    let out = config.output.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.json"), config.to_json()?)?;
    Ok(out)
}

fn write_report(out: &Path, stem: &str, hash: &str, report: &EvalReport) -> anyhow::Result<()> {
    write_csv(&out.join(format!("{stem}_made.csv")), hash, &report.rows)?;
    write_csv(&out.join(format!("{stem}_summary.csv")), hash, &report.summary)?;
    if !report.traces.is_empty() {
        write_csv(&out.join(format!("{stem}_traces.csv")), hash, &report.traces)?;
    }
    for s in &report.summary {
        let g = s.g.map(|g| format!(" G={g}")).unwrap_or_default();
        println!(
            "{:<14} {:<9}{g:<5} median MADE {:.5}  [min {:.5}, max {:.5}]",
            s.method, s.mode, s.median, s.min, s.max
        );
    }
    Ok(())
}

fn dispatch(config: RunConfig, dataset: Option<&Path>, command: Command) -> anyhow::Result<()> {
    let out = prepare_out(&config)?;
    let hash = config.hash()?;
    match command {
        Command::Generate => {
            let data = Dataset::generate(&config)?;
            let dir = out.join("dataset");
            data.write(&dir, &hash)?;
            println!("wrote {} pairs ({} test) to {}", data.len(), data.len() - data.train, dir.display());
        }
        Command::Fit { phantom } => {
            let exp = load_experiment(config, dataset)?;
            let cfg = &exp.config;
            let (model, neighbors) = match cfg.mode {
                Mode::Global => {
                    (fit_global(&exp.training, cfg.model_class, &cfg.fit)?, (0..exp.training.len()).collect())
                }
                Mode::Local { g } => {
                    let id = test_phantom(&exp, phantom)?;
                    let total = &exp.data.samples[id].total;
                    let (m, mut n) = fit_local(total, &exp.training, g, cfg.model_class, &cfg.fit, cfg.nn_mask)?;
                    n.sort_unstable();
                    (m, n)
                }
            };
            let dir = out.join("model");
            let path = save_model(&model, &dir, "model")?;
            let info = serde_json::json!({
                "config_hash": hash,
                "class": cfg.model_class,
                "mode": cfg.mode,
                "neighbors": neighbors,
                "norms": exp.training.norms(),
            });
            std::fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&info)?)?;
            println!("wrote {}", path.display());
        }
        Command::Descatter { phantom, input, entry } => {
            let exp = load_experiment(config, dataset)?;
            let cfg = &exp.config;
            let (total, label, truth) = match (input, entry) {
                (Some(dir), Some(name)) => (Container::open(&dir)?.radiograph(&name)?, name, None),
                _ => {
                    let id = test_phantom(&exp, phantom)?;
                    (exp.data.samples[id].total.clone(), experiments::total_name(id), Some(id))
                }
            };
            let opts = cfg.descatter_options();
            let trace = match cfg.mode {
                Mode::Global => descatter_with_model(
                    &total,
                    &fit_global(&exp.training, cfg.model_class, &cfg.fit)?,
                    &exp.training,
                    &opts,
                )?,
                Mode::Local { .. } => descatter(&total, &exp.training, cfg.model_class, &opts)?,
            };
            let dir = out.join("descatter");
            let metadata =
                serde_json::json!({ "config_hash": hash, "source": label, "max_areal": exp.data.max_areal() });
            let mut c = Container::create(&dir, total.size(), total.pixel_pitch(), total.roi_radius(), metadata)?;
            c.put_radiograph("direct", &trace.final_direct)?;
            c.put_radiograph("scatter", &trace.final_scatter)?;
            c.commit()?;
            write_trace_csv(&trace, &dir.join("trace.csv"))?;
            println!(
                "final NMSE {:.3e} after {} iterations",
                trace.iterates.last().copied().unwrap_or(f64::NAN),
                trace.iterates.len()
            );
            if let Some(id) = truth {
                println!("MADE {:.5}", exp.made_of(&trace.final_direct, id)?);
            }
        }
        Command::Reconstruct { input, entry, phantom } => {
            let source = Container::open(&input)?;
            let d = source.radiograph(&entry)?;
            let stored_max = source.manifest().metadata.get("max_areal").and_then(|v| v.as_f64());
            let (max_areal, exp) = match (stored_max, phantom) {
                (Some(m), None) => (m, None),
                _ => {
                    let exp = load_experiment(config.clone(), dataset)?;
                    (stored_max.unwrap_or(exp.data.max_areal()), Some(exp))
                }
            };
            let recon = reconstruct(&d, &recon_config(&config, max_areal)?)?;
            let dir = out.join("reconstruct");
            let metadata = serde_json::json!({ "config_hash": hash, "source": entry, "clamped": recon.clamped });
            let mut c = Container::create(&dir, d.size(), d.pixel_pitch(), d.roi_radius(), metadata)?;
            c.put_radiograph("areal", &recon.areal)?;
            c.put_radiograph("slice", &recon.slice)?;
            c.commit()?;
            if let (Some(exp), Some(id)) = (exp, phantom) {
                let id = test_phantom(&exp, Some(id))?;
                println!("MADE {:.5}", made(&recon.slice, &exp.data.samples[id].truth)?);
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval { classes } => {
            let exp = load_experiment(config, dataset)?;
            let report = run_eval(&exp, classes.as_deref().unwrap_or(&ModelClass::ALL))?;
            write_report(&out, "eval", &hash, &report)?;
        }
        Command::SweepNeighbors { counts } => {
            let exp = load_experiment(config, dataset)?;
            let counts = counts.unwrap_or_else(|| exp.config.neighbor_counts.clone());
            let report = run_sweep_neighbors(&exp, &counts)?;
            write_report(&out, "sweep", &hash, &report)?;
        }
        Command::Noise { sigmas } => {
            let exp = load_experiment(config, dataset)?;
            let sigmas = sigmas.unwrap_or_else(|| exp.config.noise_sigmas.clone());
            let report = run_noise(&exp, &sigmas)?;
            write_csv(&out.join("noise.csv"), &hash, &report.rows)?;
            write_csv(&out.join("noise_fit.csv"), &hash, &[report.fit])?;
            for r in &report.rows {
                println!("sigma {:<6} RMSE {:.6}  neighbours unchanged: {}", r.sigma, r.rmse, r.neighbors_unchanged);
            }
            println!(
                "slope {:.4}  intercept {:.3e}  R^2 {:.5}",
                report.fit.slope, report.fit.intercept, report.fit.r_squared
            );
        }
        Command::ScatterScale { scales } => {
            let exp = load_experiment(config, dataset)?;
            let scales = scales.unwrap_or_else(|| exp.config.scatter_scales.clone());
            let rows = run_scatter_scale(&exp, &scales)?;
            write_csv(&out.join("scatter_scale.csv"), &hash, &rows)?;
            for r in &rows {
                println!(
                    "scale {:<4} {:<9} max S/D {:.3}  MADE raw {:.5}  descattered {:.5}",
                    r.scale, r.training, r.max_scatter_to_direct, r.made_raw, r.made_descattered
                );
            }
        }
        Command::OracleFit { classes } => {
            let exp = load_experiment(config, dataset)?;
            let report = run_oracle_fit(&exp, classes.as_deref().unwrap_or(&ModelClass::ALL))?;
            write_report(&out, "oracle_fit", &hash, &report)?;
            write_oracle_table(&out.join("oracle_fit_table.csv"), &hash, &exp.config, &report)?;
        }
        Command::ScatterEstimation { classes } => {
            let exp = load_experiment(config, dataset)?;
            let report = run_scatter_estimation(&exp, classes.as_deref().unwrap_or(&ModelClass::ALL))?;
            write_csv(&out.join("scatter_estimation.csv"), &hash, &report.rows)?;
            for r in &report.rows {
                println!(
                    "{:<14} {:<7} estimation {:.5}  descattering {:.5}",
                    r.method, r.mode, r.made_estimation, r.made_descattering
                );
            }
            println!("median relative difference {:.4}", report.median_relative_difference);
        }
    }
    Ok(())
}

/// One row per dataset mode, one column per method, holding the maximum MADE over test pairs.
fn write_oracle_table(path: &Path, hash: &str, config: &RunConfig, report: &EvalReport) -> anyhow::Result<()> {
    let dataset = match config.spectrum {
        SpectrumSpec::Mono { .. } => "mono",
        _ => "poly",
    };
    let mut text = format!("# config_hash={hash}\ndataset");
    for s in &report.summary {
        text.push(',');
        text.push_str(&s.method);
    }
    text.push('\n');
    text.push_str(dataset);
    for s in &report.summary {
        text.push_str(&format!(",{}", s.max));
    }
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
