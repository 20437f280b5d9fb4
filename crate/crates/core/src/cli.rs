//! Command-line experiments.
//!
//! Every output embeds the effective configuration: JSON files carry a
//! `config` field and CSV files start with a `# ` comment line holding the
//! configuration as JSON.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::choice::{prob_curve, ChoiceCoefficients, CurvePoint};
use crate::dist::LognormalDist;
use crate::error::{Error, Result};
use crate::estimate::{fit_binary_logit, read_dataset, LogitFit};
use crate::network::{grid_network, load_coordinates, load_edge_list, write_edge_list, Network};
use crate::optimize::{acceptance_rates, write_report_csv, AcceptanceReport, OptimizerConfig};
use crate::sim::demand::{
    generate_poisson, load_taxi_trips, read_demand, write_demand, PoissonSpec,
};
use crate::sim::{run_step1, SimConfig, Step1Output, TripRequest};

#[derive(Debug, Parser)]
#[command(
    name = "waitdisplay",
    version,
    about = "Displayed wait-time optimization for MoD fleets"
)]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Acceptance probability against displayed percentile, per σ.
    Figure1(Figure1Args),
    /// Simulate the fleet, then optimize the display for each σ range.
    Run,
    /// Refit the acceptance model on a choice dataset.
    Fit {
        /// CSV with reliable_wait,reliable_delay,regular_wait,regular_delay,chose_regular.
        dataset: PathBuf,
    },
    /// Write a synthetic grid network as an edge list.
    GenNetwork(GridArgs),
    /// Write synthetic Poisson demand for a network.
    GenDemand(DemandArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct Figure1Args {
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.4, 0.7, 1.0])]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub mean: f64,
    #[arg(long, default_value_t = 2.7)]
    pub reliable_wait: f64,
    /// Lowest percentile (integer, 1..99).
    #[arg(long, default_value_t = 1)]
    pub percentile_min: u32,
    #[arg(long, default_value_t = 99)]
    pub percentile_max: u32,
    #[arg(long, default_value_t = 1)]
    pub percentile_step: u32,
}

impl Default for Figure1Args {
    fn default() -> Self {
        Self {
            sigmas: vec![0.4, 0.7, 1.0],
            mean: 1.5,
            reliable_wait: 2.7,
            percentile_min: 1,
            percentile_max: 99,
            percentile_step: 1,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridArgs {
    #[arg(long, default_value_t = 15)]
    pub side: usize,
    /// Edge mean-time range in minutes, as `min,max`.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 1.0])]
    #[serde(with = "pair")]
    pub time_range: Vec<f64>,
    #[arg(long = "grid-seed", default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
}

mod pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let (a, b) = <(f64, f64)>::deserialize(d)?;
        Ok(vec![a, b])
    }
}

#[derive(Debug, Clone, Args)]
pub struct DemandArgs {
    /// Edge list to place demand on; defaults to the configured network.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub rate_per_minute: f64,
    #[arg(long, default_value_t = 2500.0)]
    pub duration_minutes: f64,
    /// Fix the number of requests instead of drawing it.
    #[arg(long)]
    pub requests: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    EdgeList {
        path: PathBuf,
        #[serde(default)]
        coordinates: Option<PathBuf>,
    },
    Grid(GridArgs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSource {
    Csv {
        path: PathBuf,
    },
    Poisson(PoissonSpec),
    /// Taxi records snapped to nodes with a `node,x,y` mapping file.
    Taxi {
        path: PathBuf,
        node_mapping: PathBuf,
        /// `%Y-%m-%d %H:%M:%S`; defaults to the earliest pick-up.
        #[serde(default)]
        start: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSource,
    pub demand: DemandSource,
    #[serde(default)]
    pub coefficients: ChoiceCoefficients,
    pub sim: SimConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// σ ranges to optimize for; empty means just `optimizer.sigma_range`.
    #[serde(default)]
    pub sigma_ranges: Vec<(f64, f64)>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Parses JSON, reporting the field path of any structural error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::validation(field, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.network {
            NetworkSource::EdgeList { path, coordinates } => {
                fix(path);
                if let Some(c) = coordinates {
                    fix(c);
                }
            }
            NetworkSource::Grid(_) => {}
        }
        match &mut self.demand {
            DemandSource::Csv { path } => fix(path),
            DemandSource::Taxi {
                path, node_mapping, ..
            } => {
                fix(path);
                fix(node_mapping);
            }
            DemandSource::Poisson(_) => {}
        }
        fix(&mut self.output_dir);
    }

    /// Applies `--seed`: every seed in the configuration is replaced.
    pub fn override_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.optimizer.seed = seed;
        if let NetworkSource::Grid(g) = &mut self.network {
            g.seed = seed;
        }
        if let DemandSource::Poisson(p) = &mut self.demand {
            p.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let NetworkSource::Grid(g) = &self.network {
            if g.time_range.len() != 2 {
                return Err(Error::validation(
                    "network.grid.time_range",
                    "needs two values",
                ));
            }
        }
        if let DemandSource::Poisson(p) = &self.demand {
            p.validate("demand.poisson.")?;
        }
        self.coefficients
            .validate()
            .map_err(|e| Error::validation("coefficients", e.to_string()))?;
        self.sim.validate("sim.")?;
        self.optimizer.validate("optimizer.")?;
        for (i, r) in self.sigma_ranges.iter().enumerate() {
            crate::sim::validate_sigma_range(*r, &format!("sigma_ranges[{i}]"))?;
        }
        Ok(())
    }

    pub fn build_network(&self) -> Result<Network> {
        match &self.network {
            NetworkSource::Grid(g) => {
                grid_network(g.side, (g.time_range[0], g.time_range[1]), g.seed)
                    .map_err(|e| Error::validation("network.grid", e.to_string()))
            }
            NetworkSource::EdgeList { path, coordinates } => {
                let net = load_edge_list(open(path)?, &path.display().to_string())?;
                match coordinates {
                    None => Ok(net),
                    Some(c) => {
                        let mut rows = load_coordinates(open(c)?, &c.display().to_string())?;
                        rows.sort_by_key(|r| r.0);
                        net.with_coordinates(rows.into_iter().map(|r| (r.1, r.2)).collect())
                    }
                }
            }
        }
    }

    pub fn build_demand(&self, net: &Network) -> Result<Vec<TripRequest>> {
        let demand = match &self.demand {
            DemandSource::Poisson(spec) => generate_poisson(net, spec)?,
            DemandSource::Csv { path } => read_demand(open(path)?, &path.display().to_string())?,
            DemandSource::Taxi {
                path,
                node_mapping,
                start,
            } => {
                let start = start
                    .as_deref()
                    .map(|s| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
                    .transpose()
                    .map_err(|e| Error::validation("demand.taxi.start", e.to_string()))?;
                let coords =
                    load_coordinates(open(node_mapping)?, &node_mapping.display().to_string())?;
                load_taxi_trips(open(path)?, &path.display().to_string(), &coords, start)?
            }
        };
        if demand.is_empty() {
            return Err(Error::validation(
                "demand",
                "configuration yields no trip requests",
            ));
        }
        Ok(demand)
    }

    pub fn effective_sigma_ranges(&self) -> Vec<(f64, f64)> {
        if self.sigma_ranges.is_empty() {
            vec![self.optimizer.sigma_range]
        } else {
            self.sigma_ranges.clone()
        }
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// CSV body prefixed with a `# {config}` line.
fn csv_with_header<T: Serialize>(config: &T, body: Vec<u8>) -> Result<Vec<u8>> {
    let mut out = format!("# {}\n", serde_json::to_string(config)?).into_bytes();
    out.extend(body);
    Ok(out)
}

#[derive(Debug, Serialize)]
struct Figure1Row {
    sigma: f64,
    percentile: f64,
    displayed_wait: f64,
    avg_delay: f64,
    prob_regular: f64,
}

/// Probability curves for each σ; one row per (σ, percentile).
pub fn figure1_rows(
    args: &Figure1Args,
    coeffs: &ChoiceCoefficients,
) -> Result<Vec<(f64, CurvePoint)>> {
    let (lo, hi, step) = (
        args.percentile_min,
        args.percentile_max,
        args.percentile_step,
    );
    if !(1 <= lo && lo <= hi && hi <= 99 && step >= 1) {
        return Err(Error::validation(
            "percentiles",
            format!("need 1 <= min <= max <= 99 and step >= 1, got {lo}..{hi} step {step}"),
        ));
    }
    if args.sigmas.is_empty() {
        return Err(Error::validation(
            "sigmas",
            "at least one sigma is required",
        ));
    }
    let percentiles: Vec<f64> = (lo..=hi)
        .step_by(step as usize)
        .map(|p| f64::from(p) / 100.0)
        .collect();
    let mut rows = Vec::new();
    for &sigma in &args.sigmas {
        let dist = LognormalDist::from_mean(args.mean, sigma)
            .map_err(|e| Error::validation("sigmas", e.to_string()))?;
        for point in prob_curve(coeffs, args.reliable_wait, &dist, &percentiles)? {
            rows.push((sigma, point));
        }
    }
    Ok(rows)
}

pub fn cmd_figure1(args: &Figure1Args, out_dir: &Path) -> Result<PathBuf> {
    let coeffs = ChoiceCoefficients::default();
    let rows = figure1_rows(args, &coeffs)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for (sigma, p) in rows {
        wtr.serialize(Figure1Row {
            sigma,
            percentile: p.percentile,
            displayed_wait: p.displayed_wait,
            avg_delay: p.avg_delay,
            prob_regular: p.probability,
        })?;
    }
    let body = wtr.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    #[derive(Serialize)]
    struct Echo<'a> {
        figure1: &'a Figure1Args,
        coefficients: ChoiceCoefficients,
    }
    let path = out_dir.join("figure1.csv");
    write_file(
        &path,
        &csv_with_header(
            &Echo {
                figure1: args,
                coefficients: coeffs,
            },
            body,
        )?,
    )?;
    Ok(path)
}

/// Everything `run` writes.
#[derive(Debug)]
pub struct RunOutput {
    pub step1: Step1Output,
    pub reports: Vec<AcceptanceReport>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a ExperimentConfig,
    reports: &'a [AcceptanceReport],
}

#[derive(Serialize)]
struct Step1File<'a> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    step1: &'a Step1Output,
}

/// Runs the simulation and the display optimization for every σ range.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let net = cfg.build_network()?;
    let demand = cfg.build_demand(&net)?;
    let step1 = run_step1(&net, &demand, &cfg.coefficients, &cfg.sim)?;
    let reports = cfg
        .effective_sigma_ranges()
        .into_iter()
        .map(|sigma_range| {
            let opt = OptimizerConfig {
                sigma_range,
                ..cfg.optimizer.clone()
            };
            acceptance_rates(&step1, &opt, &cfg.coefficients)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput { step1, reports })
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let output = run_experiment(cfg)?;
    let dir = &cfg.output_dir;
    write_file(
        &dir.join("step1.json"),
        serde_json::to_string_pretty(&Step1File {
            config: cfg,
            step1: &output.step1,
        })?
        .as_bytes(),
    )?;
    write_file(
        &dir.join("report.json"),
        serde_json::to_string_pretty(&ReportFile {
            config: cfg,
            reports: &output.reports,
        })?
        .as_bytes(),
    )?;
    let mut body = Vec::new();
    write_report_csv(&mut body, &output.reports)?;
    write_file(&dir.join("report.csv"), &csv_with_header(cfg, body)?)?;
    Ok(output)
}

#[derive(Serialize)]
struct FitFile<'a> {
    dataset: &'a Path,
    #[serde(flatten)]
    fit: &'a LogitFit,
    t_values: [f64; 3],
}

pub fn cmd_fit(dataset: &Path, out_dir: &Path) -> Result<LogitFit> {
    let data = read_dataset(open(dataset)?, &dataset.display().to_string())?;
    let fit = fit_binary_logit(&data).map_err(|e| match e {
        Error::Domain(msg) => Error::validation("dataset", msg),
        other => other,
    })?;
    let file = FitFile {
        dataset,
        fit: &fit,
        t_values: fit.t_values(),
    };
    write_file(
        &out_dir.join("fit.json"),
        serde_json::to_string_pretty(&file)?.as_bytes(),
    )?;
    Ok(fit)
}

pub fn cmd_gen_network(args: &GridArgs, out_dir: &Path) -> Result<PathBuf> {
    if args.time_range.len() != 2 {
        return Err(Error::validation("time_range", "needs two values"));
    }
    let net = grid_network(
        args.side,
        (args.time_range[0], args.time_range[1]),
        args.seed,
    )
    .map_err(|e| Error::validation("grid", e.to_string()))?;
    let mut body = Vec::new();
    write_edge_list(&mut body, &net)?;
    let path = out_dir.join("network.csv");
    write_file(&path, &csv_with_header(args, body)?)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["node", "x", "y"])?;
    for (i, (x, y)) in net.coordinates().unwrap_or_default().iter().enumerate() {
        wtr.write_record([i.to_string(), x.to_string(), y.to_string()])?;
    }
    let coords = wtr.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    write_file(&out_dir.join("nodes.csv"), &csv_with_header(args, coords)?)?;
    Ok(path)
}

pub fn cmd_gen_demand(net: &Network, spec: &PoissonSpec, out_dir: &Path) -> Result<PathBuf> {
    let demand = generate_poisson(net, spec).map_err(|e| match e {
        Error::Domain(msg) => Error::validation("demand", msg),
        other => other,
    })?;
    let mut body = Vec::new();
    write_demand(&mut body, &demand)?;
    let path = out_dir.join("demand.csv");
    write_file(&path, &csv_with_header(spec, body)?)?;
    Ok(path)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let config = cli
        .config
        .as_deref()
        .map(ExperimentConfig::load)
        .transpose()?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.as_ref().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Figure1(args) => {
            let path = cmd_figure1(args, &out_dir)?;
            println!("{}", path.display());
        }
        Command::Run => {
            let mut cfg =
                config.ok_or_else(|| Error::validation("--config", "`run` needs a config file"))?;
            if let Some(seed) = cli.seed {
                cfg.override_seed(seed);
            }
            if let Some(out) = &cli.out {
                cfg.output_dir = out.clone();
            }
            let output = cmd_run(&cfg)?;
            for r in &output.reports {
                println!(
                    "sigma [{}, {}]: ewt {:.4}  optimal {:.4}  gain {:+.4}  percentile {:.3}",
                    r.sigma_range.0,
                    r.sigma_range.1,
                    r.baseline_rate_ewt,
                    r.optimized_rate,
                    r.gain,
                    r.mean_optimal_percentile
                );
            }
        }
        Command::Fit { dataset } => {
            let fit = cmd_fit(dataset, &out_dir)?;
            let c = fit.coefficients;
            println!(
                "asc {:.4}  log-wait {:.4}  exp-reldelay {:.4}  LL {:.2}  BIC {:.2}",
                c.asc_regular,
                c.beta_log_wait,
                c.beta_exp_reldelay,
                fit.statistics.loglik,
                fit.statistics.bic
            );
        }
        Command::GenNetwork(args) => {
            let mut args = args.clone();
            if let Some(seed) = cli.seed {
                args.seed = seed;
            }
            println!("{}", cmd_gen_network(&args, &out_dir)?.display());
        }
        Command::GenDemand(args) => {
            let net = match (&args.network, &config) {
                (Some(path), _) => load_edge_list(open(path)?, &path.display().to_string())?,
                (None, Some(cfg)) => cfg.build_network()?,
                (None, None) => {
                    return Err(Error::validation(
                        "--network",
                        "give an edge list or a --config",
                    ))
                }
            };
            let spec = PoissonSpec {
                rate_per_minute: args.rate_per_minute,
                duration_minutes: args.duration_minutes,
                requests: args.requests,
                seed: cli.seed.unwrap_or_default(),
            };
            spec.validate("")?;
            println!("{}", cmd_gen_demand(&net, &spec, &out_dir)?.display());
        }
    }
    Ok(())
}
