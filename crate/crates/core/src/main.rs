use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use aoi_fluid::harness::config::{preset_text, PRESETS};
use aoi_fluid::harness::scenario::{tune, CellPolicy};
use aoi_fluid::harness::{
    emit_fluid_report, ks_distance, load_config, load_preset, run_scenario, ExperimentConfig, HarnessError, EXIT_CONFIG,
    EXIT_FAILURE, EXIT_OK, EXIT_PARTIAL,
};
use aoi_fluid::sim::{run, InitialAges, PolicySpec, SimConfig};
use aoi_fluid::transient::{default_h_max, gaussian_density, init_transient, DEFAULT_GRID_STEP};
use aoi_fluid::model::with_thresholds;

#[derive(Parser)]
#[command(name = "aoi-fluid", version, about = "AoI scheduling simulator and fluid-limit solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct Source {
    /// Config file (flat `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset, see `presets`.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        Ok(match (&self.config, &self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => load_preset(name)?,
            (None, None) => unreachable!("clap enforces one source"),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Threshold,
    Index,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Equilibrium,
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal thresholds, equilibrium and predicted optimum.
    Fluid {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        num_agents: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One simulation run.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        num_agents: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the transient fluid PDE.
    Transient {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value = "gaussian")]
        init: InitArg,
        #[arg(long, default_value_t = 20.0)]
        t_end: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
        /// Time step (defaults to the grid step).
        #[arg(long)]
        dt: Option<f64>,
        /// `N` setting the Gaussian width `1/sqrt(N)` (defaults to the config's).
        #[arg(long)]
        num_agents: Option<u64>,
        /// Report interval in rescaled time.
        #[arg(long, default_value_t = 1.0)]
        every: f64,
        /// Write densities at every report time as CSV.
        #[arg(long)]
        density_csv: Option<PathBuf>,
    },
    /// Run a scenario and write CSV/JSON results.
    Experiment {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        replications: Option<u32>,
        #[arg(long, value_delimiter = ',')]
        n_sweep: Option<Vec<u64>>,
    },
    /// List presets, or print one as config text.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

fn emit(value: &serde_json::Value, out: Option<&PathBuf>) -> Result<(), HarnessError> {
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    match out {
        Some(path) => std::fs::write(path, body).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn with_overrides(mut cfg: ExperimentConfig, num_agents: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    if let Some(n) = num_agents {
        cfg.num_agents = n;
        cfg.n_sweep.clear();
    }
    aoi_fluid::harness::config::validate(&cfg)?;
    Ok(cfg)
}

fn fluid(source: &Source, num_agents: Option<u64>, out: Option<&PathBuf>) -> Result<u8, HarnessError> {
    let cfg = with_overrides(source.load()?, num_agents)?;
    let reports = cfg
        .sizes()
        .into_iter()
        .map(|n| emit_fluid_report(&cfg.classes, cfg.age_function, n, cfg.epsilon))
        .collect::<Result<Vec<_>, _>>()?;
    emit(&json!(reports), out)?;
    Ok(EXIT_OK)
}

fn simulate(
    source: &Source,
    num_agents: Option<u64>,
    seed: Option<u64>,
    horizon: Option<u64>,
    policy: Option<PolicyArg>,
    out: Option<&PathBuf>,
) -> Result<u8, HarnessError> {
    let mut cfg = source.load()?;
    if let Some(h) = horizon {
        cfg.horizon = h;
        cfg.snapshot_slots.retain(|&s| s <= h);
    }
    let n = num_agents.unwrap_or(cfg.num_agents);
    let cfg = with_overrides(cfg, Some(n))?;
    let tuned = tune(&cfg, n)?;
    let policy = match policy {
        Some(PolicyArg::Threshold) => CellPolicy::ThresholdRandom,
        Some(PolicyArg::Index) => CellPolicy::Index,
        None => match cfg.policy {
            aoi_fluid::harness::config::PolicyKind::ThresholdRandom => CellPolicy::ThresholdRandom,
            aoi_fluid::harness::config::PolicyKind::Index => CellPolicy::Index,
        },
    };
    let spec = match policy {
        CellPolicy::ThresholdRandom => PolicySpec::ThresholdRandom {
            thresholds_unscaled: tuned.thresholds_unscaled.clone(),
        },
        CellPolicy::Index => PolicySpec::Index {
            index_exponent: cfg.index_exponent,
        },
    };
    let mut sim = SimConfig::new(cfg.network(n), spec, cfg.horizon, seed.unwrap_or(cfg.seed));
    sim.snapshot_slots = cfg.snapshot_slots.clone();
    sim.age_function = cfg.age_function;
    sim.age_scale = cfg.age_scale;
    sim.reset = cfg.reset;
    sim.warmup = cfg.warmup;
    if cfg.initial_ages == aoi_fluid::harness::config::InitialAgeChoice::Gaussian {
        sim.initial_ages = InitialAges::Gaussian;
    }
    let res = run(&sim)?;
    let ks = res
        .snapshots
        .iter()
        .map(|s| Ok(json!({ "slot": s.slot, "ks": ks_distance(s, &tuned.theory)?.statistic })))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    emit(
        &json!({
            "num_agents": n,
            "policy": policy.name(),
            "seed": sim.seed,
            "horizon": sim.horizon,
            "thresholds_unscaled": tuned.thresholds_unscaled,
            "avg_aoi": res.avg_aoi,
            "avg_age_value": res.avg_age_value,
            "fluid_avg_aoi": tuned.aoi_prediction,
            "fluid_age_value": tuned.agefn_prediction,
            "lower_bound": tuned.aoi_lower_bound,
            "deliveries": res.deliveries,
            "idle_slots": res.idle_slots,
            "snapshots": ks,
        }),
        out,
    )?;
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn transient(
    source: &Source,
    init: InitArg,
    t_end: f64,
    grid_step: f64,
    dt: Option<f64>,
    num_agents: Option<u64>,
    every: f64,
    density_csv: Option<&PathBuf>,
) -> Result<u8, HarnessError> {
    let cfg = source.load()?;
    let n = num_agents.unwrap_or(cfg.num_agents);
    let tuned = tune(&cfg, n)?;
    let classes = with_thresholds(&cfg.classes, &tuned.thresholds_rescaled);
    let eq = tuned.theory.clone();
    let h_max = default_h_max(&classes);
    let mut state = match init {
        InitArg::Equilibrium => init_transient(&classes, |c, h| eq.density_at(c, h), grid_step, h_max)?,
        InitArg::Gaussian => {
            let std = 1.0 / (n as f64).sqrt();
            let gs: Vec<_> = classes.iter().map(|c| gaussian_density(c.fraction, 0.5, std)).collect();
            init_transient(&classes, |c, h| gs[c](h), grid_step, h_max)?
        }
    };
    let dt = dt.unwrap_or(grid_step);
    let mut csv = density_csv.map(|_| String::from("class,h,density,time\n"));
    let mut trace = Vec::new();
    let mut record = |s: &aoi_fluid::transient::TransientSolution, trace: &mut Vec<serde_json::Value>| {
        trace.push(json!({
            "time": s.time,
            "sup_distance": s.sup_distance(|c, h| eq.density_at(c, h)),
            "mass": s.riemann_mass(),
            "beta": s.beta(),
        }));
        if let Some(body) = csv.as_mut() {
            use std::fmt::Write as _;
            for (c, col) in s.densities.iter().enumerate() {
                for (k, v) in col.iter().enumerate() {
                    writeln!(body, "{c},{},{v},{}", s.h_at(k), s.time).expect("string write");
                }
            }
        }
    };
    record(&state, &mut trace);
    let mut next = every;
    while state.time < t_end - 1e-12 {
        let target = next.min(t_end);
        state.run_to(target, dt)?;
        record(&state, &mut trace);
        next += every;
    }
    if let (Some(path), Some(body)) = (density_csv, csv) {
        std::fs::write(path, body).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
    }
    emit(
        &json!({
            "thresholds_rescaled": tuned.thresholds_rescaled,
            "equilibrium_beta": eq.beta,
            "grid_step": grid_step,
            "dt": dt,
            "h_max": h_max,
            "trace": trace,
        }),
        None,
    )?;
    Ok(EXIT_OK)
}

fn experiment(
    source: &Source,
    output_dir: Option<PathBuf>,
    horizon: Option<u64>,
    replications: Option<u32>,
    n_sweep: Option<Vec<u64>>,
) -> Result<u8, HarnessError> {
    let mut cfg = source.load()?;
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
        cfg.snapshot_slots.retain(|&s| s <= h);
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    if let Some(sweep) = n_sweep {
        cfg.n_sweep = sweep;
    }
    aoi_fluid::harness::config::validate(&cfg)?;
    let outcome = run_scenario(&cfg)?;
    for f in &outcome.files {
        eprintln!("wrote {}", f.display());
    }
    if outcome.is_complete() {
        Ok(EXIT_OK)
    } else {
        eprintln!("some cells failed; see manifest.json");
        Ok(EXIT_PARTIAL)
    }
}

fn presets(show: Option<&str>) -> u8 {
    match show {
        None => {
            for (name, about) in PRESETS {
                println!("{name:<12} {about}");
            }
            EXIT_OK
        }
        Some(name) => match preset_text(name) {
            Some(text) => {
                print!("{text}");
                EXIT_OK
            }
            None => {
                eprintln!("unknown preset {name:?}");
                EXIT_CONFIG
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fluid {
            source,
            num_agents,
            out,
        } => fluid(&source, num_agents, out.as_ref()),
        Command::Simulate {
            source,
            num_agents,
            seed,
            horizon,
            policy,
            out,
        } => simulate(&source, num_agents, seed, horizon, policy, out.as_ref()),
        Command::Transient {
            source,
            init,
            t_end,
            grid_step,
            dt,
            num_agents,
            every,
            density_csv,
        } => transient(&source, init, t_end, grid_step, dt, num_agents, every, density_csv.as_ref()),
        Command::Experiment {
            source,
            output_dir,
            horizon,
            replications,
            n_sweep,
        } => experiment(&source, output_dir, horizon, replications, n_sweep),
        Command::Presets { show } => Ok(presets(show.as_deref())),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let code = err.exit_code();
            ExitCode::from(if code == EXIT_OK { EXIT_FAILURE } else { code })
        }
    }
}
