use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use island_diffusions::config::ConfigMap;
use island_diffusions::experiments::{
    run_analysis, run_comparison, run_convergence, run_duality, run_identity_suite, write_csv_file, ExperimentConfig,
    Summary,
};
use island_diffusions::sde_sim::{write_system_csv, Simulator, TimeGrid};
use island_diffusions::virgin_island::{build_tree, spectrum, SpectrumSource, TreeConfig};
use island_diffusions::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Used when no `--config` is given: logistic branching with γ = K = β = 1.
const DEFAULT_CONFIG: &str = r#"{
    "drift": {"family": "logistic", "params": {"gamma": 1, "K": 1}},
    "diffusion": {"family": "linear", "params": {"beta": 1}},
    "structure": {"mu_concave": true, "mu_subadditive": true, "sigma2_additive": true}
}"#;

#[derive(Parser, Debug)]
#[command(name = "islands", version, about = "Island diffusions and the virgin island model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config: coefficient spec plus optional experiment settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    replicates: Option<u64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Excursion height cutoff of the virgin island model.
    #[arg(long, global = true)]
    delta: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extinction criterion, verdict, ρ and the extinction probability curve.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// One island system run, written as `t,island,level,value` rows.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Split island masses into this many migration levels (uniform migration only).
        #[arg(long)]
        levels: Option<usize>,
    },
    /// One virgin island tree and its mass spectrum at the horizon.
    Tree {
        #[command(flatten)]
        common: Common,
    },
    /// Virgin island tree against McKean–Vlasov duality check.
    Duality {
        #[command(flatten)]
        common: Common,
    },
    /// Island system against virgin island model under the applicable stochastic order.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Tent-functional gaps along the island-count ladder.
    Converge {
        #[command(flatten)]
        common: Common,
    },
    /// Excursion-area, Q-mass and speed-measure identities.
    Identities {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut map = match &common.config {
        Some(path) => ConfigMap::from_file(path)?,
        None => ConfigMap::from_json_str(DEFAULT_CONFIG)?,
    };
    if let Some(s) = common.seed {
        map.set("seed", s.into());
    }
    if let Some(r) = common.replicates {
        map.set("replicates", r.into());
    }
    for (key, v) in [("dt", common.dt), ("delta", common.delta)] {
        if let Some(v) = v {
            let num =
                serde_json::Number::from_f64(v).ok_or_else(|| Error::Config(format!("--{key} must be finite")))?;
            map.set(key, num.into());
        }
    }
    let mut cfg = ExperimentConfig::from_map(&map)?;
    std::fs::create_dir_all(&common.out)?;
    cfg.out_dir = Some(common.out.clone());
    Ok(cfg)
}

fn report(summary: &Summary, dir: &Path) {
    println!("{}: config {} seed {}", summary.experiment, &summary.config_hash[..12], summary.seed);
    for (name, passed) in &summary.verdicts {
        println!("  [{}] {name}", if *passed { "PASS" } else { "FAIL" });
    }
    println!("  outputs in {}", dir.display());
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Analyze { common } => {
            let cfg = load(&common)?;
            let rep = run_analysis(&cfg)?;
            let mut stdout = std::io::stdout().lock();
            rep.write_csv(&mut stdout)?;
            rep.write_survival_csv(&mut stdout)?;
            report(&rep.summary, &common.out);
        }
        Command::Simulate { common, levels } => {
            let cfg = load(&common)?;
            let grid = TimeGrid::new(0.0, cfg.horizon, cfg.dt)?;
            let sim = Simulator::new(&cfg.spec);
            let n = cfg.islands;
            let x0 = cfg.initial_state(n)?;
            let path = match (levels, cfg.migration.is_some()) {
                (Some(_), true) => {
                    return Err(Error::Config("--levels needs uniform migration".into()));
                }
                (Some(k), false) => sim.level_system(n, cfg.theta, &x0, k, &grid, cfg.seed)?,
                (None, false) => sim.uniform_system(n, cfg.theta, &x0, &grid, cfg.seed)?,
                (None, true) => {
                    let island_diffusions::sde_sim::Topology::Matrix(m) = cfg.topology()? else {
                        unreachable!("explicit migration yields a matrix topology")
                    };
                    sim.system(&m, &x0, &grid, cfg.seed)?
                }
            };
            write_csv_file(&common.out, "system.csv", |w| write_system_csv(&path, w))?;
            let mut summary = Summary::new("simulate", &cfg);
            summary
                .metric("final_total_mass", path.total_mass(grid.steps()))
                .metric("dropped_mass", path.dropped_mass)
                .metric("experimental", path.experimental);
            summary.write(&common.out)?;
            report(&summary, &common.out);
        }
        Command::Tree { common } => {
            let cfg = load(&common)?;
            let tcfg = TreeConfig::new(cfg.theta, cfg.delta, cfg.horizon, cfg.dt);
            let tree = build_tree(&cfg.spec, &cfg.x0, tcfg, cfg.seed)?;
            write_csv_file(&common.out, "tree.csv", |w| tree.write_csv(w))?;
            let snap = spectrum(SpectrumSource::Tree(&tree), cfg.horizon, &cfg.identity.bins)?;
            write_csv_file(&common.out, "spectrum.csv", |w| snap.write_csv(w, true))?;
            let mut summary = Summary::new("tree", &cfg);
            summary
                .metric("islands", tree.islands.len())
                .metric("max_generation", tree.max_generation())
                .metric("alive_at_horizon", tree.alive_at_horizon())
                .metric("total_mass_at_horizon", tree.total_mass(cfg.horizon)?)
                .metric("dropped_births", tree.dropped_births)
                .metric("q_mass", tree.q_mass);
            summary.write(&common.out)?;
            report(&summary, &common.out);
        }
        Command::Duality { common } => {
            let cfg = load(&common)?;
            report(&run_duality(&cfg)?.summary, &common.out);
        }
        Command::Compare { common } => {
            let cfg = load(&common)?;
            report(&run_comparison(&cfg)?.summary, &common.out);
        }
        Command::Converge { common } => {
            let cfg = load(&common)?;
            report(&run_convergence(&cfg)?.summary, &common.out);
        }
        Command::Identities { common } => {
            let cfg = load(&common)?;
            report(&run_identity_suite(&cfg)?.summary, &common.out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERIC })
        }
    }
}
