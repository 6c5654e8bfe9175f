use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use linimm::analysis::{self, floquet, inflowing_region, state_grid, Rect};
use linimm::analytic;
use linimm::dynsys::system;
use linimm::immersion::{
    self, evaluate, generate, test_cases, Experiment, ExperimentConfig, ImmersionModel, PairedDataset,
    ReconstructOptions,
};
use linimm::odeint::{IntegratorConfig, Trajectory};

#[derive(Parser)]
#[command(name = "linimm", version, about = "Learned linear immersions of nonlinear oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired dataset.
    Gen {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train phi, phi_inv and (if used) the period network.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        /// Dataset directory written by `gen`; generated on the fly when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the LM iteration budget.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Reconstruct one trajectory through the linear system.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        #[arg(long)]
        ablate_period: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare reconstructions with integrated trajectories on held-out states.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ablate_period: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Koopman eigenfunction magnitudes and phases on a state grid.
    Eigenfunctions {
        #[arg(long)]
        model: PathBuf,
        /// x1_min,x1_max,x2_min,x2_max
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-2.5, 2.5, -2.5, 2.5])]
        rect: Vec<f64>,
        #[arg(long, default_value_t = 101)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Periodic orbit, Floquet multipliers and decay rate.
    Floquet {
        #[arg(long, default_value = "vdp")]
        system: String,
        /// Starting guess on (or near) the orbit.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
        /// Period guess (ignored for forced systems).
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inflowing region of the forced Duffing oscillator.
    Region {
        #[arg(long, default_value = "duffing_fd")]
        system: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-0.8, 1.2, -1.0, 0.6])]
        rect: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        spacing: f64,
        #[arg(long, default_value_t = 60)]
        max_rounds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the closed-form immersions.
    VerifyAnalytic {
        /// harmonic_family, limit_cycle, coexisting or all.
        #[arg(long, default_value = "all")]
        case: String,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ExpArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.experiment) {
            (Some(path), exp) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let cfg = ExperimentConfig::from_json(&text)?;
                if let Some(e) = exp {
                    if e != cfg.experiment() {
                        bail!("--experiment {e} does not match the config ({})", cfg.experiment());
                    }
                }
                cfg
            }
            (None, Some(e)) => ExperimentConfig::default_for(e),
            (None, None) => bail!("either --experiment or --config is required"),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<()> {
    tr.write_csv(BufWriter::new(fs::File::create(path)?))?;
    Ok(())
}

fn parse_rect(v: &[f64]) -> Result<Rect> {
    if v.len() != 4 || v[0] >= v[1] || v[2] >= v[3] {
        bail!("a rectangle is x1_min,x1_max,x2_min,x2_max with min < max");
    }
    Ok(Rect::new((v[0], v[1]), (v[2], v[3])))
}

const CONFIG_FILE: &str = "config.json";

fn cmd_gen(exp: &ExpArgs, out: &Path) -> Result<()> {
    let cfg = exp.resolve()?;
    let data = generate(&cfg)?;
    data.write_dir(out, Some(&cfg))?;
    println!("{}: {} samples written to {}", cfg.experiment(), data.rows(), out.display());
    Ok(())
}

fn cmd_train(exp: &ExpArgs, data_dir: Option<&Path>, out: &Path, max_iters: Option<usize>) -> Result<()> {
    let stored = match data_dir {
        Some(d) => PairedDataset::read_config(d)?,
        None => None,
    };
    let mut cfg = match (stored, exp.config.is_some() || exp.experiment.is_some()) {
        (Some(c), false) => c,
        _ => exp.resolve()?,
    };
    if let Some(s) = exp.seed {
        cfg.seed = s;
    }
    if let Some(n) = max_iters {
        cfg.lm.max_iters = n;
    }
    let data = match data_dir {
        Some(d) => PairedDataset::read_dir(d)?,
        None => generate(&cfg)?,
    };
    let (model, report) = immersion::train(&cfg, &data)?;
    model.save(out)?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    write_json(&out.join("train_report.json"), &report)?;
    for (name, net) in report.nets() {
        net.lm.write_log_csv(&out.join(format!("{name}_log.csv")))?;
        println!(
            "{name}: {} iterations, loss {:.3e} -> {:.3e}, rmse {:.3e} ({:?})",
            net.lm.iterations,
            net.lm.initial_loss(),
            net.lm.final_loss(),
            net.rmse,
            net.lm.terminal_reason
        );
    }
    Ok(())
}

fn cmd_reconstruct(model_dir: &Path, x0: &[f64], horizon: f64, dt: f64, ablate: bool, out: &Path) -> Result<()> {
    if !(horizon > 0.0 && dt > 0.0) {
        bail!("horizon and dt must be positive");
    }
    let model = ImmersionModel::load(model_dir)?;
    let n = (horizon / dt * (1.0 + 1e-12)).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|i| (i as f64 * dt).min(horizon)).collect();
    let opts = ReconstructOptions { ablate_period: ablate, ..Default::default() };
    let rec = model.reconstruct(x0, &times, &opts)?;
    write_trajectory(out, &rec.state)?;
    let lin_path = out.with_extension("linear.csv");
    write_trajectory(&lin_path, &rec.linear)?;
    println!("wrote {} and {}", out.display(), lin_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    experiment: Experiment,
    ablate_period: bool,
    max_error: f64,
    p90_error: f64,
    case_max_errors: Vec<f64>,
    initial_states: Vec<&'a [f64]>,
}

fn cmd_eval(model_dir: &Path, seed: Option<u64>, ablate: bool, out: &Path) -> Result<()> {
    let model = ImmersionModel::load(model_dir)?;
    let cfg_path = model_dir.join(CONFIG_FILE);
    let mut cfg = if cfg_path.exists() {
        ExperimentConfig::from_json(&fs::read_to_string(&cfg_path)?)?
    } else {
        ExperimentConfig::default_for(model.experiment)
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let cases = test_cases(&cfg, &model.aux)?;
    let opts = ReconstructOptions { ablate_period: ablate, ..Default::default() };
    let report = evaluate(&model, &cases, &opts)?;
    fs::create_dir_all(out)?;
    for (k, case) in report.cases.iter().enumerate() {
        if let (Some(truth), Some(rec)) = (&case.truth, &case.recon) {
            write_trajectory(&out.join(format!("case{k:02}_truth.csv")), truth)?;
            write_trajectory(&out.join(format!("case{k:02}_recon.csv")), &rec.state)?;
            write_trajectory(&out.join(format!("case{k:02}_linear.csv")), &rec.linear)?;
            let err =
                Trajectory::new("relative_error", truth.times.clone(), case.errors.iter().map(|e| vec![*e]).collect())?;
            write_trajectory(&out.join(format!("case{k:02}_error.csv")), &err)?;
        }
    }
    let summary = EvalSummary {
        experiment: report.experiment,
        ablate_period: ablate,
        max_error: report.max_error,
        p90_error: report.p90_error,
        case_max_errors: report.cases.iter().map(|c| c.max_error).collect(),
        initial_states: report.cases.iter().map(|c| c.x0.as_slice()).collect(),
    };
    write_json(&out.join("eval_report.json"), &summary)?;
    println!(
        "{}: {} cases, max relative error {:.4}, 90th percentile {:.4}",
        report.experiment,
        report.cases.len(),
        report.max_error,
        report.p90_error
    );
    Ok(())
}

fn cmd_eigenfunctions(model_dir: &Path, rect: &[f64], n: usize, out: &Path) -> Result<()> {
    let model = ImmersionModel::load(model_dir)?;
    let grid = state_grid(&parse_rect(rect)?, n, n);
    let field = model.eigenfield(&grid)?;
    field.write_csv(BufWriter::new(fs::File::create(out)?))?;
    println!("{} eigenfunctions on {} points written to {}", field.values.len(), grid.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct FloquetOut {
    system: String,
    decay_rate: f64,
    nontrivial_moduli: Vec<f64>,
    #[serde(flatten)]
    result: analysis::FloquetResult,
}

fn cmd_floquet(name: &str, point: Option<&[f64]>, period: Option<f64>, out: Option<&Path>) -> Result<()> {
    let sys = system(name)?;
    let (guess, t_guess): (Vec<f64>, f64) = match name {
        "vdp" => (vec![2.0, 0.0], 6.66),
        "duffing_fd" => (vec![-0.15, 0.0, 0.0], std::f64::consts::TAU / sys.param("Omega").unwrap_or(1.3)),
        "app_lc" => (vec![0.0, 1.0], std::f64::consts::TAU),
        _ => (vec![1.0; sys.dim()], std::f64::consts::TAU),
    };
    let mut p = point.map(|p| p.to_vec()).unwrap_or(guess);
    if p.len() + 1 == sys.dim() && name == "duffing_fd" {
        p.push(0.0);
    }
    let cfg = IntegratorConfig::with_tol(1e-11, 1e-13);
    let res = floquet(&sys, &p, period.unwrap_or(t_guess), &cfg)?;
    let out_value = FloquetOut {
        system: name.to_string(),
        decay_rate: res.decay_rate(),
        nontrivial_moduli: res.nontrivial().iter().map(|m| m.norm()).collect(),
        result: res,
    };
    let text = serde_json::to_string_pretty(&out_value)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct RegionSummary {
    rect: Rect,
    spacing: f64,
    grid_points: usize,
    extension_points: usize,
    closed: bool,
    /// Bounding box of all points: x1_min, x1_max, x2_min, x2_max.
    bounds: [f64; 4],
}

fn cmd_region(name: &str, rect: &[f64], spacing: f64, max_rounds: usize, out: &Path) -> Result<()> {
    let sys = system(name)?;
    let rect = parse_rect(rect)?;
    let cfg = IntegratorConfig::with_tol(1e-10, 1e-12);
    let region = inflowing_region(&sys, rect, spacing, max_rounds, &cfg)?;
    fs::create_dir_all(out)?;
    region.write_csv(BufWriter::new(fs::File::create(out.join("region.csv"))?))?;
    let mut bounds = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for p in region.all_points() {
        bounds = [bounds[0].min(p[0]), bounds[1].max(p[0]), bounds[2].min(p[1]), bounds[3].max(p[1])];
    }
    let summary = RegionSummary {
        rect,
        spacing,
        grid_points: region.grid_points.len(),
        extension_points: region.extension_points.len(),
        closed: region.closed,
        bounds,
    };
    write_json(&out.join("region.json"), &summary)?;
    println!(
        "{} grid + {} extension points (closed: {})",
        summary.grid_points, summary.extension_points, summary.closed
    );
    Ok(())
}

fn cmd_verify(case: &str, tolerance: f64, seed: u64, out: Option<&Path>) -> Result<bool> {
    let reports = match case {
        "all" => analytic::verify_all(tolerance, seed)?,
        "harmonic_family" => vec![analytic::verify_harmonic_family(1.0, tolerance)?],
        "limit_cycle" => vec![analytic::verify_limit_cycle_case(tolerance, seed)?],
        "coexisting" => vec![analytic::verify_coexisting_case(-0.5, -2.0, tolerance, seed)?],
        other => bail!("unknown case '{other}' (harmonic_family, limit_cycle, coexisting, all)"),
    };
    let text = serde_json::to_string_pretty(&reports)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(reports.iter().all(|r| r.pass))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { exp, out } => cmd_gen(&exp, &out)?,
        Command::Train { exp, data, out, max_iters } => cmd_train(&exp, data.as_deref(), &out, max_iters)?,
        Command::Reconstruct { model, x0, horizon, dt, ablate_period, out } => {
            cmd_reconstruct(&model, &x0, horizon, dt, ablate_period, &out)?
        }
        Command::Eval { model, seed, ablate_period, out } => cmd_eval(&model, seed, ablate_period, &out)?,
        Command::Eigenfunctions { model, rect, n, out } => cmd_eigenfunctions(&model, &rect, n, &out)?,
        Command::Floquet { system, point, period, out } => {
            cmd_floquet(&system, point.as_deref(), period, out.as_deref())?
        }
        Command::Region { system, rect, spacing, max_rounds, out } => {
            cmd_region(&system, &rect, spacing, max_rounds, &out)?
        }
        Command::VerifyAnalytic { case, tolerance, seed, out } => {
            return cmd_verify(&case, tolerance, seed, out.as_deref());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            info!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
