use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssac::config::{BalanceMapSpec, RunConfig};
use ssac::dynamics::State;
use ssac::eval::{self, ControllerKind, Evaluator, GateRow, SeedSummary};
use ssac::gate::GateSample;
use ssac::trainer::{Checkpoint, LogRow, Trainer, CHECKPOINT_FORMAT_VERSION};

#[derive(Parser)]
#[command(name = "ssac", version, about = "Switched soft actor critic for the acrobot")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file, for rollout and balance-map).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the gate alone on balance-controller rollouts.
    PretrainGate {
        #[command(flatten)]
        common: Common,
        /// Held-out balance-controller episodes for the quality report.
        #[arg(long, default_value_t = 2000)]
        eval_episodes: usize,
    },
    /// Joint training of policy and gate (gate pretraining runs first unless
    /// a pretrained gate is given).
    Train {
        #[command(flatten)]
        common: Common,
        /// Plain SAC baseline: no gate, no balance controller, one buffer.
        #[arg(long)]
        vanilla_sac: bool,
        /// Gate checkpoint written by pretrain-gate.
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Labeled gate dataset to seed the gate buffer with.
        #[arg(long, requires = "gate")]
        gate_data: Option<PathBuf>,
    },
    /// Record one episode as a per-step trace.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Initial state θ1,θ2,θ̇1,θ̇2.
        #[arg(long, value_delimiter = ',', num_args = 4, allow_hyphen_values = true,
              default_values_t = [-std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0])]
        initial: Vec<f64>,
        #[arg(long)]
        deterministic: bool,
        #[arg(long, value_enum)]
        controller: Option<Controller>,
    },
    /// Deterministic episodes from a grid of zero-velocity initial positions.
    BalanceMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        controller: Option<Controller>,
    },
    /// Aggregate final returns of several training logs.
    Summarize {
        /// Output CSV of per-run rows.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSVs.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    Hybrid,
    Policy,
    Balance,
}

impl From<Controller> for ControllerKind {
    fn from(c: Controller) -> Self {
        match c {
            Controller::Hybrid => ControllerKind::Hybrid,
            Controller::Policy => ControllerKind::PolicyOnly,
            Controller::Balance => ControllerKind::BalanceOnly,
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn pretrain_gate(common: &Common, eval_episodes: usize) -> Result<()> {
    let cfg = load_config(common)?;
    create_dir(&common.out)?;
    let mut t = Trainer::new(cfg.clone())?;
    let start = Instant::now();
    let report = t.pretrain_gate()?;
    println!(
        "pretrained gate: {} episodes ({} positive), {} steps, {} updates, last loss {:?}, {:.1}s",
        report.episodes,
        report.positive_episodes,
        report.control_steps,
        report.updates,
        report.last_loss,
        start.elapsed().as_secs_f64()
    );

    let ck = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: cfg.clone(),
        env_steps: 0,
        nets: None,
        gate: Some((&t.gate).into()),
    };
    ck.save(&common.out.join("gate.json"))?;
    let rows: Vec<GateRow> = t.store.gate_samples().iter().map(GateRow::from).collect();
    eval::write_csv(&common.out.join("gate_dataset.csv"), &rows)?;

    // Held-out stream distinct from every training stream.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_4e1d);
    let q = eval::evaluate_gate(&t.gate, &cfg, eval_episodes, 5, &mut rng)?;
    let c = q.engage;
    println!(
        "held-out: {} states, {} oracle positives; precision {:.4}, recall {:.4}, engage false-positive rate {:.4}",
        q.states,
        c.tp + c.fn_,
        c.precision(),
        c.recall(),
        c.false_positive_rate()
    );
    Ok(())
}

fn train(common: &Common, vanilla: bool, gate: Option<&Path>, gate_data: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.vanilla_sac |= vanilla;
    create_dir(&common.out)?;
    std::fs::write(common.out.join("config.toml"), cfg.to_toml_string())?;

    let mut t = Trainer::new(cfg.clone())?;
    if !cfg.vanilla_sac {
        match gate {
            Some(path) => {
                let net = load_checkpoint(path)?
                    .gate_net()?
                    .context("gate checkpoint holds no gate")?;
                let data: Vec<GateSample> = match gate_data {
                    Some(p) => eval::read_csv::<GateRow>(p)?.into_iter().map(Into::into).collect(),
                    None => Vec::new(),
                };
                t = t.with_pretrained_gate(net, data)?;
            }
            None => {
                let r = t.pretrain_gate()?;
                println!(
                    "pretrained gate: {} episodes, {} positive, {} updates",
                    r.episodes, r.positive_episodes, r.updates
                );
            }
        }
    }

    let log_path = common.out.join("log.csv");
    let mut log = csv::Writer::from_path(&log_path)?;
    let mut rows: Vec<LogRow> = Vec::new();
    let every = cfg.schedule.checkpoint_every;
    let start = Instant::now();
    let out = common.out.clone();
    let result = t.train_joint(|tr, row| {
        log.serialize(row)?;
        log.flush()?;
        rows.push(*row);
        let prev = row.env_steps - tr.cfg.goal.episode_len.min(row.env_steps as usize) as u64;
        if every > 0 && row.env_steps / every > prev / every {
            tr.checkpoint().save(&out.join(format!("checkpoint_{}.json", row.env_steps)))?;
            let returns: Vec<f64> = rows.iter().map(|r| r.episode_return).collect();
            println!(
                "steps {:>8}  episodes {:>6}  trailing return {:7.2}  success buffer {:>7}  {:.0}s",
                row.env_steps,
                row.episode,
                eval::trailing_mean(&returns, eval::SMOOTHING_WINDOW).unwrap_or(f64::NAN),
                row.success_size,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    });
    if let Err(e) = result {
        let dump = common.out.join("abort.json");
        t.checkpoint().save(&dump)?;
        bail!("training aborted: {e}; state written to {}", dump.display());
    }
    t.checkpoint().save(&common.out.join("final.json"))?;
    if let Some(s) = eval::summarize_log(&common.out.display().to_string(), &rows) {
        println!(
            "final trailing-{} return {:.2}, success rate {:.2}",
            eval::SMOOTHING_WINDOW,
            s.final_return,
            s.final_success_rate
        );
    }
    Ok(())
}

fn rollout(
    common: &Common,
    checkpoint: &Path,
    initial: &[f64],
    deterministic: bool,
    controller: Option<Controller>,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let ev = Evaluator::from_checkpoint(&ck)?;
    let kind = controller.map(Into::into).unwrap_or(ev.default_kind());
    let s0 = State::new(initial[0], initial[1], initial[2], initial[3]);
    let rec = ev.rollout(kind, s0, deterministic, common.seed.unwrap_or(ev.config.seed))?;
    let rows = eval::trace_rows(&rec, ev.config.dynamics.dt_ctrl);
    eval::write_csv(&common.out, &rows)?;
    println!(
        "return {:.2}, success {}, balance steps {}",
        rec.episode_return,
        rec.success,
        rec.engaged_steps()
    );
    Ok(())
}

fn balance_map(common: &Common, checkpoint: &Path, controller: Option<Controller>) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let ev = Evaluator::from_checkpoint(&ck)?;
    let spec: BalanceMapSpec = match &common.config {
        Some(_) => load_config(common)?.balance_map,
        None => ev.config.balance_map,
    };
    let kind = controller.map(Into::into).unwrap_or(ev.default_kind());
    let cells = ev.balance_map(kind, &spec)?;
    eval::write_csv(&common.out, &cells)?;
    println!(
        "{}x{} grid: success rate {:.4}",
        spec.n_theta1,
        spec.n_theta2,
        eval::success_rate(&cells)
    );
    Ok(())
}

fn summarize(out: &Path, logs: &[PathBuf]) -> Result<()> {
    let mut rows: Vec<SeedSummary> = Vec::new();
    for p in logs {
        let log: Vec<LogRow> = eval::read_csv(p).with_context(|| format!("reading {}", p.display()))?;
        match eval::summarize_log(&p.display().to_string(), &log) {
            Some(s) => rows.push(s),
            None => bail!("{} has no episodes", p.display()),
        }
    }
    eval::write_csv(out, &rows)?;
    let finals: Vec<f64> = rows.iter().map(|r| r.final_return).collect();
    for r in &rows {
        println!("{}: {:.2}", r.run, r.final_return);
    }
    if let Some((m, s)) = eval::mean_std(&finals) {
        println!("final return over {} runs: {:.2} ± {:.2}", rows.len(), m, s);
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::PretrainGate { common, eval_episodes } => pretrain_gate(&common, eval_episodes),
        Cmd::Train {
            common,
            vanilla_sac,
            gate,
            gate_data,
        } => train(&common, vanilla_sac, gate.as_deref(), gate_data.as_deref()),
        Cmd::Rollout {
            common,
            checkpoint,
            initial,
            deterministic,
            controller,
        } => rollout(&common, &checkpoint, &initial, deterministic, controller),
        Cmd::BalanceMap {
            common,
            checkpoint,
            controller,
        } => balance_map(&common, &checkpoint, controller),
        Cmd::Summarize { out, logs } => summarize(&out, &logs),
    }
}
