use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::{stream_rng, Agent, AgentConfig, Stream, UpdateStats};
use crate::envs::{make_env, Action};
use crate::error::{Error, Result};
use crate::eval::{q_error, EvalTrajectory, QError};
use crate::models::Critic;
use crate::numcore::{checkpoint, Tensor};
use crate::replay::Transition;

pub const METRICS_HEADER: &str = "kind,env_step,update,rl_loss,spr_loss,vcr1_loss,vcr2_loss,total,lambda_spr,lambda_vcr,lambda_vcr2,grad_norm,actor_loss,alpha_loss,alpha,eval_return";
pub const QERROR_HEADER: &str = "step,q_error,mean_return,seed";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub env_step: u64,
    pub mean_return: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRow {
    pub env_step: u64,
    pub q_error: f64,
    pub mean_return: f64,
}

/// Everything a finished run produced.
pub struct RunArtifacts {
    pub config: AgentConfig,
    pub run_dir: Option<PathBuf>,
    pub evals: Vec<EvalRow>,
    pub probes: Vec<ProbeRow>,
    /// Mean return of the final evaluation.
    pub final_return: f64,
    pub updates: u64,
    pub agent: Agent,
    pub metrics_csv: String,
    pub qerror_csv: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn train_row(out: &mut String, step: u64, update: u64, s: &UpdateStats) {
    let b = &s.breakdown;
    let _ = writeln!(
        out,
        "train,{step},{update},{},{},{},{},{},{},{},{},{},{},{},{},",
        b.rl_loss,
        b.spr_loss,
        b.vcr1_loss,
        b.vcr2_loss,
        b.total,
        b.weights.spr,
        b.weights.vcr,
        b.weights.vcr2,
        s.grad_norm,
        opt(s.actor_loss),
        opt(s.alpha_loss),
        opt(s.alpha),
    );
}

fn eval_row(out: &mut String, kind: &str, step: u64, update: u64, ret: f64) {
    let _ = writeln!(out, "{kind},{step},{update},,,,,,,,,,,,,{ret}");
}

/// Rolls out one episode with the evaluation policy.
fn eval_episode(agent: &Agent, seed: u64) -> Result<EvalTrajectory> {
    let mut env = make_env(&agent.config().env, seed)?;
    let mut obs = env.reset();
    let mut traj = EvalTrajectory {
        observations: vec![obs.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminal_bootstrap: None,
    };
    loop {
        let a = agent.act_eval(&obs)?;
        let r = env.step(&a)?;
        traj.actions.push(a);
        traj.rewards.push(r.reward);
        traj.observations.push(r.observation.clone());
        obs = r.observation;
        if r.done {
            break;
        }
        if r.truncated {
            traj.terminal_bootstrap = Some(state_value(agent, &obs)?);
            break;
        }
    }
    Ok(traj)
}

/// Value estimate at `obs`: greedy categorical mean, or the smaller critic at
/// the deterministic action.
fn state_value(agent: &Agent, obs: &Tensor) -> Result<f64> {
    let b = &agent.bundle;
    let z = b.encode(obs, false)?;
    if b.is_discrete() {
        let q = b.q_discrete(&z, false)?;
        Ok(q.means()[q.greedy()])
    } else {
        let a = b.deterministic_action(&z)?;
        let q1 = b.q_continuous(&z, &a, Critic::Critic1)?;
        let q2 = b.q_continuous(&z, &a, Critic::Critic2)?;
        Ok(q1.min(q2))
    }
}

/// Runs `eval_episodes` episodes, extended until at least `probe_steps`
/// steps were seen, and returns the mean return of the first
/// `eval_episodes` episodes with the Q-error over all of them.
fn evaluate<R: Rng>(agent: &Agent, eval_rng: &mut R) -> Result<(f64, ProbeRow)> {
    let cfg = agent.config();
    let mut trajs = Vec::new();
    let mut steps = 0;
    while trajs.len() < cfg.eval_episodes || steps < cfg.probe_steps {
        let t = eval_episode(agent, eval_rng.random())?;
        steps += t.len();
        trajs.push(t);
    }
    let eval_ret = trajs[..cfg.eval_episodes]
        .iter()
        .map(|t| t.undiscounted_return())
        .sum::<f64>()
        / cfg.eval_episodes as f64;
    let mut qe = QError::default();
    for t in &trajs {
        qe = qe.merge(q_error(&agent.bundle, t, cfg.k, cfg.gamma)?);
    }
    let mean_return = trajs.iter().map(|t| t.undiscounted_return()).sum::<f64>() / trajs.len() as f64;
    Ok((
        eval_ret,
        ProbeRow {
            env_step: agent.env_steps(),
            q_error: qe.value(),
            mean_return,
        },
    ))
}

struct Logs {
    metrics: String,
    qerror: String,
    evals: Vec<EvalRow>,
    probes: Vec<ProbeRow>,
}

fn write_logs(dir: &Path, logs: &Logs) -> Result<()> {
    fs::write(dir.join("metrics.csv"), &logs.metrics).map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
    fs::write(dir.join("qerror.csv"), &logs.qerror).map_err(|e| Error::io(dir.join("qerror.csv"), e))
}

/// Trains one agent for exactly `total_env_steps` environment steps,
/// evaluating and probing the Q-error every `eval_interval` steps
/// (including step 0). When `run_dir` is given it receives `config.txt`,
/// `metrics.csv`, `qerror.csv`, `score.txt` and `checkpoints/`; on failure
/// the partial logs are written together with `error.txt`.
pub fn run_training(cfg: &AgentConfig, run_dir: Option<&Path>) -> Result<RunArtifacts> {
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = String::new();
        for (k, v) in cfg.entries() {
            let _ = writeln!(text, "{k} = {v}");
        }
        fs::write(dir.join("config.txt"), text).map_err(|e| Error::io(dir.join("config.txt"), e))?;
    }
    let mut logs = Logs {
        metrics: format!("{METRICS_HEADER}\n"),
        qerror: format!("{QERROR_HEADER}\n"),
        evals: Vec::new(),
        probes: Vec::new(),
    };
    match train_loop(cfg, &mut logs) {
        Ok((agent, final_return)) => {
            if let Some(dir) = run_dir {
                write_logs(dir, &logs)?;
                fs::write(dir.join("score.txt"), format!("{final_return}\n"))
                    .map_err(|e| Error::io(dir.join("score.txt"), e))?;
                let ck = dir.join("checkpoints");
                fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
                checkpoint::save(&agent.bundle.online, &ck.join("online.vcrp"))?;
                checkpoint::save(&agent.bundle.target, &ck.join("target.vcrp"))?;
            }
            Ok(RunArtifacts {
                config: cfg.clone(),
                run_dir: run_dir.map(Path::to_path_buf),
                final_return,
                updates: agent.updates(),
                evals: logs.evals,
                probes: logs.probes,
                metrics_csv: logs.metrics,
                qerror_csv: logs.qerror,
                agent,
            })
        }
        Err(e) => {
            if let Some(dir) = run_dir {
                write_logs(dir, &logs)?;
                fs::write(dir.join("error.txt"), format!("{e}\n")).map_err(|e| Error::io(dir.join("error.txt"), e))?;
            }
            Err(e)
        }
    }
}

fn train_loop(cfg: &AgentConfig, logs: &mut Logs) -> Result<(Agent, f64)> {
    let mut agent = Agent::new(cfg.clone())?;
    let mut env = make_env(&cfg.env, stream_rng(cfg.seed, Stream::Env).random())?;
    let mut eval_rng = stream_rng(cfg.seed, Stream::EvalEnv);
    let mut obs = env.reset();
    let mut record_eval = |agent: &Agent, logs: &mut Logs, kind: &str| -> Result<f64> {
        let (ret, probe) = evaluate(agent, &mut eval_rng)?;
        let step = agent.env_steps();
        eval_row(&mut logs.metrics, kind, step, agent.updates(), ret);
        if kind == "eval" {
            let _ = writeln!(
                logs.qerror,
                "{step},{},{},{}",
                probe.q_error, probe.mean_return, cfg.seed
            );
            logs.evals.push(EvalRow {
                env_step: step,
                mean_return: ret,
            });
            logs.probes.push(probe);
        }
        Ok(ret)
    };
    for t in 0..cfg.total_env_steps {
        if t % cfg.eval_interval == 0 {
            record_eval(&agent, logs, "eval")?;
        }
        let action: Action = agent.act(&obs)?;
        let r = env.step(&action)?;
        let over = r.episode_over();
        agent.observe(Transition {
            observation: obs,
            action,
            reward: r.reward,
            next_observation: r.observation.clone(),
            done: r.done,
            truncated: r.truncated && !r.done,
        });
        obs = if over { env.reset() } else { r.observation };
        if agent.ready() {
            for _ in 0..cfg.updates_per_step {
                let s = agent.train_step()?;
                train_row(&mut logs.metrics, agent.env_steps(), agent.updates(), &s);
            }
        }
    }
    let end = cfg.total_env_steps;
    let final_return = if end.is_multiple_of(cfg.eval_interval) {
        record_eval(&agent, logs, "eval")?
    } else {
        record_eval(&agent, logs, "final")?
    };
    Ok((agent, final_return))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(env: &str) -> AgentConfig {
        let mut c = AgentConfig::for_env(env).unwrap();
        c.total_env_steps = 60;
        c.eval_interval = 20;
        c.eval_episodes = 1;
        c.probe_steps = 10;
        c.min_fill = 20;
        c.exploration_steps = 20;
        c.batch_size = 4;
        c.vcr_batch_size = 4;
        c.latent_dim = 8;
        c.hidden = 16;
        c.env.pointmass.episode_length = 30;
        c.env.chain.max_episode_length = 20;
        c.env.pixelgrid.max_episode_length = 20;
        c
    }

    #[test]
    fn schedule_and_row_counts() {
        for env in ["chain", "pointmass"] {
            let a = run_training(&tiny(env), None).unwrap();
            let rows: Vec<&str> = a.metrics_csv.lines().skip(1).collect();
            let evals = rows.iter().filter(|r| r.starts_with("eval,")).count();
            let trains = rows.iter().filter(|r| r.starts_with("train,")).count();
            assert_eq!(evals, 1 + 60 / 20);
            assert_eq!(trains as u64, a.updates);
            assert_eq!(a.agent.env_steps(), 60);
            assert_eq!(a.qerror_csv.lines().count(), 1 + 4);
            assert!(a.agent.bundle.target.grads_all_zero());
        }
    }

    #[test]
    fn zero_budget_emits_initial_evaluation_only() {
        let mut c = tiny("chain");
        c.total_env_steps = 0;
        let a = run_training(&c, None).unwrap();
        assert_eq!(a.metrics_csv.lines().count(), 2);
        assert_eq!(a.updates, 0);
    }
}
