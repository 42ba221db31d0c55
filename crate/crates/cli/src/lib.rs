//! Command implementations behind the `rolereward` binary.

use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rolereward_core::grouping::{
    fit_kmeans_traced, parse_profiles, silhouette, sweep_cluster_counts, GroupModel,
    DEFAULT_CLUSTER_COUNT, DEFAULT_MAX_ITERS,
};
use rolereward_core::grpo::GrpoConfig;
use rolereward_core::normalizer::NormalizerState;
use rolereward_core::pipeline::{score_items, score_items_updating, CorpusRecord, ScoreItem};
use rolereward_core::reward::RefRewardConfig;
use rolereward_core::toy::trainer::curves_csv;
use rolereward_core::toy::{default_task, run_training, ToyTask, TrainingOutcome};
use rolereward_core::trajectory::{parse_trajectory, Severity};
use rolereward_service::ServiceConfig;
use serde::Deserialize;

/// Exit status for validation failures under `--strict`.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for usage, config and input errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "rolereward",
    version,
    about = "Score role-aware reasoning traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lint trajectories in a JSON-lines corpus.
    Parse {
        input: PathBuf,
        /// Exit with status 1 if any record fails format validation.
        #[arg(long)]
        strict: bool,
    },
    /// Score a JSON-lines corpus.
    Score {
        input: PathBuf,
        /// Group model file written by `fit-groups`.
        #[arg(long)]
        groups: PathBuf,
        /// Stats snapshot to start from (fresh stats if omitted).
        #[arg(long)]
        stats_in: Option<PathBuf>,
        /// Where to write the updated snapshot; required with `--update`.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Update the running statistics with every record, in order.
        #[arg(long)]
        update: bool,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Service config supplying weights, ε and decay.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit role groups from character profiles, or sweep the group count.
    FitGroups {
        profiles: PathBuf,
        #[arg(long = "G", default_value_t = DEFAULT_CLUSTER_COUNT, value_parser = parse_group_count)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inclusive range such as `2..8`; prints a CSV table instead of fitting.
        #[arg(long, value_parser = parse_range)]
        sweep: Option<RangeInclusive<usize>>,
        /// Restarts per group count in a sweep.
        #[arg(long, default_value_t = 5)]
        restarts: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long, default_value = "groups.json")]
        out: PathBuf,
    },
    /// Train the toy policy and write reward curves.
    TrainToy {
        /// Task file; the built-in task when omitted.
        task: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = GrpoConfig::default().kl_beta)]
        beta: f64,
        /// Also write the final logits as JSON.
        #[arg(long)]
        policy_out: Option<PathBuf>,
        /// Write the task actually used (handy for editing the built-in one).
        #[arg(long)]
        dump_task: Option<PathBuf>,
    },
    /// Run the HTTP scoring service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_group_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("G must be at least 1".into()),
        Ok(g) => Ok(g),
        Err(_) => Err(format!("`{s}` is not a group count")),
    }
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a..b, got `{s}`"))?;
    let a: usize = a
        .trim()
        .parse()
        .map_err(|_| format!("bad range start `{a}`"))?;
    let b: usize = b
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|_| format!("bad range end `{b}`"))?;
    if a == 0 || a > b {
        return Err(format!("range must satisfy 1 <= a <= b, got {a}..{b}"));
    }
    Ok(a..=b)
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Parse { input, strict } => cmd_parse(&input, strict, out, err),
        Command::Score {
            input,
            groups,
            stats_in,
            stats_out,
            update,
            out: dest,
            config,
        } => {
            let opts = ScoreOptions {
                groups,
                stats_in,
                stats_out,
                update,
                config,
            };
            let lines = cmd_score(&input, &opts)?;
            match dest {
                Some(path) => fs::write(&path, lines)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => out.write_all(lines.as_bytes())?,
            }
            Ok(0)
        }
        Command::FitGroups {
            profiles,
            groups,
            seed,
            sweep,
            restarts,
            max_iters,
            out: dest,
        } => cmd_fit_groups(
            &profiles, groups, seed, sweep, restarts, max_iters, &dest, out,
        ),
        Command::TrainToy {
            task,
            steps,
            seed,
            out: dest,
            lr,
            beta,
            policy_out,
            dump_task,
        } => {
            let opts = TrainOptions {
                task,
                steps,
                seed,
                lr,
                beta,
            };
            let (task, outcome) = cmd_train_toy(&opts)?;
            fs::write(&dest, curves_csv(&outcome.log))
                .with_context(|| format!("writing {}", dest.display()))?;
            if let Some(path) = policy_out {
                fs::write(&path, serde_json::to_string_pretty(&outcome.policy)?)?;
            }
            if let Some(path) = dump_task {
                task.save(&path)?;
            }
            write_training_summary(&task, &outcome, out)?;
            Ok(0)
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(config.as_deref())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(rolereward_service::run(cfg))?;
            Ok(0)
        }
    }
}

#[derive(Debug, Deserialize)]
struct LintRecord {
    raw_output: String,
    #[serde(default)]
    request_id: Option<String>,
}

/// One JSON value per non-blank line, with 1-based line numbers.
fn read_jsonl<T: for<'de> Deserialize<'de>>(
    text: &str,
) -> Vec<(usize, Result<T, serde_json::Error>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, serde_json::from_str(l)))
        .collect()
}

pub fn cmd_parse(
    input: &Path,
    strict: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let (mut records, mut invalid, mut bad_lines) = (0usize, 0usize, 0usize);
    for (line, rec) in read_jsonl::<LintRecord>(&text) {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                writeln!(err, "line {line}: invalid JSON: {e}")?;
                bad_lines += 1;
                continue;
            }
        };
        records += 1;
        let t = parse_trajectory(&rec.raw_output);
        if !t.format_valid {
            invalid += 1;
        }
        let label = rec
            .request_id
            .map(|id| format!(" [{id}]"))
            .unwrap_or_default();
        let verdict = if t.format_valid { "ok" } else { "INVALID" };
        writeln!(out, "line {line}{label}: {verdict}, {} foci", t.foci.len())?;
        for d in &t.diagnostics {
            let sev = match d.severity() {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            writeln!(out, "  {sev} {}: {d}", d.code())?;
        }
    }
    writeln!(out, "{records} records, {invalid} invalid")?;
    if bad_lines > 0 {
        writeln!(err, "{bad_lines} lines could not be read")?;
        return Ok(EXIT_USAGE);
    }
    Ok(if strict && invalid > 0 {
        EXIT_INVALID
    } else {
        0
    })
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOptions {
    pub groups: PathBuf,
    pub stats_in: Option<PathBuf>,
    pub stats_out: Option<PathBuf>,
    pub update: bool,
    pub config: Option<PathBuf>,
}

/// Scores a corpus file and returns the JSON-lines output. Each line is a
/// scored item as the service returns it.
pub fn cmd_score(input: &Path, opts: &ScoreOptions) -> Result<String> {
    if opts.update && opts.stats_out.is_none() {
        bail!("--update needs --stats-out to persist the updated statistics");
    }
    let config = ServiceConfig::load(opts.config.as_deref())?;
    let model: GroupModel = serde_json::from_str(
        &fs::read_to_string(&opts.groups)
            .with_context(|| format!("reading group model {}", opts.groups.display()))?,
    )
    .with_context(|| format!("parsing group model {}", opts.groups.display()))?;
    model.validate()?;
    let mut stats = match &opts.stats_in {
        Some(path) => NormalizerState::from_json(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("restoring {}", path.display()))?,
        None => config.fresh_normalizer(),
    };

    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut items: Vec<ScoreItem> = Vec::new();
    for (line, rec) in read_jsonl::<CorpusRecord>(&text) {
        let rec = rec.with_context(|| format!("{} line {line}", input.display()))?;
        items.push(rec.into_item(line));
    }
    if items.is_empty() {
        return Ok(String::new());
    }

    let scoring = config.scoring();
    let scored = if opts.update {
        score_items_updating(&items, &model, &mut stats, &scoring)?
    } else {
        score_items(&items, &model, &stats, &scoring)?
    };
    if opts.update {
        if let Some(path) = &opts.stats_out {
            fs::write(path, stats.to_json())
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let mut lines = String::new();
    for item in &scored {
        lines.push_str(&serde_json::to_string(item)?);
        lines.push('\n');
    }
    Ok(lines)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_fit_groups(
    profiles: &Path,
    groups: usize,
    seed: u64,
    sweep: Option<RangeInclusive<usize>>,
    restarts: u64,
    max_iters: usize,
    dest: &Path,
    out: &mut dyn Write,
) -> Result<i32> {
    let text =
        fs::read_to_string(profiles).with_context(|| format!("reading {}", profiles.display()))?;
    let profiles = parse_profiles(&text)?;
    if let Some(range) = sweep {
        let seeds: Vec<u64> = (seed..seed + restarts.max(1)).collect();
        let rows = sweep_cluster_counts(&profiles, range, &seeds, max_iters)?;
        writeln!(out, "G,inertia,silhouette")?;
        for r in rows {
            let s = r.silhouette.map(|s| s.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{s}", r.cluster_count, r.inertia)?;
        }
        return Ok(0);
    }
    let fit = fit_kmeans_traced(&profiles, groups, seed, max_iters)?;
    let sil = if groups >= 2 {
        silhouette(&fit.model, &profiles).ok()
    } else {
        None
    };
    fs::write(dest, serde_json::to_string_pretty(&fit.model)?)
        .with_context(|| format!("writing {}", dest.display()))?;
    writeln!(
        out,
        "G={groups} inertia={} silhouette={} iterations={} converged={} -> {}",
        fit.inertia_trace.last().copied().unwrap_or(0.0),
        sil.map(|s| s.to_string()).unwrap_or_else(|| "n/a".into()),
        fit.iterations,
        fit.converged,
        dest.display()
    )?;
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub task: Option<PathBuf>,
    pub steps: usize,
    pub seed: Option<u64>,
    pub lr: f64,
    pub beta: f64,
}

pub fn cmd_train_toy(opts: &TrainOptions) -> Result<(ToyTask, TrainingOutcome)> {
    let mut task = match &opts.task {
        Some(path) => {
            ToyTask::load(path).with_context(|| format!("loading task {}", path.display()))?
        }
        None => default_task(opts.seed.unwrap_or(0)),
    };
    if let Some(seed) = opts.seed {
        task.seed = seed;
    }
    let cfg = GrpoConfig {
        kl_beta: opts.beta,
        ..GrpoConfig::default()
    };
    let outcome = run_training(
        &task,
        &cfg,
        NormalizerState::default(),
        &Default::default(),
        opts.steps,
        opts.lr,
    )?;
    Ok((task, outcome))
}

fn write_training_summary(
    task: &ToyTask,
    outcome: &TrainingOutcome,
    out: &mut dyn Write,
) -> Result<()> {
    let log = &outcome.log;
    let n = log.records.len();
    if n > 0 {
        let w = n.saturating_sub(20)..n;
        writeln!(
            out,
            "steps={n} last{}: r_focus={:.4} r_attr={:.4} r_ref={:.4} r_scalar={:.4} objective={:.4}",
            w.len(),
            log.window_mean(w.clone(), |r| r.r_focus),
            log.window_mean(w.clone(), |r| r.r_attr),
            log.window_mean(w.clone(), |r| r.r_ref),
            log.window_mean(w.clone(), |r| r.r_scalar),
            log.window_mean(w, |r| r.objective),
        )?;
    } else {
        writeln!(out, "steps=0")?;
    }
    // Expected raw rewards of the policy over the fixed pools.
    let pools = task.score_pools(&RefRewardConfig::default())?;
    let mut expected = [0.0f64; 3];
    for p in &task.prompts {
        let probs = outcome
            .policy
            .probs(&p.id)
            .context("policy misses a prompt")?;
        for (pi, r) in probs.iter().zip(&pools[&p.id]) {
            for (e, c) in expected.iter_mut().zip(r.components()) {
                *e += pi * c / task.prompts.len() as f64;
            }
        }
    }
    writeln!(
        out,
        "policy expected rewards: focus={:.4} attr={:.4} ref={:.4}",
        expected[0], expected[1], expected[2]
    )?;
    Ok(())
}
