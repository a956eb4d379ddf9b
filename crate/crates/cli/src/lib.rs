//! Commands behind the `mtrack` binary: dataset generation, training, evaluation and reporting.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use mtrack_core::agent::train::{binary_training_data, train_agent, TrainConfig};
use mtrack_core::agent::{Agent, ExpertAgent, GreedyAgent, PolicyAgent, PolicyModel};
use mtrack_core::eval::{build_report, run_ablation, EpisodeResult, Report};
use mtrack_core::grounding::Taxonomy;
use mtrack_core::rng::{stream, substream};
use mtrack_core::runner::{Models, RunConfig, TraceStep};
use mtrack_core::tagger::{self, TaggerModel};
use mtrack_core::tracker::{BinaryChecker, BinaryTrainConfig, TrackerMode};
use mtrack_core::world::generate::{generate_task, split_seed, tag_corpus, LayoutConfig, TaskSpec, TaskType};

pub const CONFIG_VERSION: u32 = 1;
pub const TAGGER_FILE: &str = "tagger.json";
pub const BINARY_FILE: &str = "binary.json";

pub fn policy_file(mode: TrackerMode) -> String {
    format!("policy-{}.json", mode.name())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Data { path: PathBuf, line: usize, msg: String },
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Data { .. } => 3,
            CliError::Missing(_) => 4,
            CliError::Invariant(_) => 5,
            CliError::Usage(_) => 64,
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Settings shared by every command; loaded from `--config` and overridden by flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub format_version: u32,
    pub seed: Option<u64>,
    pub run: RunConfig,
    pub train: TrainConfig,
    pub tagger: tagger::TrainConfig,
    pub binary: BinaryTrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            format_version: CONFIG_VERSION,
            seed: None,
            run: RunConfig::default(),
            train: TrainConfig::default(),
            tagger: tagger::TrainConfig::default(),
            binary: BinaryTrainConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        let c: CliConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Data { path: path.into(), line: e.line(), msg: e.to_string() })?;
        if c.format_version != CONFIG_VERSION {
            let msg = format!("unsupported config format version {}", c.format_version);
            return Err(CliError::Data { path: path.into(), line: 1, msg });
        }
        Ok(c)
    }

    /// Seed precedence: explicit flag or MTRACK_SEED (resolved by the argument parser), then the
    /// config file, then 0. Every seeded component receives the resolved value.
    pub fn resolve_seed(&mut self, flag_or_env: Option<u64>) -> u64 {
        let seed = flag_or_env.or(self.seed).unwrap_or(0);
        self.seed = Some(seed);
        self.run.detector.seed = seed;
        self.train.seed = seed;
        self.tagger.seed = seed;
        self.binary.seed = seed;
        seed
    }
}

/// Context of one invocation.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub seed: u64,
    pub out: PathBuf,
    pub config: CliConfig,
}

impl Ctx {
    pub fn new(out: PathBuf, mut config: CliConfig, seed: Option<u64>) -> Self {
        let seed = config.resolve_seed(seed);
        Ctx { seed, out, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(io(&self.out))
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, text).map_err(io(path))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let f = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, &it).map_err(|e| CliError::Invariant(e.to_string()))?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Reads JSON lines, reporting the first malformed line with its number.
pub fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| CliError::Data { path: path.into(), line: i + 1, msg: e.to_string() })?;
        out.push(v);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<TaskSpec>, CliError> {
    let tasks: Vec<TaskSpec> = read_lines(path)?;
    for (i, t) in tasks.iter().enumerate() {
        t.validate().map_err(|msg| CliError::Data { path: path.into(), line: i + 1, msg })?;
    }
    if tasks.is_empty() {
        return Err(CliError::Data { path: path.into(), line: 0, msg: "dataset is empty".into() });
    }
    Ok(tasks)
}

fn load_artifact<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T, String>) -> Result<T, CliError> {
    if !path.exists() {
        return Err(CliError::Missing(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(io(path))?;
    parse(&text).map_err(|msg| CliError::Data { path: path.into(), line: 0, msg })
}

fn load_optional<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T, String>) -> Result<Option<T>, CliError> {
    if path.exists() {
        load_artifact(path, parse).map(Some)
    } else {
        Ok(None)
    }
}

fn parse_tagger(s: &str) -> Result<TaggerModel, String> {
    TaggerModel::from_json(s).map_err(|e| e.to_string())
}

fn parse_binary(s: &str) -> Result<BinaryChecker, String> {
    BinaryChecker::from_json(s).map_err(|e| e.to_string())
}

/// Parses "Pick&Place=2,Examine=1" into normalized weights.
pub fn parse_mix(s: &str) -> Result<Vec<(TaskType, f64)>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, w) = part.split_once('=').unwrap_or((part, "1"));
        let ty = TaskType::parse(name.trim()).ok_or_else(|| CliError::Usage(format!("unknown task type {name:?}")))?;
        let w: f64 = w.trim().parse().map_err(|_| CliError::Usage(format!("bad weight in {part:?}")))?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(CliError::Usage(format!("bad weight in {part:?}")));
        }
        out.push((ty, w));
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    if out.is_empty() || total <= 0.0 {
        return Err(CliError::Usage("task mix has no positive weight".into()));
    }
    Ok(out.into_iter().map(|(t, w)| (t, w / total)).collect())
}

/// Tasks of a split. Without a mix, types cycle evenly; with one, each task draws its type.
pub fn generate_tasks(
    n: usize,
    unseen: bool,
    base: u64,
    mix: Option<&[(TaskType, f64)]>,
    tax: &Taxonomy,
) -> Result<Vec<TaskSpec>, CliError> {
    let layout = if unseen { LayoutConfig::unseen() } else { LayoutConfig::default() };
    (0..n as u64)
        .map(|i| {
            let seed = split_seed(unseen, base, i);
            let ty = match mix {
                None => TaskType::ALL[i as usize % TaskType::ALL.len()],
                Some(mix) => {
                    let u: f64 = substream(seed, &[stream::GENERATE, 0x317]).gen();
                    let mut acc = 0.0;
                    mix.iter().find(|(_, w)| {
                        acc += w;
                        u < acc
                    })
                    .unwrap_or(mix.last().unwrap())
                    .0
                }
            };
            generate_task(seed, ty, &layout, tax).map(|(_, t)| t).map_err(|e| CliError::Invariant(e.to_string()))
        })
        .collect()
}

/// Base of a split's seed range: disjoint blocks of 2^32 tasks per run seed.
pub fn split_base(seed: u64) -> u64 {
    seed << 32
}

pub fn cmd_gen(ctx: &Ctx, n: usize, unseen: bool, mix: Option<&str>, name: &str) -> Result<String, CliError> {
    let mix = mix.map(parse_mix).transpose()?;
    let tasks = generate_tasks(n, unseen, split_base(ctx.seed), mix.as_deref(), Taxonomy::shipped())?;
    ctx.ensure_out()?;
    let path = ctx.path(&format!("{name}.jsonl"));
    write_lines(&path, &tasks)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &tasks {
        *counts.entry(t.task_type.name()).or_default() += 1;
    }
    let mut s = format!("wrote {} tasks ({}) to {}\n", tasks.len(), if unseen { "unseen" } else { "seen" }, path.display());
    for (k, v) in counts {
        s.push_str(&format!("  {k:<20} {v}\n"));
    }
    Ok(s)
}

pub fn cmd_train_tagger(ctx: &Ctx, data: &Path, heldout: Option<&Path>) -> Result<String, CliError> {
    let tasks = load_dataset(data)?;
    let (train, test): (Vec<TaskSpec>, Vec<TaskSpec>) = match heldout {
        Some(h) => (tasks, load_dataset(h)?),
        None => {
            let cut = (tasks.len() * 4).div_ceil(5).min(tasks.len().saturating_sub(1)).max(1);
            (tasks[..cut].to_vec(), tasks[cut..].to_vec())
        }
    };
    let model = tagger::train(&tag_corpus(&train), &ctx.config.tagger).map_err(|e| CliError::Invariant(e.to_string()))?;
    ctx.ensure_out()?;
    write_file(&ctx.path(TAGGER_FILE), &model.to_json())?;
    let held = tag_corpus(&test);
    let mut s = format!("tagger trained on {} instructions\n", tag_corpus(&train).len());
    if held.is_empty() {
        s.push_str("no held-out instructions\n");
    } else {
        let (nav, int) = tagger::evaluate_f1(&model, &held);
        s.push_str(&format!("held-out F1 ({} instructions)\n  Nav  {:.2}\n  Int  {:.2}\n", held.len(), 100.0 * nav, 100.0 * int));
    }
    Ok(s)
}

pub fn parse_modes(s: &str) -> Result<Vec<TrackerMode>, CliError> {
    if s == "all" {
        return Ok(TrackerMode::ALL.to_vec());
    }
    s.split(',')
        .map(|m| TrackerMode::parse(m.trim()).ok_or_else(|| CliError::Usage(format!("unknown tracker mode {m:?}"))))
        .collect()
}

pub fn cmd_train_agent(ctx: &Ctx, data: &Path, modes: &[TrackerMode]) -> Result<String, CliError> {
    let tax = Taxonomy::shipped();
    let tasks = load_dataset(data)?;
    let tagger = load_optional(&ctx.path(TAGGER_FILE), parse_tagger)?;
    if tagger.is_none() {
        if let Some(m) = modes.iter().find(|m| m.needs_tagger()) {
            return Err(CliError::Missing(format!("{} (needed by mode {})", ctx.path(TAGGER_FILE).display(), m.name())));
        }
    }
    let run = &ctx.config.run;
    let mut s = String::new();
    let mut binary = load_optional(&ctx.path(BINARY_FILE), parse_binary)?;
    if modes.contains(&TrackerMode::Binary) {
        let models = Models { tagger: tagger.as_ref(), binary: None };
        let data = binary_training_data(&tasks, models, run, tax).map_err(|e| CliError::Invariant(e.to_string()))?;
        let checker = BinaryChecker::train(&data, &ctx.config.binary);
        let pos: Vec<&(Vec<f64>, bool)> = data.iter().filter(|d| d.1).collect();
        let recall = pos.iter().filter(|d| checker.reached(&d.0)).count() as f64 / pos.len().max(1) as f64;
        s.push_str(&format!("binary checker: {} samples, boundary recall {:.3}\n", data.len(), recall));
        write_file(&ctx.path(BINARY_FILE), &checker.to_json())?;
        binary = Some(checker);
    }
    let models = Models { tagger: tagger.as_ref(), binary: binary.as_ref() };
    for &mode in modes {
        let (model, log) =
            train_agent(&tasks, mode, models, run, &ctx.config.train, tax).map_err(|e| CliError::Invariant(e.to_string()))?;
        write_file(&ctx.path(&policy_file(mode)), &model.to_json())?;
        let ret = log.a2c_return.iter().sum::<f64>() / log.a2c_return.len().max(1) as f64;
        s.push_str(&format!(
            "{:<10} BC accuracy {:.3} on {} samples, mean A2C return {:.2}\n",
            mode.name(),
            log.bc_accuracy,
            log.bc_samples,
            ret
        ));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Policy,
    Greedy,
    Expert,
}

impl AgentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "policy" => Some(AgentKind::Policy),
            "greedy" => Some(AgentKind::Greedy),
            "expert" => Some(AgentKind::Expert),
            _ => None,
        }
    }
}

struct Loaded {
    tagger: Option<TaggerModel>,
    binary: Option<BinaryChecker>,
    policies: BTreeMap<usize, PolicyModel>,
}

fn load_models(ctx: &Ctx, modes: &[TrackerMode], agent: AgentKind) -> Result<Loaded, CliError> {
    let tagger = load_optional(&ctx.path(TAGGER_FILE), parse_tagger)?;
    let binary = load_optional(&ctx.path(BINARY_FILE), parse_binary)?;
    let mut policies = BTreeMap::new();
    if agent == AgentKind::Policy {
        for &m in modes {
            if let Some(p) = load_optional(&ctx.path(&policy_file(m)), PolicyModel::from_json)? {
                policies.insert(m as usize, p);
            }
        }
    }
    Ok(Loaded { tagger, binary, policies })
}

/// Writes results and per-episode traces under `dir`; returns the results with trace paths.
fn store(dir: &Path, runs: Vec<(EpisodeResult, Vec<TraceStep>)>) -> Result<Vec<EpisodeResult>, CliError> {
    let mut results = Vec::with_capacity(runs.len());
    for (i, (mut r, trace)) in runs.into_iter().enumerate() {
        let rel = format!("traces/{}-{:04}-{}.jsonl", r.mode.name(), i, r.task_seed);
        write_lines(&dir.join(&rel), &trace)?;
        r.trace_ref = Some(rel);
        results.push(r);
    }
    write_lines(&dir.join("results.jsonl"), &results)?;
    Ok(results)
}

fn evaluate(
    ctx: &Ctx,
    data: &Path,
    modes: &[TrackerMode],
    agent: AgentKind,
    strict: bool,
    dir: &Path,
) -> Result<Report, CliError> {
    let tax = Taxonomy::shipped();
    let tasks = load_dataset(data)?;
    let loaded = load_models(ctx, modes, agent)?;
    if strict {
        for &m in modes {
            if m.needs_tagger() && loaded.tagger.is_none() {
                return Err(CliError::Missing(format!("{} (mode {})", ctx.path(TAGGER_FILE).display(), m.name())));
            }
            if m == TrackerMode::Binary && loaded.binary.is_none() {
                return Err(CliError::Missing(format!("{} (mode binary)", ctx.path(BINARY_FILE).display())));
            }
            if agent == AgentKind::Policy && !loaded.policies.contains_key(&(m as usize)) {
                return Err(CliError::Missing(ctx.path(&policy_file(m)).display().to_string()));
            }
        }
    }
    let make = |m: TrackerMode| -> Option<Box<dyn Agent>> {
        match agent {
            AgentKind::Policy => loaded.policies.get(&(m as usize)).map(|p| Box::new(PolicyAgent::new(p.clone())) as Box<dyn Agent>),
            AgentKind::Greedy => Some(Box::new(GreedyAgent::default())),
            AgentKind::Expert => Some(Box::new(ExpertAgent::default())),
        }
    };
    let models = Models { tagger: loaded.tagger.as_ref(), binary: loaded.binary.as_ref() };
    let (runs, warnings) =
        run_ablation(&tasks, modes, &make, models, &ctx.config.run, tax).map_err(|e| CliError::Invariant(e.to_string()))?;
    if runs.is_empty() {
        return Err(CliError::Missing(format!("no mode could run: {}", warnings.join("; "))));
    }
    write_file(&dir.join("config.json"), &serde_json::to_string_pretty(&ctx.config).expect("config serializes"))?;
    let results = store(dir, runs)?;
    let report = build_report(&results, warnings).map_err(|e| CliError::Invariant(e.to_string()))?;
    write_report(dir, &report)?;
    Ok(report)
}

fn write_report(dir: &Path, report: &Report) -> Result<(), CliError> {
    write_file(&dir.join("report.json"), &serde_json::to_string_pretty(report).expect("report serializes"))?;
    write_file(&dir.join("report.txt"), &report.table())
}

pub fn cmd_run(ctx: &Ctx, data: &Path, mode: TrackerMode, agent: AgentKind) -> Result<String, CliError> {
    let dir = ctx.path(&format!("run-{}", mode.name()));
    let report = evaluate(ctx, data, &[mode], agent, true, &dir)?;
    let c = &report.cells[0];
    Ok(format!(
        "mode {}: SR {:.2}  PLWSR {:.2}  GC {:.2}  ({} episodes, results in {})\n",
        mode.name(),
        100.0 * c.sr,
        100.0 * c.plwsr,
        100.0 * c.gc,
        c.episode_count,
        dir.display()
    ))
}

pub fn cmd_ablate(ctx: &Ctx, data: &Path, modes: &[TrackerMode], agent: AgentKind) -> Result<String, CliError> {
    let dir = ctx.path("ablate");
    let report = evaluate(ctx, data, modes, agent, false, &dir)?;
    Ok(report.table())
}

pub fn cmd_report(results: &Path) -> Result<String, CliError> {
    let rs: Vec<EpisodeResult> = read_lines(results)?;
    for (i, r) in rs.iter().enumerate() {
        r.validate().map_err(|e| CliError::Data { path: results.into(), line: i + 1, msg: e.to_string() })?;
    }
    let report = build_report(&rs, Vec::new())
        .map_err(|e| CliError::Data { path: results.into(), line: 0, msg: e.to_string() })?;
    let dir = results.parent().unwrap_or(Path::new("."));
    write_report(dir, &report)?;
    Ok(report.table())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing() {
        let m = parse_mix("Pick&Place=3,Examine").unwrap();
        assert_eq!(m.len(), 2);
        assert!((m[0].1 - 0.75).abs() < 1e-12);
        assert!(parse_mix("Nope=1").is_err());
        assert!(parse_mix("Examine=0").is_err());
    }

    #[test]
    fn seed_precedence() {
        let mut c = CliConfig { seed: Some(7), ..Default::default() };
        assert_eq!(c.resolve_seed(Some(3)), 3);
        let mut c = CliConfig { seed: Some(7), ..Default::default() };
        assert_eq!(c.resolve_seed(None), 7);
        assert_eq!(c.run.detector.seed, 7);
        assert_eq!(CliConfig::default().resolve_seed(None), 0);
    }

    #[test]
    fn exit_codes() {
        let e = CliError::Data { path: "x".into(), line: 4, msg: "bad".into() };
        assert_eq!(e.exit_code(), 3);
        assert_eq!(e.to_string(), "x:4: bad");
        assert_eq!(CliError::Missing("m".into()).exit_code(), 4);
        assert_eq!(CliError::Invariant("i".into()).exit_code(), 5);
    }
}
