//! Command implementations behind the `dualcal` binary.
//!
//! Every command takes a validated [`RunConfig`]; validation checks paths,
//! ranges, and client settings before anything is written.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Duration, NaiveDate, Utc};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ingest_corpus, load_users, Article, ClickRecord, Corpus, CorpusFormat, CorpusSummary, IngestReport, UserProfile,
};
use crate::distributions::Axis;
use crate::error::{Error, Result};
use crate::evaluation::{all_divergence_series, click_feature_table, DivergenceSeries, SupplyWindow};
use crate::preview::{
    threshold_sweep, top3_topics, Embedder, HashEmbedder, HttpClient, HttpClientConfig, LlmClient, MockClient,
    ReplayClient, Strategy, SweepPair, SweepRow, TEMPLATE_VERSION,
};
use crate::reranker::Mode;
use crate::runlog::{
    applied_strategy, Assignment, DayFailure, Group, Manifest, RunLog, SupplyRecord, UserRecord, RUNLOG_SCHEMA,
};
use crate::scoring::{ScoreSource, ScoreTable};
use crate::simulate::{simulate_users, DayPipeline, PreviewSettings, ScenarioSpec, Treatments, World};
use crate::tuning::{
    coverage_probability, emit_heatmap, random_search, ReplayDataset, ThetaGrid, TuningTable, UtilityWeights,
    DEFAULT_SAMPLE_COUNT,
};

pub const CONFIG_SCHEMA: &str = "dualcal.config/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Replay,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    #[default]
    Mock,
    Replay,
    Http,
}

impl FromStr for ClientKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(ClientKind::Mock),
            "replay" => Ok(ClientKind::Replay),
            "http" => Ok(ClientKind::Http),
            other => Err(Error::parse("llm client", format!("unknown client `{other}`"))),
        }
    }
}

/// Input files for replay mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayInputs {
    pub articles: PathBuf,
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    pub clicks: PathBuf,
    /// Precomputed base scores; embedding scores are used when absent.
    #[serde(default)]
    pub scores: Option<PathBuf>,
    pub assignments: PathBuf,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub client: ClientKind,
    pub replay_path: Option<PathBuf>,
    pub http: HttpClientConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub sample_count: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    pub weights: UtilityWeights,
    pub include_infeasible: bool,
    /// Days before the run start used as held-out evaluation data.
    pub held_out_days: u32,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            sample_count: DEFAULT_SAMPLE_COUNT,
            seed: None,
            weights: UtilityWeights::default(),
            include_infeasible: false,
            held_out_days: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub alpha: f64,
    pub window: SupplyWindow,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            alpha: crate::distributions::DEFAULT_ALPHA,
            window: SupplyWindow::Experiment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub thetas: Vec<f64>,
    pub max_pairs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            thetas: vec![0.2, 0.3, 0.4],
            max_pairs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub mode: RunMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub replay: Option<ReplayInputs>,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub treatments: Treatments,
    #[serde(default)]
    pub preview: PreviewSettings,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub llm_client: Option<ClientKind>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Default simulation config.
    pub fn simulate(seed: u64) -> Self {
        RunConfig {
            schema: CONFIG_SCHEMA.into(),
            mode: RunMode::Simulate,
            seed,
            output_dir: default_output_dir(),
            parallelism: None,
            replay: None,
            scenario: ScenarioSpec::default(),
            treatments: Treatments::default(),
            preview: PreviewSettings::default(),
            llm: LlmConfig::default(),
            tuning: TuningConfig::default(),
            report: ReportConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    /// Parses TOML text; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::parse("config", e))?;
        if let Some(r) = &mut cfg.replay {
            resolve(base, &mut r.articles);
            resolve(base, &mut r.clicks);
            resolve(base, &mut r.assignments);
            for p in [&mut r.profiles, &mut r.scores].into_iter().flatten() {
                resolve(base, p);
            }
        }
        if let Some(p) = &mut cfg.llm.replay_path {
            resolve(base, p);
        }
        if let Some(p) = &mut cfg.llm.http.body_log {
            resolve(base, p);
        }
        resolve(base, &mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("config", e))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
        if let Some(n) = o.parallelism {
            self.parallelism = Some(n);
        }
        if let Some(c) = o.llm_client {
            self.llm.client = c;
        }
    }

    /// Checks everything a command needs; no files are touched.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("schema `{}` is not `{CONFIG_SCHEMA}`", self.schema));
        }
        if self.parallelism == Some(0) {
            return bad("parallelism must be at least 1".into());
        }
        match self.mode {
            RunMode::Replay => {
                let Some(r) = &self.replay else {
                    return bad("replay mode needs a [replay] section".into());
                };
                let mut paths = vec![&r.articles, &r.clicks, &r.assignments];
                paths.extend(r.profiles.iter());
                paths.extend(r.scores.iter());
                for p in paths {
                    if !p.is_file() {
                        return bad(format!("input file {} does not exist", p.display()));
                    }
                }
                if r.start_date > r.end_date {
                    return bad(format!("start_date {} is after end_date {}", r.start_date, r.end_date));
                }
            }
            RunMode::Simulate => self.scenario.validate()?,
        }
        self.treatments.validate()?;
        if self.treatments.tc.mode != Mode::TC || self.treatments.dc.mode != Mode::DC {
            return bad("treatments.tc must use mode TC and treatments.dc mode DC".into());
        }
        let p = &self.preview;
        if !(-1.0..=1.0).contains(&p.theta_sim) {
            return bad(format!("theta_sim = {} outside [-1, 1]", p.theta_sim));
        }
        if p.limits.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        if !(p.limits.latency_budget_secs.is_finite() && p.limits.latency_budget_secs > 0.0) {
            return bad("latency_budget_secs must be positive".into());
        }
        if !(p.limits.dedup_threshold > 0.0 && p.limits.dedup_threshold <= 1.0) {
            return bad(format!("dedup_threshold = {} outside (0, 1]", p.limits.dedup_threshold));
        }
        if !(p.blend.click_weight >= 0.0 && p.blend.onboarding_weight >= 0.0) {
            return bad("topic blend weights must be non-negative".into());
        }
        match self.llm.client {
            ClientKind::Mock => {}
            ClientKind::Replay => match &self.llm.replay_path {
                Some(path) if path.is_file() => {}
                Some(path) => return bad(format!("replay file {} does not exist", path.display())),
                None => return bad("llm.client = replay needs llm.replay_path".into()),
            },
            ClientKind::Http => {
                let h = &self.llm.http;
                if h.endpoint.trim().is_empty() || h.api_key_env.trim().is_empty() {
                    return bad("llm.http needs an endpoint and api_key_env".into());
                }
                if let Some(dir) = h.body_log.as_ref().and_then(|p| p.parent()) {
                    if !dir.as_os_str().is_empty() && !dir.is_dir() {
                        return bad(format!("body log directory {} does not exist", dir.display()));
                    }
                }
            }
        }
        if self.tuning.sample_count == 0 {
            return bad("tuning.sample_count must be positive".into());
        }
        if self.tuning.held_out_days == 0 {
            return bad("tuning.held_out_days must be positive".into());
        }
        self.tuning.weights.validate()?;
        if !(self.report.alpha > 0.0 && self.report.alpha < 1.0) {
            return bad(format!("report.alpha = {} outside (0, 1)", self.report.alpha));
        }
        if self.sweep.thetas.is_empty() || self.sweep.thetas.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return bad("sweep.thetas must be a non-empty list within [-1, 1]".into());
        }
        Ok(())
    }

    fn tuning_seed(&self) -> u64 {
        self.tuning.seed.unwrap_or(self.seed)
    }
}

/// Runs `f` on a pool of `threads` workers, or on the current pool.
pub fn with_parallelism<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

pub fn build_client(cfg: &LlmConfig) -> Result<Box<dyn LlmClient>> {
    Ok(match cfg.client {
        ClientKind::Mock => Box::new(MockClient),
        ClientKind::Replay => {
            let path = cfg
                .replay_path
                .as_ref()
                .ok_or_else(|| Error::Config("llm.replay_path is required".into()))?;
            Box::new(ReplayClient::load(path)?)
        }
        ClientKind::Http => Box::new(HttpClient::new(cfg.http.clone())?),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Serialize)]
pub struct IngestOutcome {
    pub summary: CorpusSummary,
    pub report: IngestReport,
    pub out_dir: PathBuf,
}

/// Ingests `input`, writing the accepted articles and a quarantine report
/// under `out`.
pub fn cmd_ingest(input: &Path, format: CorpusFormat, out: &Path) -> Result<IngestOutcome> {
    let (corpus, report) = ingest_corpus(input, format)?;
    create_dir(out)?;
    let mut text = String::new();
    for a in corpus.articles() {
        text.push_str(&serde_json::to_string(a)?);
        text.push('\n');
    }
    write_text(&out.join("articles.jsonl"), &text)?;
    let outcome = IngestOutcome {
        summary: corpus.summary(),
        report,
        out_dir: out.to_path_buf(),
    };
    write_json(&out.join("ingest_report.json"), &outcome)?;
    info!(
        "ingested {} articles, quarantined {}",
        outcome.report.accepted,
        outcome.report.quarantined.len()
    );
    Ok(outcome)
}

// ------------------------------------------------------------ replay data

struct ReplayWorld {
    corpus: Corpus,
    users: Vec<UserProfile>,
    scores: ScoreSource,
}

fn load_replay(r: &ReplayInputs) -> Result<ReplayWorld> {
    let (corpus, report) = ingest_corpus(&r.articles, CorpusFormat::Ndjson)?;
    for q in &report.quarantined {
        warn!("quarantined line {}: {}", q.line, q.reason);
    }
    let users = load_users(r.profiles.as_deref(), Some(&r.clicks), &corpus)?;
    let scores = match &r.scores {
        Some(p) => ScoreSource::Table(ScoreTable::load(p)?),
        None => ScoreSource::Embedding,
    };
    Ok(ReplayWorld { corpus, users, scores })
}

fn date_range(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let days = (end - start).num_days();
    (0..=days).map(|d| start + Duration::days(d)).collect()
}

/// Runs the daily pipeline over logged data: histories and clicks come from
/// the click file, every accessor only sees clicks before each date.
fn replay_run(
    cfg: &RunConfig,
    r: &ReplayInputs,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
    config_text: &str,
) -> Result<RunLog> {
    let world = load_replay(r)?;
    let assignments: Vec<Assignment> = crate::corpus::read_ndjson(&r.assignments)?;
    let by_id: HashMap<&str, &UserProfile> = world.users.iter().map(|u| (u.user_id.as_str(), u)).collect();
    let mut seen = HashSet::new();
    let mut assigned: Vec<(&UserProfile, Group)> = Vec::new();
    for a in &assignments {
        if !seen.insert(a.user_id.as_str()) {
            return Err(Error::Config(format!("user {} is assigned twice", a.user_id)));
        }
        let user = by_id
            .get(a.user_id.as_str())
            .ok_or_else(|| Error::UnknownUser(a.user_id.clone()))?;
        assigned.push((user, a.group));
    }
    assigned.sort_by(|a, b| a.0.user_id.cmp(&b.0.user_id));

    let pipeline = DayPipeline {
        corpus: &world.corpus,
        scores: &world.scores,
        treatments: &cfg.treatments,
        preview: &cfg.preview,
        client,
        embedder,
        run_start: r.start_date,
    };
    let dates = date_range(r.start_date, r.end_date);
    let mut supply_log = Vec::new();
    let mut newsletters = Vec::new();
    let mut rewrites = Vec::new();
    let mut failures = Vec::new();
    for &date in &dates {
        let supply = world.corpus.published_on(date);
        supply_log.push(SupplyRecord {
            date,
            article_ids: supply.iter().map(|a| a.article_id.clone()).collect(),
        });
        if supply.is_empty() {
            warn!("{date}: no supply; skipping the day");
            continue;
        }
        let outcomes: Vec<_> = assigned
            .par_iter()
            .map(|(u, g)| pipeline.run_user_day(u, *g, date, &supply))
            .collect();
        for ((u, g), outcome) in assigned.iter().zip(outcomes) {
            match outcome {
                Ok(day) => {
                    newsletters.extend(day.records(*g));
                    rewrites.extend(day.rewrites);
                }
                Err(e) => failures.push(DayFailure {
                    date,
                    user_id: u.user_id.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }

    let mut users = Vec::new();
    let mut clicks = Vec::new();
    for (u, _) in &assigned {
        let mut record = UserRecord::from(*u);
        record.prior_clicks.retain(|c| c.clicked_at.date_naive() < r.start_date);
        users.push(record);
        clicks.extend(
            u.click_history
                .iter()
                .filter(|c| (r.start_date..=r.end_date).contains(&c.clicked_at.date_naive()))
                .map(|c| ClickRecord {
                    user_id: u.user_id.clone(),
                    article_id: c.article_id.clone(),
                    clicked_at: c.clicked_at,
                }),
        );
    }
    let mut assignment_rows: Vec<Assignment> = assigned
        .iter()
        .map(|(u, g)| Assignment {
            user_id: u.user_id.clone(),
            group: *g,
        })
        .collect();
    assignment_rows.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    Ok(RunLog {
        manifest: Manifest {
            schema: RUNLOG_SCHEMA.into(),
            created_at: None,
            seed: cfg.seed,
            run_mode: "replay".into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            template_version: TEMPLATE_VERSION.into(),
            days: dates,
            complete: failures.is_empty(),
            failures,
        },
        config: config_text.to_string(),
        corpus: world.corpus,
        users,
        assignments: assignment_rows,
        supply: supply_log,
        newsletters,
        clicks,
        rewrites,
    })
}

// ------------------------------------------------------------------ run

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub log: RunLog,
}

impl RunOutcome {
    pub fn failures(&self) -> usize {
        self.log.manifest.failures.len()
    }
}

/// Produces the run log in memory without writing anything.
pub fn execute_run(cfg: &RunConfig, client: &dyn LlmClient) -> Result<RunLog> {
    cfg.validate()?;
    let config_text = cfg.to_toml()?;
    let embedder = HashEmbedder::default();
    with_parallelism(cfg.parallelism, || match cfg.mode {
        RunMode::Simulate => {
            let world = World::generate(&cfg.scenario, cfg.seed)?;
            simulate_users(&world, &cfg.treatments, &cfg.preview, client, &embedder, &config_text)
        }
        RunMode::Replay => {
            let r = cfg.replay.as_ref().expect("validated");
            replay_run(cfg, r, client, &embedder, &config_text)
        }
    })?
}

fn fresh_run_dir(out: &Path, seed: u64) -> PathBuf {
    let stamp = Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = out.join(format!("run-{stamp}-seed{seed}"));
    let mut dir = base.clone();
    let mut n = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    dir
}

/// Executes the configured run and writes it to a new timestamped,
/// seed-stamped directory under the output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let client = build_client(&cfg.llm)?;
    let mut log = execute_run(cfg, client.as_ref())?;
    log.manifest.created_at = Some(Utc::now());
    let dir = fresh_run_dir(&cfg.output_dir, cfg.seed);
    log.write_dir(&dir)?;
    if log.manifest.failures.is_empty() {
        info!("run written to {}", dir.display());
    } else {
        warn!(
            "run written to {} with {} failed reader-days",
            dir.display(),
            log.manifest.failures.len()
        );
    }
    Ok(RunOutcome { dir, log })
}

// ----------------------------------------------------------------- tune

#[derive(Debug, Clone, Serialize)]
pub struct SelectedPair {
    pub theta_t: f64,
    pub theta_l: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningReport {
    pub seed: u64,
    pub sample_count: usize,
    pub coverage_probability: f64,
    pub include_infeasible: bool,
    pub weights: UtilityWeights,
    pub evaluated_days: usize,
    pub held_out_dates: Vec<NaiveDate>,
    pub selected: SelectedPair,
    pub table: TuningTable,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub dir: PathBuf,
    pub report: TuningReport,
}

/// Held-out evaluation data: the days just before the run start.
pub fn tuning_dataset(cfg: &RunConfig) -> Result<(ReplayDataset, Vec<NaiveDate>)> {
    let n = i64::from(cfg.tuning.held_out_days);
    match cfg.mode {
        RunMode::Simulate => {
            let world = World::generate(&cfg.scenario, cfg.seed)?;
            let start = cfg.scenario.start_date;
            let dates: Vec<NaiveDate> = (1..=n.min(i64::from(cfg.scenario.prior_days)))
                .rev()
                .map(|d| start - Duration::days(d))
                .collect();
            let ds = ReplayDataset::build(world.corpus, &world.users, &ScoreSource::Embedding, &dates)?;
            Ok((ds, dates))
        }
        RunMode::Replay => {
            let r = cfg.replay.as_ref().expect("validated");
            let world = load_replay(r)?;
            let dates: Vec<NaiveDate> = (1..=n).rev().map(|d| r.start_date - Duration::days(d)).collect();
            let ds = ReplayDataset::build(world.corpus, &world.users, &world.scores, &dates)?;
            Ok((ds, dates))
        }
    }
}

/// Random search over the theta grid on held-out data; writes the heatmap
/// and a report naming the selected pair.
pub fn cmd_tune(cfg: &RunConfig) -> Result<TuneOutcome> {
    cfg.validate()?;
    let seed = cfg.tuning_seed();
    let grid = ThetaGrid {
        sample_count: cfg.tuning.sample_count,
        seed,
        include_infeasible: cfg.tuning.include_infeasible,
    };
    let (dataset, dates) = tuning_dataset(cfg)?;
    if dataset.days.is_empty() {
        return Err(Error::Empty("held-out reader-days with clicks"));
    }
    let table = with_parallelism(cfg.parallelism, || {
        random_search(&dataset, &grid, cfg.tuning.weights, &cfg.treatments.dc)
    })??;
    let row = table.selected_row();
    let report = TuningReport {
        seed,
        sample_count: table.rows.len(),
        coverage_probability: coverage_probability(table.rows.len()),
        include_infeasible: grid.include_infeasible,
        weights: cfg.tuning.weights,
        evaluated_days: dataset.days.len(),
        held_out_dates: dates,
        selected: SelectedPair {
            theta_t: row.theta_t,
            theta_l: row.theta_l,
            utility: row.utility,
        },
        table: table.clone(),
    };

    let dir = cfg.output_dir.join(format!("tune-seed{seed}"));
    create_dir(&dir)?;
    emit_heatmap(&table, &dir.join("heatmap.csv"))?;
    write_json(&dir.join("tuning_report.json"), &report)?;
    let mut md = String::new();
    let _ = writeln!(md, "# Tuning report\n");
    let _ = writeln!(md, "- seed: {seed}");
    let _ = writeln!(
        md,
        "- configurations evaluated: {} (coverage probability {:.4})",
        report.sample_count, report.coverage_probability
    );
    let _ = writeln!(md, "- held-out reader-days: {}", report.evaluated_days);
    let _ = writeln!(
        md,
        "- weights: ndcg {}, topic {}, locality {}",
        report.weights.ndcg, report.weights.topic, report.weights.locality
    );
    let _ = writeln!(
        md,
        "- selected: theta_t = {:.2}, theta_l = {:.2} (utility {:.4})",
        row.theta_t, row.theta_l, row.utility
    );
    write_text(&dir.join("tuning_report.md"), &md)?;
    info!("selected theta_t = {:.2}, theta_l = {:.2}", row.theta_t, row.theta_l);
    Ok(TuneOutcome { dir, report })
}

// --------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupClicks {
    pub group: Group,
    pub users: usize,
    pub users_with_clicks: usize,
    pub newsletters: usize,
    pub slots: usize,
    pub clicks: usize,
    pub click_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupDivergence {
    pub group: Group,
    pub axis: Axis,
    pub users: usize,
    pub final_mean_exposure: Option<f64>,
    pub users_with_clicks: usize,
    pub final_mean_consumption: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub complete: bool,
    pub warnings: Vec<String>,
    pub strategies: Vec<StrategyRow>,
    pub clicks: Vec<GroupClicks>,
    pub divergence: Vec<GroupDivergence>,
}

/// Event/Topic/None counts over DC-NP newsletter slots. A slot counts under
/// the strategy of its accepted rewrite, otherwise under None. Without any
/// DC-NP slots every slot of the run counts as None.
pub fn strategy_table(run: &RunLog) -> Vec<StrategyRow> {
    let audits: HashMap<(NaiveDate, &str, &str), _> = run
        .rewrites
        .iter()
        .map(|a| ((a.date, a.user_id.as_str(), a.article_id.as_str()), a))
        .collect();
    let mut counts = [0usize; 3];
    let dcnp: Vec<_> = run.newsletters.iter().filter(|n| n.group == Group::DcNp).collect();
    if dcnp.is_empty() {
        counts[2] = run.newsletters.len();
    }
    for n in dcnp {
        let s = applied_strategy(audits.get(&(n.date, n.user_id.as_str(), n.article_id.as_str())).copied());
        counts[match s {
            Strategy::Event => 0,
            Strategy::Topic => 1,
            Strategy::None => 2,
        }] += 1;
    }
    let total: usize = counts.iter().sum();
    [Strategy::Event, Strategy::Topic, Strategy::None]
        .into_iter()
        .zip(counts)
        .map(|(strategy, count)| StrategyRow {
            strategy,
            count,
            percent: if total == 0 {
                if strategy == Strategy::None { 100.0 } else { 0.0 }
            } else {
                100.0 * count as f64 / total as f64
            },
        })
        .collect()
}

pub fn click_summary(run: &RunLog) -> Vec<GroupClicks> {
    let groups = run.groups();
    Group::ALL
        .into_iter()
        .map(|g| {
            let members: HashSet<&str> = groups
                .iter()
                .filter(|(_, gg)| **gg == g)
                .map(|(u, _)| u.as_str())
                .collect();
            let slots: Vec<_> = run.newsletters.iter().filter(|n| n.group == g).collect();
            let shown: HashSet<(&str, &str, NaiveDate)> = slots
                .iter()
                .map(|n| (n.user_id.as_str(), n.article_id.as_str(), n.date))
                .collect();
            let clicks: Vec<_> = run
                .clicks
                .iter()
                .filter(|c| shown.contains(&(c.user_id.as_str(), c.article_id.as_str(), c.clicked_at.date_naive())))
                .collect();
            let newsletters: HashSet<(&str, NaiveDate)> =
                slots.iter().map(|n| (n.user_id.as_str(), n.date)).collect();
            let clickers: HashSet<&str> = clicks.iter().map(|c| c.user_id.as_str()).collect();
            GroupClicks {
                group: g,
                users: members.len(),
                users_with_clicks: clickers.len(),
                newsletters: newsletters.len(),
                slots: slots.len(),
                clicks: clicks.len(),
                click_rate: if slots.is_empty() { 0.0 } else { clicks.len() as f64 / slots.len() as f64 },
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn group_divergence(series: &[DivergenceSeries], axis: Axis) -> Vec<GroupDivergence> {
    Group::ALL
        .into_iter()
        .map(|g| {
            let finals: Vec<_> = series.iter().filter(|s| s.group == g).filter_map(|s| s.last()).collect();
            let exposure: Vec<f64> = finals.iter().map(|p| p.exposure).collect();
            let consumption: Vec<f64> = finals.iter().filter_map(|p| p.consumption).collect();
            GroupDivergence {
                group: g,
                axis,
                users: exposure.len(),
                final_mean_exposure: mean(&exposure),
                users_with_clicks: consumption.len(),
                final_mean_consumption: mean(&consumption),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_divergence_csvs(dir: &Path, axis: Axis, series: &[DivergenceSeries]) -> Result<()> {
    let path = dir.join(format!("divergence_{}.csv", axis.as_str()));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["user_id", "group", "axis", "index", "date", "exposure", "consumption"])?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.user_id.clone(),
                s.group.to_string(),
                axis.as_str().to_string(),
                p.index.to_string(),
                p.date.to_string(),
                format!("{:.6}", p.exposure),
                opt(p.consumption),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(format!("divergence_by_group_{}.csv", axis.as_str()));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["group", "index", "users", "mean_exposure", "users_with_clicks", "mean_consumption"])?;
    for g in Group::ALL {
        let mut by_index: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for s in series.iter().filter(|s| s.group == g) {
            for p in &s.points {
                let e = by_index.entry(p.index).or_default();
                e.0.push(p.exposure);
                e.1.extend(p.consumption);
            }
        }
        for (index, (exp, cons)) in by_index {
            w.write_record([
                g.to_string(),
                index.to_string(),
                exp.len().to_string(),
                opt(mean(&exp)),
                cons.len().to_string(),
                opt(mean(&cons)),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Reads a run directory, tolerating missing record files; each one that is
/// absent is read as empty and reported as a warning. The manifest and the
/// articles are required.
pub fn read_run_lenient(dir: &Path) -> Result<(RunLog, Vec<String>)> {
    let missing: Vec<&str> = RunLog::deterministic_files()
        .iter()
        .copied()
        .filter(|name| !dir.join(name).is_file())
        .collect();
    if missing.is_empty() {
        return Ok((RunLog::read_dir(dir)?, Vec::new()));
    }
    if missing.contains(&"articles.jsonl") {
        return Err(Error::Config(format!("{} has no articles.jsonl", dir.display())));
    }
    let staged = std::env::temp_dir().join(format!(
        "dualcal-report-{}-{}",
        std::process::id(),
        Utc::now().timestamp_nanos_opt().unwrap_or_default()
    ));
    let log = stage_run(dir, &staged).and_then(|_| RunLog::read_dir(&staged));
    let _ = fs::remove_dir_all(&staged);
    let warnings = missing.iter().map(|m| format!("{m} is missing; treated as empty")).collect();
    Ok((log?, warnings))
}

/// Copies a run directory aside, writing an empty file for every missing
/// record file.
fn stage_run(dir: &Path, staged: &Path) -> Result<()> {
    create_dir(staged)?;
    for name in RunLog::deterministic_files().iter().chain(["manifest.json"].iter()) {
        let src = dir.join(name);
        let dst = staged.join(name);
        if src.is_file() {
            fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        } else {
            write_text(&dst, "")?;
        }
    }
    Ok(())
}

/// Writes divergence series, click and strategy summaries, and the click
/// feature table for a run directory into `out`.
pub fn cmd_report(run_dir: &Path, out: &Path, settings: &ReportConfig) -> Result<Report> {
    let (run, mut warnings) = read_run_lenient(run_dir)?;
    if !run.manifest.complete || !run.manifest.failures.is_empty() {
        warnings.push(format!(
            "run is incomplete: {} failed reader-days",
            run.manifest.failures.len()
        ));
    }
    create_dir(out)?;

    let mut divergence = Vec::new();
    for axis in [Axis::Locality, Axis::Topic] {
        match all_divergence_series(&run, axis, settings.window, settings.alpha) {
            Ok(series) => {
                write_divergence_csvs(out, axis, &series)?;
                divergence.extend(group_divergence(&series, axis));
            }
            Err(e) => warnings.push(format!("{} divergence unavailable: {e}", axis.as_str())),
        }
    }

    let strategies = strategy_table(&run);
    let mut w = csv::Writer::from_path(out.join("strategies.csv"))?;
    w.write_record(["strategy", "count", "percent"])?;
    for r in &strategies {
        w.write_record([r.strategy.to_string(), r.count.to_string(), format!("{:.2}", r.percent)])?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let clicks = click_summary(&run);
    let mut w = csv::Writer::from_path(out.join("clicks.csv"))?;
    for c in &clicks {
        w.serialize(c)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    match click_feature_table(&run) {
        Ok(rows) => {
            let mut w = csv::Writer::from_path(out.join("features.csv"))?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(out, e))?;
        }
        Err(e) => warnings.push(format!("feature table unavailable: {e}")),
    }

    for warning in &warnings {
        warn!("{warning}");
    }
    let report = Report {
        seed: run.manifest.seed,
        complete: run.manifest.complete && warnings.is_empty(),
        warnings,
        strategies,
        clicks,
        divergence,
    };
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.md"), &render_report(&report))?;
    Ok(report)
}

fn render_report(r: &Report) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Run report (seed {})\n", r.seed);
    if !r.warnings.is_empty() {
        let _ = writeln!(md, "## Warnings\n");
        for w in &r.warnings {
            let _ = writeln!(md, "- {w}");
        }
        md.push('\n');
    }
    let _ = writeln!(md, "## Final cumulative divergence from supply\n");
    let _ = writeln!(md, "| axis | group | users | exposure | users with clicks | consumption |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for d in &r.divergence {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            d.axis.as_str(),
            d.group,
            d.users,
            opt(d.final_mean_exposure),
            d.users_with_clicks,
            opt(d.final_mean_consumption)
        );
    }
    let _ = writeln!(md, "\n## Clicks\n");
    let _ = writeln!(md, "| group | users | newsletters | slots | clicks | click rate |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for c in &r.clicks {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {:.4} |",
            c.group, c.users, c.newsletters, c.slots, c.clicks, c.click_rate
        );
    }
    let _ = writeln!(md, "\n## Preview strategies\n");
    let _ = writeln!(md, "| strategy | count | percent |");
    let _ = writeln!(md, "|---|---|---|");
    for s in &r.strategies {
        let _ = writeln!(md, "| {} | {} | {:.2} |", s.strategy, s.count, s.percent);
    }
    md
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Pairs each reader with the highest-scored unread article of each run day,
/// up to the configured number of pairs.
pub fn sweep_pairs(corpus: &Corpus, users: &[UserProfile], scores: &ScoreSource, dates: &[NaiveDate], max: usize, blend: crate::preview::TopicBlend) -> Vec<SweepPair> {
    let mut pairs = Vec::new();
    'outer: for &date in dates {
        let supply = corpus.published_on(date);
        if supply.is_empty() {
            continue;
        }
        for user in users {
            if pairs.len() >= max {
                break 'outer;
            }
            let history: Vec<&Article> = user.history_articles(corpus, Some(date));
            if history.is_empty() {
                continue;
            }
            let read: HashSet<&str> = history.iter().map(|a| a.article_id.as_str()).collect();
            let best = scores
                .score(user, corpus, &supply, date)
                .into_iter()
                .filter(|c| !read.contains(c.article_id.as_str()))
                .max_by(|a, b| a.base_score.total_cmp(&b.base_score).then_with(|| b.article_id.cmp(&a.article_id)));
            let Some(best) = best else { continue };
            let Some(article) = corpus.get(&best.article_id) else { continue };
            pairs.push(SweepPair {
                article: article.clone(),
                history: history.into_iter().cloned().collect(),
                topics: top3_topics(user, corpus, Some(date), blend),
            });
        }
    }
    pairs
}

/// Event-gating rate and ROUGE-L fidelity for each configured threshold.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let client = build_client(&cfg.llm)?;
    let (corpus, users, scores, dates) = match cfg.mode {
        RunMode::Simulate => {
            let world = World::generate(&cfg.scenario, cfg.seed)?;
            (world.corpus, world.users, ScoreSource::Embedding, cfg.scenario.run_dates())
        }
        RunMode::Replay => {
            let r = cfg.replay.as_ref().expect("validated");
            let w = load_replay(r)?;
            (w.corpus, w.users, w.scores, date_range(r.start_date, r.end_date))
        }
    };
    let pairs = sweep_pairs(&corpus, &users, &scores, &dates, cfg.sweep.max_pairs, cfg.preview.blend);
    if pairs.is_empty() {
        return Err(Error::Empty("sweep pairs"));
    }
    let embedder = HashEmbedder::default();
    let rows = with_parallelism(cfg.parallelism, || {
        threshold_sweep(&pairs, client.as_ref(), &embedder, &cfg.sweep.thetas, &cfg.preview.limits)
    })?;
    let dir = cfg.output_dir.join(format!("sweep-seed{}", cfg.seed));
    create_dir(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record(["theta_sim", "pairs", "event_count", "event_rate", "rewritten", "mean_rouge_l", "mean_rouge_l_event"])?;
    for r in &rows {
        w.write_record([
            format!("{:.2}", r.theta_sim),
            r.pairs.to_string(),
            r.event_count.to_string(),
            format!("{:.6}", r.event_rate),
            r.rewritten.to_string(),
            opt(r.mean_rouge_l),
            opt(r.mean_rouge_l_event),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join("sweep.json"), &rows)?;
    Ok(SweepOutcome { dir, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::simulate(3);
        cfg.scenario = ScenarioSpec {
            users_per_group: 2,
            weeks: 1,
            articles_per_day: 15,
            prior_days: 7,
            prior_clicks: 6,
            ..ScenarioSpec::default()
        };
        cfg
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = tiny();
        let text = cfg.to_toml().unwrap();
        assert!(text.starts_with("schema = \"dualcal.config/v1\""));
        let back = RunConfig::from_toml(&text, Path::new("/")).unwrap();
        assert_eq!(back.scenario, cfg.scenario);
        assert_eq!(back.treatments, cfg.treatments);
        assert_eq!(back.seed, 3);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml("schema = \"dualcal.config/v1\"\nmode = \"simulate\"\n", Path::new(".")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.treatments, Treatments::default());
        assert_eq!(cfg.tuning.sample_count, 60);
    }

    #[test]
    fn validation_failures() {
        let mut cfg = tiny();
        cfg.schema = "other".into();
        assert!(cfg.validate().is_err());

        let mut cfg = tiny();
        cfg.treatments.dc.theta_l = 0.9;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny();
        cfg.mode = RunMode::Replay;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny();
        cfg.llm.client = ClientKind::Replay;
        cfg.llm.replay_path = Some("/nonexistent/replay.jsonl".into());
        assert!(cfg.validate().is_err());

        let mut cfg = tiny();
        cfg.parallelism = Some(0);
        assert!(cfg.validate().is_err());

        assert!(RunConfig::from_toml("schema = \"dualcal.config/v1\"\nmode = \"simulate\"\nbogus = 1\n", Path::new("."))
            .is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = tiny();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some("/tmp/x".into()),
            parallelism: Some(2),
            llm_client: Some(ClientKind::Http),
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.parallelism, Some(2));
        assert_eq!(cfg.llm.client, ClientKind::Http);
    }

    #[test]
    fn strategy_table_without_dcnp_is_all_none() {
        let cfg = tiny();
        let mut log = execute_run(&cfg, &MockClient).unwrap();
        log.newsletters.retain(|n| n.group != Group::DcNp);
        let table = strategy_table(&log);
        assert_eq!(table[2].count, log.newsletters.len());
        assert_eq!(table[2].percent, 100.0);
        assert_eq!(table[0].count + table[1].count, 0);
    }

    #[test]
    fn strategy_percentages_sum_to_100() {
        let log = execute_run(&tiny(), &MockClient).unwrap();
        let table = strategy_table(&log);
        let sum: f64 = table.iter().map(|r| r.percent).sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }
}
