//! Policy rollouts, service and feasibility metrics, suite aggregation and
//! SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cql::PolicyBundle;
use crate::env::RelayEnv;
use crate::error::{Error, Result};
use crate::fsutil::{sha256_file, write_atomic};
use crate::par;
use crate::radio::Point3;
use crate::repr::Codec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub n_served: usize,
    pub n_star: usize,
    pub reward: f64,
    pub uav_pos: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode_seed: u64,
    pub policy_id: String,
    pub steps: Vec<StepRecord>,
}

/// Rolls out `act` greedily for one episode. Step `t` records the world after
/// the `t`-th action, counted from 0.
pub fn run_episode_with<F>(
    env: &RelayEnv,
    episode_seed: u64,
    policy_id: &str,
    mut act: F,
) -> Result<EpisodeTrace>
where
    F: FnMut(&[f32]) -> Result<usize>,
{
    if !env.candidate_config().include_current_uav {
        return Err(Error::Config(
            "evaluation needs the current UAV position in the candidate set".into(),
        ));
    }
    let (mut world, mut obs) = env.reset(episode_seed)?;
    let mut steps = Vec::with_capacity(env.config().episode_len);
    for t in 0..env.config().episode_len {
        let action = act(&obs)?;
        let r = env.step(&mut world, action)?;
        steps.push(StepRecord {
            t,
            n_served: r.info.n_served,
            n_star: r.info.n_star,
            reward: r.reward,
            uav_pos: r.info.uav_pos,
        });
        obs = r.next_obs;
    }
    Ok(EpisodeTrace {
        episode_seed,
        policy_id: policy_id.to_string(),
        steps,
    })
}

/// Checks that the bundle (behind the codec, if any) accepts this
/// environment's observations.
pub fn check_dims(env: &RelayEnv, bundle: &PolicyBundle, codec: Option<&Codec>) -> Result<()> {
    let d_o = env.obs_dim();
    let expected = match codec {
        Some(c) => {
            if c.input_dim() != d_o {
                return Err(Error::Dimension(format!(
                    "codec input dim {} does not match observation dim {d_o}",
                    c.input_dim()
                )));
            }
            c.latent_dim()
        }
        None => d_o,
    };
    if bundle.input_dim() != expected {
        return Err(Error::Dimension(format!(
            "policy input dim {} does not match {} dim {expected}",
            bundle.input_dim(),
            if codec.is_some() {
                "latent"
            } else {
                "observation"
            }
        )));
    }
    Ok(())
}

/// Greedy rollout of a frozen bundle, encoding each observation first when a
/// codec is given.
pub fn run_episode(
    env: &RelayEnv,
    bundle: &PolicyBundle,
    codec: Option<&Codec>,
    episode_seed: u64,
    policy_id: &str,
) -> Result<EpisodeTrace> {
    check_dims(env, bundle, codec)?;
    run_episode_with(env, episode_seed, policy_id, |obs| match codec {
        Some(c) => bundle.act(&c.encode(obs)?),
        None => bundle.act(obs),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub avg_served: f64,
    pub peak_served: f64,
    pub normalized_discounted: f64,
    pub feas_full: f64,
    pub feas_partial: f64,
    pub feas_none: f64,
    /// Counts of `n_star - n_served` over steps with a positive bound, indexed by gap.
    pub gap_histogram: Vec<u64>,
    /// Per episode, in input order.
    pub time_to_feasible: Vec<usize>,
    pub ttf_median: f64,
}

/// First step at which service matches a positive bound; `T` when never.
pub fn time_to_feasible(trace: &EpisodeTrace) -> usize {
    trace
        .steps
        .iter()
        .position(|s| s.n_star > 0 && s.n_served >= s.n_star)
        .unwrap_or(trace.steps.len())
}

/// Discounted reward mass over the discounted mass of steps with a positive
/// bound; 0 when the bound is never positive.
pub fn normalized_discounted(trace: &EpisodeTrace, gamma: f64) -> f64 {
    let (mut num, mut den, mut g) = (0.0, 0.0, 1.0);
    for s in &trace.steps {
        if s.n_star > 0 {
            num += g * s.reward;
            den += g;
        }
        g *= gamma;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregates traces of equal length from a `num_users`-user scenario.
pub fn metrics(traces: &[EpisodeTrace], num_users: usize, gamma: f64) -> Result<MetricsReport> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Domain("metrics need at least one trace".into()))?;
    let len = first.steps.len();
    if len == 0 {
        return Err(Error::Domain("metrics need non-empty traces".into()));
    }
    if traces.iter().any(|t| t.steps.len() != len) {
        return Err(Error::Domain("traces have different lengths".into()));
    }
    let n = traces.len() as f64;
    let (mut avg, mut peak, mut norm) = (0.0, 0.0, 0.0);
    let (mut full, mut partial, mut none) = (0u64, 0u64, 0u64);
    let mut gaps = vec![0u64; num_users + 1];
    let mut ttf = Vec::with_capacity(traces.len());
    for trace in traces {
        let mut sum = 0usize;
        let mut max = 0usize;
        for s in &trace.steps {
            if s.n_served > s.n_star || s.n_star > num_users {
                return Err(Error::Domain(format!(
                    "step {} of episode {} has n_served {} and n_star {} with {num_users} users",
                    s.t, trace.episode_seed, s.n_served, s.n_star
                )));
            }
            sum += s.n_served;
            max = max.max(s.n_served);
            match s.n_star {
                0 => none += 1,
                k if k == num_users => full += 1,
                _ => partial += 1,
            }
            if s.n_star > 0 {
                gaps[s.n_star - s.n_served] += 1;
            }
        }
        avg += sum as f64 / len as f64;
        peak += max as f64;
        norm += normalized_discounted(trace, gamma);
        ttf.push(time_to_feasible(trace));
    }
    let steps = (traces.len() * len) as f64;
    let ttf_f: Vec<f64> = ttf.iter().map(|&t| t as f64).collect();
    Ok(MetricsReport {
        avg_served: avg / n,
        peak_served: peak / n,
        normalized_discounted: norm / n,
        feas_full: full as f64 / steps,
        feas_partial: partial as f64 / steps,
        feas_none: none as f64 / steps,
        gap_histogram: gaps,
        ttf_median: median(&ttf_f),
        time_to_feasible: ttf,
    })
}

/// Empirical CDF of time-to-feasible at `t = 0..=T`; censored episodes sit at `T`.
pub fn ttf_cdf(ttf: &[usize], episode_len: usize) -> Vec<(usize, f64)> {
    let n = ttf.len().max(1) as f64;
    let mut counts = vec![0usize; episode_len + 1];
    for &t in ttf {
        counts[t.min(episode_len)] += 1;
    }
    let mut acc = 0usize;
    counts
        .iter()
        .enumerate()
        .map(|(t, &c)| {
            acc += c;
            (t, acc as f64 / n)
        })
        .collect()
}

pub const TRACE_HEADER: &str = "t,n_served,n_star,reward,x,y,z";

pub fn trace_csv(trace: &EpisodeTrace) -> String {
    let mut s = String::with_capacity(trace.steps.len() * 48);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in &trace.steps {
        let p = r.uav_pos;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.t, r.n_served, r.n_star, r.reward, p.x, p.y, p.z
        );
    }
    s
}

/// Parses a trace written by [`trace_csv`]; numbers round-trip exactly.
pub fn parse_trace_csv(
    path: &Path,
    text: &str,
    episode_seed: u64,
    policy_id: &str,
) -> Result<EpisodeTrace> {
    let rows = parse_table(path, text, TRACE_HEADER)?;
    let steps = rows
        .into_iter()
        .map(|(line, f)| {
            Ok(StepRecord {
                t: parse_field(path, line, f[0])?,
                n_served: parse_field(path, line, f[1])?,
                n_star: parse_field(path, line, f[2])?,
                reward: parse_field(path, line, f[3])?,
                uav_pos: Point3::new(
                    parse_field(path, line, f[4])?,
                    parse_field(path, line, f[5])?,
                    parse_field(path, line, f[6])?,
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeTrace {
        episode_seed,
        policy_id: policy_id.to_string(),
        steps,
    })
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: format!("cannot parse `{field}`"),
    })
}

/// Splits a CSV with a known header into `(line number, fields)` rows.
fn parse_table<'a>(path: &Path, text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                detail: format!("expected header `{header}`, found `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                detail: "empty file".into(),
            })
        }
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Training seeds; every method is trained once per seed.
    pub seeds: Vec<u64>,
    /// Discount used by the normalized score.
    pub gamma: f64,
    /// Evaluation episode `k` resets with `episode_seed_base + k` for every
    /// method and seed, so comparisons are paired.
    pub episode_seed_base: u64,
    /// Restricts `reproduce` to these methods; empty means all.
    pub methods: Vec<String>,
    /// Write every per-episode trace CSV.
    pub write_traces: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 30,
            seeds: vec![0, 1, 2],
            gamma: 0.99,
            episode_seed_base: 1_000_000,
            methods: Vec::new(),
            write_traces: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("eval.episodes must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "eval.gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// A trained policy to evaluate: one method under one training seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArtifact {
    pub method: String,
    pub seed: u64,
    pub policy: PathBuf,
    pub codec: Option<PathBuf>,
}

/// Loads an artifact's bundle and codec and checks they belong together.
pub fn load_artifact(a: &PolicyArtifact) -> Result<(PolicyBundle, Option<Codec>)> {
    let bundle = PolicyBundle::load(&a.policy)?;
    let codec = match &a.codec {
        Some(p) => {
            let hash = sha256_file(p)?;
            if bundle.codec_id != hash {
                return Err(Error::Dimension(format!(
                    "policy {} was trained on codec {}, not {} ({hash})",
                    a.policy.display(),
                    bundle.codec_id,
                    p.display()
                )));
            }
            Some(Codec::load(p)?)
        }
        None => {
            if bundle.codec_id != "raw" {
                return Err(Error::Missing(format!(
                    "codec {} required by policy {}",
                    bundle.codec_id,
                    a.policy.display()
                )));
            }
            None
        }
    };
    Ok((bundle, codec))
}

/// Evaluates one artifact over the configured episodes.
pub fn evaluate_artifact(
    env: &RelayEnv,
    artifact: &PolicyArtifact,
    cfg: &EvalConfig,
    threads: usize,
) -> Result<Vec<EpisodeTrace>> {
    let (bundle, codec) = load_artifact(artifact)?;
    check_dims(env, &bundle, codec.as_ref())?;
    let id = format!("{}_s{}", artifact.method, artifact.seed);
    par::map_indexed(cfg.episodes, threads, |k| {
        run_episode(
            env,
            &bundle,
            codec.as_ref(),
            cfg.episode_seed_base + k as u64,
            &id,
        )
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub mean: [f64; 7],
    pub std: [f64; 7],
}

pub const COMPARISON_HEADER: &str =
    "method,avg_served,peak_served,normalized,feas_full,feas_partial,feas_none,ttf_median";
pub const CDF_HEADER: &str = "method,t,fraction";
const SEED_HEADER: &str =
    "seed,avg_served,peak_served,normalized,feas_full,feas_partial,feas_none,ttf_median";
const GAP_HEADER: &str = "method,gap,count";

fn columns(r: &MetricsReport) -> [f64; 7] {
    [
        r.avg_served,
        r.peak_served,
        r.normalized_discounted,
        r.feas_full,
        r.feas_partial,
        r.feas_none,
        r.ttf_median,
    ]
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn join_row(label: &str, values: &[f64]) -> String {
    let mut s = label.to_string();
    for v in values {
        let _ = write!(s, ",{v}");
    }
    s
}

/// Evaluates every artifact and writes, under `out`:
/// `metrics_<method>.csv` (one row per seed), `comparison.csv` (seed means),
/// `comparison_std.csv` (seed standard deviations), `ttf_cdf.csv`, `gaps.csv`
/// and, when enabled, `traces/<method>_s<seed>_e<k>.csv`.
/// Methods appear in first-seen order. Returns the rows and every file written.
pub fn evaluate_suite(
    env: &RelayEnv,
    artifacts: &[PolicyArtifact],
    cfg: &EvalConfig,
    threads: usize,
    out: &Path,
) -> Result<(Vec<ComparisonRow>, Vec<PathBuf>)> {
    cfg.validate()?;
    if artifacts.is_empty() {
        return Err(Error::Domain("no policies to evaluate".into()));
    }
    for a in artifacts {
        for p in std::iter::once(&a.policy).chain(a.codec.iter()) {
            if !p.is_file() {
                return Err(Error::Missing(format!(
                    "artifact {} for method {} seed {}",
                    p.display(),
                    a.method,
                    a.seed
                )));
            }
        }
    }
    let users = env.config().num_users;
    let len = env.config().episode_len;
    let mut order: Vec<String> = Vec::new();
    let mut per_method: BTreeMap<String, Vec<(u64, MetricsReport)>> = BTreeMap::new();
    let mut written = Vec::new();
    for a in artifacts {
        let traces = evaluate_artifact(env, a, cfg, threads)?;
        if cfg.write_traces {
            for (k, t) in traces.iter().enumerate() {
                let p = out
                    .join("traces")
                    .join(format!("{}_s{}_e{k}.csv", a.method, a.seed));
                write_atomic(&p, trace_csv(t).as_bytes())?;
                written.push(p);
            }
        }
        let report = metrics(&traces, users, cfg.gamma)?;
        if !per_method.contains_key(&a.method) {
            order.push(a.method.clone());
        }
        per_method
            .entry(a.method.clone())
            .or_default()
            .push((a.seed, report));
    }

    let mut comparison = format!("{COMPARISON_HEADER}\n");
    let mut comparison_std = format!("{COMPARISON_HEADER}\n");
    let mut cdf = format!("{CDF_HEADER}\n");
    let mut gaps = format!("{GAP_HEADER}\n");
    let mut rows = Vec::new();
    for method in &order {
        let reports = &per_method[method];
        let mut per_seed = format!("{SEED_HEADER}\n");
        for (seed, r) in reports {
            per_seed.push_str(&join_row(&seed.to_string(), &columns(r)));
            per_seed.push('\n');
        }
        let p = out.join(format!("metrics_{method}.csv"));
        write_atomic(&p, per_seed.as_bytes())?;
        written.push(p);
        let mut mean = [0.0; 7];
        let mut std = [0.0; 7];
        for c in 0..7 {
            let xs: Vec<f64> = reports.iter().map(|(_, r)| columns(r)[c]).collect();
            (mean[c], std[c]) = mean_std(&xs);
        }
        comparison.push_str(&join_row(method, &mean));
        comparison.push('\n');
        comparison_std.push_str(&join_row(method, &std));
        comparison_std.push('\n');

        let ttf: Vec<usize> = reports
            .iter()
            .flat_map(|(_, r)| r.time_to_feasible.iter().copied())
            .collect();
        for (t, f) in ttf_cdf(&ttf, len) {
            let _ = writeln!(cdf, "{method},{t},{f}");
        }
        let mut pooled = vec![0u64; users + 1];
        for (_, r) in reports {
            for (g, c) in r.gap_histogram.iter().enumerate() {
                pooled[g] += c;
            }
        }
        for (g, c) in pooled.iter().enumerate() {
            let _ = writeln!(gaps, "{method},{g},{c}");
        }
        rows.push(ComparisonRow {
            method: method.clone(),
            mean,
            std,
        });
    }
    for (name, text) in [
        ("comparison_std.csv", comparison_std),
        ("ttf_cdf.csv", cdf),
        ("gaps.csv", gaps),
        ("comparison.csv", comparison),
    ] {
        let p = out.join(name);
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
    }
    Ok((rows, written))
}

/// Reads `comparison.csv` back into rows (standard deviations are zero).
pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(path, &text, COMPARISON_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let mut mean = [0.0; 7];
            for c in 0..7 {
                mean[c] = parse_field(path, line, f[c + 1])?;
            }
            Ok(ComparisonRow {
                method: f[0].to_string(),
                mean,
                std: [0.0; 7],
            })
        })
        .collect()
}

/// Reads `ttf_cdf.csv` into per-method point lists, in first-seen order.
pub fn read_cdf(path: &Path) -> Result<Vec<(String, Vec<(usize, f64)>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for (line, f) in parse_table(path, &text, CDF_HEADER)? {
        let point = (
            parse_field(path, line, f[1])?,
            parse_field(path, line, f[2])?,
        );
        match out.last_mut() {
            Some((m, pts)) if m == f[0] => pts.push(point),
            _ => out.push((f[0].to_string(), vec![point])),
        }
    }
    Ok(out)
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grouped bars: average served, peak served and normalized score per method.
pub fn service_bars_svg(rows: &[ComparisonRow]) -> String {
    let metrics = [
        ("avg served", 0usize),
        ("peak served", 1),
        ("normalized", 2),
    ];
    let (left, top, plot_h, group_w, bar_w) = (50.0, 30.0, 220.0, 120.0, 30.0);
    let w = left + group_w * rows.len() as f64 + 20.0;
    let h = top + plot_h + 70.0;
    let max = rows
        .iter()
        .flat_map(|r| metrics.iter().map(move |&(_, c)| r.mean[c]))
        .fold(1.0f64, f64::max);
    let mut s = svg_open(w, h);
    let _ = writeln!(
        s,
        "<text x=\"{left}\" y=\"18\">Service per method (bars scaled to {max:.3})</text>"
    );
    let base = top + plot_h;
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>",
        w - 10.0
    );
    for (g, r) in rows.iter().enumerate() {
        let x0 = left + group_w * g as f64 + 10.0;
        for (k, &(_, c)) in metrics.iter().enumerate() {
            let v = r.mean[c];
            let bh = (v / max).max(0.0) * plot_h;
            let x = x0 + bar_w * k as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{}\" width=\"{}\" height=\"{bh}\" fill=\"{}\"/>",
                base - bh,
                bar_w - 4.0,
                PALETTE[k]
            );
            let _ = writeln!(
                s,
                "<text x=\"{x}\" y=\"{}\" font-size=\"9\">{v:.3}</text>",
                base - bh - 3.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{x0}\" y=\"{}\">{}</text>",
            base + 16.0,
            escape(&r.method)
        );
    }
    for (k, (name, _)) in metrics.iter().enumerate() {
        let x = left + 110.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{name}</text>",
            h - 24.0,
            PALETTE[k],
            x + 14.0,
            h - 15.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Stacked bars of full, partial and no-service step fractions per method.
pub fn feasibility_bars_svg(rows: &[ComparisonRow]) -> String {
    let parts = [("full", 3usize), ("partial", 4), ("none", 5)];
    let (left, top, plot_h, group_w, bar_w) = (50.0, 30.0, 220.0, 90.0, 50.0);
    let w = left + group_w * rows.len() as f64 + 20.0;
    let h = top + plot_h + 70.0;
    let mut s = svg_open(w, h);
    s.push_str("<text x=\"50\" y=\"18\">Feasibility of service by method</text>\n");
    let base = top + plot_h;
    for (g, r) in rows.iter().enumerate() {
        let x = left + group_w * g as f64 + 10.0;
        let mut y = base;
        for (k, &(_, c)) in parts.iter().enumerate() {
            let v = r.mean[c];
            let bh = v.clamp(0.0, 1.0) * plot_h;
            y -= bh;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{bar_w}\" height=\"{bh}\" fill=\"{}\"/>",
                PALETTE[k]
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-size=\"9\">{v:.3}</text>",
                x + bar_w + 2.0,
                y + bh / 2.0 + 3.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\">{}</text>",
            base + 16.0,
            escape(&r.method)
        );
    }
    for (k, (name, _)) in parts.iter().enumerate() {
        let x = left + 90.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{name}</text>",
            h - 24.0,
            PALETTE[k],
            x + 14.0,
            h - 15.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Step curves of the time-to-feasible CDF, one per method.
pub fn ttf_cdf_svg(curves: &[(String, Vec<(usize, f64)>)]) -> String {
    let (left, top, pw, ph) = (50.0, 30.0, 420.0, 240.0);
    let w = left + pw + 140.0;
    let h = top + ph + 40.0;
    let t_max = curves
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(t, _)| t))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut s = svg_open(w, h);
    s.push_str("<text x=\"50\" y=\"18\">Time to feasible service (CDF)</text>\n");
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{left}\" y=\"{}\">0</text><text x=\"{}\" y=\"{}\">{t_max}</text>",
        top + ph + 14.0,
        left + pw - 20.0,
        top + ph + 14.0
    );
    for (k, (method, pts)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut prev = 0.0;
        for (i, &(t, f)) in pts.iter().enumerate() {
            let x = left + pw * t as f64 / t_max;
            if i == 0 {
                let _ = write!(d, "M{x:.2},{:.2}", top + ph * (1.0 - f));
            } else {
                let _ = write!(
                    d,
                    " L{x:.2},{:.2} L{x:.2},{:.2}",
                    top + ph * (1.0 - prev),
                    top + ph * (1.0 - f)
                );
            }
            prev = f;
        }
        let _ = writeln!(
            s,
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>"
        );
        let half = pts
            .iter()
            .find(|&&(_, f)| f >= 0.5)
            .map(|&(t, _)| t.to_string())
            .unwrap_or_else(|| "-".into());
        let y = top + 14.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"{y}\">{} (median {half})</text>",
            left + pw + 10.0,
            y - 9.0,
            left + pw + 24.0,
            escape(method)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Renders the charts from a metrics directory. Every input is parsed before
/// anything is written, so a bad input leaves `out` untouched.
pub fn plot(metrics_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let comparison = metrics_dir.join("comparison.csv");
    let cdf = metrics_dir.join("ttf_cdf.csv");
    for p in [&comparison, &cdf] {
        if !p.is_file() {
            return Err(Error::Missing(format!("metrics file {}", p.display())));
        }
    }
    let rows = read_comparison(&comparison)?;
    let curves = read_cdf(&cdf)?;
    if rows.is_empty() {
        return Err(Error::Domain(format!(
            "{} has no method rows",
            comparison.display()
        )));
    }
    let files = [
        ("service.svg", service_bars_svg(&rows)),
        ("feasibility.svg", feasibility_bars_svg(&rows)),
        ("ttf_cdf.svg", ttf_cdf_svg(&curves)),
    ];
    let mut written = Vec::new();
    for (name, svg) in files {
        let p = out.join(name);
        write_atomic(&p, svg.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}
