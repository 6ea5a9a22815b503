//! Pipeline stages with manifests, and the resumable end-to-end run.
//!
//! Every stage writes its outputs atomically and then a JSON manifest naming
//! the stage, the crate version, the parameters that shape the outputs, and
//! content hashes of inputs and outputs. A resumable run skips a stage whose
//! manifest still matches its parameters, inputs and outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::cql;
use crate::dataset::{self, TransitionTable};
use crate::error::{Error, Result};
use crate::eval::{self, PolicyArtifact};
use crate::fsutil::{sha256_file, write_atomic};
use crate::repr::{self, Codec, CodecKind, ReprConfig};
use crate::terrain::{self, TerrainMap};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Methods compared by [`reproduce`], in output order.
pub const METHODS: [&str; 6] = ["raw", "pca", "ae", "vae32", "vae64", "vae128"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

impl FileEntry {
    fn of(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Missing(format!("file {}", path.display())));
        }
        Ok(FileEntry {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub params: Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

impl Manifest {
    /// Manifest location for a single-file output.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            detail: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// True when every recorded output still exists with its recorded hash.
    fn outputs_intact(&self) -> bool {
        self.outputs.iter().all(|o| {
            let p = Path::new(&o.path);
            p.is_file() && sha256_file(p).is_ok_and(|h| h == o.sha256)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: String,
    pub summary: String,
    pub skipped: bool,
    pub manifest: PathBuf,
}

struct Stage<'a> {
    name: &'a str,
    params: Value,
    inputs: Vec<PathBuf>,
    manifest: PathBuf,
}

impl Stage<'_> {
    /// Runs `body` unless `resume` is set and the manifest matches. `body`
    /// returns the summary and the output files it wrote.
    fn run(
        self,
        resume: bool,
        body: impl FnOnce() -> Result<(String, Vec<PathBuf>)>,
    ) -> Result<StageReport> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| FileEntry::of(p))
            .collect::<Result<Vec<_>>>()?;
        if resume && self.manifest.is_file() {
            if let Ok(m) = Manifest::read(&self.manifest) {
                if m.stage == self.name
                    && m.version == VERSION
                    && m.params == self.params
                    && m.inputs == inputs
                    && m.outputs_intact()
                {
                    return Ok(StageReport {
                        stage: self.name.to_string(),
                        summary: format!("{}: up to date", self.name),
                        skipped: true,
                        manifest: self.manifest,
                    });
                }
            }
        }
        // A stale manifest must not vouch for outputs that are about to change.
        if self.manifest.exists() {
            std::fs::remove_file(&self.manifest).map_err(|e| Error::io(&self.manifest, e))?;
        }
        let (summary, outputs) = body()?;
        let manifest = Manifest {
            stage: self.name.to_string(),
            version: VERSION.to_string(),
            params: self.params,
            inputs,
            outputs: outputs
                .iter()
                .map(|p| FileEntry::of(p))
                .collect::<Result<Vec<_>>>()?,
        };
        manifest.write(&self.manifest)?;
        Ok(StageReport {
            stage: self.name.to_string(),
            summary,
            skipped: false,
            manifest: self.manifest,
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

/// Log written next to a trained artifact: `x.uvwt` → `x.log.csv`.
pub fn log_path(artifact: &Path) -> PathBuf {
    artifact.with_extension("log.csv")
}

fn load_map(path: &Path) -> Result<Arc<TerrainMap>> {
    Ok(Arc::new(TerrainMap::load(path)?))
}

pub fn gen_map(cfg: &RunConfig, out: &Path, resume: bool) -> Result<StageReport> {
    Stage {
        name: "gen-map",
        params: json!({ "map": to_json(&cfg.map) }),
        inputs: vec![],
        manifest: Manifest::path_for(out),
    }
    .run(resume, || {
        let map = terrain::generate_map(&cfg.map)?;
        map.save(out)?;
        let (lo, hi) = map.min_max_elevation();
        Ok((
            format!(
                "gen-map: {}x{} cells at {} m, elevation {lo:.1}..{hi:.1} m -> {}",
                map.height(),
                map.width(),
                map.cell_size_m(),
                out.display()
            ),
            vec![out.to_path_buf()],
        ))
    })
}

pub fn gen_dataset(cfg: &RunConfig, map: &Path, out: &Path, resume: bool) -> Result<StageReport> {
    Stage {
        name: "gen-dataset",
        params: json!({
            "seed": cfg.seed,
            "env": to_json(&cfg.env),
            "radio": to_json(&cfg.radio),
            "csfub": to_json(&cfg.csfub),
            "dataset": to_json(&cfg.dataset),
        }),
        inputs: vec![map.to_path_buf()],
        manifest: Manifest::path_for(out),
    }
    .run(resume, || {
        let env = cfg.relay_env(load_map(map)?)?;
        let s = dataset::generate_dataset(
            &env,
            &cfg.dataset.mix,
            cfg.dataset.n_transitions,
            cfg.seed,
            cfg.thread_count(),
            out,
        )?;
        Ok((
            format!(
                "gen-dataset: {} transitions from {} episodes, mean reward {:.4} -> {}",
                s.transitions,
                s.episodes,
                s.mean_reward,
                out.display()
            ),
            vec![out.to_path_buf()],
        ))
    })
}

pub fn train_repr(
    cfg: &RunConfig,
    repr_cfg: &ReprConfig,
    data: &Path,
    out: &Path,
    resume: bool,
) -> Result<StageReport> {
    Stage {
        name: "train-repr",
        params: json!({ "seed": cfg.seed, "repr": to_json(repr_cfg) }),
        inputs: vec![data.to_path_buf()],
        manifest: Manifest::path_for(out),
    }
    .run(resume, || {
        let table = TransitionTable::load(data, Some(cfg.env.obs_dim()))?;
        let (codec, log) = repr::train_codec(&table, repr_cfg, cfg.seed)?;
        codec.save(out)?;
        let mut outputs = vec![out.to_path_buf()];
        let last = log
            .last()
            .map(|e| format!(", final recon {:.4} kl {:.4}", e.recon, e.kl));
        if !log.is_empty() {
            let lp = log_path(out);
            repr::write_epoch_log(&lp, &log)?;
            outputs.push(lp);
        }
        Ok((
            format!(
                "train-repr: {} codec {} -> {}{} -> {}",
                repr_cfg.kind.name(),
                codec.input_dim(),
                codec.latent_dim(),
                last.unwrap_or_default(),
                out.display()
            ),
            outputs,
        ))
    })
}

pub fn encode(codec: &Path, data: &Path, out: &Path, resume: bool) -> Result<StageReport> {
    Stage {
        name: "encode",
        params: json!({}),
        inputs: vec![codec.to_path_buf(), data.to_path_buf()],
        manifest: Manifest::path_for(out),
    }
    .run(resume, || {
        let c = Codec::load(codec)?;
        let n = repr::encode_dataset(&c, data, out)?;
        Ok((
            format!(
                "encode: {n} transitions to {} dims -> {}",
                c.latent_dim(),
                out.display()
            ),
            vec![out.to_path_buf()],
        ))
    })
}

pub fn train_cql(
    cfg: &RunConfig,
    data: &Path,
    codec: Option<&Path>,
    seed: u64,
    out: &Path,
    resume: bool,
) -> Result<StageReport> {
    let mut inputs = vec![data.to_path_buf()];
    inputs.extend(codec.map(Path::to_path_buf));
    Stage {
        name: "train-cql",
        params: json!({ "seed": seed, "cql": to_json(&cfg.cql) }),
        inputs,
        manifest: Manifest::path_for(out),
    }
    .run(resume, || {
        let table = TransitionTable::load(data, None)?;
        let codec_id = match codec {
            Some(p) => {
                let c = Codec::load(p)?;
                if c.latent_dim() != table.dim() {
                    return Err(Error::Dimension(format!(
                        "codec latent d_z {} does not match dataset state_dim {}",
                        c.latent_dim(),
                        table.dim()
                    )));
                }
                sha256_file(p)?
            }
            None => {
                if table.dim() != cfg.env.obs_dim() {
                    return Err(Error::Dimension(format!(
                        "dataset state_dim {} is not the observation dim {}; pass the codec for latent data",
                        table.dim(),
                        cfg.env.obs_dim()
                    )));
                }
                "raw".to_string()
            }
        };
        let (bundle, log) = cql::train(&table, &cfg.cql, seed, &codec_id)?;
        bundle.save(out)?;
        let lp = log_path(out);
        cql::write_train_log(&lp, &log)?;
        let tail = log
            .last()
            .map(|r| format!(", final bellman {:.4} mean q {:.4}", r.bellman_mse, r.mean_q))
            .unwrap_or_default();
        Ok((
            format!(
                "train-cql: {} steps on {} transitions (d={}, seed {seed}){tail} -> {}",
                cfg.cql.train_steps,
                table.len(),
                table.dim(),
                out.display()
            ),
            vec![out.to_path_buf(), lp],
        ))
    })
}

/// Evaluates policies into `out_dir`; the manifest is `out_dir/manifest.json`.
pub fn evaluate(
    cfg: &RunConfig,
    map: &Path,
    artifacts: &[PolicyArtifact],
    out_dir: &Path,
    resume: bool,
) -> Result<StageReport> {
    let mut inputs = vec![map.to_path_buf()];
    for a in artifacts {
        inputs.push(a.policy.clone());
        inputs.extend(a.codec.clone());
    }
    let labels: Vec<Value> = artifacts
        .iter()
        .map(|a| json!({ "method": a.method, "seed": a.seed }))
        .collect();
    Stage {
        name: "eval",
        params: json!({
            "env": to_json(&cfg.env),
            "radio": to_json(&cfg.radio),
            "csfub": to_json(&cfg.csfub),
            "eval": to_json(&cfg.eval),
            "artifacts": labels,
        }),
        inputs,
        manifest: out_dir.join("manifest.json"),
    }
    .run(resume, || {
        let env = cfg.relay_env(load_map(map)?)?;
        let (rows, files) =
            eval::evaluate_suite(&env, artifacts, &cfg.eval, cfg.thread_count(), out_dir)?;
        let best = rows
            .iter()
            .map(|r| format!("{} {:.4}", r.method, r.mean[2]))
            .collect::<Vec<_>>()
            .join(", ");
        Ok((
            format!(
                "eval: {} policies x {} episodes, normalized: {best} -> {}",
                artifacts.len(),
                cfg.eval.episodes,
                out_dir.display()
            ),
            files,
        ))
    })
}

/// Charts from a metrics directory; the manifest is `out_dir/manifest.json`.
pub fn plot(metrics_dir: &Path, out_dir: &Path, resume: bool) -> Result<StageReport> {
    Stage {
        name: "plot",
        params: json!({}),
        inputs: vec![
            metrics_dir.join("comparison.csv"),
            metrics_dir.join("ttf_cdf.csv"),
        ],
        manifest: out_dir.join("manifest.json"),
    }
    .run(resume, || {
        let files = eval::plot(metrics_dir, out_dir)?;
        Ok((
            format!("plot: {} charts -> {}", files.len(), out_dir.display()),
            files,
        ))
    })
}

pub const CSFUB_HEADER: &str = "t,n_star,best_x,best_y,best_z,n_served_actual";

/// Bound and realized service for one episode with the UAV holding position,
/// from the reset state (`t = 0`) through `t = T`.
pub fn csfub(cfg: &RunConfig, map: &Path, seed: u64, out: &Path) -> Result<StageReport> {
    Stage {
        name: "csfub",
        params: json!({
            "seed": seed,
            "env": to_json(&cfg.env),
            "radio": to_json(&cfg.radio),
            "csfub": to_json(&cfg.csfub),
        }),
        inputs: vec![map.to_path_buf()],
        manifest: Manifest::path_for(out),
    }
    .run(false, || {
        use std::fmt::Write as _;
        let env = cfg.relay_env(load_map(map)?)?;
        let (mut world, _) = env.reset(seed)?;
        let mut text = format!("{CSFUB_HEADER}\n");
        let mut positive = 0usize;
        loop {
            let r = env.feasibility(&world)?;
            let b = r.best_placement;
            let _ = writeln!(
                text,
                "{},{},{},{},{},{}",
                r.t, r.n_star, b.x, b.y, b.z, r.n_served_actual
            );
            positive += usize::from(r.n_star > 0);
            if world.t == cfg.env.episode_len {
                break;
            }
            env.step(&mut world, crate::env::HOLD_ACTION)?;
        }
        write_atomic(out, text.as_bytes())?;
        Ok((
            format!(
                "csfub: {} steps, bound positive on {positive} -> {}",
                cfg.env.episode_len + 1,
                out.display()
            ),
            vec![out.to_path_buf()],
        ))
    })
}

/// Codec settings for a method name, or `None` for raw observations.
pub fn method_codec(cfg: &RunConfig, method: &str) -> Result<Option<ReprConfig>> {
    let base = cfg.repr.clone();
    let latent = |kind, d| {
        Some(ReprConfig {
            kind,
            latent_dim: d,
            ..base.clone()
        })
    };
    Ok(match method {
        "raw" => None,
        "pca" => latent(CodecKind::Pca, cfg.repr.latent_dim),
        "ae" => latent(CodecKind::Ae, cfg.repr.latent_dim),
        m => match m.strip_prefix("vae").and_then(|d| d.parse::<usize>().ok()) {
            Some(d) if d > 0 => latent(CodecKind::Vae, d),
            _ => {
                return Err(Error::Config(format!(
                    "unknown method `{method}` (expected raw, pca, ae or vae<d>)"
                )))
            }
        },
    })
}

/// Methods to run: `eval.methods` when set, else all of [`METHODS`].
pub fn selected_methods(cfg: &RunConfig) -> Result<Vec<String>> {
    let methods: Vec<String> = if cfg.eval.methods.is_empty() {
        METHODS.iter().map(|m| m.to_string()).collect()
    } else {
        cfg.eval.methods.clone()
    };
    for m in &methods {
        method_codec(cfg, m)?;
    }
    Ok(methods)
}

/// Full pipeline into `out`: map, dataset, one codec per method, latent
/// datasets, one policy per method and seed, evaluation and charts. Stages
/// whose manifests match are skipped. `progress` receives each stage report.
pub fn reproduce(
    cfg: &RunConfig,
    out: &Path,
    mut progress: impl FnMut(&StageReport),
) -> Result<Vec<StageReport>> {
    cfg.validate()?;
    let methods = selected_methods(cfg)?;
    let mut reports = Vec::new();
    let mut note = |r: StageReport, reports: &mut Vec<StageReport>| {
        progress(&r);
        reports.push(r);
    };

    let map = out.join("map.tmap");
    note(gen_map(cfg, &map, true)?, &mut reports);
    let data = out.join("data.uvds");
    note(gen_dataset(cfg, &map, &data, true)?, &mut reports);

    let mut artifacts = Vec::new();
    for method in &methods {
        let (train_data, codec) = match method_codec(cfg, method)? {
            None => (data.clone(), None),
            Some(rc) => {
                let codec = out.join("codecs").join(format!("{method}.uvwt"));
                note(train_repr(cfg, &rc, &data, &codec, true)?, &mut reports);
                let latent = out.join("latent").join(format!("{method}.uvds"));
                note(encode(&codec, &data, &latent, true)?, &mut reports);
                (latent, Some(codec))
            }
        };
        for &seed in &cfg.eval.seeds {
            let policy = out.join("policies").join(format!("{method}_s{seed}.uvwt"));
            note(
                train_cql(cfg, &train_data, codec.as_deref(), seed, &policy, true)?,
                &mut reports,
            );
            artifacts.push(PolicyArtifact {
                method: method.clone(),
                seed,
                policy,
                codec: codec.clone(),
            });
        }
    }
    let metrics = out.join("metrics");
    note(
        evaluate(cfg, &map, &artifacts, &metrics, true)?,
        &mut reports,
    );
    note(plot(&metrics, &out.join("plots"), true)?, &mut reports);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        let cfg = RunConfig::default();
        assert!(method_codec(&cfg, "raw").unwrap().is_none());
        let v = method_codec(&cfg, "vae32").unwrap().unwrap();
        assert_eq!((v.kind, v.latent_dim), (CodecKind::Vae, 32));
        assert_eq!(method_codec(&cfg, "pca").unwrap().unwrap().latent_dim, 64);
        for bad in ["vae", "vae0", "lstm"] {
            assert!(matches!(method_codec(&cfg, bad), Err(Error::Config(_))));
        }
        assert_eq!(selected_methods(&cfg).unwrap().len(), 6);
    }

    #[test]
    fn stage_skips_only_when_manifest_matches() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let out = dir.path().join("out.txt");
        std::fs::write(&input, "a").unwrap();
        let mut runs = 0;
        let go = |param: u32, runs: &mut u32| {
            Stage {
                name: "copy",
                params: json!({ "p": param }),
                inputs: vec![input.clone()],
                manifest: Manifest::path_for(&out),
            }
            .run(true, || {
                *runs += 1;
                std::fs::write(&out, std::fs::read(&input).unwrap()).unwrap();
                Ok(("copied".into(), vec![out.clone()]))
            })
            .unwrap()
        };
        assert!(!go(1, &mut runs).skipped);
        assert!(go(1, &mut runs).skipped);
        assert!(!go(2, &mut runs).skipped);
        std::fs::write(&input, "b").unwrap();
        assert!(!go(2, &mut runs).skipped);
        std::fs::write(&out, "tampered").unwrap();
        assert!(!go(2, &mut runs).skipped);
        assert_eq!(runs, 4);
        let m = Manifest::read(&Manifest::path_for(&out)).unwrap();
        assert_eq!(m.outputs[0].sha256, crate::fsutil::sha256_bytes(b"b"));
    }

    #[test]
    fn missing_input_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let err = gen_dataset(
            &cfg,
            &dir.path().join("nope.tmap"),
            &dir.path().join("d.uvds"),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Missing(ref m) if m.contains("nope.tmap")));
    }
}
