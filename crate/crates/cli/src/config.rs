//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bbsea_core::brain::RemoteConfig;
use bbsea_core::policy::Hyper;
use bbsea_core::util::derive_seed;
use bbsea_core::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Oracle,
    /// Live endpoint; every response is written through to the cache.
    Remote,
    /// Replays the cache and never touches the network.
    CachedRemote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub tasks_per_scene: Option<usize>,
    pub demos_per_task: usize,
    pub max_trials: usize,
    pub rule_verdicts: bool,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            tasks_per_scene: None,
            demos_per_task: 1,
            max_trials: 10,
            rule_verdicts: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Pool to train on; defaults to the collect stage output.
    pub pool: Option<PathBuf>,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub hidden_sizes: Vec<usize>,
    pub obs_noise: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let h = Hyper::default();
        Self {
            pool: None,
            lr: h.lr,
            momentum: h.momentum,
            batch: h.batch,
            epochs: h.epochs,
            hidden_sizes: h.hidden_sizes,
            obs_noise: h.obs_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Checkpoint to evaluate; defaults to the train stage output.
    pub model: Option<PathBuf>,
    pub episodes: usize,
    pub horizon: usize,
    pub start_jitter: f64,
    /// Single scripted attempts per task for the collector baseline column.
    pub collector_trials: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = bbsea_core::policy::EvalConfig::default();
        Self {
            model: None,
            episodes: e.episodes,
            horizon: e.horizon,
            start_jitter: e.start_jitter,
            collector_trials: e.episodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversitySection {
    /// Bundled task lists by name.
    pub lists: Vec<String>,
    /// Extra task files, one task per line; the group is the file stem.
    pub files: Vec<PathBuf>,
    pub k: usize,
}

impl Default for DiversitySection {
    fn default() -> Self {
        Self {
            lists: vec!["bbsea_60".into()],
            files: Vec::new(),
            k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub backend: BackendKind,
    /// Directory of scene bundle files; the bundled scenes when unset.
    pub scenes_dir: Option<PathBuf>,
    /// Scenes the propose and collect stages work on. Unset means the five
    /// evaluation scenes (or every bundle in `scenes_dir`).
    pub scenes: Option<Vec<String>>,
    /// Response cache for the remote backends; `<out>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
    pub strip_bbox: bool,
    pub strip_positions: bool,
    pub remote: RemoteConfig,
    pub campaign: CampaignSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub diversity: DiversitySection,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            backend: BackendKind::Oracle,
            scenes_dir: None,
            scenes: None,
            cache_dir: None,
            strip_bbox: false,
            strip_positions: false,
            remote: RemoteConfig::default(),
            campaign: CampaignSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            diversity: DiversitySection::default(),
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        // A stage manifest carries the resolved config it ran with; its
        // paths were already resolved when the stage ran.
        let manifest = path.extension().is_some_and(|e| e == "json");
        let cfg: Self = if manifest {
            let mut v: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            serde_json::from_value(v["config"].take())
                .with_context(|| format!("no usable config in {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        };
        if manifest {
            return Ok(cfg);
        }
        // Relative paths inside a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.rebased(base))
    }

    fn rebased(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for p in [
            self.scenes_dir.as_mut(),
            self.cache_dir.as_mut(),
            self.train.pool.as_mut(),
            self.eval.model.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.diversity.files.iter_mut().for_each(fix);
        self
    }

    /// Checks that every path the config names as an input exists.
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.scenes_dir {
            if !d.is_dir() {
                bail!("scenes_dir {} is not a directory", d.display());
            }
        }
        for f in &self.diversity.files {
            if !f.is_file() {
                bail!("diversity task file {} does not exist", f.display());
            }
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, &[stage])
    }

    pub fn hyper(&self) -> Hyper {
        let t = &self.train;
        Hyper {
            lr: t.lr,
            momentum: t.momentum,
            batch: t.batch,
            epochs: t.epochs,
            hidden_sizes: t.hidden_sizes.clone(),
            seed: self.stage_seed("train"),
            obs_noise: t.obs_noise,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    pub fn pool_path(&self) -> PathBuf {
        self.train
            .pool
            .clone()
            .unwrap_or_else(|| self.stage_dir("collect").join("pool.jsonl"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.eval
            .model
            .clone()
            .unwrap_or_else(|| self.stage_dir("train").join("model.json"))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = toml::from_str("seed = 7\n[campaign]\nmax_trials = 3\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.campaign.max_trials, 3);
        assert_eq!(partial.campaign.demos_per_task, 1);
        assert!(toml::from_str::<RunConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.stage_seed("train"), b.stage_seed("train"));
        assert_eq!(b.hyper().seed, b.stage_seed("train"));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "out = \"o\"\n[diversity]\nfiles = [\"missing.txt\"]\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.out, dir.path().join("o"));
        assert!(c.validate().is_err());
    }
}
