//! Experiment files: a shared `[base]` run configuration, a list of named
//! `[[arms]]` overriding it, and the seeds to run every arm on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::pipeline::{Algorithm, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub target: Option<String>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Arm whose returns the Levene test compares every other arm against.
    pub reference: Option<String>,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
    pub arms: Vec<Arm>,
}

const TOP_LEVEL_KEYS: [&str; 7] = [
    "target",
    "output_dir",
    "seeds",
    "reference",
    "threads",
    "base",
    "arms",
];

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn field<T: serde::de::DeserializeOwned>(value: toml::Value, path: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let full = if inner == "." || inner.is_empty() {
            path.to_string()
        } else if path.is_empty() {
            inner
        } else {
            format!("{path}.{inner}")
        };
        Error::config(full, e.into_inner().to_string())
    })
}

impl ExperimentConfig {
    /// Parses and validates an experiment document. `output_dir` defaults to
    /// `default_output` when absent.
    pub fn from_toml_str(text: &str, default_output: &Path) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::config("<document>", e.to_string())
        })?;
        if let Some(k) = doc.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(Error::config(k.clone(), "unknown top-level key"));
        }
        let get = |k: &str| doc.get(k).cloned();
        let target: Option<String> = get("target").map(|v| field(v, "target")).transpose()?;
        let output_dir: PathBuf = match get("output_dir") {
            Some(v) => field(v, "output_dir")?,
            None => default_output.to_path_buf(),
        };
        let seeds: Vec<u64> = match get("seeds") {
            Some(v) => field(v, "seeds")?,
            None => (0..10).collect(),
        };
        let reference: Option<String> =
            get("reference").map(|v| field(v, "reference")).transpose()?;
        let threads: usize = get("threads").map(|v| field(v, "threads")).transpose()?.unwrap_or(0);
        let base = match get("base") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(Error::config("base", "must be a table")),
            None => toml::Table::new(),
        };
        let raw_arms = match get("arms") {
            Some(toml::Value::Array(a)) => a,
            Some(_) => return Err(Error::config("arms", "must be an array of tables")),
            None => return Err(Error::config("arms", "at least one arm is required")),
        };
        let mut arms = Vec::with_capacity(raw_arms.len());
        for (i, raw) in raw_arms.into_iter().enumerate() {
            let path = format!("arms[{i}]");
            let toml::Value::Table(mut t) = raw else {
                return Err(Error::config(path, "must be a table"));
            };
            let name: String = match t.remove("name") {
                Some(v) => field(v, &format!("{path}.name"))?,
                None => return Err(Error::config(format!("{path}.name"), "missing")),
            };
            let mut merged = base.clone();
            merge(&mut merged, &t);
            let config: RunConfig = field(toml::Value::Table(merged), &path)?;
            arms.push(Arm { name, config });
        }
        let cfg = Self {
            target,
            output_dir,
            seeds,
            reference,
            threads,
            arms,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, default_output: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, default_output)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if self.arms.is_empty() {
            return Err(Error::config("arms", "at least one arm is required"));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if arm.name.is_empty()
                || !arm
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::config(
                    format!("arms[{i}].name"),
                    "use letters, digits, '_' or '-'",
                ));
            }
            if self.arms[..i].iter().any(|a| a.name == arm.name) {
                return Err(Error::config(format!("arms[{i}].name"), "duplicate arm name"));
            }
            arm.config.validate().map_err(|e| match e {
                Error::Config { path, message } => {
                    Error::config(format!("arms[{i}].{path}"), message)
                }
                other => other,
            })?;
        }
        if let Some(r) = &self.reference {
            if !self.arms.iter().any(|a| &a.name == r) {
                return Err(Error::config("reference", format!("no arm named {r:?}")));
            }
        }
        Ok(())
    }

    /// Serializes to the same document shape `from_toml_str` reads, with
    /// every arm fully expanded.
    pub fn to_toml_string(&self) -> Result<String> {
        let mut doc = toml::Table::new();
        if let Some(t) = &self.target {
            doc.insert("target".into(), t.clone().into());
        }
        doc.insert(
            "output_dir".into(),
            self.output_dir.to_string_lossy().into_owned().into(),
        );
        doc.insert(
            "seeds".into(),
            toml::Value::Array(self.seeds.iter().map(|&s| (s as i64).into()).collect()),
        );
        if let Some(r) = &self.reference {
            doc.insert("reference".into(), r.clone().into());
        }
        doc.insert("threads".into(), (self.threads as i64).into());
        let mut arms = Vec::new();
        for arm in &self.arms {
            let mut t = toml::Table::try_from(&arm.config)
                .map_err(|e| Error::config(format!("arms.{}", arm.name), e.to_string()))?;
            t.insert("name".into(), arm.name.clone().into());
            arms.push(toml::Value::Table(t));
        }
        doc.insert("arms".into(), toml::Value::Array(arms));
        toml::to_string_pretty(&doc).map_err(|e| Error::config("<document>", e.to_string()))
    }
}

fn arm(name: &str, config: RunConfig) -> Arm {
    Arm {
        name: name.to_string(),
        config,
    }
}

fn base(env: EnvSpec, algorithm: Algorithm) -> RunConfig {
    RunConfig {
        env,
        algorithm,
        ..RunConfig::default()
    }
}

fn three_way(env: EnvSpec) -> Vec<Arm> {
    vec![
        arm("sat_enq", base(env.clone(), Algorithm::SatEnq)),
        arm("dqn", base(env.clone(), Algorithm::Dqn)),
        arm("double_dqn", base(env, Algorithm::DoubleDqn)),
    ]
}

fn variant(name: &str, edit: impl FnOnce(&mut RunConfig)) -> Arm {
    let mut c = base(EnvSpec::cartpole(), Algorithm::SatEnq);
    c.variant = Some(name.to_string());
    edit(&mut c);
    arm(name, c)
}

pub const TARGETS: [&str; 10] = [
    "table1",
    "table2",
    "table3",
    "table5",
    "ablation_no_satisficing",
    "ablation_single_learner",
    "ablation_no_polish",
    "ablation_margin",
    "ablation_ensemble_size",
    "ablation_hinge_direction",
];

/// Preconfigured experiment for a reproduction tag.
pub fn preset(tag: &str, output_root: &Path) -> Result<ExperimentConfig> {
    let (arms, reference) = match tag {
        "table1" => (three_way(EnvSpec::gridworld(0.2)), "dqn"),
        "table2" => (three_way(EnvSpec::cartpole()), "dqn"),
        "table3" => {
            let mut arms = three_way(EnvSpec::cartpole());
            for a in &mut arms {
                a.config.eval_action_noise = 0.1;
            }
            (arms, "dqn")
        }
        "table5" => (three_way(EnvSpec::acrobot()), "double_dqn"),
        "ablation_no_satisficing" => (
            vec![
                variant("full", |_| {}),
                variant("no_satisficing", |c| c.sat.satisficing = false),
            ],
            "full",
        ),
        "ablation_single_learner" => (
            vec![variant("full", |_| {}), variant("single_learner", |c| c.ensemble.k = 1)],
            "full",
        ),
        "ablation_no_polish" => (
            vec![variant("full", |_| {}), variant("no_polish", |c| c.polish = false)],
            "full",
        ),
        "ablation_margin" => (
            [0.0, 0.1, 0.5, 2.0, 10.0]
                .iter()
                .map(|&m| {
                    let name = format!("margin_{m}").replace('.', "p");
                    variant(&name, |c| c.sat.margin = m)
                })
                .collect(),
            "margin_0p5",
        ),
        "ablation_ensemble_size" => (
            [1usize, 2, 4, 6, 8]
                .iter()
                .map(|&k| variant(&format!("k_{k}"), |c| c.ensemble.k = k))
                .collect(),
            "k_4",
        ),
        "ablation_hinge_direction" => (
            vec![
                variant("hinge_below", |_| {}),
                variant("hinge_above", |c| {
                    c.sat.hinge_direction = crate::satcore::HingeDirection::Above
                }),
            ],
            "hinge_below",
        ),
        other => {
            return Err(Error::config(
                "target",
                format!("unknown target {other:?}; expected one of {}", TARGETS.join(", ")),
            ))
        }
    };
    let cfg = ExperimentConfig {
        target: Some(tag.to_string()),
        output_dir: output_root.join(tag),
        seeds: (0..10).collect(),
        reference: Some(reference.to_string()),
        threads: 0,
        arms,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvName;

    const DOC: &str = r#"
seeds = [3, 4]
reference = "dqn"

[base]
total_steps = 1000
[base.env]
name = "gridworld"
[base.env.gridworld]
slip_prob = 0.3

[[arms]]
name = "sat"
algorithm = "sat_enq"
[arms.sat]
margin = 1.5

[[arms]]
name = "dqn"
algorithm = "dqn"
[arms.env.gridworld]
slip_prob = 0.1
"#;

    #[test]
    fn base_and_arm_overrides_merge() {
        let cfg = ExperimentConfig::from_toml_str(DOC, Path::new("out")).unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        let sat = &cfg.arms[0].config;
        assert_eq!(sat.sat.margin, 1.5);
        assert_eq!(sat.sat.hinge_weight, 0.1);
        assert_eq!(sat.total_steps, Some(1000));
        assert_eq!(sat.env.name, EnvName::Gridworld);
        assert_eq!(sat.env.gridworld.slip_prob, 0.3);
        let dqn = &cfg.arms[1].config;
        assert_eq!(dqn.algorithm, Algorithm::Dqn);
        assert_eq!(dqn.env.gridworld.slip_prob, 0.1);
        assert_eq!(dqn.env.gridworld.size, 8);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(DOC, Path::new("out")).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, Path::new("elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }

    fn err_path(doc: &str) -> String {
        match ExperimentConfig::from_toml_str(doc, Path::new("o")) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(
            err_path("[[arms]]\nname = \"a\"\n[arms.sat]\nmargn = 1.0\n"),
            "arms[0].sat.margn"
        );
        assert_eq!(
            err_path("[[arms]]\nname = \"a\"\n[arms.sat]\nmargin = \"big\"\n"),
            "arms[0].sat.margin"
        );
        assert_eq!(
            err_path("[[arms]]\nname = \"a\"\n[arms.sat]\nmargin = -1.0\n"),
            "arms[0].sat.margin"
        );
        assert_eq!(err_path("seeds = []\n[[arms]]\nname = \"a\"\n"), "seeds");
        assert_eq!(err_path("bogus = 1\n[[arms]]\nname = \"a\"\n"), "bogus");
        assert_eq!(err_path("reference = \"zz\"\n[[arms]]\nname = \"a\"\n"), "reference");
        assert_eq!(
            err_path("[[arms]]\nname = \"a\"\n[[arms]]\nname = \"a\"\n"),
            "arms[1].name"
        );
        assert_eq!(err_path("[[arms]]\nalgorithm = \"dqn\"\n"), "arms[0].name");
    }

    #[test]
    fn every_preset_builds() {
        for tag in TARGETS {
            let cfg = preset(tag, Path::new("runs")).unwrap();
            assert_eq!(cfg.seeds.len(), 10);
            assert_eq!(cfg.output_dir, Path::new("runs").join(tag));
        }
        assert!(preset("table9", Path::new("runs")).is_err());
    }
}
