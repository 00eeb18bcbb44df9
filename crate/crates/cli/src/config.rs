use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dtrcv::estimators::MsmSettings;
use dtrcv::propensity::PsSettings;
use dtrcv::regimes::{Direction, Regime, RegimeGrid, Rule};
use dtrcv::selection::{BootstrapSettings, CvSettings};
use dtrcv::weights::WeightSettings;
use dtrcv::{ColumnMap, EstimatorChoice, IngestOptions, PipelineSettings};

/// Regimes to compare: a threshold grid plus optional static rules
/// (`never`, `always`, `start:<day>`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimesConfig {
    pub covariate: Option<String>,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default = "below")]
    pub direction: Direction,
    #[serde(default = "yes")]
    pub sticky: bool,
    #[serde(default)]
    pub also: Vec<String>,
}

fn below() -> Direction {
    Direction::Below
}

fn yes() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RegimesConfig {
    pub fn build(&self) -> anyhow::Result<Vec<Regime>> {
        let mut out = Vec::new();
        match (&self.covariate, self.thresholds.is_empty()) {
            (Some(c), false) => out.extend(
                RegimeGrid {
                    covariate: c.clone(),
                    thresholds: self.thresholds.clone(),
                    direction: self.direction,
                    sticky: self.sticky,
                }
                .regimes(),
            ),
            (None, false) => bail!("regimes: thresholds given without a covariate"),
            _ => {}
        }
        for s in &self.also {
            out.push(match s.as_str() {
                "never" => Regime::never(),
                "always" => Regime::always(),
                other => match other.strip_prefix("start:").map(str::parse::<u32>) {
                    Some(Ok(d)) => Regime::new(format!("start{d}"), Rule::StartDay(d)),
                    _ => bail!(
                        "regimes: unknown static regime {other:?} (never, always, start:<day>)"
                    ),
                },
            });
        }
        if out.is_empty() {
            bail!("regimes: no regimes configured");
        }
        let mut ids: Vec<&str> = out.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bail!("regimes: duplicate regime ids");
        }
        Ok(out)
    }
}

/// Settings for `estimate`, `crossval` and `bootstrap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Cohort CSV; relative paths are taken from the config file's directory.
    pub input: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub schema: ColumnMap,
    #[serde(default)]
    pub ingest: IngestOptions,
    pub regimes: RegimesConfig,
    #[serde(default)]
    pub estimator: EstimatorChoice,
    #[serde(default)]
    pub ps: PsSettings,
    #[serde(default)]
    pub weights: WeightSettings,
    #[serde(default)]
    pub msm: MsmSettings,
    #[serde(default)]
    pub crossval: CvSettings,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(input) = &cfg.input {
            cfg.input = Some(base.join(input));
        }
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn pipeline(&self) -> PipelineSettings {
        PipelineSettings {
            ps: self.ps.clone(),
            weights: self.weights.clone(),
            msm: self.msm.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg: RunConfig = toml::from_str(
            r#"
            input = "cohort.csv"
            [regimes]
            covariate = "ph"
            thresholds = [7.1, 7.2]
            also = ["never", "start:2"]
            "#,
        )
        .unwrap();
        let ids: Vec<String> = cfg
            .regimes
            .build()
            .unwrap()
            .into_iter()
            .map(|r| r.id)
            .collect();
        assert_eq!(ids, ["ph<7.1", "ph<7.2", "never", "start2"]);
        assert_eq!(cfg.estimator, EstimatorChoice::Aj);
        assert_eq!(cfg.crossval.folds, 5);
    }

    #[test]
    fn bad_regimes_rejected() {
        let mut r = RegimesConfig {
            covariate: None,
            thresholds: vec![7.1],
            direction: Direction::Below,
            sticky: true,
            also: vec![],
        };
        assert!(r.build().is_err());
        r.thresholds.clear();
        assert!(r.build().is_err());
        r.also = vec!["start:x".into()];
        assert!(r.build().is_err());
        r.also = vec!["never".into(), "never".into()];
        assert!(r.build().is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = toml::from_str::<RunConfig>("[regimes]\nalso = [\"never\"]\n[ps]\nbogus = 1\n");
        assert!(err.is_err());
    }
}
