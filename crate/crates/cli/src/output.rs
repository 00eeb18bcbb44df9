use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use dtrcv::{Cohort, Estimator, IncidenceCurve};

pub fn tag(estimator: Estimator) -> &'static str {
    match estimator {
        Estimator::AalenJohansen => "aj",
        Estimator::Msm => "msm",
        Estimator::Oracle => "oracle",
    }
}

#[derive(Serialize)]
struct CurveRow<'a> {
    regime_id: &'a str,
    estimator: &'a str,
    weighting: &'a str,
    day: usize,
    cif: f64,
    lower: Option<f64>,
    upper: Option<f64>,
}

pub fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves(path: &Path, curves: &[IncidenceCurve]) -> anyhow::Result<()> {
    let rows = curves.iter().flat_map(|c| {
        (0..c.cif.len()).map(move |d| CurveRow {
            regime_id: &c.regime_id,
            estimator: c.estimator.name(),
            weighting: c.weighting.name(),
            day: d,
            cif: c.cif[d],
            lower: c.lower.as_ref().map(|l| l[d]),
            upper: c.upper.as_ref().map(|u| u[d]),
        })
    });
    write_csv(path, rows)
}

#[derive(Serialize)]
pub struct ProportionRow {
    pub regime_id: String,
    pub day: usize,
    pub proportion: Option<f64>,
}

/// Share treated among at-risk patients under observed care.
pub fn observed_proportion(cohort: &Cohort) -> Vec<Option<f64>> {
    let k = cohort.horizon() as usize;
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for d in cohort
        .patients()
        .iter()
        .flat_map(|p| &p.days)
        .filter(|d| d.at_risk)
    {
        num[d.k as usize] += f64::from(d.a);
        den[d.k as usize] += 1.0;
    }
    num.iter()
        .zip(&den)
        .map(|(&n, &d)| (d > 0.0).then(|| n / d))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Echo of everything needed to rerun a command.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub threads: Option<usize>,
    pub config: &'a C,
    pub outputs: Vec<String>,
}

pub fn file_names(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect()
}
