use super::{cuminc_from_hazards, Estimator, HazardPair, IncidenceCurve};
use crate::data_model::Cohort;
use crate::error::{Error, Result};
use crate::regimes::{ExtendedDataset, ExtendedRow};
use crate::weights::WeightKind;

fn weight(kind: WeightKind, row: &ExtendedRow, ext: &ExtendedDataset) -> Result<f64> {
    kind.of(row).ok_or_else(|| {
        Error::Config(format!(
            "{} weights missing for regime {}",
            kind.name(),
            ext.regime_ids()[row.regime]
        ))
    })
}

/// Patients whose baseline profile equals `profile`.
pub fn stratum_mask(ext: &ExtendedDataset, profile: &[f64]) -> Vec<bool> {
    (0..ext.n_patients())
        .map(|p| ext.v_profile(p) == profile)
        .collect()
}

/// Weighted discrete cause-specific hazards for one regime, over the
/// patients selected by `mask` (all when `None`).
pub fn aj_hazards(
    ext: &ExtendedDataset,
    regime: usize,
    kind: WeightKind,
    mask: Option<&[bool]>,
) -> Result<HazardPair> {
    let k = ext.horizon() as usize;
    let mut num1 = vec![0.0; k];
    let mut den1 = vec![0.0; k];
    let mut num2 = vec![0.0; k];
    let mut den2 = vec![0.0; k];
    for row in ext.regime_rows(regime) {
        if !row.at_risk || mask.is_some_and(|m| !m[row.patient]) {
            continue;
        }
        let w = weight(kind, row, ext)?;
        if w == 0.0 {
            continue;
        }
        let j = row.k as usize;
        let (y, z) = (f64::from(row.y), f64::from(row.z));
        num1[j] += y * (1.0 - z) * w;
        den1[j] += (1.0 - z) * w;
        num2[j] += z * w;
        den2[j] += w;
    }
    let id = &ext.regime_ids()[regime];
    if k == 0 || den2[0] == 0.0 {
        return Err(Error::EmptyRiskSet(format!(
            "regime {id} has no weighted mass on day 0"
        )));
    }
    let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
    let defined: Vec<bool> = den2.iter().map(|&d| d > 0.0).collect();
    if let Some(j) = defined.iter().position(|d| !d) {
        log::info!("regime {id}: empty weighted risk set from day {j}; hazards set to 0");
    }
    Ok(HazardPair {
        regime_id: id.clone(),
        h1: num1.iter().zip(&den1).map(|(&n, &d)| ratio(n, d)).collect(),
        h2: num2.iter().zip(&den2).map(|(&n, &d)| ratio(n, d)).collect(),
        mass: den2,
        defined,
    })
}

pub fn aj_cuminc(hazards: &HazardPair, weighting: WeightKind) -> IncidenceCurve {
    IncidenceCurve {
        regime_id: hazards.regime_id.clone(),
        stratum: None,
        estimator: Estimator::AalenJohansen,
        weighting,
        cif: cuminc_from_hazards(&hazards.h1, &hazards.h2).0,
        lower: None,
        upper: None,
    }
}

/// Unweighted cumulative incidence under observed care, no regime
/// censoring.
pub fn observed_cuminc(cohort: &Cohort, mask: Option<&[bool]>) -> Result<IncidenceCurve> {
    let k = cohort.horizon() as usize;
    let mut deaths = vec![0.0; k];
    let mut discharges = vec![0.0; k];
    let mut n = vec![0.0; k];
    for (i, p) in cohort.patients().iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for d in p.days.iter().filter(|d| d.at_risk) {
            let j = d.k as usize;
            n[j] += 1.0;
            deaths[j] += f64::from(d.y);
            discharges[j] += f64::from(d.z);
        }
    }
    if k == 0 || n[0] == 0.0 {
        return Err(Error::EmptyRiskSet(
            "no patients for the observed curve".into(),
        ));
    }
    let mut h1 = vec![0.0; k];
    let mut h2 = vec![0.0; k];
    for j in 0..k {
        let alive = n[j] - discharges[j];
        if alive > 0.0 {
            h1[j] = deaths[j] / alive;
        }
        if n[j] > 0.0 {
            h2[j] = discharges[j] / n[j];
        }
    }
    Ok(IncidenceCurve {
        regime_id: "obs".into(),
        stratum: None,
        estimator: Estimator::AalenJohansen,
        weighting: WeightKind::Unweighted,
        cif: cuminc_from_hazards(&h1, &h2).0,
        lower: None,
        upper: None,
    })
}

/// Weighted share of compatible at-risk patients on treatment each day,
/// using the same day's weight. `None` where no mass remains.
pub fn proportion_treated(
    ext: &ExtendedDataset,
    regime: usize,
    kind: WeightKind,
    mask: Option<&[bool]>,
) -> Result<Vec<Option<f64>>> {
    let k = ext.horizon() as usize;
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for row in ext.regime_rows(regime) {
        if !row.at_risk || !row.compat || mask.is_some_and(|m| !m[row.patient]) {
            continue;
        }
        let w = weight(kind, row, ext)?;
        num[row.k as usize] += f64::from(row.a) * w;
        den[row.k as usize] += w;
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| (d > 0.0).then(|| n / d))
        .collect())
}
