//! Long-format longitudinal data: one row per patient-day.
//!
//! Row `k` of a patient carries the covariates observed up to decision time
//! `k`, the treatment decision taken at `k`, and the terminal-event
//! indicators at the end of that day. Within a day the order is: covariates,
//! treatment, competing event (discharge), event of interest (death). So
//! `z = 1` on row `k` means the patient left the ICU alive before a death
//! could be recorded on that day, and the decision on row `k` was taken
//! while the patient was still at risk.
//!
//! Under this layout a cohort with `K` decision points has days `0..K` and
//! outcomes for days `1..=K`; the last row's indicators are the outcomes at
//! the horizon.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient-day.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientDay {
    pub k: u32,
    /// Covariate values, ordered as [`Cohort::covariates`].
    pub x: Vec<f64>,
    pub a: u8,
    pub y: u8,
    pub z: u8,
    /// Alive and in the ICU when the day starts (no terminal event on an earlier row).
    pub at_risk: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: String,
    pub days: Vec<PatientDay>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalEvent {
    Death,
    Discharge,
    /// Still in the ICU at the horizon.
    Neither,
}

impl Patient {
    /// Terminal event type and the day it was recorded on, if any.
    pub fn terminal_event(&self) -> (TerminalEvent, Option<u32>) {
        for d in &self.days {
            if d.z == 1 {
                return (TerminalEvent::Discharge, Some(d.k));
            }
            if d.y == 1 {
                return (TerminalEvent::Death, Some(d.k));
            }
        }
        (TerminalEvent::Neither, None)
    }

    /// Rows on which the patient was still at risk.
    pub fn at_risk_days(&self) -> impl Iterator<Item = &PatientDay> {
        self.days.iter().filter(|d| d.at_risk)
    }
}

/// Column-name mapping from a CSV file onto the logical schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub id: String,
    pub time: String,
    pub treatment: String,
    pub event_death: String,
    pub event_discharge: String,
    /// Covariate columns; empty means every unmapped column.
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            treatment: "treatment".into(),
            event_death: "event_death".into(),
            event_discharge: "event_discharge".into(),
            covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Number of decision points `K`; rows with `time >= K` are dropped.
    /// Defaults to one past the largest observed day.
    pub horizon: Option<u32>,
    /// Baseline covariates designated as `V`.
    pub v_columns: Vec<String>,
    /// Keep rows after a terminal event (with frozen indicators) instead of truncating.
    pub keep_post_event: bool,
}

/// A validated, immutable cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    covariates: Vec<String>,
    v_columns: Vec<String>,
    horizon: u32,
    patients: Vec<Patient>,
}

/// A broken data invariant, reported by [`validate_ordering`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub patient_id: String,
    pub day: u32,
    pub rule: &'static str,
}

pub const RULE_DEATH_REVERSAL: &str = "absorbing-state violation (death)";
pub const RULE_DISCHARGE_REVERSAL: &str = "absorbing-state violation (discharge)";
pub const RULE_SIMULTANEOUS: &str = "simultaneous terminal events";
pub const RULE_SECOND_EVENT: &str = "terminal event after a terminal event";
pub const RULE_WITHDRAWAL: &str = "treatment withdrawal";
pub const RULE_MISSING_DAY0: &str = "missing day 0";
pub const RULE_DAY_GAP: &str = "non-contiguous days";
pub const RULE_DUPLICATE_DAY: &str = "duplicate day";

/// Checks every per-patient invariant on (possibly unvalidated) patient records.
/// Rows are expected in day order.
pub fn validate_ordering(patients: &[Patient]) -> Vec<Violation> {
    let mut out = Vec::new();
    for p in patients {
        let mut push = |day: u32, rule: &'static str| {
            out.push(Violation {
                patient_id: p.id.clone(),
                day,
                rule,
            })
        };
        match p.days.first() {
            None => continue,
            Some(first) if first.k != 0 => push(first.k, RULE_MISSING_DAY0),
            _ => {}
        }
        let mut first_event: Option<u32> = None;
        for (i, d) in p.days.iter().enumerate() {
            if i > 0 {
                let prev = &p.days[i - 1];
                if d.k == prev.k {
                    push(d.k, RULE_DUPLICATE_DAY);
                } else if d.k != prev.k + 1 {
                    push(d.k, RULE_DAY_GAP);
                }
                if prev.y == 1 && d.y == 0 {
                    push(d.k, RULE_DEATH_REVERSAL);
                }
                if prev.z == 1 && d.z == 0 {
                    push(d.k, RULE_DISCHARGE_REVERSAL);
                }
                if prev.a == 1 && d.a == 0 {
                    push(d.k, RULE_WITHDRAWAL);
                }
            }
            let event_now = d.y == 1 || d.z == 1;
            match first_event {
                None if event_now => {
                    if d.y == 1 && d.z == 1 {
                        push(d.k, RULE_SIMULTANEOUS);
                    }
                    first_event = Some(d.k);
                }
                Some(_) if i > 0 => {
                    let prev = &p.days[i - 1];
                    if (d.y == 1 && prev.y == 0) || (d.z == 1 && prev.z == 0) {
                        push(d.k, RULE_SECOND_EVENT);
                    }
                }
                _ => {}
            }
        }
    }
    out
}

fn violation_error(v: &Violation) -> Error {
    match v.rule {
        RULE_MISSING_DAY0 | RULE_DAY_GAP | RULE_DUPLICATE_DAY => Error::Gap {
            patient: v.patient_id.clone(),
            detail: format!("{} at day {}", v.rule, v.day),
        },
        _ => Error::Order {
            patient: v.patient_id.clone(),
            day: v.day,
            rule: v.rule.to_string(),
        },
    }
}

impl Cohort {
    /// Validates raw patient records and normalizes them: rows are sorted by
    /// day, truncated at the horizon and (unless `keep_post_event`) at the
    /// terminal event, and `at_risk` is derived.
    pub fn from_patients(
        covariates: Vec<String>,
        mut patients: Vec<Patient>,
        options: &IngestOptions,
    ) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, c) in covariates.iter().enumerate() {
            if seen.insert(c.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate covariate {c}")));
            }
        }
        let v_idx = options
            .v_columns
            .iter()
            .map(|v| {
                seen.get(v.as_str())
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("V column {v} is not a covariate")))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut ids = HashMap::new();
        for p in &mut patients {
            if ids.insert(p.id.clone(), ()).is_some() {
                return Err(Error::Schema(format!("patient {} appears twice", p.id)));
            }
            if p.days.is_empty() {
                return Err(Error::Gap {
                    patient: p.id.clone(),
                    detail: "no rows".into(),
                });
            }
            p.days.sort_by_key(|d| d.k);
            for d in &p.days {
                if d.x.len() != covariates.len() {
                    return Err(Error::Schema(format!(
                        "patient {} day {}: expected {} covariates, found {}",
                        p.id,
                        d.k,
                        covariates.len(),
                        d.x.len()
                    )));
                }
                if d.a > 1 || d.y > 1 || d.z > 1 {
                    return Err(Error::Schema(format!(
                        "patient {} day {}: indicators must be 0 or 1",
                        p.id, d.k
                    )));
                }
                if let Some(bad) = d.x.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Schema(format!(
                        "patient {} day {}: covariate {} is not finite",
                        p.id, d.k, covariates[bad]
                    )));
                }
            }
        }
        if let Some(v) = validate_ordering(&patients).first() {
            return Err(violation_error(v));
        }

        let horizon = match options.horizon {
            Some(0) => return Err(Error::Schema("horizon must be at least 1".into())),
            Some(h) => h,
            None => patients
                .iter()
                .filter_map(|p| p.days.last().map(|d| d.k + 1))
                .max()
                .unwrap_or(1),
        };

        for p in &mut patients {
            p.days.retain(|d| d.k < horizon);
            let event_day = p.days.iter().find(|d| d.y == 1 || d.z == 1).map(|d| d.k);
            match event_day {
                Some(e) if !options.keep_post_event => p.days.retain(|d| d.k <= e),
                None => {
                    let last = p.days.last().map(|d| d.k).unwrap_or(0);
                    if last + 1 < horizon {
                        return Err(Error::Gap {
                            patient: p.id.clone(),
                            detail: format!(
                                "follow-up ends at day {last} without a terminal event before horizon {horizon}"
                            ),
                        });
                    }
                }
                _ => {}
            }
            let mut alive = true;
            for d in &mut p.days {
                d.at_risk = alive;
                if d.y == 1 || d.z == 1 {
                    alive = false;
                }
            }
            for &j in &v_idx {
                let v0 = p.days[0].x[j];
                if p.days.iter().any(|d| d.x[j] != v0) {
                    return Err(Error::Schema(format!(
                        "V column {} varies within patient {}",
                        covariates[j], p.id
                    )));
                }
            }
        }
        sort_patients(&mut patients);

        Ok(Self {
            covariates,
            v_columns: options.v_columns.clone(),
            horizon,
            patients,
        })
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn v_columns(&self) -> &[String] {
        &self.v_columns
    }

    /// Number of decision points `K`.
    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_rows(&self) -> usize {
        self.patients.iter().map(|p| p.days.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c == name)
    }

    pub fn v_indices(&self) -> Vec<usize> {
        self.v_columns
            .iter()
            .map(|v| self.covariate_index(v).expect("validated at construction"))
            .collect()
    }

    /// Baseline `V` values of a patient.
    pub fn v_profile(&self, patient: usize) -> Vec<f64> {
        let x0 = &self.patients[patient].days[0].x;
        self.v_indices().into_iter().map(|j| x0[j]).collect()
    }

    /// Sub-cohort made of the given patients, in the given order. Repeated
    /// indices produce distinct copies whose ids get a `#n` suffix.
    pub fn select(&self, indices: &[usize]) -> Cohort {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let patients = indices
            .iter()
            .map(|&i| {
                let c = counts.entry(i).or_insert(0);
                *c += 1;
                let mut p = self.patients[i].clone();
                if *c > 1 {
                    p.id = format!("{}#{}", p.id, *c - 1);
                }
                p
            })
            .collect();
        Cohort {
            covariates: self.covariates.clone(),
            v_columns: self.v_columns.clone(),
            horizon: self.horizon,
            patients,
        }
    }

    /// Same rows, different `V` designation.
    pub fn with_v_columns(&self, v_columns: Vec<String>) -> Result<Cohort> {
        Cohort::from_patients(
            self.covariates.clone(),
            self.patients.clone(),
            &IngestOptions {
                horizon: Some(self.horizon),
                v_columns,
                keep_post_event: true,
            },
        )
    }
}

fn sort_patients(patients: &mut [Patient]) {
    let numeric: Option<Vec<i64>> = patients.iter().map(|p| p.id.parse().ok()).collect();
    match numeric {
        Some(_) => patients.sort_by_key(|p| p.id.parse::<i64>().unwrap_or(0)),
        None => patients.sort_by(|a, b| a.id.cmp(&b.id)),
    }
}

fn parse_indicator(raw: &str, column: &str, line: u64) -> Result<u8> {
    match raw.trim() {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        other => Err(Error::Schema(format!(
            "line {line}: column {column} must be 0 or 1, found {other:?}"
        ))),
    }
}

/// Reads a long-format CSV file into a validated cohort.
pub fn ingest(
    path: impl AsRef<Path>,
    schema: &ColumnMap,
    options: &IngestOptions,
) -> Result<Cohort> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, schema, options)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    schema: &ColumnMap,
    options: &IngestOptions,
) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema("input has no header".into()));
    }
    let mut pos = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if pos.insert(h.to_string(), i).is_some() {
            return Err(Error::Schema(format!("duplicate column {h}")));
        }
    }
    let col = |name: &str| {
        pos.get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing column {name}")))
    };
    let id_c = col(&schema.id)?;
    let t_c = col(&schema.time)?;
    let a_c = col(&schema.treatment)?;
    let y_c = col(&schema.event_death)?;
    let z_c = col(&schema.event_discharge)?;
    let mapped = [id_c, t_c, a_c, y_c, z_c];
    let mut uniq = mapped.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != mapped.len() {
        return Err(Error::Schema(
            "two logical columns map to the same header".into(),
        ));
    }
    let covariates: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !mapped.contains(i))
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.covariates.clone()
    };
    let cov_c = covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut by_id: BTreeMap<String, Vec<PatientDay>> = BTreeMap::new();
    let mut n_rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id = field(id_c).to_string();
        if id.is_empty() {
            return Err(Error::Schema(format!("line {line}: empty id")));
        }
        let k: u32 = field(t_c).parse().map_err(|_| {
            Error::Schema(format!(
                "line {line}: time must be a non-negative integer, found {:?}",
                field(t_c)
            ))
        })?;
        let x = cov_c
            .iter()
            .zip(&covariates)
            .map(|(&i, name)| {
                let raw = field(i);
                if raw.is_empty() {
                    return Err(Error::Schema(format!(
                        "line {line}: missing value for {name}"
                    )));
                }
                raw.parse::<f64>().map_err(|_| {
                    Error::Schema(format!("line {line}: {name} is not numeric: {raw:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        by_id.entry(id).or_default().push(PatientDay {
            k,
            x,
            a: parse_indicator(field(a_c), &schema.treatment, line)?,
            y: parse_indicator(field(y_c), &schema.event_death, line)?,
            z: parse_indicator(field(z_c), &schema.event_discharge, line)?,
            at_risk: false,
        });
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Schema("input has no data rows".into()));
    }
    let patients = by_id
        .into_iter()
        .map(|(id, days)| Patient { id, days })
        .collect();
    Cohort::from_patients(covariates, patients, options)
}

/// Writes a cohort in the long CSV layout read by [`ingest`].
pub fn emit<W: Write>(cohort: &Cohort, writer: W, schema: &ColumnMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.id.clone(),
        schema.time.clone(),
        schema.treatment.clone(),
        schema.event_death.clone(),
        schema.event_discharge.clone(),
    ];
    header.extend(cohort.covariates.iter().cloned());
    w.write_record(&header)?;
    for p in &cohort.patients {
        for d in &p.days {
            let mut rec = vec![
                p.id.clone(),
                d.k.to_string(),
                d.a.to_string(),
                d.y.to_string(),
                d.z.to_string(),
            ];
            // `{}` on f64 prints the shortest string that round-trips exactly.
            rec.extend(d.x.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_path(cohort: &Cohort, path: impl AsRef<Path>, schema: &ColumnMap) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    emit(cohort, std::io::BufWriter::new(file), schema)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn day(k: u32, ph: f64, a: u8, y: u8, z: u8) -> PatientDay {
        PatientDay {
            k,
            x: vec![ph],
            a,
            y,
            z,
            at_risk: false,
        }
    }

    /// The two-patient, five-day example with a single pH covariate.
    pub(crate) fn table1() -> Cohort {
        let p1 = [7.29, 7.24, 7.08, 7.29, 7.29];
        let p2 = [7.3, 7.29, 7.19, 7.32, 7.32];
        let a = [0, 0, 1, 1, 1];
        let mk = |id: &str, ph: &[f64]| Patient {
            id: id.into(),
            days: (0..5).map(|k| day(k as u32, ph[k], a[k], 0, 0)).collect(),
        };
        Cohort::from_patients(
            vec!["min_ph_24h".into()],
            vec![mk("1", &p1), mk("2", &p2)],
            &IngestOptions::default(),
        )
        .unwrap()
    }

    const TABLE1_CSV: &str = "ID,Time,Observed Treatment,death,discharge,Min. pH\n\
        1,0,0,0,0,7.29\n1,1,0,0,0,7.24\n1,2,1,0,0,7.08\n1,3,1,0,0,7.29\n1,4,1,0,0,7.29\n\
        2,0,0,0,0,7.3\n2,1,0,0,0,7.29\n2,2,1,0,0,7.19\n2,3,1,0,0,7.32\n2,4,1,0,0,7.32\n";

    fn table1_schema() -> ColumnMap {
        ColumnMap {
            id: "ID".into(),
            time: "Time".into(),
            treatment: "Observed Treatment".into(),
            event_death: "death".into(),
            event_discharge: "discharge".into(),
            covariates: vec![],
        }
    }

    #[test]
    fn ingest_table1_layout() {
        let c = ingest_reader(
            TABLE1_CSV.as_bytes(),
            &table1_schema(),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.n_rows(), 10);
        assert_eq!(c.horizon(), 5);
        assert_eq!(c.covariates(), &["Min. pH".to_string()]);
        assert_eq!(c.patients()[1].days[2].x, vec![7.19]);
        assert!(c.patients().iter().flat_map(|p| &p.days).all(|d| d.at_risk));
        assert!(validate_ordering(c.patients()).is_empty());
        assert_eq!(c, {
            let mut t = table1();
            t.covariates = vec!["Min. pH".into()];
            t
        });
    }

    #[test]
    fn empty_input_is_schema_error() {
        let err = ingest_reader(
            "".as_bytes(),
            &ColumnMap::default(),
            &IngestOptions::default(),
        );
        assert!(matches!(err, Err(Error::Schema(_))));
        let err = ingest_reader(
            "id,time,treatment,event_death,event_discharge\n".as_bytes(),
            &ColumnMap::default(),
            &IngestOptions::default(),
        );
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn missing_and_duplicate_columns() {
        let csv = "id,time,treatment,event_death\n1,0,0,0\n";
        let err = ingest_reader(
            csv.as_bytes(),
            &ColumnMap::default(),
            &IngestOptions::default(),
        );
        assert!(matches!(err, Err(Error::Schema(m)) if m.contains("event_discharge")));
        let csv = "id,time,treatment,event_death,event_discharge,x,x\n1,0,0,0,0,1,1\n";
        let err = ingest_reader(
            csv.as_bytes(),
            &ColumnMap::default(),
            &IngestOptions::default(),
        );
        assert!(matches!(err, Err(Error::Schema(m)) if m.contains("duplicate")));
    }

    #[test]
    fn missing_covariate_value_is_rejected() {
        let csv = "id,time,treatment,event_death,event_discharge,x\n1,0,0,0,0,\n";
        let err = ingest_reader(
            csv.as_bytes(),
            &ColumnMap::default(),
            &IngestOptions::default(),
        );
        assert!(matches!(err, Err(Error::Schema(m)) if m.contains("missing value")));
    }

    #[test]
    fn bad_indicator_and_time() {
        let csv = "id,time,treatment,event_death,event_discharge\n1,0,2,0,0\n";
        assert!(matches!(
            ingest_reader(
                csv.as_bytes(),
                &ColumnMap::default(),
                &IngestOptions::default()
            ),
            Err(Error::Schema(_))
        ));
        let csv = "id,time,treatment,event_death,event_discharge\n1,-1,0,0,0\n";
        assert!(matches!(
            ingest_reader(
                csv.as_bytes(),
                &ColumnMap::default(),
                &IngestOptions::default()
            ),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn resurrection_is_order_error_naming_patient() {
        let csv = "id,time,treatment,event_death,event_discharge\n\
                   7,0,0,0,0\n7,1,0,1,0\n7,2,0,0,0\n";
        match ingest_reader(
            csv.as_bytes(),
            &ColumnMap::default(),
            &IngestOptions::default(),
        ) {
            Err(Error::Order { patient, day, .. }) => {
                assert_eq!(patient, "7");
                assert_eq!(day, 2);
            }
            other => panic!("expected OrderError, got {other:?}"),
        }
    }

    #[test]
    fn gap_error() {
        let csv = "id,time,treatment,event_death,event_discharge\n1,0,0,0,0\n1,2,0,0,0\n";
        assert!(matches!(
            ingest_reader(
                csv.as_bytes(),
                &ColumnMap::default(),
                &IngestOptions::default()
            ),
            Err(Error::Gap { .. })
        ));
        let csv = "id,time,treatment,event_death,event_discharge\n1,1,0,0,0\n";
        assert!(matches!(
            ingest_reader(
                csv.as_bytes(),
                &ColumnMap::default(),
                &IngestOptions::default()
            ),
            Err(Error::Gap { .. })
        ));
        // Follow-up stops early without an event.
        let csv =
            "id,time,treatment,event_death,event_discharge\n1,0,0,0,0\n2,0,0,0,0\n2,1,0,0,0\n";
        assert!(matches!(
            ingest_reader(
                csv.as_bytes(),
                &ColumnMap::default(),
                &IngestOptions::default()
            ),
            Err(Error::Gap { .. })
        ));
    }

    #[test]
    fn post_event_rows_are_truncated_or_frozen() {
        let csv = "id,time,treatment,event_death,event_discharge\n\
                   1,0,0,0,0\n1,1,1,0,1\n1,2,1,0,1\n1,3,1,0,1\n2,0,0,0,0\n2,1,0,0,0\n2,2,0,0,0\n2,3,0,0,0\n";
        let c = ingest_reader(
            csv.as_bytes(),
            &ColumnMap::default(),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.patients()[0].days.len(), 2);
        assert_eq!(
            c.patients()[0].terminal_event(),
            (TerminalEvent::Discharge, Some(1))
        );
        assert_eq!(
            c.patients()[1].terminal_event(),
            (TerminalEvent::Neither, None)
        );
        let kept = ingest_reader(
            csv.as_bytes(),
            &ColumnMap::default(),
            &IngestOptions {
                keep_post_event: true,
                ..Default::default()
            },
        )
        .unwrap();
        let at_risk: Vec<bool> = kept.patients()[0].days.iter().map(|d| d.at_risk).collect();
        assert_eq!(at_risk, vec![true, true, false, false]);
    }

    #[test]
    fn horizon_truncates() {
        let c = ingest_reader(
            TABLE1_CSV.as_bytes(),
            &table1_schema(),
            &IngestOptions {
                horizon: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.n_rows(), 6);
        assert_eq!(c.horizon(), 3);
    }

    #[test]
    fn v_columns_must_be_constant() {
        let csv = "id,time,treatment,event_death,event_discharge,male,ph\n\
                   1,0,0,0,0,1,7.3\n1,1,0,0,0,0,7.2\n";
        let err = ingest_reader(
            csv.as_bytes(),
            &ColumnMap::default(),
            &IngestOptions {
                v_columns: vec!["male".into()],
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(Error::Schema(m)) if m.contains("varies")));
    }

    #[test]
    fn simultaneous_events_flagged() {
        let p = Patient {
            id: "9".into(),
            days: vec![day(0, 7.3, 0, 0, 0), day(1, 7.3, 0, 1, 1)],
        };
        let v = validate_ordering(&[p]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, RULE_SIMULTANEOUS);
        assert_eq!(v[0].day, 1);
    }

    #[test]
    fn withdrawal_flagged_exactly_for_decreasing_sequences() {
        // Enumerate all two-day treatment sequences.
        for a0 in 0..2u8 {
            for a1 in 0..2u8 {
                let p = Patient {
                    id: "1".into(),
                    days: vec![day(0, 7.3, a0, 0, 0), day(1, 7.3, a1, 0, 0)],
                };
                let v = validate_ordering(&[p]);
                if a1 < a0 {
                    assert_eq!(v.len(), 1);
                    assert_eq!(v[0].rule, RULE_WITHDRAWAL);
                } else {
                    assert!(v.is_empty());
                }
            }
        }
    }

    #[test]
    fn select_duplicates_get_distinct_ids() {
        let c = table1();
        let s = c.select(&[1, 1, 0]);
        let ids: Vec<&str> = s.patients().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["2", "2#1", "1"]);
    }
}
