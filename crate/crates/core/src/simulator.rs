//! Synthetic discrete-time cohorts with treatment-confounder feedback and
//! competing events, and forced-regime Monte Carlo for the true
//! counterfactual quantities.
//!
//! Within a day the order is: covariate `X_k`, treatment `A_k`, discharge,
//! then death; the covariate then moves to the next day.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Cohort, IngestOptions, Patient, PatientDay};
use crate::error::{Error, Result};
use crate::estimators::{cuminc_from_hazards, Estimator, IncidenceCurve};
use crate::propensity::expit;
use crate::regimes::{BoundRegime, Regime};
use crate::weights::WeightKind;

/// Stream offset separating counterfactual draws from observational ones.
const COUNTERFACTUAL_STREAMS: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineLaw {
    pub x_mean: f64,
    pub x_sd: f64,
    /// P(V = 1).
    pub v_prob: f64,
}

/// `x' = target + rho (x - target) + treat_effect a + v_effect v + noise_sd e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionLaw {
    pub target: f64,
    pub rho: f64,
    pub treat_effect: f64,
    pub v_effect: f64,
    pub noise_sd: f64,
}

/// `logit p = intercept + x (X - x_center) + v V + day k + a A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticLaw {
    pub intercept: f64,
    pub x: f64,
    pub x_center: f64,
    pub v: f64,
    pub day: f64,
    pub a: f64,
}

impl Default for LogisticLaw {
    fn default() -> Self {
        Self {
            intercept: 0.0,
            x: 0.0,
            x_center: 0.0,
            v: 0.0,
            day: 0.0,
            a: 0.0,
        }
    }
}

impl LogisticLaw {
    pub fn constant(intercept: f64) -> Self {
        Self {
            intercept,
            ..Self::default()
        }
    }

    pub fn prob(&self, x: f64, v: f64, k: u32, a: u8) -> f64 {
        expit(
            self.intercept
                + self.x * (x - self.x_center)
                + self.v * v
                + self.day * f64::from(k)
                + self.a * f64::from(a),
        )
    }

    fn is_finite(&self) -> bool {
        [
            self.intercept,
            self.x,
            self.x_center,
            self.v,
            self.day,
            self.a,
        ]
        .iter()
        .all(|c| c.is_finite())
    }
}

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub horizon: u32,
    pub seed: u64,
    /// Name of the time-varying covariate.
    pub covariate: String,
    /// Name of the binary baseline covariate.
    pub baseline_covariate: String,
    pub baseline: BaselineLaw,
    pub transition: TransitionLaw,
    pub treatment: LogisticLaw,
    pub discharge: LogisticLaw,
    pub death: LogisticLaw,
}

impl DgpSpec {
    /// Low values of the covariate raise both the chance of treatment and
    /// the death hazard; treatment raises the covariate and lowers the
    /// death hazard.
    pub fn confounded_feedback() -> Self {
        Self {
            name: "confounded-feedback".into(),
            n: 20000,
            horizon: 10,
            seed: 20240601,
            covariate: "ph".into(),
            baseline_covariate: "male".into(),
            baseline: BaselineLaw {
                x_mean: 7.28,
                x_sd: 0.07,
                v_prob: 0.5,
            },
            transition: TransitionLaw {
                target: 7.25,
                rho: 0.8,
                treat_effect: 0.04,
                v_effect: -0.01,
                noise_sd: 0.04,
            },
            treatment: LogisticLaw {
                intercept: -2.0,
                x: -12.0,
                x_center: 7.2,
                v: 0.3,
                day: 0.0,
                a: 0.0,
            },
            discharge: LogisticLaw {
                intercept: -2.2,
                x: 10.0,
                x_center: 7.25,
                ..LogisticLaw::default()
            },
            death: LogisticLaw {
                intercept: -3.2,
                x: -35.0,
                x_center: 7.25,
                v: 0.2,
                day: 0.0,
                a: -0.8,
            },
        }
    }

    /// Treatment depends on the baseline covariate only; the time-varying
    /// covariate still drives the event hazards.
    pub fn baseline_only() -> Self {
        let mut s = Self::confounded_feedback();
        s.name = "baseline-only".into();
        s.treatment = LogisticLaw {
            intercept: -2.0,
            v: 1.0,
            ..LogisticLaw::default()
        };
        s.transition.v_effect = 0.0;
        s.death.v = 0.5;
        s
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "confounded-feedback" => Some(Self::confounded_feedback()),
            "baseline-only" => Some(Self::baseline_only()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("simulation spec: {m}")));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.covariate == self.baseline_covariate
            || self.covariate.is_empty()
            || self.baseline_covariate.is_empty()
        {
            return bad("covariate names must be distinct and non-empty");
        }
        let b = &self.baseline;
        if !(b.x_mean.is_finite() && b.x_sd.is_finite() && b.x_sd >= 0.0) {
            return bad("baseline covariate law must have finite mean and non-negative sd");
        }
        if !(0.0..=1.0).contains(&b.v_prob) {
            return bad("v_prob must lie in [0, 1]");
        }
        let t = &self.transition;
        if ![t.target, t.rho, t.treat_effect, t.v_effect, t.noise_sd]
            .iter()
            .all(|c| c.is_finite())
            || t.noise_sd < 0.0
        {
            return bad("transition coefficients must be finite with non-negative noise");
        }
        if !(self.treatment.is_finite() && self.discharge.is_finite() && self.death.is_finite()) {
            return bad("logistic coefficients must be finite");
        }
        Ok(())
    }

    pub fn covariates(&self) -> Vec<String> {
        vec![self.covariate.clone(), self.baseline_covariate.clone()]
    }
}

/// Treatment policy during generation.
enum Policy<'a> {
    Observational,
    Forced(&'a BoundRegime),
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One trajectory, truncated at the terminal event.
fn simulate_patient(spec: &DgpSpec, rng: &mut ChaCha8Rng, policy: &Policy<'_>) -> Vec<PatientDay> {
    let v = f64::from(u8::from(rng.random::<f64>() < spec.baseline.v_prob));
    let e: f64 = rng.sample(StandardNormal);
    let mut x = spec.baseline.x_mean + spec.baseline.x_sd * e;
    let mut days: Vec<PatientDay> = Vec::with_capacity(spec.horizon as usize);
    let mut prev_a = 0u8;
    let tr = &spec.transition;
    for k in 0..spec.horizon {
        let (u_a, u_z, u_y): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let noise: f64 = rng.sample(StandardNormal);
        days.push(PatientDay {
            k,
            x: vec![x, v],
            a: 0,
            y: 0,
            z: 0,
            at_risk: true,
        });
        let a = match policy {
            Policy::Observational => {
                if prev_a == 1 {
                    1
                } else {
                    u8::from(u_a < spec.treatment.prob(x, v, k, 0))
                }
            }
            Policy::Forced(regime) => regime.action(&days),
        };
        let z = u8::from(u_z < spec.discharge.prob(x, v, k, a));
        let y = if z == 1 {
            0
        } else {
            u8::from(u_y < spec.death.prob(x, v, k, a))
        };
        let today = days.last_mut().unwrap();
        today.a = a;
        today.z = z;
        today.y = y;
        if z == 1 || y == 1 {
            break;
        }
        x = tr.target
            + tr.rho * (x - tr.target)
            + tr.treat_effect * f64::from(a)
            + tr.v_effect * v
            + tr.noise_sd * noise;
        prev_a = a;
    }
    days
}

/// Samples an observational cohort; patient `i` (id `i + 1`) uses its own
/// random stream, so results do not depend on the thread count.
pub fn generate_observational(spec: &DgpSpec) -> Result<Cohort> {
    spec.validate()?;
    let patients: Vec<Patient> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(spec.seed, i as u64);
            Patient {
                id: (i + 1).to_string(),
                days: simulate_patient(spec, &mut rng, &Policy::Observational),
            }
        })
        .collect();
    Cohort::from_patients(
        spec.covariates(),
        patients,
        &IngestOptions {
            horizon: Some(spec.horizon),
            v_columns: vec![spec.baseline_covariate.clone()],
            keep_post_event: false,
        },
    )
}

/// Monte Carlo summary of the world in which everyone follows a regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub regime_id: String,
    pub m: usize,
    /// Death by day `j`, `j = 0..=K`.
    pub cif: Vec<f64>,
    /// Discharge by day `j`.
    pub competing_cif: Vec<f64>,
    /// Share treated among patients alive at the start of each day.
    pub proportion_treated: Vec<Option<f64>>,
}

impl Counterfactual {
    pub fn curve(&self) -> IncidenceCurve {
        IncidenceCurve {
            regime_id: self.regime_id.clone(),
            stratum: None,
            estimator: Estimator::Oracle,
            weighting: WeightKind::Unweighted,
            cif: self.cif.clone(),
            lower: None,
            upper: None,
        }
    }
}

#[derive(Clone)]
struct Tally {
    death: Vec<u64>,
    discharge: Vec<u64>,
    alive: Vec<u64>,
    treated: Vec<u64>,
}

impl Tally {
    fn new(k: usize) -> Self {
        Self {
            death: vec![0; k],
            discharge: vec![0; k],
            alive: vec![0; k],
            treated: vec![0; k],
        }
    }

    fn add(mut self, o: Tally) -> Self {
        for (a, b) in [
            (&mut self.death, o.death),
            (&mut self.discharge, o.discharge),
            (&mut self.alive, o.alive),
            (&mut self.treated, o.treated),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

/// Forced-regime simulation of `m` patients from the spec's baseline,
/// covariate and event laws, with treatment set by the regime.
pub fn true_counterfactual(spec: &DgpSpec, regime: &Regime, m: usize) -> Result<Counterfactual> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::Config("Monte Carlo size must be positive".into()));
    }
    let bound = regime.bind(&spec.covariates())?;
    let k = spec.horizon as usize;
    let tally = (0..m)
        .into_par_iter()
        .fold(
            || Tally::new(k),
            |mut t, i| {
                let mut rng = rng_for(spec.seed, COUNTERFACTUAL_STREAMS | i as u64);
                let days = simulate_patient(spec, &mut rng, &Policy::Forced(&bound));
                for d in &days {
                    t.alive[d.k as usize] += 1;
                    t.treated[d.k as usize] += u64::from(d.a);
                }
                let last = days.last().unwrap();
                t.death[last.k as usize] += u64::from(last.y);
                t.discharge[last.k as usize] += u64::from(last.z);
                t
            },
        )
        .reduce(|| Tally::new(k), Tally::add);
    let cum = |c: &[u64]| {
        let mut out = vec![0.0];
        let mut s = 0u64;
        for &x in c {
            s += x;
            out.push(s as f64 / m as f64);
        }
        out
    };
    Ok(Counterfactual {
        regime_id: regime.id.clone(),
        m,
        cif: cum(&tally.death),
        competing_cif: cum(&tally.discharge),
        proportion_treated: tally
            .treated
            .iter()
            .zip(&tally.alive)
            .map(|(&t, &n)| (n > 0).then(|| t as f64 / n as f64))
            .collect(),
    })
}

/// True counterfactual cumulative incidence of death under a regime.
pub fn true_counterfactual_cif(
    spec: &DgpSpec,
    regime: &Regime,
    m: usize,
) -> Result<IncidenceCurve> {
    Ok(true_counterfactual(spec, regime, m)?.curve())
}

/// Closed-form cumulative incidence when neither event law depends on the
/// covariate or on treatment, averaged over the baseline covariate.
pub fn closed_form_cif(spec: &DgpSpec) -> Vec<f64> {
    let k = spec.horizon;
    let curve = |v: f64| {
        let h1: Vec<f64> = (0..k).map(|d| spec.death.prob(0.0, v, d, 0)).collect();
        let h2: Vec<f64> = (0..k).map(|d| spec.discharge.prob(0.0, v, d, 0)).collect();
        cuminc_from_hazards(&h1, &h2).0
    };
    let p = spec.baseline.v_prob;
    curve(0.0)
        .iter()
        .zip(curve(1.0))
        .map(|(a, b)| (1.0 - p) * a + p * b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regimes::Direction;

    fn small(n: usize) -> DgpSpec {
        DgpSpec {
            n,
            ..DgpSpec::confounded_feedback()
        }
    }

    #[test]
    fn empty_cohort() {
        let c = generate_observational(&small(0)).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let spec = small(500);
        let a = generate_observational(&spec).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| generate_observational(&spec)).unwrap();
        assert_eq!(a.patients(), b.patients());
    }

    #[test]
    fn treatment_absorbing_and_events_terminal() {
        let c = generate_observational(&small(2000)).unwrap();
        for p in c.patients() {
            for w in p.days.windows(2) {
                assert!(w[1].a >= w[0].a);
                assert_eq!(w[0].y + w[0].z, 0);
            }
            assert!(p.days.iter().all(|d| d.y + d.z <= 1));
        }
    }

    #[test]
    fn untreated_world_matches_closed_form() {
        let mut spec = small(50000);
        spec.treatment = LogisticLaw::constant(-60.0);
        spec.death = LogisticLaw {
            intercept: -2.5,
            v: 0.6,
            day: 0.05,
            ..Default::default()
        };
        spec.discharge = LogisticLaw {
            intercept: -2.0,
            day: -0.03,
            ..Default::default()
        };
        let truth = closed_form_cif(&spec);
        let c = generate_observational(&spec).unwrap();
        assert!(c.patients().iter().all(|p| p.days.iter().all(|d| d.a == 0)));
        let n = c.n_patients() as f64;
        for j in 1..=spec.horizon as usize {
            let deaths = c
                .patients()
                .iter()
                .filter(|p| {
                    p.days
                        .last()
                        .is_some_and(|d| d.y == 1 && (d.k as usize) < j)
                })
                .count() as f64;
            let est = deaths / n;
            let se = (truth[j] * (1.0 - truth[j]) / n).sqrt();
            assert!(
                (est - truth[j]).abs() < 4.0 * se,
                "day {j}: {est} vs {}",
                truth[j]
            );
        }
        // The forced "never" world is the same world.
        let cf = true_counterfactual(&spec, &Regime::never(), 50000).unwrap();
        for j in 1..=spec.horizon as usize {
            let se = (truth[j] * (1.0 - truth[j]) / 50000.0).sqrt();
            assert!((cf.cif[j] - truth[j]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn forced_regime_is_followed() {
        let spec = small(100);
        let r = Regime::threshold("ph", 7.2, Direction::Below);
        let cf = true_counterfactual(&spec, &r, 5000).unwrap();
        assert!(cf.cif.windows(2).all(|w| w[1] >= w[0]));
        assert!(cf
            .cif
            .iter()
            .zip(&cf.competing_cif)
            .all(|(a, b)| a + b <= 1.0));
        let always = true_counterfactual(&spec, &Regime::always(), 2000).unwrap();
        assert!(always.proportion_treated.iter().all(|p| *p == Some(1.0)));
        let never = true_counterfactual(&spec, &Regime::never(), 2000).unwrap();
        assert!(never.proportion_treated.iter().all(|p| *p == Some(0.0)));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = small(10);
        s.baseline.v_prob = 1.5;
        assert!(matches!(generate_observational(&s), Err(Error::Config(_))));
        let mut s = small(10);
        s.death.x = f64::NAN;
        assert!(generate_observational(&s).is_err());
    }

    #[test]
    fn presets_round_trip() {
        for name in ["confounded-feedback", "baseline-only"] {
            let s = DgpSpec::preset(name).unwrap();
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<DgpSpec>(&json).unwrap(), s);
        }
    }
}
