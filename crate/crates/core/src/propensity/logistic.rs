//! Weighted pooled logistic regression by iteratively reweighted least
//! squares with step halving and an optional ridge penalty.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 8192;

/// Dense design matrix stored row-major. Column 0 is taken to be the
/// intercept when `intercept` is set; it is never penalised.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    names: Vec<String>,
    data: Vec<f64>,
    n_rows: usize,
    intercept: bool,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, intercept: bool) -> Self {
        Self {
            names,
            data: Vec::new(),
            n_rows: 0,
            intercept,
        }
    }

    pub fn with_capacity(names: Vec<String>, intercept: bool, rows: usize) -> Self {
        let p = names.len();
        Self {
            names,
            data: Vec::with_capacity(rows * p),
            n_rows: 0,
            intercept,
        }
    }

    pub fn from_rows(names: Vec<String>, intercept: bool, rows: &[Vec<f64>]) -> Self {
        let mut m = Self::with_capacity(names, intercept, rows.len());
        for r in rows {
            m.push_row(r);
        }
        m
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.names.len(), "design row width");
        self.data.extend_from_slice(row);
        self.n_rows += 1;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    fn penalised(&self, j: usize) -> bool {
        !(self.intercept && j == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticOptions {
    /// Convergence threshold on the max-norm of the penalised score.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge penalty on non-intercept coefficients.
    pub ridge: f64,
    /// A linear predictor beyond this magnitude on a weighted row is taken
    /// as a sign of separation when no ridge is applied.
    pub separation_bound: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            ridge: 1e-6,
            separation_bound: 35.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub ridge: f64,
    pub log_likelihood: f64,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        dot(&self.coefficients, row)
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        expit(self.linear_predictor(row))
    }

    /// Error unless the fit converged.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                gradient_norm: self.gradient_norm,
            })
        }
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted log-likelihood (unpenalised).
pub fn log_likelihood(
    design: &DesignMatrix,
    response: &[u8],
    weights: &[f64],
    beta: &[f64],
) -> f64 {
    chunk_sum(design.n_rows(), |i| {
        let w = weights[i];
        if w == 0.0 {
            return 0.0;
        }
        let eta = dot(beta, design.row(i));
        w * (f64::from(response[i]) * eta - softplus(eta))
    })
}

/// Weighted score vector (unpenalised).
pub fn score(design: &DesignMatrix, response: &[u8], weights: &[f64], beta: &[f64]) -> Vec<f64> {
    let p = design.n_cols();
    let parts: Vec<Vec<f64>> = (0..design.n_rows())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut g = vec![0.0; p];
            for &i in idx {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                let x = design.row(i);
                let r = w * (f64::from(response[i]) - expit(dot(beta, x)));
                for j in 0..p {
                    g[j] += r * x[j];
                }
            }
            g
        })
        .collect();
    parts.into_iter().fold(vec![0.0; p], |mut acc, g| {
        acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        acc
    })
}

/// Deterministic parallel sum: fixed chunks, summed in order.
fn chunk_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    parts.into_iter().sum()
}

/// Score and Fisher information at `beta`.
fn score_and_information(
    design: &DesignMatrix,
    response: &[u8],
    weights: &[f64],
    beta: &[f64],
) -> (Vec<f64>, DMatrix<f64>) {
    let p = design.n_cols();
    let n = design.n_rows();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; p];
            let mut h = vec![0.0; p * p];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                let x = design.row(i);
                let mu = expit(dot(beta, x));
                let r = w * (f64::from(response[i]) - mu);
                let v = w * mu * (1.0 - mu);
                for a in 0..p {
                    g[a] += r * x[a];
                    let vx = v * x[a];
                    if vx != 0.0 {
                        for b in a..p {
                            h[a * p + b] += vx * x[b];
                        }
                    }
                }
            }
            (g, h)
        })
        .collect();
    let mut g = vec![0.0; p];
    let mut h = DMatrix::zeros(p, p);
    for (pg, ph) in parts {
        for a in 0..p {
            g[a] += pg[a];
            for b in a..p {
                h[(a, b)] += ph[a * p + b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    (g, h)
}

fn check_inputs(design: &DesignMatrix, response: &[u8], weights: &[f64]) -> Result<()> {
    let n = design.n_rows();
    if response.len() != n || weights.len() != n {
        return Err(Error::Config(format!(
            "design has {n} rows but response has {} and weights {}",
            response.len(),
            weights.len()
        )));
    }
    if let Some(i) = response.iter().position(|&y| y > 1) {
        return Err(Error::Config(format!("response at row {i} is not 0/1")));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config(format!(
            "weight at row {i} is negative or not finite"
        )));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::EmptyRiskSet("no rows with positive weight".into()));
    }
    if design.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("design contains non-finite values".into()));
    }
    Ok(())
}

/// Rank check on the weighted cross-product at the null model.
fn check_rank(design: &DesignMatrix, response: &[u8], weights: &[f64]) -> Result<()> {
    let p = design.n_cols();
    let (_, h) = score_and_information(design, response, weights, &vec![0.0; p]);
    let eig = SymmetricEigen::new(h).eigenvalues;
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min <= 1e-12 * max {
        // Name the columns that are (numerically) all zero on weighted rows.
        let empty: Vec<&str> = (0..p)
            .filter(|&j| (0..design.n_rows()).all(|i| weights[i] == 0.0 || design.row(i)[j] == 0.0))
            .map(|j| design.names[j].as_str())
            .collect();
        let detail = if empty.is_empty() {
            format!("weighted design of {p} columns is rank deficient")
        } else {
            format!("columns with no weighted support: {}", empty.join(", "))
        };
        return Err(Error::SingularDesign(detail));
    }
    Ok(())
}

/// Fits a weighted logistic regression of `response` on `design`.
///
/// Non-convergence within `max_iter` is reported through
/// `LogisticFit::converged`; structural problems are errors.
pub fn fit_weighted_logistic(
    design: &DesignMatrix,
    response: &[u8],
    weights: &[f64],
    options: &LogisticOptions,
) -> Result<LogisticFit> {
    check_inputs(design, response, weights)?;
    let p = design.n_cols();
    if p == 0 {
        return Err(Error::SingularDesign("design has no columns".into()));
    }
    let ridge = options.ridge;
    let positive: Vec<u8> = response
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&y, _)| y)
        .collect();
    let degenerate = positive.iter().all(|&y| y == positive[0]);
    if degenerate && ridge == 0.0 {
        return Err(Error::Separation(format!(
            "every weighted response equals {}",
            positive[0]
        )));
    }
    if ridge == 0.0 {
        check_rank(design, response, weights)?;
    }
    // With a one-class response the intercept would run off to infinity;
    // the ridge then also holds the intercept so the fit stays finite.
    let penalty: Vec<f64> = (0..p)
        .map(|j| {
            if design.penalised(j) || degenerate {
                ridge
            } else {
                0.0
            }
        })
        .collect();
    if degenerate {
        log::warn!("logistic response has a single class; ridge keeps the fit finite");
    }
    let objective = |beta: &[f64]| {
        log_likelihood(design, response, weights, beta)
            - 0.5
                * beta
                    .iter()
                    .zip(&penalty)
                    .map(|(b, l)| l * b * b)
                    .sum::<f64>()
    };

    let mut beta = vec![0.0; p];
    let mut obj = objective(&beta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    while iterations <= options.max_iter {
        let (mut g, mut h) = score_and_information(design, response, weights, &beta);
        for j in 0..p {
            g[j] -= penalty[j] * beta[j];
            h[(j, j)] += penalty[j];
        }
        grad_norm = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if grad_norm <= options.tol {
            converged = true;
            break;
        }
        if iterations == options.max_iter {
            break;
        }
        iterations += 1;
        let gv = DVector::from_vec(g);
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&gv),
            None => match h.lu().solve(&gv) {
                Some(s) => s,
                None => {
                    return Err(Error::SingularDesign(
                        "information matrix is singular".into(),
                    ))
                }
            },
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let cand_obj = objective(&cand);
            if cand_obj.is_finite() && cand_obj >= obj - 1e-12 * obj.abs().max(1.0) {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if ridge == 0.0 {
            let eta_max = (0..design.n_rows())
                .filter(|&i| weights[i] > 0.0)
                .map(|i| dot(&beta, design.row(i)).abs())
                .fold(0.0_f64, f64::max);
            if eta_max > options.separation_bound {
                return Err(Error::Separation(format!(
                    "linear predictor reached {eta_max:.1}; fitted probabilities are 0 or 1"
                )));
            }
        }
    }
    Ok(LogisticFit {
        names: design.names.clone(),
        coefficients: beta,
        converged,
        iterations,
        gradient_norm: grad_norm,
        ridge,
        log_likelihood: obj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    fn simulated(n: usize, beta: &[f64], seed: u64) -> (DesignMatrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta.len();
        let mut d = DesignMatrix::new(names(p), true);
        let mut y = Vec::new();
        for _ in 0..n {
            let mut row = vec![1.0];
            row.extend((1..p).map(|_| rng.random_range(-1.0..1.0)));
            let pr = expit(dot(beta, &row));
            y.push(u8::from(rng.random::<f64>() < pr));
            d.push_row(&row);
        }
        (d, y)
    }

    #[test]
    fn recovers_coefficients() {
        let truth = [-0.5, 1.0, -2.0];
        let (d, y) = simulated(20000, &truth, 1);
        let w = vec![1.0; d.n_rows()];
        let fit = fit_weighted_logistic(
            &d,
            &y,
            &w,
            &LogisticOptions {
                ridge: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.converged);
        assert!(fit.gradient_norm <= 1e-8);
        for (b, t) in fit.coefficients.iter().zip(truth) {
            assert!((b - t).abs() < 0.1, "{b} vs {t}");
        }
    }

    #[test]
    fn intercept_only_matches_weighted_mean() {
        let d = DesignMatrix::from_rows(names(1), true, &vec![vec![1.0]; 4]);
        let y = [1, 0, 0, 1];
        let w = [3.0, 1.0, 1.0, 1.0];
        let fit = fit_weighted_logistic(&d, &y, &w, &LogisticOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 2f64.ln()).abs() < 1e-8, "{fit:?}");
    }

    #[test]
    fn weights_equal_replication() {
        let (d, y) = simulated(300, &[0.2, 0.7], 5);
        let w: Vec<f64> = (0..d.n_rows()).map(|i| (i % 3) as f64).collect();
        let mut rep = DesignMatrix::new(names(2), true);
        let mut yr = Vec::new();
        for i in 0..d.n_rows() {
            for _ in 0..(i % 3) {
                rep.push_row(d.row(i));
                yr.push(y[i]);
            }
        }
        let opts = LogisticOptions {
            ridge: 0.0,
            ..Default::default()
        };
        let a = fit_weighted_logistic(&d, &y, &w, &opts).unwrap();
        let b = fit_weighted_logistic(&rep, &yr, &vec![1.0; rep.n_rows()], &opts).unwrap();
        for (x, z) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((x - z).abs() < 1e-8);
        }
    }

    #[test]
    fn one_class_response() {
        let d = DesignMatrix::from_rows(
            names(2),
            true,
            &[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]],
        );
        let y = [0, 0, 0];
        let w = [1.0; 3];
        let err = fit_weighted_logistic(
            &d,
            &y,
            &w,
            &LogisticOptions {
                ridge: 0.0,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(Error::Separation(_))));
        let fit = fit_weighted_logistic(&d, &y, &w, &LogisticOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.is_finite()));
        assert!(fit.coefficients[0] < -10.0);
    }

    #[test]
    fn complete_separation_detected() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let d = DesignMatrix::from_rows(names(2), true, &rows);
        let err = fit_weighted_logistic(
            &d,
            &y,
            &[1.0; 20],
            &LogisticOptions {
                ridge: 0.0,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(Error::Separation(_))), "{err:?}");
    }

    #[test]
    fn collinear_columns_are_singular() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, i as f64, 2.0 * i as f64])
            .collect();
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let d = DesignMatrix::from_rows(names(3), true, &rows);
        let err = fit_weighted_logistic(
            &d,
            &y,
            &[1.0; 10],
            &LogisticOptions {
                ridge: 0.0,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(Error::SingularDesign(_))));
    }

    #[test]
    fn zero_weight_column_named() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, f64::from(u8::from(i == 0))])
            .collect();
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let mut w = vec![1.0; 10];
        w[0] = 0.0;
        let d = DesignMatrix::from_rows(vec!["(Intercept)".into(), "regime_b".into()], true, &rows);
        match fit_weighted_logistic(
            &d,
            &y,
            &w,
            &LogisticOptions {
                ridge: 0.0,
                ..Default::default()
            },
        ) {
            Err(Error::SingularDesign(msg)) => assert!(msg.contains("regime_b"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (d, y) = simulated(500, &[0.3, 1.0], 2);
        let w = vec![1.0; d.n_rows()];
        let fit = fit_weighted_logistic(
            &d,
            &y,
            &w,
            &LogisticOptions {
                max_iter: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!fit.converged);
        assert!(matches!(
            fit.require_converged(),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn score_matches_finite_differences() {
        let (d, y) = simulated(200, &[0.1, -0.4, 0.9], 3);
        let w: Vec<f64> = (0..d.n_rows()).map(|i| 0.5 + (i % 4) as f64).collect();
        let beta = [0.2, -0.3, 0.5];
        let g = score(&d, &y, &w, &beta);
        for j in 0..3 {
            let h = 1e-6;
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd =
                (log_likelihood(&d, &y, &w, &up) - log_likelihood(&d, &y, &w, &dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0));
        }
    }
}
