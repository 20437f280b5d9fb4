//! Maximum-likelihood estimation of the reliability binary logit.
//!
//! Each observation contributes the utility difference regular − reliable,
//! `x = (1, ln d_reg − ln d_rel, e^{δ_reg/d_reg} − e^{δ_rel/d_rel})`, and the
//! model is `P(regular) = logistic(β·x)`. The log-likelihood is concave, so a
//! plain Newton iteration from zero with step halving converges.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{logistic, prob_regular, ChoiceCoefficients, ServiceOffer};
use crate::error::{Error, Result};

pub const K_PARAMS: usize = 3;
const MIN_OBSERVATIONS: usize = 10;
/// A fit where every outcome gets probability above 1 − this is separated.
const SEPARATION_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceObservation {
    pub reliable: ServiceOffer,
    pub regular: ServiceOffer,
    pub chose_regular: bool,
}

impl ChoiceObservation {
    fn regressors(&self) -> [f64; 3] {
        [
            1.0,
            self.regular.displayed_wait.ln() - self.reliable.displayed_wait.ln(),
            self.regular.relative_delay_term() - self.reliable.relative_delay_term(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics {
    pub loglik: f64,
    pub null_loglik: f64,
    pub bic: f64,
    pub mcfadden_r2: f64,
    pub n_obs: usize,
    pub k_params: usize,
}

impl FitStatistics {
    /// Derives BIC and McFadden R² from the two log-likelihoods.
    pub fn new(loglik: f64, null_loglik: f64, n_obs: usize, k_params: usize) -> Self {
        Self {
            loglik,
            null_loglik,
            bic: bic(loglik, k_params, n_obs),
            mcfadden_r2: 1.0 - loglik / null_loglik,
            n_obs,
            k_params,
        }
    }
}

/// Bayesian information criterion `−2·LL + k·ln n`.
pub fn bic(loglik: f64, k_params: usize, n_obs: usize) -> f64 {
    -2.0 * loglik + k_params as f64 * (n_obs as f64).ln()
}

/// Per-iteration record kept for diagnosing failed fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loglik: f64,
    pub grad_max_norm: f64,
    pub step_scale: f64,
    pub coefficients: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub coefficients: ChoiceCoefficients,
    pub standard_errors: [f64; 3],
    pub statistics: FitStatistics,
    pub iterations: Vec<IterationRecord>,
}

impl LogitFit {
    pub fn t_values(&self) -> [f64; 3] {
        let b = self.coefficients.as_array();
        std::array::from_fn(|j| b[j] / self.standard_errors[j])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    /// Stop once the Newton step predicts a log-likelihood gain `g·H⁻¹g / 2`
    /// below this. The gradient alone can stall above `grad_tolerance` on large
    /// samples, where the log-likelihood sum is only accurate to rounding.
    pub decrement_tolerance: f64,
    /// Any |coefficient| above this is treated as divergence (separation).
    pub divergence_bound: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            grad_tolerance: 1e-8,
            decrement_tolerance: 1e-10,
            divergence_bound: 1e3,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn dot(b: &[f64; 3], x: &[f64; 3]) -> f64 {
    b[0] * x[0] + b[1] * x[1] + b[2] * x[2]
}

pub fn log_likelihood(data: &[ChoiceObservation], coeffs: &ChoiceCoefficients) -> f64 {
    let b = coeffs.as_array();
    data.iter()
        .map(|obs| {
            let eta = dot(&b, &obs.regressors());
            if obs.chose_regular {
                -log1p_exp(-eta)
            } else {
                -log1p_exp(eta)
            }
        })
        .sum()
}

/// Analytical score vector `Σ (y − p)·x`.
pub fn gradient(data: &[ChoiceObservation], coeffs: &ChoiceCoefficients) -> [f64; 3] {
    let b = coeffs.as_array();
    let mut g = [0.0; 3];
    for obs in data {
        let x = obs.regressors();
        let resid = f64::from(u8::from(obs.chose_regular)) - logistic(dot(&b, &x));
        for j in 0..3 {
            g[j] += resid * x[j];
        }
    }
    g
}

/// Observed information `Σ p(1 − p)·x xᵀ` (the negated Hessian).
pub fn information(data: &[ChoiceObservation], coeffs: &ChoiceCoefficients) -> [[f64; 3]; 3] {
    let b = coeffs.as_array();
    let mut h = [[0.0; 3]; 3];
    for obs in data {
        let x = obs.regressors();
        let p = logistic(dot(&b, &x));
        let w = p * (1.0 - p);
        for r in 0..3 {
            for c in 0..3 {
                h[r][c] += w * x[r] * x[c];
            }
        }
    }
    h
}

/// Cholesky factor of a symmetric positive-definite 3×3 matrix.
fn cholesky(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[[f64; 3]; 3], rhs: &[f64; 3]) -> [f64; 3] {
    let mut y = [0.0; 3];
    for i in 0..3 {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (rhs[i] - s) / l[i][i];
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x
}

fn check_design(data: &[ChoiceObservation]) -> Result<()> {
    if data.len() < MIN_OBSERVATIONS {
        return Err(Error::domain(format!(
            "need at least {MIN_OBSERVATIONS} observations, got {}",
            data.len()
        )));
    }
    for (i, obs) in data.iter().enumerate() {
        obs.reliable
            .validate()
            .and_then(|_| obs.regular.validate())
            .map_err(|e| Error::domain(format!("observation {i}: {e}")))?;
    }
    let chosen = data.iter().filter(|o| o.chose_regular).count();
    if chosen == 0 || chosen == data.len() {
        return Err(Error::domain(
            "both choice outcomes must be present in the data",
        ));
    }
    let rows: Vec<[f64; 3]> = data.iter().map(ChoiceObservation::regressors).collect();
    for (j, name) in [(1, "log displayed wait"), (2, "exp relative delay")] {
        let first = rows[0][j];
        let scale = rows.iter().map(|r| r[j].abs()).fold(1.0, f64::max);
        if rows.iter().all(|r| (r[j] - first).abs() <= 1e-12 * scale) {
            return Err(Error::domain(format!(
                "regressor `{name}` is constant across observations"
            )));
        }
    }
    Ok(())
}

pub fn fit_binary_logit(data: &[ChoiceObservation]) -> Result<LogitFit> {
    fit_binary_logit_with(data, NewtonOptions::default())
}

pub fn fit_binary_logit_with(data: &[ChoiceObservation], opts: NewtonOptions) -> Result<LogitFit> {
    check_design(data)?;

    let mut beta = [0.0; 3];
    let mut ll = log_likelihood(data, &ChoiceCoefficients::from_array(beta));
    let mut trace = Vec::new();

    for iteration in 0..opts.max_iterations {
        let coeffs = ChoiceCoefficients::from_array(beta);
        let g = gradient(data, &coeffs);
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax < opts.grad_tolerance {
            return finish(data, coeffs, ll, trace);
        }

        let info = information(data, &coeffs);
        let Some(l) = cholesky(&info) else {
            return Err(Error::Estimation {
                message: "information matrix is not positive definite (separation?)".into(),
                trace,
            });
        };
        let step = cholesky_solve(&l, &g);
        if 0.5 * dot(&step, &g) < opts.decrement_tolerance {
            return finish(data, coeffs, ll, trace);
        }

        let mut scale = 1.0;
        let accepted = loop {
            let cand: [f64; 3] = std::array::from_fn(|j| beta[j] + scale * step[j]);
            let cand_ll = log_likelihood(data, &ChoiceCoefficients::from_array(cand));
            if cand_ll >= ll {
                break Some((cand, cand_ll));
            }
            scale *= 0.5;
            if scale < 1e-10 {
                break None;
            }
        };
        let Some((next, next_ll)) = accepted else {
            trace.push(IterationRecord {
                iteration,
                loglik: ll,
                grad_max_norm: gmax,
                step_scale: 0.0,
                coefficients: beta,
            });
            // No ascent along the Newton direction; accept if the gradient is
            // at rounding level for this sample size.
            if gmax < 1e-12 * data.len() as f64 {
                return finish(data, coeffs, ll, trace);
            }
            return Err(Error::Estimation {
                message: format!("line search failed with gradient max-norm {gmax:e}"),
                trace,
            });
        };
        beta = next;
        ll = next_ll;
        trace.push(IterationRecord {
            iteration,
            loglik: ll,
            grad_max_norm: gmax,
            step_scale: scale,
            coefficients: beta,
        });
        if beta.iter().any(|b| b.abs() > opts.divergence_bound) {
            return Err(Error::Estimation {
                message: format!("coefficients diverged ({beta:?}); data look separable"),
                trace,
            });
        }
    }
    Err(Error::Estimation {
        message: format!("no convergence within {} iterations", opts.max_iterations),
        trace,
    })
}

fn finish(
    data: &[ChoiceObservation],
    coeffs: ChoiceCoefficients,
    loglik: f64,
    trace: Vec<IterationRecord>,
) -> Result<LogitFit> {
    let b = coeffs.as_array();
    let worst_fit = data
        .iter()
        .map(|obs| {
            let p = logistic(dot(&b, &obs.regressors()));
            if obs.chose_regular {
                p
            } else {
                1.0 - p
            }
        })
        .fold(1.0, f64::min);
    if worst_fit > 1.0 - SEPARATION_MARGIN {
        return Err(Error::Estimation {
            message: format!(
                "every observation is predicted with probability > {}; data are separable",
                1.0 - SEPARATION_MARGIN
            ),
            trace,
        });
    }
    let info = information(data, &coeffs);
    let Some(l) = cholesky(&info) else {
        return Err(Error::Estimation {
            message: "information matrix is singular at the optimum".into(),
            trace,
        });
    };
    let standard_errors = std::array::from_fn(|j| {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        cholesky_solve(&l, &e)[j].sqrt()
    });
    let null_loglik = data.len() as f64 * 0.5_f64.ln();
    Ok(LogitFit {
        coefficients: coeffs,
        standard_errors,
        statistics: FitStatistics::new(loglik, null_loglik, data.len(), K_PARAMS),
        iterations: trace,
    })
}

/// Full-factorial attribute grid of the stated-preference design:
/// reliable waits {5..25}, regular waits {3..20}, regular delays {3..13}.
pub fn survey_design() -> Vec<(ServiceOffer, ServiceOffer)> {
    const RELIABLE: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];
    const REGULAR: [f64; 7] = [3.0, 5.0, 8.0, 10.0, 13.0, 15.0, 20.0];
    const DELAY: [f64; 5] = [3.0, 5.0, 8.0, 10.0, 13.0];
    let mut out = Vec::with_capacity(RELIABLE.len() * REGULAR.len() * DELAY.len());
    for &r in &RELIABLE {
        for &w in &REGULAR {
            for &d in &DELAY {
                out.push((
                    ServiceOffer {
                        displayed_wait: r,
                        avg_delay: 0.0,
                    },
                    ServiceOffer {
                        displayed_wait: w,
                        avg_delay: d,
                    },
                ));
            }
        }
    }
    out
}

/// Draws `n` synthetic choices, cycling through `design`.
pub fn simulate_choices(
    coeffs: &ChoiceCoefficients,
    design: &[(ServiceOffer, ServiceOffer)],
    n: usize,
    seed: u64,
) -> Result<Vec<ChoiceObservation>> {
    if design.is_empty() {
        return Err(Error::domain("design is empty"));
    }
    if n == 0 {
        return Err(Error::domain("number of observations must be >= 1"));
    }
    coeffs.validate()?;
    let probs = design
        .iter()
        .map(|(rel, reg)| prob_regular(coeffs, rel, reg))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let k = i % design.len();
            let u: f64 = rng.random();
            ChoiceObservation {
                reliable: design[k].0,
                regular: design[k].1,
                chose_regular: u < probs[k],
            }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    reliable_wait: f64,
    reliable_delay: f64,
    regular_wait: f64,
    regular_delay: f64,
    chose_regular: u8,
}

pub const DATASET_HEADER: [&str; 5] = [
    "reliable_wait",
    "reliable_delay",
    "regular_wait",
    "regular_delay",
    "chose_regular",
];

/// Reads a choice dataset. `source_name` is used in error messages.
pub fn read_dataset<R: Read>(reader: R, source_name: &str) -> Result<Vec<ChoiceObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(DATASET_HEADER.iter().copied()) {
        return Err(Error::Parse {
            source_name: source_name.into(),
            line: rdr.position().line(),
            message: format!(
                "expected header `{}`, found `{}`",
                DATASET_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(source_name, &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: ObservationRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            source_name: source_name.into(),
            line,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Parse {
            source_name: source_name.into(),
            line,
            message,
        };
        let chose_regular = match row.chose_regular {
            0 => false,
            1 => true,
            other => return Err(bad(format!("chose_regular must be 0 or 1, got {other}"))),
        };
        let reliable = ServiceOffer::new(row.reliable_wait, row.reliable_delay)
            .map_err(|e| bad(e.to_string()))?;
        let regular = ServiceOffer::new(row.regular_wait, row.regular_delay)
            .map_err(|e| bad(e.to_string()))?;
        out.push(ChoiceObservation {
            reliable,
            regular,
            chose_regular,
        });
    }
    Ok(out)
}

pub(crate) fn parse_error(source_name: &str, e: &csv::Error) -> Error {
    Error::Parse {
        source_name: source_name.into(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

pub fn write_dataset<W: Write>(writer: W, data: &[ChoiceObservation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for obs in data {
        wtr.serialize(ObservationRow {
            reliable_wait: obs.reliable.displayed_wait,
            reliable_delay: obs.reliable.avg_delay,
            regular_wait: obs.regular.displayed_wait,
            regular_delay: obs.regular.avg_delay,
            chose_regular: u8::from(obs.chose_regular),
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(())
}
