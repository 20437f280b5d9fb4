//! Binary logit acceptance model and the two survey models on pick-up delays.
//!
//! A passenger compares a *reliable* service, which always arrives at its
//! displayed wait, with the *regular* MoD service, which shows a displayed
//! wait `d` but is late by `delay` minutes on average. Utilities are
//!
//! ```text
//! V = [regular]·asc + β_wait·ln(d) + β_rel·exp(delay / d)
//! ```
//!
//! and the acceptance probability is the binary logit of the regular service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::LognormalDist;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceCoefficients {
    /// Alternative-specific constant on the regular service.
    pub asc_regular: f64,
    /// Coefficient on ln(displayed wait in minutes).
    pub beta_log_wait: f64,
    /// Coefficient on exp(average delay / displayed wait).
    pub beta_exp_reldelay: f64,
}

impl Default for ChoiceCoefficients {
    fn default() -> Self {
        Self {
            asc_regular: -1.55,
            beta_log_wait: -3.88,
            beta_exp_reldelay: -0.78,
        }
    }
}

impl ChoiceCoefficients {
    pub fn new(asc_regular: f64, beta_log_wait: f64, beta_exp_reldelay: f64) -> Result<Self> {
        let c = Self {
            asc_regular,
            beta_log_wait,
            beta_exp_reldelay,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "choice coefficients must be finite: {self:?}"
            )))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.asc_regular, self.beta_log_wait, self.beta_exp_reldelay]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self {
            asc_regular: v[0],
            beta_log_wait: v[1],
            beta_exp_reldelay: v[2],
        }
    }
}

/// The two attributes an offer is judged on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceOffer {
    pub displayed_wait: f64,
    pub avg_delay: f64,
}

impl ServiceOffer {
    pub fn new(displayed_wait: f64, avg_delay: f64) -> Result<Self> {
        let offer = Self {
            displayed_wait,
            avg_delay,
        };
        offer.validate()?;
        Ok(offer)
    }

    /// An offer that is never late.
    pub fn reliable(displayed_wait: f64) -> Result<Self> {
        Self::new(displayed_wait, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.displayed_wait > 0.0 && self.displayed_wait.is_finite()) {
            return Err(Error::domain(format!(
                "displayed wait must be positive, got {}",
                self.displayed_wait
            )));
        }
        if !(self.avg_delay >= 0.0 && self.avg_delay.is_finite()) {
            return Err(Error::domain(format!(
                "average delay must be >= 0, got {}",
                self.avg_delay
            )));
        }
        Ok(())
    }

    /// The reliability regressor `exp(avg_delay / displayed_wait)`.
    pub fn relative_delay_term(&self) -> f64 {
        (self.avg_delay / self.displayed_wait).exp()
    }
}

pub fn utility(coeffs: &ChoiceCoefficients, offer: &ServiceOffer, is_regular: bool) -> Result<f64> {
    offer.validate()?;
    let asc = if is_regular { coeffs.asc_regular } else { 0.0 };
    // 0·∞ would otherwise poison the sum when the delay ratio overflows.
    let reliability = if coeffs.beta_exp_reldelay == 0.0 {
        0.0
    } else {
        coeffs.beta_exp_reldelay * offer.relative_delay_term()
    };
    Ok(asc + coeffs.beta_log_wait * offer.displayed_wait.ln() + reliability)
}

/// Numerically stable `1 / (1 + e^{−x})`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that the regular service is chosen over the reliable one.
pub fn prob_regular(
    coeffs: &ChoiceCoefficients,
    reliable: &ServiceOffer,
    regular: &ServiceOffer,
) -> Result<f64> {
    if reliable.avg_delay != 0.0 {
        return Err(Error::domain(format!(
            "reliable offer must have zero delay, got {}",
            reliable.avg_delay
        )));
    }
    let v_rel = utility(coeffs, reliable, false)?;
    let v_reg = utility(coeffs, regular, true)?;
    logit_probability(v_reg, v_rel)
}

/// `e^{a} / (e^{a} + e^{b})`, shifting the larger utility to zero.
pub fn logit_probability(a: f64, b: f64) -> Result<f64> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::domain("utility evaluated to NaN"));
    }
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return Err(Error::domain("both utilities are -infinity"));
    }
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    Ok(ea / (ea + eb))
}

/// One point of a probability-versus-percentile curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub percentile: f64,
    pub displayed_wait: f64,
    pub avg_delay: f64,
    pub probability: f64,
}

/// Acceptance probability when the regular service displays each percentile
/// of its wait-time distribution, against a reliable service at `reliable_wait`.
pub fn prob_curve(
    coeffs: &ChoiceCoefficients,
    reliable_wait: f64,
    dist: &LognormalDist,
    percentiles: &[f64],
) -> Result<Vec<CurvePoint>> {
    if percentiles.is_empty() {
        return Err(Error::domain("percentile list is empty"));
    }
    if percentiles.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("percentiles must be strictly increasing"));
    }
    let reliable = ServiceOffer::reliable(reliable_wait)?;
    percentiles
        .iter()
        .map(|&p| {
            let displayed_wait = dist.quantile(p)?;
            let avg_delay = dist.expected_delay(displayed_wait)?;
            let probability = prob_regular(
                coeffs,
                &reliable,
                &ServiceOffer::new(displayed_wait, avg_delay)?,
            )?;
            Ok(CurvePoint {
                percentile: p,
                displayed_wait,
                avg_delay,
                probability,
            })
        })
        .collect()
}

/// Binary logit on switching provider after a late pick-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchModel {
    pub intercept: f64,
    pub beta_log_pctdiff: f64,
}

impl Default for SwitchModel {
    fn default() -> Self {
        Self {
            intercept: 0.43,
            beta_log_pctdiff: 0.31,
        }
    }
}

/// Probability of switching, given `pct_diff` = actual delay / displayed wait.
pub fn switch_probability(model: &SwitchModel, pct_diff: f64) -> Result<f64> {
    if !(pct_diff > 0.0 && pct_diff.is_finite()) {
        return Err(Error::domain(format!(
            "percentage difference must be positive, got {pct_diff}"
        )));
    }
    Ok(logistic(
        model.intercept + model.beta_log_pctdiff * pct_diff.ln(),
    ))
}

/// Ordered answer to "is X responsible for the delay?".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlameProbabilities {
    pub yes: f64,
    pub maybe: f64,
    pub no: f64,
}

impl BlameProbabilities {
    pub fn sum(&self) -> f64 {
        self.yes + self.maybe + self.no
    }
}

/// Cumulative-logit model with categories ordered yes < maybe < no.
///
/// `P(Y ≤ k) = logistic(c_k − η)` with `η = Σ β_j x_j`. Covariates are taken
/// already transformed (e.g. a log-income value), with no unit assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedBlameModel {
    pub coefficients: BTreeMap<String, f64>,
    pub cutoffs: (f64, f64),
}

impl OrderedBlameModel {
    pub fn new(coefficients: BTreeMap<String, f64>, cutoffs: (f64, f64)) -> Result<Self> {
        if !(cutoffs.0 < cutoffs.1) {
            return Err(Error::domain(format!(
                "cutoffs must be increasing, got {cutoffs:?}"
            )));
        }
        if coefficients.values().any(|b| !b.is_finite()) {
            return Err(Error::domain("ordered-logit coefficients must be finite"));
        }
        Ok(Self {
            coefficients,
            cutoffs,
        })
    }

    /// Survey model for "the driver is responsible".
    pub fn driver_responsible() -> Self {
        Self::from_pairs(
            &[
                ("percentage_difference", -0.73),
                ("log_household_income", -0.19),
                ("log_age", 0.92),
                ("bachelor_degree", -0.33),
            ],
            (0.38, 2.63),
        )
    }

    /// Survey model for "the MoD service is responsible".
    pub fn service_responsible() -> Self {
        Self::from_pairs(
            &[
                ("percentage_difference", -0.44),
                ("log_household_income", -0.12),
                ("bachelor_degree", -0.27),
                ("male", -0.21),
            ],
            (-2.88, -0.88),
        )
    }

    fn from_pairs(pairs: &[(&str, f64)], cutoffs: (f64, f64)) -> Self {
        let coefficients = pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect();
        Self {
            coefficients,
            cutoffs,
        }
    }

    pub fn linear_predictor(&self, covariates: &BTreeMap<String, f64>) -> Result<f64> {
        if let Some(extra) = covariates
            .keys()
            .find(|k| !self.coefficients.contains_key(*k))
        {
            return Err(Error::domain(format!("unknown covariate `{extra}`")));
        }
        self.coefficients
            .iter()
            .map(|(name, beta)| match covariates.get(name) {
                Some(x) if x.is_finite() => Ok(beta * x),
                Some(x) => Err(Error::domain(format!(
                    "covariate `{name}` is not finite: {x}"
                ))),
                None => Err(Error::domain(format!("missing covariate `{name}`"))),
            })
            .sum()
    }

    /// Category probabilities at a given linear predictor.
    pub fn probabilities_at(&self, eta: f64) -> BlameProbabilities {
        let (c1, c2) = self.cutoffs;
        let yes = logistic(c1 - eta);
        let at_most_maybe = logistic(c2 - eta);
        let no = logistic(eta - c2);
        BlameProbabilities {
            yes,
            maybe: (at_most_maybe - yes).max(0.0),
            no,
        }
    }
}

pub fn blame_probabilities(
    model: &OrderedBlameModel,
    covariates: &BTreeMap<String, f64>,
) -> Result<BlameProbabilities> {
    let eta = model.linear_predictor(covariates)?;
    Ok(model.probabilities_at(eta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs() -> ChoiceCoefficients {
        ChoiceCoefficients::default()
    }

    #[test]
    fn utility_examples() {
        let c = coeffs();
        let reliable = ServiceOffer::new(10.0, 0.0).unwrap();
        let v1 = utility(&c, &reliable, false).unwrap();
        assert!((v1 - (-3.88 * 10f64.ln() - 0.78)).abs() < 1e-12);
        assert!((v1 + 9.714).abs() < 1e-3);

        let regular = ServiceOffer::new(8.0, 5.0).unwrap();
        let v2 = utility(&c, &regular, true).unwrap();
        assert!((v2 + 11.075).abs() < 1e-3);

        let unit = ServiceOffer::new(1.0, 0.0).unwrap();
        assert!((utility(&c, &unit, true).unwrap() + 2.33).abs() < 1e-12);
    }

    #[test]
    fn offers_are_validated() {
        assert!(ServiceOffer::new(0.0, 0.0).is_err());
        assert!(ServiceOffer::new(-1.0, 0.0).is_err());
        assert!(ServiceOffer::new(1.0, -0.5).is_err());
        let bad = ServiceOffer {
            displayed_wait: 0.0,
            avg_delay: 0.0,
        };
        assert!(utility(&coeffs(), &bad, true).is_err());
    }

    #[test]
    fn prob_regular_examples() {
        let c = coeffs();
        let p = prob_regular(
            &c,
            &ServiceOffer::reliable(10.0).unwrap(),
            &ServiceOffer::new(8.0, 5.0).unwrap(),
        )
        .unwrap();
        assert!((p - 0.204).abs() < 1e-3, "{p}");

        let same = ServiceOffer::reliable(6.0).unwrap();
        let p = prob_regular(&c, &same, &same).unwrap();
        assert!((p - 1.0 / (1.0 + 1.55f64.exp())).abs() < 1e-15);

        let sym = ChoiceCoefficients {
            asc_regular: 0.0,
            ..c
        };
        assert_eq!(prob_regular(&sym, &same, &same).unwrap(), 0.5);
    }

    #[test]
    fn prob_regular_rejects_late_reliable_offer() {
        let late = ServiceOffer::new(5.0, 1.0).unwrap();
        assert!(prob_regular(&coeffs(), &late, &late).is_err());
    }

    #[test]
    fn prob_regular_survives_extreme_utilities() {
        let huge = ChoiceCoefficients::new(800.0, -3.88, -0.78).unwrap();
        let offer = ServiceOffer::reliable(2.0).unwrap();
        assert_eq!(prob_regular(&huge, &offer, &offer).unwrap(), 1.0);
        // delay/d so large that exp overflows to infinity
        let hopeless = ServiceOffer::new(0.001, 5.0).unwrap();
        assert_eq!(prob_regular(&coeffs(), &offer, &hopeless).unwrap(), 0.0);
    }

    #[test]
    fn prob_monotone_in_waits() {
        let c = coeffs();
        let rel = ServiceOffer::reliable(5.0).unwrap();
        let mut last = 1.0;
        for k in 1..50 {
            let p =
                prob_regular(&c, &rel, &ServiceOffer::reliable(k as f64 * 0.5).unwrap()).unwrap();
            assert!(p < last);
            last = p;
        }
        let reg = ServiceOffer::reliable(5.0).unwrap();
        let mut last = 0.0;
        for k in 1..50 {
            let p =
                prob_regular(&c, &ServiceOffer::reliable(k as f64 * 0.5).unwrap(), &reg).unwrap();
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn prob_curve_rejects_bad_grids() {
        let d = LognormalDist::from_mean(1.5, 0.7).unwrap();
        assert!(prob_curve(&coeffs(), 2.7, &d, &[]).is_err());
        assert!(prob_curve(&coeffs(), 2.7, &d, &[0.5, 0.5]).is_err());
        assert!(prob_curve(&coeffs(), 2.7, &d, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn prob_curve_collapses_for_tiny_sigma() {
        let c = coeffs();
        let d = LognormalDist::from_mean(1.5, 1e-9).unwrap();
        let row = prob_curve(&c, 2.7, &d, &[0.5]).unwrap()[0];
        assert!((row.displayed_wait - 1.5).abs() < 1e-8);
        assert!(row.avg_delay < 1e-8);
        let direct = prob_regular(
            &c,
            &ServiceOffer::reliable(2.7).unwrap(),
            &ServiceOffer::reliable(1.5).unwrap(),
        )
        .unwrap();
        assert!((row.probability - direct).abs() < 1e-8);
    }

    #[test]
    fn switch_examples() {
        let m = SwitchModel::default();
        assert!((switch_probability(&m, 1.0).unwrap() - 0.606).abs() < 1e-3);
        let root = (-0.43f64 / 0.31).exp();
        assert!((switch_probability(&m, root).unwrap() - 0.5).abs() < 1e-12);
        let flat = SwitchModel {
            beta_log_pctdiff: 0.0,
            ..m
        };
        for x in [0.1, 1.0, 7.0] {
            assert_eq!(switch_probability(&flat, x).unwrap(), logistic(0.43));
        }
        assert!(switch_probability(&m, 0.0).is_err());
        assert!(switch_probability(&m, -1.0).is_err());
    }

    #[test]
    fn blame_examples() {
        let m2 = OrderedBlameModel::driver_responsible();
        let p = m2.probabilities_at(0.0);
        assert!((p.yes - 0.594).abs() < 1e-3);
        assert!((p.no - 0.067).abs() < 1e-3);
        let inf = m2.probabilities_at(800.0);
        assert_eq!((inf.yes, inf.maybe, inf.no), (0.0, 0.0, 1.0));
    }

    #[test]
    fn blame_covariates_must_match() {
        let m3 = OrderedBlameModel::service_responsible();
        let mut cov: BTreeMap<String, f64> =
            m3.coefficients.keys().map(|k| (k.clone(), 1.0)).collect();
        let p = blame_probabilities(&m3, &cov).unwrap();
        let eta: f64 = m3.coefficients.values().sum();
        assert_eq!(p, m3.probabilities_at(eta));

        cov.insert("log_age".into(), 3.5);
        assert!(blame_probabilities(&m3, &cov).is_err());
        cov.remove("log_age");
        cov.remove("male");
        assert!(blame_probabilities(&m3, &cov).is_err());
    }

    #[test]
    fn blame_rejects_unordered_cutoffs() {
        assert!(OrderedBlameModel::new(BTreeMap::new(), (1.0, 1.0)).is_err());
        assert!(OrderedBlameModel::new(BTreeMap::new(), (1.0, 0.0)).is_err());
    }
}
