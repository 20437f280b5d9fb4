//! Displayed-wait optimization over a fixed wait-time pmf.
//!
//! For each origin node and each mean-wait bin `t`, a lognormal wait
//! distribution with mean `t` is formed and every candidate percentile is
//! tried as the displayed wait; the best acceptance probability `P*` is
//! kept. Node-level expectations weight `P*` by the pmf, and the fleet-level
//! rate weights nodes by their demand. The expected-wait baseline displays
//! the mean itself under the same σ draws.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{prob_regular, ChoiceCoefficients, ServiceOffer};
use crate::dist::LognormalDist;
use crate::error::{Error, Result};
use crate::sim::{validate_sigma_range, Step1Output, WaitTimePmf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Inclusive integer percentile bounds.
    #[serde(default = "default_percentile_range")]
    pub percentile_range: (u32, u32),
    #[serde(default = "default_step")]
    pub percentile_step: u32,
    #[serde(default = "default_sigma_range")]
    pub sigma_range: (f64, f64),
    #[serde(default = "default_reliable_wait")]
    pub reliable_wait: f64,
    /// Also try the percentile at which the mean sits, so the expected-wait
    /// display is always a candidate.
    #[serde(default = "default_true")]
    pub include_mean_percentile: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_percentile_range() -> (u32, u32) {
    (20, 80)
}
fn default_step() -> u32 {
    1
}
fn default_sigma_range() -> (f64, f64) {
    (0.1, 1.0)
}
fn default_reliable_wait() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            percentile_range: default_percentile_range(),
            percentile_step: default_step(),
            sigma_range: default_sigma_range(),
            reliable_wait: default_reliable_wait(),
            include_mean_percentile: true,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let (lo, hi) = self.percentile_range;
        if !(1 <= lo && lo < hi && hi <= 99) {
            return Err(Error::validation(
                format!("{prefix}percentile_range"),
                format!("must satisfy 1 <= low < high <= 99, got ({lo}, {hi})"),
            ));
        }
        if self.percentile_step < 1 {
            return Err(Error::validation(
                format!("{prefix}percentile_step"),
                "must be >= 1",
            ));
        }
        validate_sigma_range(self.sigma_range, &format!("{prefix}sigma_range"))?;
        if !(self.reliable_wait > 0.0 && self.reliable_wait.is_finite()) {
            return Err(Error::validation(
                format!("{prefix}reliable_wait"),
                "must be positive",
            ));
        }
        Ok(())
    }

    fn grid(&self) -> impl Iterator<Item = u32> {
        let (lo, hi) = self.percentile_range;
        (lo..=hi).step_by(self.percentile_step as usize)
    }
}

/// Acceptance probability when `displayed_wait` is shown for a vehicle whose
/// wait follows `dist`.
pub fn display_probability(
    dist: &LognormalDist,
    displayed_wait: f64,
    reliable_wait: f64,
    coeffs: &ChoiceCoefficients,
) -> Result<f64> {
    let delay = dist.expected_delay(displayed_wait)?;
    prob_regular(
        coeffs,
        &ServiceOffer::reliable(reliable_wait)?,
        &ServiceOffer::new(displayed_wait, delay)?,
    )
}

/// Best display for one wait distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayOptimum {
    /// Fraction in (0, 1).
    pub optimal_percentile: f64,
    pub optimal_display: f64,
    pub probability: f64,
}

/// Enumerates candidate percentiles and keeps the most accepted one.
/// Ties go to the lowest percentile.
pub fn optimal_display(
    dist: &LognormalDist,
    cfg: &OptimizerConfig,
    coeffs: &ChoiceCoefficients,
) -> Result<DisplayOptimum> {
    cfg.validate("")?;
    let mut candidates: Vec<(f64, Option<u32>)> = cfg
        .grid()
        .map(|p| (f64::from(p) / 100.0, Some(p)))
        .collect();
    if cfg.include_mean_percentile {
        let at = dist.mean_percentile();
        let pos = candidates.partition_point(|c| c.0 <= at);
        candidates.insert(pos, (at, None));
    }
    let mut best: Option<DisplayOptimum> = None;
    for (fraction, grid_point) in candidates {
        // The mean candidate displays the mean exactly rather than
        // quantile(Φ(σ/2)), which can differ in the last bit.
        let displayed = match grid_point {
            Some(_) => dist.quantile(fraction)?,
            None => dist.mean(),
        };
        let probability = display_probability(dist, displayed, cfg.reliable_wait, coeffs)?;
        if best.is_none_or(|b| probability > b.probability) {
            best = Some(DisplayOptimum {
                optimal_percentile: fraction,
                optimal_display: displayed,
                probability,
            });
        }
    }
    Ok(best.expect("candidate set is non-empty"))
}

/// Optimum for one (node, mean-wait bin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeOptimum {
    pub node: usize,
    pub bin: u32,
    pub mean_wait: f64,
    pub sigma: f64,
    pub mass: f64,
    pub optimal_percentile: f64,
    pub optimal_display: f64,
    pub probability: f64,
    /// Probability when the mean itself is displayed.
    pub baseline_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExpectation {
    pub node: usize,
    /// `Σ_t f(t)·P*(t)`.
    pub expected_probability: f64,
    /// Same sum with the mean displayed.
    pub baseline_probability: f64,
    pub demand_weight: f64,
    /// `Σ_t f(t)·p*(t)`, as a fraction.
    pub average_optimal_percentile: f64,
    pub bins: Vec<NodeOptimum>,
}

/// σ for a (node, bin) cell, drawn from a stream keyed by (seed, node, bin).
///
/// Only the uniform draw depends on the key, so different σ ranges map the
/// same cell to the same relative position in their range.
pub fn cell_sigma(seed: u64, node: usize, bin: u32, range: (f64, f64)) -> f64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(node as u64).to_le_bytes());
    key[16..24].copy_from_slice(&u64::from(bin).to_le_bytes());
    key[24..].copy_from_slice(b"cellsig\0");
    let u: f64 = ChaCha8Rng::from_seed(key).random();
    range.0 + u * (range.1 - range.0)
}

pub fn expected_prob_node(
    pmf: &WaitTimePmf,
    cfg: &OptimizerConfig,
    coeffs: &ChoiceCoefficients,
) -> Result<NodeExpectation> {
    cfg.validate("")?;
    pmf.validate()?;
    let mut bins = Vec::with_capacity(pmf.entries.len());
    let (mut expected, mut baseline, mut avg_pct) = (0.0, 0.0, 0.0);
    for entry in &pmf.entries {
        let mean_wait = pmf.midpoint(entry.bin);
        let sigma = cell_sigma(cfg.seed, pmf.origin, entry.bin, cfg.sigma_range);
        let dist = LognormalDist::from_mean(mean_wait, sigma)?;
        let best = optimal_display(&dist, cfg, coeffs)?;
        let base = display_probability(&dist, dist.mean(), cfg.reliable_wait, coeffs)?;
        expected += entry.mass * best.probability;
        baseline += entry.mass * base;
        avg_pct += entry.mass * best.optimal_percentile;
        bins.push(NodeOptimum {
            node: pmf.origin,
            bin: entry.bin,
            mean_wait,
            sigma,
            mass: entry.mass,
            optimal_percentile: best.optimal_percentile,
            optimal_display: best.optimal_display,
            probability: best.probability,
            baseline_probability: base,
        });
    }
    Ok(NodeExpectation {
        node: pmf.origin,
        expected_probability: expected,
        baseline_probability: baseline,
        demand_weight: pmf.served as f64,
        average_optimal_percentile: avg_pct,
        bins,
    })
}

/// Fleet-level comparison of the optimized display against the mean display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub sigma_range: (f64, f64),
    pub baseline_rate_ewt: f64,
    pub optimized_rate: f64,
    pub gain: f64,
    /// Demand-weighted, as a fraction.
    pub mean_optimal_percentile: f64,
    pub unweighted_mean_optimal_percentile: f64,
    pub total_demand: f64,
    pub config: OptimizerConfig,
    pub nodes: Vec<NodeExpectation>,
}

/// Demand-weighted acceptance rates. Node weights are total requests at the
/// node; nodes that never served a trip have no pmf and are left out.
pub fn acceptance_rates(
    step1: &Step1Output,
    cfg: &OptimizerConfig,
    coeffs: &ChoiceCoefficients,
) -> Result<AcceptanceReport> {
    cfg.validate("optimizer.")?;
    if step1.pmfs.is_empty() {
        return Err(Error::domain(
            "simulation output contains no wait-time pmfs",
        ));
    }
    let mut nodes = Vec::with_capacity(step1.pmfs.len());
    for pmf in &step1.pmfs {
        let mut node = expected_prob_node(pmf, cfg, coeffs)?;
        node.demand_weight = step1
            .node_counts
            .get(&pmf.origin)
            .map_or(pmf.served, |c| c.requests) as f64;
        nodes.push(node);
    }
    let total_demand: f64 = nodes.iter().map(|n| n.demand_weight).sum();
    if !(total_demand > 0.0) {
        return Err(Error::domain("total demand over pmf nodes is zero"));
    }
    let weighted = |f: fn(&NodeExpectation) -> f64| {
        nodes.iter().map(|n| n.demand_weight * f(n)).sum::<f64>() / total_demand
    };
    let optimized_rate = weighted(|n| n.expected_probability);
    let baseline_rate_ewt = weighted(|n| n.baseline_probability);
    let mean_optimal_percentile = weighted(|n| n.average_optimal_percentile);
    let unweighted_mean_optimal_percentile = nodes
        .iter()
        .map(|n| n.average_optimal_percentile)
        .sum::<f64>()
        / nodes.len() as f64;
    log::info!(
        "sigma {:?}: ewt {:.4} -> optimal {:.4}; mean optimal percentile {:.4} (unweighted {:.4})",
        cfg.sigma_range,
        baseline_rate_ewt,
        optimized_rate,
        mean_optimal_percentile,
        unweighted_mean_optimal_percentile
    );
    Ok(AcceptanceReport {
        sigma_range: cfg.sigma_range,
        baseline_rate_ewt,
        optimized_rate,
        gain: optimized_rate - baseline_rate_ewt,
        mean_optimal_percentile,
        unweighted_mean_optimal_percentile,
        total_demand,
        config: cfg.clone(),
        nodes,
    })
}

pub const REPORT_CSV_HEADER: [&str; 6] = [
    "sigma_low",
    "sigma_high",
    "rate_ewt",
    "rate_optimal",
    "gain",
    "mean_optimal_percentile",
];

/// One row per report, in the order given.
pub fn write_report_csv<W: Write>(writer: W, reports: &[AcceptanceReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        wtr.write_record([
            r.sigma_range.0.to_string(),
            r.sigma_range.1.to_string(),
            r.baseline_rate_ewt.to_string(),
            r.optimized_rate.to_string(),
            r.gain.to_string(),
            r.mean_optimal_percentile.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}
