//! Event-driven single-occupancy fleet simulation (the pmf-collection step).
//!
//! Requests are processed in time order. Each one is matched to the idle
//! vehicle with the smallest shortest-path mean time to its origin; that time
//! is the request's *mean wait* `t`. The passenger sees `t` as the displayed
//! wait with no expected delay and accepts with the binary-logit probability.
//! Accepted trips occupy the vehicle for a lognormal realized pick-up plus the
//! mean trip time, and contribute `t` to their origin node's wait-time pmf.

pub mod demand;

use std::collections::BTreeMap;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{prob_regular, ChoiceCoefficients, ServiceOffer};
use crate::dist::LognormalDist;
use crate::error::{Error, Result};
use crate::network::Network;

pub use demand::TripRequest;

/// Displayed waits below this are shown as this (ln t diverges at 0).
pub const DISPLAY_FLOOR: f64 = 0.1;

const PMF_TOLERANCE: f64 = 1e-9;

// Independent ChaCha streams under one seed.
const STREAM_PLACEMENT: u64 = 0;
const STREAM_ACCEPT: u64 = 1;
const STREAM_SIGMA: u64 = 2;
const STREAM_REALIZED: u64 = 3;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub fleet_size: usize,
    #[serde(default = "default_reliable_wait")]
    pub reliable_wait: f64,
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    #[serde(default = "default_sigma_range")]
    pub sigma_range: (f64, f64),
    #[serde(default = "default_max_dispatch")]
    pub max_dispatch_mean: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_reliable_wait() -> f64 {
    2.0
}
fn default_bin_width() -> f64 {
    0.1
}
fn default_sigma_range() -> (f64, f64) {
    (0.1, 1.0)
}
fn default_max_dispatch() -> f64 {
    30.0
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fleet_size: 40,
            reliable_wait: default_reliable_wait(),
            bin_width: default_bin_width(),
            sigma_range: default_sigma_range(),
            max_dispatch_mean: default_max_dispatch(),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Checks invariants; errors name the offending field under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}{name}");
        if self.fleet_size < 1 {
            return Err(Error::validation(f("fleet_size"), "must be >= 1"));
        }
        if !(self.reliable_wait > 0.0 && self.reliable_wait.is_finite()) {
            return Err(Error::validation(f("reliable_wait"), "must be positive"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::validation(f("bin_width"), "must be positive"));
        }
        validate_sigma_range(self.sigma_range, &f("sigma_range"))?;
        if !(self.max_dispatch_mean > 0.0) {
            return Err(Error::validation(
                f("max_dispatch_mean"),
                "must be positive",
            ));
        }
        Ok(())
    }
}

pub(crate) fn validate_sigma_range(range: (f64, f64), field: &str) -> Result<()> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::validation(
            field,
            format!("must satisfy 0 < low <= high, got ({lo}, {hi})"),
        ));
    }
    Ok(())
}

pub(crate) fn draw_sigma<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    range.0 + u * (range.1 - range.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: usize,
    pub current_node: usize,
    /// Time the vehicle becomes idle at `current_node`.
    pub available_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub vehicles: Vec<Vehicle>,
}

impl Fleet {
    /// Places `size` idle vehicles uniformly over `nodes`.
    pub fn random<R: Rng>(size: usize, nodes: &[usize], rng: &mut R) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::domain("no nodes to place vehicles on"));
        }
        let vehicles = (0..size)
            .map(|id| Vehicle {
                id,
                current_node: nodes[rng.random_range(0..nodes.len())],
                available_at: 0.0,
            })
            .collect();
        Ok(Self { vehicles })
    }

    pub fn at(positions: &[usize]) -> Self {
        Self {
            vehicles: positions
                .iter()
                .enumerate()
                .map(|(id, &current_node)| Vehicle {
                    id,
                    current_node,
                    available_at: 0.0,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub vehicle: usize,
    pub mean_wait: f64,
}

/// Closest idle vehicle to the request origin, by shortest-path mean time.
///
/// Ties go to the lowest vehicle id. Returns `None` when nothing is idle, no
/// idle vehicle can reach the origin, or the best time exceeds
/// `max_dispatch_mean`.
pub fn assign_vehicle(
    fleet: &Fleet,
    request: &TripRequest,
    net: &Network,
    max_dispatch_mean: f64,
) -> Result<Option<Assignment>> {
    let to_origin = net.times_to(request.origin)?;
    let mut best: Option<Assignment> = None;
    let mut any_idle = false;
    for v in &fleet.vehicles {
        if v.available_at > request.request_time {
            continue;
        }
        any_idle = true;
        let t = to_origin[v.current_node];
        if !t.is_finite() {
            continue;
        }
        if best.is_none_or(|b| t < b.mean_wait) {
            best = Some(Assignment {
                vehicle: v.id,
                mean_wait: t,
            });
        }
    }
    match best {
        None if any_idle => {
            debug!(
                "request {}: origin {} unreachable from every idle vehicle",
                request.id, request.origin
            );
            Ok(None)
        }
        Some(a) if a.mean_wait > max_dispatch_mean => Ok(None),
        other => Ok(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
    Unassignable,
}

/// What happened to one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub request_id: u64,
    pub request_time: f64,
    pub origin: usize,
    pub destination: usize,
    pub outcome: Outcome,
    pub vehicle: Option<usize>,
    pub vehicle_node: Option<usize>,
    pub mean_wait: Option<f64>,
    pub probability: Option<f64>,
    pub draw: f64,
    pub sigma: f64,
    pub realized_wait: Option<f64>,
    pub available_at: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub requests: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unassignable: usize,
}

impl NodeCounts {
    fn record(&mut self, outcome: Outcome) {
        self.requests += 1;
        match outcome {
            Outcome::Accepted => self.accepted += 1,
            Outcome::Rejected => self.rejected += 1,
            Outcome::Unassignable => self.unassignable += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmfEntry {
    pub bin: u32,
    pub mass: f64,
}

/// Empirical distribution of mean waits at one origin node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitTimePmf {
    pub origin: usize,
    pub bin_width: f64,
    /// Bins may repeat; masses are summed per evaluation, not merged.
    pub entries: Vec<PmfEntry>,
    pub served: usize,
}

impl WaitTimePmf {
    pub fn bin_of(t: f64, bin_width: f64) -> u32 {
        // nudge so that e.g. 0.3 / 0.1 lands in bin 3, not 2
        (t / bin_width + 1e-9).floor() as u32
    }

    pub fn midpoint(&self, bin: u32) -> f64 {
        (f64::from(bin) + 0.5) * self.bin_width
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::domain(format!(
                "pmf at node {} is empty",
                self.origin
            )));
        }
        if self.entries.iter().any(|e| !(e.mass >= 0.0)) {
            return Err(Error::domain(format!(
                "pmf at node {} has a negative mass",
                self.origin
            )));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::domain(format!(
                "pmf at node {} sums to {total}, not 1",
                self.origin
            )));
        }
        Ok(())
    }
}

/// Bins each node's served mean waits into an empirical pmf.
/// Nodes with no waits produce no pmf.
pub fn record_pmf(
    served_waits: &BTreeMap<usize, Vec<f64>>,
    bin_width: f64,
) -> Result<Vec<WaitTimePmf>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::domain(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let mut out = Vec::new();
    for (&origin, waits) in served_waits {
        if waits.is_empty() {
            continue;
        }
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &t in waits {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::domain(format!(
                    "invalid mean wait {t} at node {origin}"
                )));
            }
            *counts.entry(WaitTimePmf::bin_of(t, bin_width)).or_default() += 1;
        }
        let n = waits.len() as f64;
        out.push(WaitTimePmf {
            origin,
            bin_width,
            entries: counts
                .into_iter()
                .map(|(bin, c)| PmfEntry {
                    bin,
                    mass: c as f64 / n,
                })
                .collect(),
            served: waits.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Output {
    pub config: SimConfig,
    pub seed: u64,
    pub total_requests: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unassignable: usize,
    /// accepted / total_requests
    pub acceptance_share: f64,
    /// Sum of acceptance probabilities over assigned requests.
    pub expected_accepted: f64,
    pub node_counts: BTreeMap<usize, NodeCounts>,
    pub pmfs: Vec<WaitTimePmf>,
    pub events: Vec<EventRecord>,
}

impl Step1Output {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn pmf(&self, node: usize) -> Option<&WaitTimePmf> {
        self.pmfs.iter().find(|p| p.origin == node)
    }
}

/// Runs the fleet over `demand` with vehicles placed from the config seed.
pub fn run_step1(
    net: &Network,
    demand: &[TripRequest],
    coeffs: &ChoiceCoefficients,
    cfg: &SimConfig,
) -> Result<Step1Output> {
    cfg.validate("sim.")?;
    let nodes = net.largest_component();
    let fleet = Fleet::random(
        cfg.fleet_size,
        &nodes,
        &mut stream(cfg.seed, STREAM_PLACEMENT),
    )?;
    run_step1_with_fleet(net, demand, coeffs, cfg, fleet)
}

/// Same as [`run_step1`] but with caller-supplied initial vehicle positions.
pub fn run_step1_with_fleet(
    net: &Network,
    demand: &[TripRequest],
    coeffs: &ChoiceCoefficients,
    cfg: &SimConfig,
    mut fleet: Fleet,
) -> Result<Step1Output> {
    cfg.validate("sim.")?;
    coeffs.validate()?;
    for (i, r) in demand.iter().enumerate() {
        r.validate(net.node_count())?;
        if i > 0 && r.request_time < demand[i - 1].request_time {
            return Err(Error::domain(format!(
                "demand is not sorted by time at request {} ({} < {})",
                r.id,
                r.request_time,
                demand[i - 1].request_time
            )));
        }
    }
    let reliable = ServiceOffer::reliable(cfg.reliable_wait)?;

    let mut accept_rng = stream(cfg.seed, STREAM_ACCEPT);
    let mut sigma_rng = stream(cfg.seed, STREAM_SIGMA);
    let mut realized_rng = stream(cfg.seed, STREAM_REALIZED);

    let mut events = Vec::with_capacity(demand.len());
    let mut node_counts: BTreeMap<usize, NodeCounts> = BTreeMap::new();
    let mut served: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut expected_accepted = 0.0;

    for req in demand {
        // One draw from each stream per request keeps streams aligned
        // regardless of outcomes.
        let sigma = draw_sigma(&mut sigma_rng, cfg.sigma_range);
        let u: f64 = accept_rng.random();

        let trip = match net.shortest_path_mean(req.origin, req.destination) {
            Ok((time, _)) => Some(time),
            Err(Error::Unreachable { .. }) => {
                warn!(
                    "request {}: destination {} unreachable from origin {}",
                    req.id, req.destination, req.origin
                );
                None
            }
            Err(e) => return Err(e),
        };
        let assignment = match trip {
            Some(_) => assign_vehicle(&fleet, req, net, cfg.max_dispatch_mean)?,
            None => None,
        };

        let mut event = EventRecord {
            request_id: req.id,
            request_time: req.request_time,
            origin: req.origin,
            destination: req.destination,
            outcome: Outcome::Unassignable,
            vehicle: None,
            vehicle_node: None,
            mean_wait: None,
            probability: None,
            draw: u,
            sigma,
            realized_wait: None,
            available_at: None,
        };

        if let (Some(a), Some(trip_time)) = (assignment, trip) {
            let t = a.mean_wait;
            let regular = ServiceOffer::reliable(t.max(DISPLAY_FLOOR))?;
            let p = prob_regular(coeffs, &reliable, &regular)?;
            expected_accepted += p;
            let vehicle = &mut fleet.vehicles[a.vehicle];
            event.vehicle = Some(a.vehicle);
            event.vehicle_node = Some(vehicle.current_node);
            event.mean_wait = Some(t);
            event.probability = Some(p);
            if u < p {
                let realized = if t > 0.0 {
                    LognormalDist::from_mean(t, sigma)?.sample(&mut realized_rng)
                } else {
                    0.0
                };
                vehicle.available_at = req.request_time + realized + trip_time;
                vehicle.current_node = req.destination;
                event.outcome = Outcome::Accepted;
                event.realized_wait = Some(realized);
                event.available_at = Some(vehicle.available_at);
                served.entry(req.origin).or_default().push(t);
            } else {
                event.outcome = Outcome::Rejected;
            }
        }
        node_counts
            .entry(req.origin)
            .or_default()
            .record(event.outcome);
        events.push(event);
    }

    let count = |o: Outcome| events.iter().filter(|e| e.outcome == o).count();
    let accepted = count(Outcome::Accepted);
    let total = events.len();
    Ok(Step1Output {
        config: cfg.clone(),
        seed: cfg.seed,
        total_requests: total,
        accepted,
        rejected: count(Outcome::Rejected),
        unassignable: count(Outcome::Unassignable),
        acceptance_share: if total == 0 {
            0.0
        } else {
            accepted as f64 / total as f64
        },
        expected_accepted,
        node_counts,
        pmfs: record_pmf(&served, cfg.bin_width)?,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{grid_network, Edge};

    fn line(n: usize, time: f64) -> Network {
        let mut edges = Vec::new();
        for i in 0..n - 1 {
            edges.push(Edge {
                from: i,
                to: i + 1,
                mean_minutes: time,
            });
            edges.push(Edge {
                from: i + 1,
                to: i,
                mean_minutes: time,
            });
        }
        Network::from_edges(n, edges).unwrap()
    }

    fn req(id: u64, origin: usize, destination: usize, request_time: f64) -> TripRequest {
        TripRequest {
            id,
            origin,
            destination,
            request_time,
        }
    }

    #[test]
    fn co_located_vehicle_has_zero_wait() {
        let net = line(4, 1.0);
        let fleet = Fleet::at(&[2]);
        let a = assign_vehicle(&fleet, &req(0, 2, 0, 0.0), &net, 30.0)
            .unwrap()
            .unwrap();
        assert_eq!(
            a,
            Assignment {
                vehicle: 0,
                mean_wait: 0.0
            }
        );
    }

    #[test]
    fn picks_nearest_and_breaks_ties_by_id() {
        let net = line(9, 1.0);
        let fleet = Fleet::at(&[0, 7]);
        // distances to node 4: 4.0 and 3.0
        let a = assign_vehicle(&fleet, &req(0, 4, 0, 0.0), &net, 30.0)
            .unwrap()
            .unwrap();
        assert_eq!(a.vehicle, 1);
        assert_eq!(a.mean_wait, 3.0);

        let fleet = Fleet::at(&[2, 6]);
        let a = assign_vehicle(&fleet, &req(0, 4, 0, 0.0), &net, 30.0)
            .unwrap()
            .unwrap();
        assert_eq!(a.vehicle, 0);
    }

    #[test]
    fn busy_or_far_vehicles_are_skipped() {
        let net = line(5, 10.0);
        let mut fleet = Fleet::at(&[4]);
        assert!(assign_vehicle(&fleet, &req(0, 0, 1, 0.0), &net, 30.0)
            .unwrap()
            .is_none());
        assert!(assign_vehicle(&fleet, &req(0, 3, 1, 0.0), &net, 30.0)
            .unwrap()
            .is_some());
        fleet.vehicles[0].available_at = 5.0;
        assert!(assign_vehicle(&fleet, &req(0, 3, 1, 4.9), &net, 30.0)
            .unwrap()
            .is_none());
        assert!(assign_vehicle(&fleet, &req(0, 3, 1, 5.0), &net, 30.0)
            .unwrap()
            .is_some());
    }

    #[test]
    fn record_pmf_examples() {
        let mut waits = BTreeMap::new();
        waits.insert(3, vec![2.0, 2.0, 4.0]);
        waits.insert(5, vec![]);
        let pmfs = record_pmf(&waits, 0.1).unwrap();
        assert_eq!(pmfs.len(), 1);
        let pmf = &pmfs[0];
        assert_eq!(pmf.origin, 3);
        assert_eq!(
            pmf.entries,
            vec![
                PmfEntry {
                    bin: 20,
                    mass: 2.0 / 3.0
                },
                PmfEntry {
                    bin: 40,
                    mass: 1.0 / 3.0
                }
            ]
        );
        pmf.validate().unwrap();
        assert!(record_pmf(&waits, 0.0).is_err());
    }

    #[test]
    fn single_request_single_vehicle() {
        let net = line(3, 1.0);
        let cfg = SimConfig {
            fleet_size: 1,
            seed: 4,
            ..SimConfig::default()
        };
        let out = run_step1_with_fleet(
            &net,
            &[req(0, 1, 2, 0.0)],
            &ChoiceCoefficients::default(),
            &cfg,
            Fleet::at(&[1]),
        )
        .unwrap();
        let ev = &out.events[0];
        assert_eq!(ev.mean_wait, Some(0.0));
        let p_floor = prob_regular(
            &ChoiceCoefficients::default(),
            &ServiceOffer::reliable(2.0).unwrap(),
            &ServiceOffer::reliable(DISPLAY_FLOOR).unwrap(),
        )
        .unwrap();
        assert_eq!(ev.probability, Some(p_floor));
        if ev.outcome == Outcome::Accepted {
            assert_eq!(out.pmfs[0].entries, vec![PmfEntry { bin: 0, mass: 1.0 }]);
            assert_eq!(ev.realized_wait, Some(0.0));
        } else {
            assert!(out.pmfs.is_empty());
        }
    }

    #[test]
    fn unsorted_and_invalid_demand_rejected() {
        let net = line(3, 1.0);
        let cfg = SimConfig {
            fleet_size: 1,
            ..SimConfig::default()
        };
        let c = ChoiceCoefficients::default();
        let unsorted = [req(0, 0, 1, 5.0), req(1, 1, 2, 1.0)];
        assert!(matches!(
            run_step1(&net, &unsorted, &c, &cfg),
            Err(Error::Domain(_))
        ));
        assert!(run_step1(&net, &[req(0, 1, 1, 0.0)], &c, &cfg).is_err());
        assert!(run_step1(&net, &[req(0, 1, 9, 0.0)], &c, &cfg).is_err());
    }

    #[test]
    fn empty_demand_gives_empty_output() {
        let net = line(3, 1.0);
        let cfg = SimConfig {
            fleet_size: 2,
            ..SimConfig::default()
        };
        let out = run_step1(&net, &[], &ChoiceCoefficients::default(), &cfg).unwrap();
        assert_eq!(out.total_requests, 0);
        assert!(out.pmfs.is_empty() && out.events.is_empty());
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = SimConfig {
            fleet_size: 0,
            ..SimConfig::default()
        };
        match bad.validate("sim.") {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "sim.fleet_size"),
            other => panic!("{other:?}"),
        }
        let bad = SimConfig {
            sigma_range: (0.5, 0.2),
            ..SimConfig::default()
        };
        assert!(bad.validate("").is_err());
        let bad = SimConfig {
            bin_width: 0.0,
            ..SimConfig::default()
        };
        assert!(bad.validate("").is_err());
    }

    #[test]
    fn saturated_acceptance() {
        let net = grid_network(6, (0.2, 1.0), 1).unwrap();
        let spec = demand::PoissonSpec {
            rate_per_minute: 1.0,
            duration_minutes: 300.0,
            requests: None,
            seed: 2,
        };
        let reqs = demand::generate_poisson(&net, &spec).unwrap();
        let cfg = SimConfig {
            fleet_size: 5,
            seed: 3,
            ..SimConfig::default()
        };
        let eager = ChoiceCoefficients::new(50.0, -3.88, -0.78).unwrap();
        let out = run_step1(&net, &reqs, &eager, &cfg).unwrap();
        assert_eq!(out.rejected, 0);
        assert_eq!(out.accepted + out.unassignable, out.total_requests);
    }
}
