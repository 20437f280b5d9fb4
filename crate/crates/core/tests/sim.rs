mod common;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waitdisplay::choice::ChoiceCoefficients;
use waitdisplay::network::{grid_network, Network};
use waitdisplay::sim::demand::{generate_poisson, PoissonSpec, TripRequest};
use waitdisplay::sim::{
    assign_vehicle, record_pmf, run_step1, Fleet, Outcome, SimConfig, Step1Output, Vehicle,
    WaitTimePmf,
};

fn desk(seed: u64) -> (Network, Vec<TripRequest>, SimConfig) {
    let net = grid_network(15, (0.2, 1.0), 2013).unwrap();
    let spec = PoissonSpec {
        rate_per_minute: 2.0,
        duration_minutes: 2500.0,
        requests: Some(5000),
        seed,
    };
    let demand = generate_poisson(&net, &spec).unwrap();
    let cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    (net, demand, cfg)
}

fn run(seed: u64) -> Step1Output {
    let (net, demand, cfg) = desk(seed);
    run_step1(&net, &demand, &ChoiceCoefficients::default(), &cfg).unwrap()
}

#[test]
fn outcomes_are_conserved() {
    let out = run(11);
    assert_eq!(
        out.accepted + out.rejected + out.unassignable,
        out.total_requests
    );
    assert_eq!(out.total_requests, 5000);
    assert_eq!(out.events.len(), 5000);
    let per_node: usize = out.node_counts.values().map(|c| c.requests).sum();
    assert_eq!(per_node, 5000);
    for c in out.node_counts.values() {
        assert_eq!(c.accepted + c.rejected + c.unassignable, c.requests);
    }
    for pmf in &out.pmfs {
        pmf.validate().unwrap();
        assert_eq!(pmf.served, out.node_counts[&pmf.origin].accepted);
    }
}

#[test]
fn identical_seeds_give_identical_bytes() {
    assert_eq!(run(5).to_json().unwrap(), run(5).to_json().unwrap());
    assert_ne!(run(5).to_json().unwrap(), run(6).to_json().unwrap());
}

#[test]
fn json_round_trip() {
    let out = run(3);
    assert_eq!(
        Step1Output::from_json(&out.to_json().unwrap()).unwrap(),
        out
    );
}

#[test]
fn event_log_is_consistent_with_network_and_fleet() {
    let (net, _, _) = desk(0);
    let out = run(8);
    let mut busy_until: BTreeMap<usize, f64> = BTreeMap::new();
    for ev in &out.events {
        if let (Some(v), Some(node), Some(t)) = (ev.vehicle, ev.vehicle_node, ev.mean_wait) {
            let (sp, _) = net.shortest_path_mean(node, ev.origin).unwrap();
            assert!((sp - t).abs() < 1e-9);
            let free = busy_until.get(&v).copied().unwrap_or(0.0);
            assert!(
                ev.request_time >= free,
                "vehicle {v} double-booked at request {}",
                ev.request_id
            );
            if ev.outcome == Outcome::Accepted {
                busy_until.insert(v, ev.available_at.unwrap());
            }
        } else {
            assert_eq!(ev.outcome, Outcome::Unassignable);
        }
        if ev.outcome == Outcome::Accepted {
            assert!(ev.draw < ev.probability.unwrap());
        }
        if ev.outcome == Outcome::Rejected {
            assert!(ev.draw >= ev.probability.unwrap());
        }
    }
}

#[test]
fn realized_share_concentrates_on_expected_share() {
    let out = run(2013);
    let probs: Vec<f64> = out.events.iter().filter_map(|e| e.probability).collect();
    let n = out.total_requests as f64;
    let expected: f64 = probs.iter().sum();
    assert!((expected - out.expected_accepted).abs() < 1e-6);
    let band = 3.0 * probs.iter().map(|p| p * (1.0 - p)).sum::<f64>().sqrt() / n;
    let gap = (out.acceptance_share - expected / n).abs();
    assert!(gap <= band, "gap {gap} band {band}");
}

#[test]
fn saturated_coefficients_accept_every_assignable_request() {
    let (net, demand, cfg) = desk(4);
    let coeffs = ChoiceCoefficients::new(50.0, -3.88, -0.78).unwrap();
    let out = run_step1(&net, &demand, &coeffs, &cfg).unwrap();
    assert_eq!(out.rejected, 0);
    assert_eq!(out.accepted, out.total_requests - out.unassignable);
}

#[test]
fn dispatch_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let net = common::random_connected_network(6, 0.3, case);
        let vehicles = (0..rng.random_range(1..6))
            .map(|id| Vehicle {
                id,
                current_node: rng.random_range(0..6),
                available_at: if rng.random_bool(0.3) { 10.0 } else { 0.0 },
            })
            .collect();
        let fleet = Fleet { vehicles };
        let origin = rng.random_range(0..6);
        let req = TripRequest {
            id: case,
            origin,
            destination: (origin + 1) % 6,
            request_time: 5.0,
        };
        let cap = if case % 4 == 0 { 2.0 } else { 30.0 };
        let got = assign_vehicle(&fleet, &req, &net, cap).unwrap();
        let want = common::brute_force_dispatch(&net, &fleet, origin, 5.0, cap);
        match (got, want) {
            (None, None) => {}
            (Some(a), Some((id, t))) => {
                assert_eq!(a.vehicle, id, "case {case}");
                assert!((a.mean_wait - t).abs() < 1e-9);
            }
            other => panic!("case {case}: {other:?}"),
        }
    }
}

#[test]
fn busy_fleet_leaves_requests_unassignable() {
    let net = grid_network(3, (0.2, 1.0), 1).unwrap();
    let mut fleet = Fleet::at(&[0]);
    fleet.vehicles[0].available_at = 100.0;
    let req = TripRequest {
        id: 0,
        origin: 4,
        destination: 8,
        request_time: 1.0,
    };
    assert_eq!(assign_vehicle(&fleet, &req, &net, 30.0).unwrap(), None);
}

#[test]
fn pmf_binning() {
    let mut waits = BTreeMap::new();
    waits.insert(7, vec![0.3, 0.31, 0.05, 1.0]);
    let pmfs = record_pmf(&waits, 0.1).unwrap();
    assert_eq!(pmfs.len(), 1);
    let bins: Vec<(u32, f64)> = pmfs[0].entries.iter().map(|e| (e.bin, e.mass)).collect();
    assert_eq!(bins, vec![(0, 0.25), (3, 0.5), (10, 0.25)]);
    assert_eq!(WaitTimePmf::bin_of(0.3, 0.1), 3);
}

#[test]
fn unsorted_demand_is_rejected() {
    let net = grid_network(3, (0.2, 1.0), 1).unwrap();
    let demand = vec![
        TripRequest {
            id: 0,
            origin: 0,
            destination: 1,
            request_time: 5.0,
        },
        TripRequest {
            id: 1,
            origin: 1,
            destination: 2,
            request_time: 1.0,
        },
    ];
    let cfg = SimConfig {
        fleet_size: 2,
        ..SimConfig::default()
    };
    assert!(run_step1(&net, &demand, &ChoiceCoefficients::default(), &cfg).is_err());
}
