//! Trip requests: synthetic Poisson demand, demand CSV, and taxi-record mapping.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use log::info;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::parse_error;
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRequest {
    pub id: u64,
    pub origin: usize,
    pub destination: usize,
    /// Minutes from the start of the simulation.
    pub request_time: f64,
}

impl TripRequest {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        if self.origin >= node_count || self.destination >= node_count {
            return Err(Error::domain(format!(
                "request {} references a node outside [0, {node_count})",
                self.id
            )));
        }
        if self.origin == self.destination {
            return Err(Error::domain(format!(
                "request {} has identical origin and destination",
                self.id
            )));
        }
        if !(self.request_time >= 0.0 && self.request_time.is_finite()) {
            return Err(Error::domain(format!(
                "request {} has invalid time {}",
                self.id, self.request_time
            )));
        }
        Ok(())
    }
}

/// Homogeneous Poisson arrivals with uniform origin/destination pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    pub rate_per_minute: f64,
    pub duration_minutes: f64,
    /// When set, exactly this many arrivals are placed on the horizon
    /// (a Poisson process conditioned on its count).
    #[serde(default)]
    pub requests: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl PoissonSpec {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.rate_per_minute > 0.0 && self.rate_per_minute.is_finite()) {
            return Err(Error::validation(
                format!("{prefix}rate_per_minute"),
                "must be positive",
            ));
        }
        if !(self.duration_minutes > 0.0 && self.duration_minutes.is_finite()) {
            return Err(Error::validation(
                format!("{prefix}duration_minutes"),
                "must be positive",
            ));
        }
        if self.requests == Some(0) {
            return Err(Error::validation(
                format!("{prefix}requests"),
                "must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Generates time-sorted requests over the network's largest component.
pub fn generate_poisson(net: &Network, spec: &PoissonSpec) -> Result<Vec<TripRequest>> {
    spec.validate("demand.poisson.")?;
    let nodes = net.largest_component();
    if nodes.len() < 2 {
        return Err(Error::domain(
            "need at least two connected nodes for demand",
        ));
    }
    let mut rng = super::stream(spec.seed, 0);
    let times: Vec<f64> = match spec.requests {
        Some(n) => {
            let mut t: Vec<f64> = (0..n)
                .map(|_| rng.random::<f64>() * spec.duration_minutes)
                .collect();
            t.sort_by(f64::total_cmp);
            t
        }
        None => {
            let gap = Exp::new(spec.rate_per_minute).map_err(|e| Error::domain(e.to_string()))?;
            let mut t = Vec::new();
            let mut now = gap.sample(&mut rng);
            while now < spec.duration_minutes {
                t.push(now);
                now += gap.sample(&mut rng);
            }
            t
        }
    };
    Ok(times
        .into_iter()
        .enumerate()
        .map(|(i, request_time)| {
            let origin = nodes[rng.random_range(0..nodes.len())];
            let destination = loop {
                let d = nodes[rng.random_range(0..nodes.len())];
                if d != origin {
                    break d;
                }
            };
            TripRequest {
                id: i as u64,
                origin,
                destination,
                request_time,
            }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct DemandRow {
    request_time_minutes: f64,
    origin_node: usize,
    destination_node: usize,
}

/// Reads `request_time_minutes,origin_node,destination_node` rows (header
/// required). Request ids are row indices.
pub fn read_demand<R: Read>(reader: R, source_name: &str) -> Result<Vec<TripRequest>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DemandRow>().enumerate() {
        let row = row.map_err(|e| parse_error(source_name, &e))?;
        out.push(TripRequest {
            id: i as u64,
            origin: row.origin_node,
            destination: row.destination_node,
            request_time: row.request_time_minutes,
        });
    }
    Ok(out)
}

pub fn write_demand<W: Write>(writer: W, demand: &[TripRequest]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in demand {
        wtr.serialize(DemandRow {
            request_time_minutes: r.request_time,
            origin_node: r.origin,
            destination_node: r.destination,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<demand>", e))?;
    Ok(())
}

const PICKUP_TIME_COLUMNS: [&str; 2] = ["pickup_datetime", "tpep_pickup_datetime"];

/// Maps taxi trip records to requests by snapping pick-up and drop-off
/// coordinates to the nearest node of `node_coords` (`(node, x=lon, y=lat)`).
///
/// Expects a header with a pick-up timestamp (`pickup_datetime` or
/// `tpep_pickup_datetime`, formatted `%Y-%m-%d %H:%M:%S`) and
/// `pickup_longitude`, `pickup_latitude`, `dropoff_longitude`,
/// `dropoff_latitude`. Rows with zero coordinates or that snap to the same
/// node at both ends are skipped. Times are minutes after `start`, or after
/// the earliest pick-up when `start` is `None`; earlier rows are dropped.
pub fn load_taxi_trips<R: Read>(
    reader: R,
    source_name: &str,
    node_coords: &[(usize, f64, f64)],
    start: Option<NaiveDateTime>,
) -> Result<Vec<TripRequest>> {
    if node_coords.is_empty() {
        return Err(Error::domain("node mapping is empty"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let column = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| index.get(n).copied())
            .ok_or_else(|| Error::Parse {
                source_name: source_name.into(),
                line: 1,
                message: format!("missing column {}", names.join(" or ")),
            })
    };
    let c_time = column(&PICKUP_TIME_COLUMNS)?;
    let c_plon = column(&["pickup_longitude"])?;
    let c_plat = column(&["pickup_latitude"])?;
    let c_dlon = column(&["dropoff_longitude"])?;
    let c_dlat = column(&["dropoff_latitude"])?;

    let nearest = |x: f64, y: f64| {
        node_coords
            .iter()
            .min_by(|a, b| {
                let da = (a.1 - x).powi(2) + (a.2 - y).powi(2);
                let db = (b.1 - x).powi(2) + (b.2 - y).powi(2);
                da.total_cmp(&db).then(a.0.cmp(&b.0))
            })
            .map(|n| n.0)
            .expect("non-empty mapping")
    };

    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(source_name, &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse {
            source_name: source_name.into(),
            line,
            message,
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let when = NaiveDateTime::parse_from_str(field(c_time), "%Y-%m-%d %H:%M:%S")
            .map_err(|e| bad(format!("bad timestamp `{}`: {e}", field(c_time))))?;
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| bad(format!("bad coordinate `{}`", field(i))))
        };
        let (plon, plat, dlon, dlat) = (num(c_plon)?, num(c_plat)?, num(c_dlon)?, num(c_dlat)?);
        if [plon, plat, dlon, dlat].contains(&0.0) {
            skipped += 1;
            continue;
        }
        let origin = nearest(plon, plat);
        let destination = nearest(dlon, dlat);
        if origin == destination {
            skipped += 1;
            continue;
        }
        rows.push((when, origin, destination));
    }
    let Some(t0) = start.or_else(|| rows.iter().map(|r| r.0).min()) else {
        return Ok(Vec::new());
    };
    rows.retain(|r| r.0 >= t0);
    rows.sort_by_key(|r| r.0);
    info!(
        "{source_name}: mapped {} trips, skipped {skipped}",
        rows.len()
    );
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (when, origin, destination))| TripRequest {
            id: i as u64,
            origin,
            destination,
            request_time: (when - t0).num_milliseconds() as f64 / 60_000.0,
        })
        .collect())
}
