//! Road network with mean edge travel times.
//!
//! Only means are stored; wait-time randomness is attached to whole paths by
//! the simulator. Node coordinates are optional and never used for routing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub mean_minutes: f64,
}

#[derive(Debug, Clone)]
pub struct Network {
    node_count: usize,
    /// Sorted by (from, to), unique.
    edges: Vec<Edge>,
    outgoing: Vec<Vec<(usize, f64)>>,
    incoming: Vec<Vec<(usize, f64)>>,
    coordinates: Option<Vec<(f64, f64)>>,
}

impl Network {
    /// Builds a network; duplicate (from, to) pairs keep the smallest time.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut dedup: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in edges {
            if e.from >= node_count || e.to >= node_count {
                return Err(Error::domain(format!(
                    "edge {}->{} references a node outside [0, {node_count})",
                    e.from, e.to
                )));
            }
            if !(e.mean_minutes > 0.0 && e.mean_minutes.is_finite()) {
                return Err(Error::domain(format!(
                    "edge {}->{} has non-positive time {}",
                    e.from, e.to, e.mean_minutes
                )));
            }
            dedup
                .entry((e.from, e.to))
                .and_modify(|t| *t = t.min(e.mean_minutes))
                .or_insert(e.mean_minutes);
        }
        if dedup.is_empty() {
            return Err(Error::domain("network has no edges"));
        }
        let edges: Vec<Edge> = dedup
            .into_iter()
            .map(|((from, to), mean_minutes)| Edge {
                from,
                to,
                mean_minutes,
            })
            .collect();
        let mut outgoing = vec![Vec::new(); node_count];
        let mut incoming = vec![Vec::new(); node_count];
        for e in &edges {
            outgoing[e.from].push((e.to, e.mean_minutes));
            incoming[e.to].push((e.from, e.mean_minutes));
        }
        Ok(Self {
            node_count,
            edges,
            outgoing,
            incoming,
            coordinates: None,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_time(&self, from: usize, to: usize) -> Option<f64> {
        self.outgoing
            .get(from)?
            .iter()
            .find(|(n, _)| *n == to)
            .map(|&(_, t)| t)
    }

    pub fn coordinates(&self) -> Option<&[(f64, f64)]> {
        self.coordinates.as_deref()
    }

    /// Attaches plotting coordinates; every node needs one.
    pub fn with_coordinates(mut self, coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.len() != self.node_count {
            return Err(Error::domain(format!(
                "expected {} coordinates, got {}",
                self.node_count,
                coords.len()
            )));
        }
        self.coordinates = Some(coords);
        Ok(self)
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node < self.node_count {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "node {node} outside [0, {})",
                self.node_count
            )))
        }
    }

    /// Minimal-mean-time path from `from` to `to`.
    pub fn shortest_path_mean(&self, from: usize, to: usize) -> Result<(f64, Vec<usize>)> {
        self.check_node(from)?;
        self.check_node(to)?;
        if from == to {
            return Ok((0.0, vec![from]));
        }
        let (dist, pred) = dijkstra(&self.outgoing, from, Some(to));
        if !dist[to].is_finite() {
            return Err(Error::Unreachable { from, to });
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = pred[cur];
            path.push(cur);
        }
        path.reverse();
        // Re-sum along the path so the reported time is exactly its edge sum.
        let time = path
            .windows(2)
            .map(|w| self.edge_time(w[0], w[1]).expect("path follows edges"))
            .sum();
        Ok((time, path))
    }

    /// Shortest mean time from every node to `target` (∞ if unreachable).
    pub fn times_to(&self, target: usize) -> Result<Vec<f64>> {
        self.check_node(target)?;
        Ok(dijkstra(&self.incoming, target, None).0)
    }

    /// Shortest mean time from `source` to every node (∞ if unreachable).
    pub fn times_from(&self, source: usize) -> Result<Vec<f64>> {
        self.check_node(source)?;
        Ok(dijkstra(&self.outgoing, source, None).0)
    }

    /// Nodes of the largest strongly connected component, ascending.
    pub fn largest_component(&self) -> Vec<usize> {
        let comp = strongly_connected_components(&self.outgoing, &self.incoming);
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in &comp {
            *sizes.entry(c).or_default() += 1;
        }
        // ties → component containing the lowest node id
        let mut best: Option<(usize, usize)> = None;
        for &c in &comp {
            let size = sizes[&c];
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((c, size));
            }
        }
        let (label, _) = best.expect("network has nodes");
        (0..self.node_count).filter(|&n| comp[n] == label).collect()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.largest_component().len() == self.node_count
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(
    adj: &[Vec<(usize, f64)>],
    source: usize,
    stop_at: Option<usize>,
) -> (Vec<f64>, Vec<usize>) {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    pred[source] = source;
    heap.push(Frontier {
        cost: 0.0,
        node: source,
    });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if Some(node) == stop_at {
            break;
        }
        for &(next, w) in &adj[node] {
            let cand = cost + w;
            if cand < dist[next] {
                dist[next] = cand;
                pred[next] = node;
                heap.push(Frontier {
                    cost: cand,
                    node: next,
                });
            }
        }
    }
    (dist, pred)
}

/// Kosaraju's algorithm, iterative. Returns a component label per node.
fn strongly_connected_components(
    out: &[Vec<(usize, f64)>],
    inc: &[Vec<(usize, f64)>],
) -> Vec<usize> {
    let n = out.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut stack = vec![(start, 0usize)];
        while let Some(&mut (node, ref mut idx)) = stack.last_mut() {
            if let Some(&(next, _)) = out[node].get(*idx) {
                *idx += 1;
                if !visited[next] {
                    visited[next] = true;
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut label = 0;
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = label;
        let mut stack = vec![start];
        while let Some(node) = stack.pop() {
            for &(prev, _) in &inc[node] {
                if comp[prev] == usize::MAX {
                    comp[prev] = label;
                    stack.push(prev);
                }
            }
        }
        label += 1;
    }
    comp
}

/// Reads `from,to,mean_minutes` rows. A header line is optional.
pub fn load_edge_list<R: Read>(reader: R, source_name: &str) -> Result<Network> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut edges = Vec::new();
    let mut max_node = 0usize;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| crate::estimate::parse_error(source_name, &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse {
            source_name: source_name.into(),
            line,
            message,
        };
        if rec.len() != 3 {
            return Err(bad(format!(
                "expected 3 fields (from,to,mean_minutes), got {}",
                rec.len()
            )));
        }
        if idx == 0 && rec[0].parse::<usize>().is_err() {
            continue;
        }
        let from: usize = rec[0]
            .parse()
            .map_err(|_| bad(format!("bad node id `{}`", &rec[0])))?;
        let to: usize = rec[1]
            .parse()
            .map_err(|_| bad(format!("bad node id `{}`", &rec[1])))?;
        let mean_minutes: f64 = rec[2]
            .parse()
            .map_err(|_| bad(format!("bad travel time `{}`", &rec[2])))?;
        if !(mean_minutes > 0.0 && mean_minutes.is_finite()) {
            return Err(Error::validation(
                format!("{source_name}:{line}"),
                format!("travel time must be positive, got {mean_minutes}"),
            ));
        }
        max_node = max_node.max(from).max(to);
        edges.push(Edge {
            from,
            to,
            mean_minutes,
        });
    }
    if edges.is_empty() {
        return Err(Error::Parse {
            source_name: source_name.into(),
            line: 0,
            message: "edge list contains no edges".into(),
        });
    }
    Network::from_edges(max_node + 1, edges)
}

/// Writes the deduplicated edge set with a `from,to,mean_minutes` header.
pub fn write_edge_list<W: Write>(writer: W, net: &Network) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["from", "to", "mean_minutes"])?;
    for e in net.edges() {
        wtr.write_record([
            e.from.to_string(),
            e.to.to_string(),
            e.mean_minutes.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<edge list>", e))?;
    Ok(())
}

/// Reads `node,x,y` rows (header required).
pub fn load_coordinates<R: Read>(reader: R, source_name: &str) -> Result<Vec<(usize, f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        node: usize,
        x: f64,
        y: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<Row>()
        .map(|r| {
            r.map(|r| (r.node, r.x, r.y))
                .map_err(|e| crate::estimate::parse_error(source_name, &e))
        })
        .collect()
}

/// `side × side` bidirectional grid with uniformly drawn edge times.
pub fn grid_network(side: usize, time_range: (f64, f64), seed: u64) -> Result<Network> {
    if side < 2 {
        return Err(Error::domain(format!("grid side must be >= 2, got {side}")));
    }
    let (lo, hi) = time_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::domain(format!(
            "time range must satisfy 0 < min <= max, got ({lo}, {hi})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let id = |r: usize, c: usize| r * side + c;
    let mut edges = Vec::with_capacity(4 * side * (side - 1));
    for r in 0..side {
        for c in 0..side {
            let here = id(r, c);
            let mut neighbours = Vec::with_capacity(2);
            if c + 1 < side {
                neighbours.push(id(r, c + 1));
            }
            if r + 1 < side {
                neighbours.push(id(r + 1, c));
            }
            for there in neighbours {
                edges.push(Edge {
                    from: here,
                    to: there,
                    mean_minutes: draw(),
                });
                edges.push(Edge {
                    from: there,
                    to: here,
                    mean_minutes: draw(),
                });
            }
        }
    }
    let coords = (0..side * side)
        .map(|n| ((n % side) as f64, (n / side) as f64))
        .collect();
    Network::from_edges(side * side, edges)?.with_coordinates(coords)
}
