//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the code paths it is used to check.
#![allow(dead_code)]

use std::f64::consts::PI;

use waitdisplay::network::Network;

/// Lognormal density written out from its definition.
pub fn lognormal_pdf(w: f64, mu_log: f64, sigma_log: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let z = (w.ln() - mu_log) / sigma_log;
    (-0.5 * z * z).exp() / (w * sigma_log * (2.0 * PI).sqrt())
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    whole: f64,
    m: f64,
    fm: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
        + adaptive(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature with a relative tolerance.
///
/// A coarse composite pass fixes the scale of the integral so the tolerance
/// stays meaningful for tail integrals many orders of magnitude below one.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let panels = 64;
    let h = (b - a) / panels as f64;
    let scale: f64 = (0..panels)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            simpson(f, x0, f(x0), x1, f(x1)).0.abs()
        })
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let tol = rel_tol * scale / panels as f64;
    (0..panels)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fb) = (f(x0), f(x1));
            let (whole, m, fm) = simpson(f, x0, fa, x1, fb);
            adaptive(f, x0, fa, x1, fb, whole, m, fm, tol, 40)
        })
        .sum()
}

/// `∫_d^∞ f(w)(w − d) dw` by quadrature over `[d, w_max]`, where `w_max` is
/// far enough into the tail (beyond both the 1 − 1e-10 quantile and twelve
/// log-sds past `d`) that the remainder is negligible relative to the result.
pub fn expected_delay_quadrature(mean: f64, sigma_log: f64, d: f64) -> f64 {
    let mu = mean.ln() - 0.5 * sigma_log * sigma_log;
    let z_d = (d.ln() - mu) / sigma_log;
    // z for 1 − 1e-10 is 6.3613…
    let z_hi = f64::max(6.5, z_d + 12.0);
    let w_max = (mu + sigma_log * z_hi).exp();
    let f = move |w: f64| lognormal_pdf(w, mu, sigma_log) * (w - d);
    // most of the mass sits within a few log-sds above d
    let knee = (mu + sigma_log * (z_d.max(-6.0) + 3.0))
        .exp()
        .clamp(d, w_max);
    adaptive_simpson(&f, d, knee, 1e-11) + adaptive_simpson(&f, knee, w_max, 1e-11)
}

/// All simple paths between two nodes, by depth-first enumeration.
/// Returns the minimal edge-time sum (∞ if none).
pub fn brute_force_shortest(net: &Network, from: usize, to: usize) -> f64 {
    if from == to {
        return 0.0;
    }
    fn dfs(net: &Network, node: usize, to: usize, cost: f64, seen: &mut Vec<bool>, best: &mut f64) {
        if node == to {
            *best = best.min(cost);
            return;
        }
        for e in net.edges().iter().filter(|e| e.from == node) {
            if !seen[e.to] {
                seen[e.to] = true;
                dfs(net, e.to, to, cost + e.mean_minutes, seen, best);
                seen[e.to] = false;
            }
        }
    }
    let mut seen = vec![false; net.node_count()];
    seen[from] = true;
    let mut best = f64::INFINITY;
    dfs(net, from, to, 0.0, &mut seen, &mut best);
    best
}

/// Central finite-difference gradient.
pub fn finite_difference<F: Fn(&[f64; 3]) -> f64>(f: F, at: [f64; 3], step: f64) -> [f64; 3] {
    std::array::from_fn(|j| {
        let mut hi = at;
        let mut lo = at;
        hi[j] += step;
        lo[j] -= step;
        (f(&hi) - f(&lo)) / (2.0 * step)
    })
}

/// Idle vehicle with the smallest enumerated travel time to the origin
/// (lowest id on ties), or `None` if no idle vehicle reaches it within `cap`.
pub fn brute_force_dispatch(
    net: &Network,
    fleet: &waitdisplay::sim::Fleet,
    origin: usize,
    now: f64,
    cap: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for v in fleet.vehicles.iter().filter(|v| v.available_at <= now) {
        let t = brute_force_shortest(net, v.current_node, origin);
        if t.is_finite() && best.is_none_or(|(_, b)| t < b) {
            best = Some((v.id, t));
        }
    }
    best.filter(|&(_, t)| t <= cap)
}

/// Strongly connected random graph: a ring plus random chords.
pub fn random_connected_network(n: usize, chord_density: f64, seed: u64) -> Network {
    use rand::{Rng, SeedableRng};
    use waitdisplay::network::Edge;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for from in 0..n {
        for to in 0..n {
            if from == to {
                continue;
            }
            if to == (from + 1) % n || rng.random_bool(chord_density) {
                edges.push(Edge {
                    from,
                    to,
                    mean_minutes: rng.random_range(0.1..5.0),
                });
            }
        }
    }
    Network::from_edges(n, edges).unwrap()
}
