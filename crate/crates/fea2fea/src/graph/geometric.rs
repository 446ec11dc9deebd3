//! Seeded random geometric graphs on the unit square.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Samples the point set used by [`generate_random_geometric`]: n points
/// uniform in [0,1)², drawn x-then-y per node from a ChaCha8 stream. Exposed
/// so tests can recompute edge sets independently.
pub fn geometric_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            (x, y)
        })
        .collect()
}

/// Connectivity-regime default radius 2·√(ln n / (π n)); for n = 1 any value
/// works since there are no pairs.
pub fn default_geometric_radius(n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    2.0 * ((n as f64).ln() / (std::f64::consts::PI * n as f64)).sqrt()
}

/// Connects every pair of seeded uniform points within Euclidean distance
/// `radius`. Identical (n, radius, seed) always produces an identical graph.
pub fn generate_random_geometric(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidConfig("geometric graph needs at least 1 node".into()));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(Error::InvalidConfig(format!("radius {radius} outside (0, sqrt(2)]")));
    }
    let points = geometric_points(n, seed);
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let dx = points[u].0 - points[v].0;
            let dy = points[u].1 - points[v].1;
            if dx * dx + dy * dy <= r2 {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges)
}
