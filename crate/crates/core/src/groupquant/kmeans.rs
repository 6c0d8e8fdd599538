use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;

/// How the first centroids are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "seed")]
pub enum KMeansInit {
    /// Sort vectors by range and take the midpoints of K equal quantile bins.
    #[default]
    Quantile,
    /// K distinct vectors drawn with a seeded generator.
    Random(u64),
}

type Point = [f64; 2];

fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Group vectors by their `(min, max)` range with Lloyd's K-means.
///
/// Groups in the result are labelled by ascending mean range (`max - min`),
/// so label 0 holds the narrowest vectors. Every label in `0..k` is used.
pub fn cluster_ranges(
    mins: &[f32],
    maxs: &[f32],
    k: usize,
    init: KMeansInit,
) -> Result<Vec<usize>> {
    if mins.len() != maxs.len() {
        return Err(Error::Domain(format!(
            "{} minima but {} maxima",
            mins.len(),
            maxs.len()
        )));
    }
    let n = mins.len();
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Domain(format!(
            "K = {k} exceeds the {n} vectors to group"
        )));
    }
    // Work in (min, max) order so the result does not depend on vector numbering.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mins[a]
            .total_cmp(&mins[b])
            .then(maxs[a].total_cmp(&maxs[b]))
            .then(a.cmp(&b))
    });
    let points: Vec<Point> = order
        .iter()
        .map(|&i| [mins[i] as f64, maxs[i] as f64])
        .collect();

    let starts = match init {
        KMeansInit::Quantile => deterministic_starts(&points, k),
        KMeansInit::Random(seed) => vec![random_start(&points, k, seed)],
    };
    // The first start wins ties.
    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in starts {
        let mut assignment = lloyd(&points, start);
        refine(&points, &mut assignment, k);
        let cost = objective(&points, &assignment, k);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, assignment));
        }
    }
    let (_, assignment) = best.expect("at least one start");
    let sorted = relabel_by_range(&points, &assignment, k);
    let mut labels = vec![0; n];
    for (&i, &g) in order.iter().zip(&sorted) {
        labels[i] = g;
    }
    Ok(labels)
}

fn lloyd(points: &[Point], mut centroids: Vec<Point>) -> Vec<usize> {
    let k = centroids.len();
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..MAX_ITERATIONS {
        assign(points, &centroids, &mut assignment);
        repair_empty(points, &mut centroids, &mut assignment);
        let updated = means(points, &assignment, k);
        let moved = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if moved <= TOLERANCE {
            break;
        }
    }
    assign(points, &centroids, &mut assignment);
    repair_empty(points, &mut centroids, &mut assignment);
    assignment
}

/// Single-point moves that lower the within-group sum of squares, until none is left.
fn refine(points: &[Point], assignment: &mut [usize], k: usize) {
    let mut centroids = means(points, assignment, k);
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for _ in 0..MAX_ITERATIONS {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = assignment[i];
            if sizes[from] < 2 {
                continue;
            }
            let n_from = sizes[from] as f64;
            let leave = n_from / (n_from - 1.0) * dist2(p, &centroids[from]);
            let mut target = None;
            let mut gain = 0.0;
            for to in (0..k).filter(|&j| j != from) {
                let n_to = sizes[to] as f64;
                let g = leave - n_to / (n_to + 1.0) * dist2(p, &centroids[to]);
                if g > gain + 1e-12 * leave {
                    gain = g;
                    target = Some(to);
                }
            }
            if let Some(to) = target {
                let (nf, nt) = (sizes[from] as f64, sizes[to] as f64);
                for d in 0..2 {
                    centroids[from][d] = (centroids[from][d] * nf - p[d]) / (nf - 1.0);
                    centroids[to][d] = (centroids[to][d] * nt + p[d]) / (nt + 1.0);
                }
                sizes[from] -= 1;
                sizes[to] += 1;
                assignment[i] = to;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Within-group sum of squared distances to the group means.
fn objective(points: &[Point], assignment: &[usize], k: usize) -> f64 {
    let c = means(points, assignment, k);
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| dist2(p, &c[a]))
        .sum()
}

/// Centroids at the K quantile points of `points` ordered by `key`.
fn quantile_start(points: &[Point], k: usize, key: impl Fn(&Point) -> f64) -> Vec<Point> {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(&points[a]).total_cmp(&key(&points[b])).then(a.cmp(&b)));
    (0..k)
        .map(|j| points[order[(2 * j + 1) * n / (2 * k)]])
        .collect()
}

/// Farthest-point seeding: each next centroid is the point farthest from those chosen.
fn farthest_start(points: &[Point], k: usize, first: Point) -> Vec<Point> {
    let mut chosen = vec![first];
    while chosen.len() < k {
        let gap = |p: &Point| {
            chosen
                .iter()
                .map(|c| dist2(p, c))
                .fold(f64::INFINITY, f64::min)
        };
        let next = (0..points.len())
            .max_by(|&a, &b| gap(&points[a]).total_cmp(&gap(&points[b])).then(b.cmp(&a)))
            .expect("non-empty");
        chosen.push(points[next]);
    }
    chosen
}

/// Farthest-point runs seeded from this many points spread along the range order.
const FARTHEST_SEEDS: usize = 16;

/// Range quantiles first, then min and max quantiles and farthest-point seedings.
fn deterministic_starts(points: &[Point], k: usize) -> Vec<Vec<Point>> {
    let range = |p: &Point| p[1] - p[0];
    let mut starts = vec![
        quantile_start(points, k, range),
        quantile_start(points, k, |p| p[0]),
        quantile_start(points, k, |p| p[1]),
    ];
    if k > 1 {
        let m = FARTHEST_SEEDS.min(points.len());
        starts.extend(
            quantile_start(points, m, range)
                .into_iter()
                .map(|first| farthest_start(points, k, first)),
        );
    }
    starts
}

fn random_start(points: &[Point], k: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, points.len(), k)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

fn assign(points: &[Point], centroids: &[Point], assignment: &mut [usize]) {
    for (p, slot) in points.iter().zip(assignment.iter_mut()) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = dist2(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        *slot = best;
    }
}

/// Give each empty cluster the point farthest from the centroid of the
/// currently largest cluster.
fn repair_empty(points: &[Point], centroids: &mut [Point], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k)
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .unwrap();
        let center = centroids[largest];
        let far = (0..points.len())
            .filter(|&i| assignment[i] == largest)
            .max_by(|&a, &b| {
                dist2(&points[a], &center)
                    .total_cmp(&dist2(&points[b], &center))
                    .then(b.cmp(&a))
            })
            .expect("largest cluster is non-empty");
        assignment[far] = empty;
        centroids[empty] = points[far];
    }
}

fn means(points: &[Point], assignment: &[usize], k: usize) -> Vec<Point> {
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        counts[a] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
        .collect()
}

fn relabel_by_range(points: &[Point], assignment: &[usize], k: usize) -> Vec<usize> {
    let mut total = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for (i, (p, &a)) in points.iter().zip(assignment).enumerate() {
        total[a] += p[1] - p[0];
        count[a] += 1;
        first[a] = first[a].min(i);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ma = total[a] / count[a] as f64;
        let mb = total[b] / count[b] as f64;
        ma.total_cmp(&mb).then(first[a].cmp(&first[b]))
    });
    let mut label = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        label[old] = new;
    }
    assignment.iter().map(|&a| label[a]).collect()
}
