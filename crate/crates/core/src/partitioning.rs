//! Equal-size spatial partitions of the dynamic bath via constrained k-means.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bath::BathSystem;
use crate::rng::{self, tag};
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE_NM2: f64 = 1e-9;
/// Independent k-means++ restarts; the lowest objective wins.
pub const RESTARTS: usize = 10;
/// Label of a partition whose members come from several subgroups.
pub const MIXED_SUBGROUP: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partitioning {
    pub k: usize,
    /// Member indices into `BathSystem::spins`, each sorted ascending.
    pub partitions: Vec<Vec<usize>>,
    pub centers: Vec<Vector3<f64>>,
    pub subgroup_of_partition: Vec<u8>,
    /// Sum of squared member–center distances, nm².
    pub objective: f64,
}

impl Partitioning {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }
}

/// Result of clustering a bare point set: `labels[i]` is the group of point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<Vector3<f64>>,
    pub objective: f64,
    /// Objective after every iteration of the winning restart.
    pub history: Vec<f64>,
}

/// Minimum-cost perfect assignment of rows to columns of a square cost matrix.
/// Returns `col_of_row`.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // potentials formulation, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    col_of_row
}

fn objective(points: &[Vector3<f64>], labels: &[usize], centers: &[Vector3<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(x, &l)| (x - centers[l]).norm_squared())
        .sum()
}

fn centroids(points: &[Vector3<f64>], labels: &[usize], m: usize) -> Vec<Vector3<f64>> {
    let mut sum = vec![Vector3::zeros(); m];
    let mut count = vec![0usize; m];
    for (x, &l) in points.iter().zip(labels) {
        sum[l] += x;
        count[l] += 1;
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, c)| s / c as f64)
        .collect()
}

fn kmeans_pp<R: Rng>(points: &[Vector3<f64>], m: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|x| (x - centers[0]).norm_squared())
        .collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[next];
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min((x - c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn lloyd_constrained(
    points: &[Vector3<f64>],
    k: usize,
    mut centers: Vec<Vector3<f64>>,
) -> KMeansResult {
    let n = points.len();
    let m = centers.len();
    let mut labels = vec![0; n];
    let mut history: Vec<f64> = Vec::new();
    let mut cost = vec![0.0; n * n];
    for _ in 0..MAX_ITERATIONS {
        for (i, x) in points.iter().enumerate() {
            for c in 0..m {
                let d = (x - centers[c]).norm_squared();
                for s in 0..k {
                    cost[i * n + c * k + s] = d;
                }
            }
        }
        let slot = hungarian(&cost, n);
        for i in 0..n {
            labels[i] = slot[i] / k;
        }
        centers = centroids(points, &labels, m);
        let d = objective(points, &labels, &centers);
        if let Some(&prev) = history.last() {
            assert!(
                d <= prev + 1e-9 * prev.max(1.0),
                "constrained k-means objective increased: {prev} -> {d}"
            );
            history.push(d);
            if prev - d < TOLERANCE_NM2 {
                break;
            }
        } else {
            history.push(d);
        }
    }
    let objective = *history.last().expect("at least one iteration");
    KMeansResult {
        labels,
        centers,
        objective,
        history,
    }
}

/// Splits `points` into `len / k` groups of exactly `k` points minimizing the
/// summed squared distance to group centroids.
///
/// Points are processed in lexicographic coordinate order, so relabeling the
/// input does not change the resulting groups.
pub fn constrained_kmeans(points: &[Vector3<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 {
        return Err(Error::InvalidInput(
            "partition size K must be at least 1".into(),
        ));
    }
    if n % k != 0 {
        return Err(Error::NotDivisible { count: n, k });
    }
    if n == 0 {
        return Ok(KMeansResult {
            labels: vec![],
            centers: vec![],
            objective: 0.0,
            history: vec![0.0],
        });
    }
    let m = n / k;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(p.z.total_cmp(&q.z))
            .then(a.cmp(&b))
    });
    let sorted: Vec<_> = order.iter().map(|&i| points[i]).collect();

    let best = if k == 1 {
        KMeansResult {
            labels: (0..n).collect(),
            centers: sorted.clone(),
            objective: 0.0,
            history: vec![0.0],
        }
    } else if m == 1 {
        let c = centroids(&sorted, &vec![0; n], 1);
        let d = objective(&sorted, &vec![0; n], &c);
        KMeansResult {
            labels: vec![0; n],
            centers: c,
            objective: d,
            history: vec![d],
        }
    } else {
        let mut best: Option<KMeansResult> = None;
        for restart in 0..RESTARTS {
            let mut r = rng::stream(rng::derive(seed, &[tag::KMEANS, restart as u64]));
            let run = lloyd_constrained(&sorted, k, kmeans_pp(&sorted, m, &mut r));
            if best.as_ref().is_none_or(|b| run.objective < b.objective) {
                best = Some(run);
            }
        }
        best.expect("at least one restart")
    };

    // map back to input order, renumbering groups by their smallest input index
    let mut labels = vec![0; n];
    for (s, &i) in order.iter().enumerate() {
        labels[i] = best.labels[s];
    }
    let mut first = vec![usize::MAX; m];
    for (i, &l) in labels.iter().enumerate() {
        first[l] = first[l].min(i);
    }
    let mut rank: Vec<usize> = (0..m).collect();
    rank.sort_by_key(|&g| first[g]);
    let mut new_of_old = vec![0; m];
    for (new, &old) in rank.iter().enumerate() {
        new_of_old[old] = new;
    }
    let labels: Vec<usize> = labels.iter().map(|&l| new_of_old[l]).collect();
    let centers = rank.iter().map(|&old| best.centers[old]).collect();
    Ok(KMeansResult {
        labels,
        centers,
        objective: best.objective,
        history: best.history,
    })
}

fn assemble(
    system: &BathSystem,
    groups: Vec<(u8, Vec<usize>)>,
    k: usize,
    seed: u64,
) -> Result<Partitioning> {
    let mut out = Partitioning {
        k,
        partitions: vec![],
        centers: vec![],
        subgroup_of_partition: vec![],
        objective: 0.0,
    };
    for (label, members) in groups {
        let pts: Vec<_> = members.iter().map(|&i| system.spins[i].position).collect();
        let res = constrained_kmeans(&pts, k, rng::derive(seed, &[label as u64]))?;
        let mut parts = vec![Vec::with_capacity(k); res.centers.len()];
        for (local, &g) in res.labels.iter().enumerate() {
            parts[g].push(members[local]);
        }
        for (g, part) in parts.into_iter().enumerate() {
            let l = part
                .iter()
                .map(|&i| system.spins[i].subgroup)
                .fold(None, |acc, s| match acc {
                    None => Some(s),
                    Some(a) if a == s => Some(a),
                    Some(_) => Some(MIXED_SUBGROUP),
                });
            out.subgroup_of_partition.push(l.unwrap_or(label));
            out.partitions.push(part);
            out.centers.push(res.centers[g]);
        }
        out.objective += res.objective;
    }
    Ok(out)
}

/// Partitions each subgroup of the dynamic bath separately.
pub fn partition_bath(system: &BathSystem, k: usize, seed: u64) -> Result<Partitioning> {
    let counts = system.subgroup_counts();
    let groups = counts
        .keys()
        .map(|&g| {
            let members = (0..system.spins.len())
                .filter(|&i| system.spins[i].dynamic && system.spins[i].subgroup == g)
                .collect();
            (g, members)
        })
        .collect();
    assemble(system, groups, k, seed)
}

/// Partitions the whole dynamic bath ignoring subgroup labels.
pub fn partition_bath_whole(system: &BathSystem, k: usize, seed: u64) -> Result<Partitioning> {
    assemble(system, vec![(0, system.dynamic_indices())], k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{generate_bath, grow_bath_radius, BathSpec, HyperfineMode};

    fn line(xs: &[f64]) -> Vec<Vector3<f64>> {
        xs.iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect()
    }

    #[test]
    fn hungarian_solves_small_problem() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&cost, 3);
        let total: f64 = (0..3).map(|i| cost[i * 3 + a[i]]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn line_of_four_splits_into_pairs() {
        let r = constrained_kmeans(&line(&[0.0, 1.0, 10.0, 11.0]), 2, 1).unwrap();
        assert_eq!(r.labels, vec![0, 0, 1, 1]);
        assert!((r.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_partitions_have_zero_objective() {
        let r = constrained_kmeans(&line(&[3.0, 1.0, 2.0]), 1, 1).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.labels, vec![0, 1, 2]);
    }

    #[test]
    fn single_partition_center_is_centroid() {
        let r = constrained_kmeans(&line(&[0.0, 2.0, 7.0]), 3, 1).unwrap();
        assert_eq!(r.labels, vec![0, 0, 0]);
        assert!((r.centers[0].x - 3.0).abs() < 1e-12);
    }

    #[test]
    fn indivisible_count_is_rejected() {
        assert!(matches!(
            constrained_kmeans(&line(&[0.0, 1.0, 2.0]), 2, 0),
            Err(Error::NotDivisible { count: 3, k: 2 })
        ));
    }

    #[test]
    fn bath_partitions_are_subgroup_pure_and_cover() {
        let spec = BathSpec {
            concentration_ppm: 1.0,
            layer_thickness: 30.0,
            bath_radius: 60.0,
            shell_thickness: 52.0,
            hyperfine_mode: HyperfineMode::P1,
            seed: 12,
        };
        let (_, sys) = grow_bath_radius(&spec, 140, 4).unwrap();
        let p = partition_bath(&sys, 4, 3).unwrap();
        let mut all: Vec<usize> = p.partitions.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, sys.dynamic_indices());
        for (part, &g) in p.partitions.iter().zip(&p.subgroup_of_partition) {
            assert_eq!(part.len(), 4);
            assert!(part.iter().all(|&i| sys.spins[i].subgroup == g));
        }
    }

    #[test]
    fn no_hyperfine_matches_whole_bath_mode() {
        let spec = BathSpec {
            concentration_ppm: 2.0,
            layer_thickness: 30.0,
            bath_radius: 40.0,
            shell_thickness: 0.0,
            hyperfine_mode: HyperfineMode::NoHyperfine,
            seed: 2,
        };
        let sys = generate_bath(&spec).unwrap();
        let n = sys.dynamic_count() / 2 * 2;
        let sys = sys.nearest(n).unwrap();
        assert_eq!(
            partition_bath(&sys, 2, 5).unwrap(),
            partition_bath_whole(&sys, 2, 5).unwrap()
        );
    }
}
