//! Spherical k-means: k-means++ seeding, Lloyd iterations with renormalized
//! centroids, and empty-cluster repair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CentroidSet, Matrix};
use crate::scalar::{dot, normalize_in_place, Scalar};

const ASSIGN_CHUNK: usize = 1024;

/// Trained centroids together with the training-sample assignment they induce.
#[derive(Clone, Debug)]
pub struct KMeans<T> {
    pub centroids: CentroidSet<T>,
    /// Cluster of each training point. Every cluster is non-empty.
    pub assignment: Vec<u32>,
}

/// Index of the most similar centroid (lowest index on ties) and its similarity.
#[inline]
pub(crate) fn nearest<T: Scalar>(point: &[T], centroids: &[T], dim: usize) -> (u32, T) {
    let mut best = 0u32;
    let mut best_sim = T::neg_infinity();
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let sim = dot(point, row);
        if sim > best_sim {
            best_sim = sim;
            best = c as u32;
        }
    }
    (best, best_sim)
}

/// Nearest centroid of every row in `points`, computed in parallel. Output
/// order matches input order regardless of thread count.
pub(crate) fn assign_all<T: Scalar>(points: &[T], centroids: &[T], dim: usize) -> Vec<(u32, T)> {
    let mut out = vec![(0u32, T::zero()); points.len() / dim];
    out.par_chunks_mut(ASSIGN_CHUNK)
        .zip(points.par_chunks(ASSIGN_CHUNK * dim))
        .for_each(|(slots, pts)| {
            for (slot, p) in slots.iter_mut().zip(pts.chunks_exact(dim)) {
                *slot = nearest(p, centroids, dim);
            }
        });
    out
}

/// Trains `k` unit-norm centroids on `points` (row-major, `dim` columns).
pub fn train_centroids<T: Scalar>(
    points: &[T],
    dim: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<CentroidSet<T>> {
    kmeans(points, dim, k, iters, seed).map(|km| km.centroids)
}

pub fn kmeans<T: Scalar>(
    points: &[T],
    dim: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<KMeans<T>> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::LengthMismatch(format!(
            "{} values do not form rows of dim {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { points: n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, dim, k, &mut rng);

    for _ in 0..iters {
        let mut assigned = assign_all(points, &centroids, dim);
        repair_empty(points, dim, k, &mut centroids, &mut assigned);
        update_means(points, dim, k, &assigned, &mut centroids);
    }
    let mut assigned = assign_all(points, &centroids, dim);
    repair_empty(points, dim, k, &mut centroids, &mut assigned);

    Ok(KMeans {
        centroids: CentroidSet::from_matrix(Matrix::new(k, dim, centroids)?)?,
        assignment: assigned.into_iter().map(|(c, _)| c).collect(),
    })
}

/// k-means++ seeding with squared chordal distance `2 - 2 cos` on unit vectors.
fn seed_plus_plus<T: Scalar>(points: &[T], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);

    let dist = |i: usize, c: usize| (2.0 - 2.0 * dot(row(i), row(c)).as_f64()).max(0.0);
    let mut d2: Vec<f64> = (0..n).into_par_iter().map(|i| dist(i, first)).collect();
    d2[first] = 0.0;

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // All remaining points coincide with chosen seeds.
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
        d2.par_iter_mut().enumerate().for_each(|(i, w)| {
            *w = w.min(dist(i, next));
        });
        d2[next] = 0.0;
    }

    let mut out = Vec::with_capacity(k * dim);
    for &i in &chosen {
        out.extend_from_slice(row(i));
    }
    for c in out.chunks_exact_mut(dim) {
        normalize_in_place(c);
    }
    out
}

/// Moves the point farthest from its centroid into each empty cluster and makes
/// it that cluster's centroid.
fn repair_empty<T: Scalar>(
    points: &[T],
    dim: usize,
    k: usize,
    centroids: &mut [T],
    assigned: &mut [(u32, T)],
) {
    let mut sizes = vec![0usize; k];
    for &(c, _) in assigned.iter() {
        sizes[c as usize] += 1;
    }
    for empty in 0..k {
        if sizes[empty] != 0 {
            continue;
        }
        let mut victim = None;
        let mut worst = T::infinity();
        for (i, &(c, sim)) in assigned.iter().enumerate() {
            if sizes[c as usize] > 1 && sim < worst {
                worst = sim;
                victim = Some(i);
            }
        }
        let i = victim.expect("n >= k guarantees a cluster with two or more points");
        sizes[assigned[i].0 as usize] -= 1;
        sizes[empty] = 1;
        // The moved point is its own centroid now; never pick it again.
        assigned[i] = (empty as u32, T::infinity());
        let dst = &mut centroids[empty * dim..(empty + 1) * dim];
        dst.copy_from_slice(&points[i * dim..(i + 1) * dim]);
        normalize_in_place(dst);
    }
}

/// Recomputes each centroid as the normalized mean of its members. Members are
/// summed in index order per cluster, so the result does not depend on the
/// thread count.
fn update_means<T: Scalar>(
    points: &[T],
    dim: usize,
    k: usize,
    assigned: &[(u32, T)],
    centroids: &mut [T],
) {
    let mut starts = vec![0usize; k + 1];
    for &(c, _) in assigned {
        starts[c as usize + 1] += 1;
    }
    for c in 0..k {
        starts[c + 1] += starts[c];
    }
    let mut fill = starts.clone();
    let mut members = vec![0usize; assigned.len()];
    for (i, &(c, _)) in assigned.iter().enumerate() {
        members[fill[c as usize]] = i;
        fill[c as usize] += 1;
    }

    centroids
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(c, centroid)| {
            let ids = &members[starts[c]..starts[c + 1]];
            if ids.is_empty() {
                return;
            }
            centroid.iter_mut().for_each(|x| *x = T::zero());
            for &i in ids {
                for (acc, &x) in centroid.iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
                    *acc += x;
                }
            }
            normalize_in_place(centroid);
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_lloyd(points: &[[f64; 2]], init: [[f64; 2]; 2], iters: usize) -> [[f64; 2]; 2] {
        let mut c = init;
        for _ in 0..iters {
            let mut sums = [[0.0; 2]; 2];
            for p in points {
                let s0 = p[0] * c[0][0] + p[1] * c[0][1];
                let s1 = p[0] * c[1][0] + p[1] * c[1][1];
                let j = if s1 > s0 { 1 } else { 0 };
                sums[j][0] += p[0];
                sums[j][1] += p[1];
            }
            for j in 0..2 {
                let n = (sums[j][0].powi(2) + sums[j][1].powi(2)).sqrt();
                if n > 0.0 {
                    c[j] = [sums[j][0] / n, sums[j][1] / n];
                }
            }
        }
        c
    }

    #[test]
    fn orthogonal_points_become_their_own_centroids() {
        let mut pts = vec![0.0f32; 16];
        for i in 0..4 {
            pts[i * 4 + i] = 1.0;
        }
        for seed in 0..5 {
            let c = train_centroids(&pts, 4, 4, 7, seed).unwrap();
            let mut rows: Vec<Vec<f32>> = c.iter_rows().map(|r| r.to_vec()).collect();
            rows.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut expect: Vec<Vec<f32>> = pts.chunks(4).map(|r| r.to_vec()).collect();
            expect.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert_eq!(rows, expect);
        }
    }

    #[test]
    fn single_centroid_is_normalized_mean() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let pts = [1.0, 0.0, 0.0, 1.0, s, s, 0.6, 0.8];
        let c = train_centroids(&pts, 2, 1, 3, 9).unwrap();
        let mut mean = [0.0f64; 2];
        for p in pts.chunks(2) {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        normalize_in_place(&mut mean);
        assert!((c.row(0)[0] - mean[0]).abs() < 1e-12);
        assert!((c.row(0)[1] - mean[1]).abs() < 1e-12);
    }

    #[test]
    fn two_separated_clusters_match_brute_force_lloyd() {
        let a = 0.1f64;
        let b = 1.4f64;
        let pts = [
            [a.cos(), a.sin()],
            [(-a).cos(), (-a).sin()],
            [b.cos(), b.sin()],
            [(b + 0.05).cos(), (b + 0.05).sin()],
        ];
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let km = kmeans(&flat, 2, 2, 10, 3).unwrap();

        // Oracle: plain Lloyd's from one member of each group, matched up to
        // cluster relabelling.
        let oracle = brute_lloyd(&pts, [pts[0], pts[2]], 10);
        let g0 = km.assignment[0] as usize;
        for d in 0..2 {
            assert!((km.centroids.row(g0)[d] - oracle[0][d]).abs() < 1e-12);
            assert!((km.centroids.row(1 - g0)[d] - oracle[1][d]).abs() < 1e-12);
        }
        assert_eq!(km.assignment[0], km.assignment[1]);
        assert_eq!(km.assignment[2], km.assignment[3]);
        assert_ne!(km.assignment[0], km.assignment[2]);

        // Normalized means of each group.
        let mean = |i: usize, j: usize| {
            let mut m = [pts[i][0] + pts[j][0], pts[i][1] + pts[j][1]];
            normalize_in_place(&mut m);
            m
        };
        let m0 = mean(0, 1);
        let m1 = mean(2, 3);
        assert!((km.centroids.row(g0)[0] - m0[0]).abs() < 1e-12);
        assert!((km.centroids.row(1 - g0)[1] - m1[1]).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            train_centroids(&[1.0f32, 0.0], 2, 2, 1, 0),
            Err(Error::TooFewPoints { points: 1, k: 2 })
        ));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = [1.0f32, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let km = kmeans(&pts, 2, 3, 5, 1).unwrap();
        let mut sizes = [0; 3];
        for &c in &km.assignment {
            sizes[c as usize] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts: Vec<f32> = (0..200 * 8).map(|_| rng.random::<f32>() - 0.5).collect();
        for r in pts.chunks_mut(8) {
            normalize_in_place(r);
        }
        let a = kmeans(&pts, 8, 12, 6, 77).unwrap();
        let b = kmeans(&pts, 8, 12, 6, 77).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignment, b.assignment);
        let mut sizes = [0; 12];
        for &c in &a.assignment {
            sizes[c as usize] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0));
    }
}
