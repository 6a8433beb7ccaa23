//! Evaluation metrics: 1-D and assignment-based Wasserstein-2 distances,
//! permutation/rotation-aligned particle distance, histogram divergences, and
//! spherical mode-weight estimation.

use crate::error::{FsError, Result};
use crate::vecmath::{dot, norm2};

/// Smoothing mass added to every histogram bin before normalization.
const HIST_SMOOTHING: f64 = 1e-10;

/// W2 between two 1-D empirical distributions via the sorted-quantile
/// coupling. Unequal sizes are handled by linear quantile interpolation.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(FsError::Empty { what: "w2_1d input" });
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).ok_or(()).expect("non-finite sample"));
    sb.sort_by(|x, y| x.partial_cmp(y).ok_or(()).expect("non-finite sample"));
    if sa.len() == sb.len() {
        let n = sa.len() as f64;
        let sq: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum();
        return Ok((sq / n).sqrt());
    }
    // evaluate both quantile functions on a common grid of midpoints
    let m = sa.len().max(sb.len());
    let mut sq = 0.0;
    for k in 0..m {
        let q = (k as f64 + 0.5) / m as f64;
        sq += (quantile(&sa, q) - quantile(&sb, q)).powi(2);
    }
    Ok((sq / m as f64).sqrt())
}

/// Linear-interpolation quantile of sorted data at q in (0, 1).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * n as f64 - 0.5;
    if pos <= 0.0 {
        return sorted[0];
    }
    if pos >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
}

/// W2 between the pushforwards of two sample sets under an energy function.
pub fn energy_w2(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    energy: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let ea: Result<Vec<f64>> = a.iter().map(|x| energy(x)).collect();
    let eb: Result<Vec<f64>> = b.iter().map(|x| energy(x)).collect();
    w2_1d(&ea?, &eb?)
}

/// Exact W2 between equal-size point clouds via an optimal assignment on
/// squared Euclidean costs. Guarded to n <= 1024.
pub fn w2_assignment(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() {
        return Err(FsError::Empty { what: "w2_assignment input" });
    }
    if a.len() != b.len() {
        return Err(FsError::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() > 1024 {
        return Err(FsError::Config(format!(
            "w2_assignment limited to 1024 points, got {}",
            a.len()
        )));
    }
    let n = a.len();
    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if a[i].len() != b[j].len() {
                return Err(FsError::DimMismatch {
                    expected: a[i].len(),
                    got: b[j].len(),
                });
            }
            cost[i][j] = a[i]
                .iter()
                .zip(&b[j])
                .map(|(x, y)| (x - y).powi(2))
                .sum();
        }
    }
    let assignment = hungarian(&cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((total / n as f64).sqrt())
}

/// O(n^3) Hungarian algorithm (potentials formulation). Returns, for each
/// row, its assigned column under the minimum-cost perfect matching.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-indexed internals; way[j] is the previous column on the alternating path
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (0 = none)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut out = vec![0usize; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// Distance between two particle configurations modulo particle permutation
/// and global rotation: both are centered, particles are matched by an
/// optimal assignment on pairwise squared distances, then the best proper
/// rotation (Kabsch, d in {2, 3}) aligns the matched clouds. Returns the RMS
/// residual.
pub fn aligned_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() {
        return Err(FsError::Empty { what: "aligned_distance input" });
    }
    if a.len() != b.len() {
        return Err(FsError::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let d = a[0].len();
    if d != 2 && d != 3 {
        return Err(FsError::Config(format!(
            "aligned_distance supports 2-D and 3-D particles, got {d}"
        )));
    }
    let center = |pts: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let n = pts.len() as f64;
        let mut com = vec![0.0; d];
        for p in pts {
            for k in 0..d {
                com[k] += p[k] / n;
            }
        }
        pts.iter()
            .map(|p| p.iter().zip(&com).map(|(x, c)| x - c).collect())
            .collect()
    };
    let ca = center(a);
    let cb = center(b);
    let n = ca.len();

    let apply = |rot: &[Vec<f64>], p: &[f64]| -> Vec<f64> {
        (0..d).map(|r| (0..d).map(|c| rot[r][c] * p[c]).sum()).collect()
    };
    let sum_sq = |rot: &[Vec<f64>], perm: &[usize]| -> f64 {
        ca.iter()
            .zip(perm)
            .map(|(ai, &j)| {
                let rb = apply(rot, &cb[j]);
                ai.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum()
    };

    // The assignment and the rotation depend on each other, so alternate
    // between them (each half-step is optimal given the other, so the cost
    // is non-increasing) and restart from a fixed grid of rotations to
    // escape bad initial matchings.
    let mut best = f64::INFINITY;
    for r0 in seed_rotations(d) {
        let mut rot = r0;
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let rotated: Vec<Vec<f64>> = cb.iter().map(|p| apply(&rot, p)).collect();
            let mut cost = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    cost[i][j] = ca[i]
                        .iter()
                        .zip(&rotated[j])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                }
            }
            let perm = hungarian(&cost);

            // cross-covariance H = sum_i b_{perm(i)} a_i^T, rotate b onto a
            let mut h = vec![vec![0.0; d]; d];
            for (ai, &j) in ca.iter().zip(&perm) {
                for r in 0..d {
                    for c in 0..d {
                        h[r][c] += cb[j][r] * ai[c];
                    }
                }
            }
            rot = best_rotation(&h, d);
            let sq = sum_sq(&rot, &perm);
            if sq >= prev - 1e-12 * (1.0 + prev) {
                prev = prev.min(sq);
                break;
            }
            prev = sq;
        }
        best = best.min(prev);
    }
    Ok((best / n as f64).sqrt())
}

/// Deterministic restart rotations for the alternating alignment: a 30
/// degree grid in 2-D, the 24 rotations of the cube in 3-D.
fn seed_rotations(d: usize) -> Vec<Vec<Vec<f64>>> {
    if d == 2 {
        return (0..12)
            .map(|k| {
                let th = k as f64 * std::f64::consts::PI / 6.0;
                vec![vec![th.cos(), -th.sin()], vec![th.sin(), th.cos()]]
            })
            .collect();
    }
    let mut out = Vec::with_capacity(24);
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    for p in perms {
        for signs in 0..8u32 {
            let mut m = vec![vec![0.0; 3]; 3];
            for (r, &c) in p.iter().enumerate() {
                m[r][c] = if signs >> r & 1 == 1 { -1.0 } else { 1.0 };
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            if det > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// Proper rotation R maximizing trace(R H) for d = 2 or 3.
fn best_rotation(h: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    if d == 2 {
        // trace(R H) = cos(theta)(h00 + h11) + sin(theta)(h10 - h01)
        let theta = (h[1][0] - h[0][1]).atan2(h[0][0] + h[1][1]);
        vec![
            vec![theta.cos(), theta.sin()],
            vec![-theta.sin(), theta.cos()],
        ]
    } else {
        // quaternion formulation: the optimal rotation corresponds to the
        // dominant eigenvector of the 4x4 Davenport K matrix built from H
        let k = davenport_k(h);
        let q = dominant_eigenvector(&k);
        quat_to_rotation(&q)
    }
}

fn davenport_k(h: &[Vec<f64>]) -> [[f64; 4]; 4] {
    let (sxx, sxy, sxz) = (h[0][0], h[0][1], h[0][2]);
    let (syx, syy, syz) = (h[1][0], h[1][1], h[1][2]);
    let (szx, szy, szz) = (h[2][0], h[2][1], h[2][2]);
    [
        [
            sxx + syy + szz,
            syz - szy,
            szx - sxz,
            sxy - syx,
        ],
        [
            syz - szy,
            sxx - syy - szz,
            sxy + syx,
            szx + sxz,
        ],
        [
            szx - sxz,
            sxy + syx,
            -sxx + syy - szz,
            syz + szy,
        ],
        [
            sxy - syx,
            szx + sxz,
            syz + szy,
            -sxx - syy + szz,
        ],
    ]
}

/// Power iteration with shift to make the target eigenvalue dominant.
fn dominant_eigenvector(k: &[[f64; 4]; 4]) -> [f64; 4] {
    // shift by a bound on the spectral radius so the largest eigenvalue of
    // K + shift*I is positive and dominant
    let shift: f64 = k
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let mut v = [0.5, 0.5, 0.5, 0.5];
    for _ in 0..200 {
        let mut w = [0.0; 4];
        for r in 0..4 {
            for c in 0..4 {
                w[r] += k[r][c] * v[c];
            }
            w[r] += shift * v[r];
        }
        let n = (w.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if n == 0.0 {
            break;
        }
        for r in 0..4 {
            v[r] = w[r] / n;
        }
    }
    v
}

fn quat_to_rotation(q: &[f64; 4]) -> Vec<Vec<f64>> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    vec![
        vec![
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        vec![
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        vec![
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Histogram with `bins` equal-width bins over [lo, hi], smoothed and
/// normalized to a probability vector. Out-of-range values clamp to the edge
/// bins.
fn histogram_1d(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![HIST_SMOOTHING; bins];
    let width = (hi - lo) / bins as f64;
    for &x in xs {
        let idx = (((x - lo) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
        h[idx] += 1.0;
    }
    let total: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// KL(p || q) between smoothed 1-D histograms of two sample sets over a
/// shared range, in nats.
pub fn kl_1d_hist(p: &[f64], q: &[f64], lo: f64, hi: f64, bins: usize) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(FsError::Empty { what: "kl_1d_hist input" });
    }
    if !(hi > lo) || bins == 0 {
        return Err(FsError::Config("invalid histogram range or bin count".into()));
    }
    let hp = histogram_1d(p, lo, hi, bins);
    let hq = histogram_1d(q, lo, hi, bins);
    Ok(hp
        .iter()
        .zip(&hq)
        .map(|(a, b)| a * (a / b).ln())
        .sum())
}

/// Jensen-Shannon divergence between smoothed 2-D histograms of the first two
/// coordinates, in nats (bounded by ln 2).
pub fn jsd_2d_hist(
    p: &[Vec<f64>],
    q: &[Vec<f64>],
    lo: [f64; 2],
    hi: [f64; 2],
    bins: usize,
) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(FsError::Empty { what: "jsd_2d_hist input" });
    }
    if !(hi[0] > lo[0]) || !(hi[1] > lo[1]) || bins == 0 {
        return Err(FsError::Config("invalid histogram range or bin count".into()));
    }
    let hist2 = |xs: &[Vec<f64>]| -> Result<Vec<f64>> {
        let mut h = vec![HIST_SMOOTHING; bins * bins];
        let w0 = (hi[0] - lo[0]) / bins as f64;
        let w1 = (hi[1] - lo[1]) / bins as f64;
        for x in xs {
            if x.len() < 2 {
                return Err(FsError::DimMismatch {
                    expected: 2,
                    got: x.len(),
                });
            }
            let i = (((x[0] - lo[0]) / w0).floor() as i64).clamp(0, bins as i64 - 1) as usize;
            let j = (((x[1] - lo[1]) / w1).floor() as i64).clamp(0, bins as i64 - 1) as usize;
            h[i * bins + j] += 1.0;
        }
        let total: f64 = h.iter().sum();
        h.iter_mut().for_each(|v| *v /= total);
        Ok(h)
    };
    let hp = hist2(p)?;
    let hq = hist2(q)?;
    let mut jsd = 0.0;
    for (a, b) in hp.iter().zip(&hq) {
        let m = 0.5 * (a + b);
        jsd += 0.5 * a * (a / m).ln() + 0.5 * b * (b / m).ln();
    }
    Ok(jsd.max(0.0))
}

/// Fraction of sphere samples nearest (by inner product) to each mode
/// direction.
pub fn sphere_mode_weights(samples: &[Vec<f64>], modes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(FsError::Empty { what: "sphere_mode_weights samples" });
    }
    if modes.is_empty() {
        return Err(FsError::Empty { what: "sphere_mode_weights modes" });
    }
    let mut counts = vec![0usize; modes.len()];
    for s in samples {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (k, m) in modes.iter().enumerate() {
            if m.len() != s.len() {
                return Err(FsError::DimMismatch {
                    expected: s.len(),
                    got: m.len(),
                });
            }
            let d = dot(s, m);
            if d > best_dot {
                best_dot = d;
                best = k;
            }
        }
        counts[best] += 1;
    }
    Ok(counts
        .iter()
        .map(|&c| c as f64 / samples.len() as f64)
        .collect())
}

/// Mean angular deviation (radians) between each mode and the mean direction
/// of its assigned samples. Modes with no assigned samples yield an error.
pub fn sphere_mode_directions(
    samples: &[Vec<f64>],
    modes: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(FsError::Empty { what: "sphere_mode_directions samples" });
    }
    let dim = samples[0].len();
    let mut sums = vec![vec![0.0; dim]; modes.len()];
    for s in samples {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (k, m) in modes.iter().enumerate() {
            let d = dot(s, m);
            if d > best_dot {
                best_dot = d;
                best = k;
            }
        }
        for i in 0..dim {
            sums[best][i] += s[i];
        }
    }
    sums.into_iter()
        .map(|v| {
            let n = norm2(&v);
            if n == 0.0 {
                Err(FsError::Empty { what: "mode with no assigned samples" })
            } else {
                Ok(v.into_iter().map(|x| x / n).collect())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Role};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn w2_1d_identical_is_zero_and_shift_is_exact() {
        let a = vec![0.3, -1.2, 5.0, 2.2];
        assert_eq!(w2_1d(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 2.5).collect();
        assert!((w2_1d(&a, &b).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn w2_1d_order_invariant_and_symmetric() {
        let a = vec![1.0, 0.0, 3.0];
        let b = vec![2.0, -1.0, 4.0];
        let ar = vec![3.0, 1.0, 0.0];
        assert_eq!(w2_1d(&a, &b).unwrap(), w2_1d(&ar, &b).unwrap());
        assert_eq!(w2_1d(&a, &b).unwrap(), w2_1d(&b, &a).unwrap());
    }

    #[test]
    fn w2_1d_unequal_sizes_converges_to_gaussian_truth() {
        // N(0,1) vs N(2,1): true W2 = 2
        let mut rng = stream(40, Role::Oracle { tag: 600 });
        let a: Vec<f64> = (0..8000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..5000)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + 2.0)
            .collect();
        let w = w2_1d(&a, &b).unwrap();
        assert!((w - 2.0).abs() < 0.08, "w2 {w}");
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = stream(41, Role::Oracle { tag: 601 });
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect();
            let assign = hungarian(&cost);
            let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            // exhaustive minimum over all permutations
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute(&mut perm, 0, &mut |p| {
                let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                if c < best {
                    best = c;
                }
            });
            assert!((total - best).abs() < 1e-9, "{total} vs {best}");
            // assignment is a permutation
            let mut seen = vec![false; n];
            for &j in &assign {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
    }

    fn permute(perm: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == perm.len() {
            f(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(perm, k + 1, f);
            perm.swap(k, i);
        }
    }

    #[test]
    fn w2_assignment_permutation_invariant() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.0]];
        let b = vec![vec![2.0, 0.1], vec![0.1, 0.0], vec![1.0, 0.9]];
        let w = w2_assignment(&a, &b).unwrap();
        let b_perm = vec![b[2].clone(), b[0].clone(), b[1].clone()];
        assert!((w - w2_assignment(&a, &b_perm).unwrap()).abs() < 1e-12);
        assert_eq!(w2_assignment(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn w2_assignment_size_guard() {
        let big: Vec<Vec<f64>> = (0..1025).map(|i| vec![i as f64]).collect();
        assert!(w2_assignment(&big, &big).is_err());
    }

    #[test]
    fn aligned_distance_zero_under_symmetry_ops() {
        let a = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 2.0],
            vec![0.5, -0.5],
        ];
        // permute, rotate by 73 degrees, translate
        let theta: f64 = 73.0f64.to_radians();
        let transform = |p: &Vec<f64>| {
            vec![
                theta.cos() * p[0] - theta.sin() * p[1] + 5.0,
                theta.sin() * p[0] + theta.cos() * p[1] - 3.0,
            ]
        };
        let b = vec![
            transform(&a[2]),
            transform(&a[0]),
            transform(&a[3]),
            transform(&a[1]),
        ];
        assert!(aligned_distance(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn aligned_distance_zero_under_3d_rotation() {
        let a = vec![
            vec![1.0, 0.0, 0.3],
            vec![-1.0, 0.5, 0.0],
            vec![0.0, 2.0, -1.0],
            vec![0.5, -0.5, 0.7],
        ];
        // rotation about axis (1,1,1)/sqrt(3) by 50 degrees (Rodrigues)
        let axis = [1.0 / 3.0f64.sqrt(); 3];
        let ang: f64 = 50.0f64.to_radians();
        let rot = |p: &Vec<f64>| -> Vec<f64> {
            let kxp = [
                axis[1] * p[2] - axis[2] * p[1],
                axis[2] * p[0] - axis[0] * p[2],
                axis[0] * p[1] - axis[1] * p[0],
            ];
            let kd = axis[0] * p[0] + axis[1] * p[1] + axis[2] * p[2];
            (0..3)
                .map(|i| {
                    p[i] * ang.cos() + kxp[i] * ang.sin() + axis[i] * kd * (1.0 - ang.cos()) + 1.5
                })
                .collect()
        };
        let b = vec![rot(&a[3]), rot(&a[1]), rot(&a[0]), rot(&a[2])];
        assert!(aligned_distance(&a, &b).unwrap() < 1e-6);
    }

    #[test]
    fn aligned_distance_detects_reflection() {
        // a mirrored scalene triangle cannot be aligned by a proper rotation
        // plus relabeling in 2-D (an isoceles one could, via its symmetry axis)
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.5, -1.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|p| vec![-p[0], p[1]]).collect();
        assert!(aligned_distance(&a, &b).unwrap() > 0.1);
    }

    #[test]
    fn aligned_distance_matches_exhaustive_search() {
        // brute force: all permutations x fine rotation grid
        let mut rng = stream(42, Role::Oracle { tag: 602 });
        for _ in 0..5 {
            let a: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let b: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let fast = aligned_distance(&a, &b).unwrap();
            // center both
            let center = |pts: &[Vec<f64>]| -> Vec<Vec<f64>> {
                let com: Vec<f64> = (0..2)
                    .map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64)
                    .collect();
                pts.iter()
                    .map(|p| vec![p[0] - com[0], p[1] - com[1]])
                    .collect()
            };
            let ca = center(&a);
            let cb = center(&b);
            let mut best = f64::INFINITY;
            let mut perm: Vec<usize> = (0..4).collect();
            permute(&mut perm, 0, &mut |p| {
                for step in 0..3600 {
                    let th = step as f64 / 3600.0 * std::f64::consts::TAU;
                    let mut sq = 0.0;
                    for (i, &j) in p.iter().enumerate() {
                        let rx = th.cos() * cb[j][0] - th.sin() * cb[j][1];
                        let ry = th.sin() * cb[j][0] + th.cos() * cb[j][1];
                        sq += (ca[i][0] - rx).powi(2) + (ca[i][1] - ry).powi(2);
                    }
                    let d = (sq / 4.0).sqrt();
                    if d < best {
                        best = d;
                    }
                }
            });
            // the assignment step uses unrotated costs, so the fast value is
            // an upper bound on quality: it must never beat the exhaustive
            // optimum and should be close for generic clouds
            assert!(fast >= best - 1e-6, "fast {fast} below exhaustive {best}");
        }
    }

    #[test]
    fn kl_hist_properties() {
        let mut rng = stream(43, Role::Oracle { tag: 603 });
        let a: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let same = kl_1d_hist(&a, &a, -4.0, 4.0, 40).unwrap();
        assert_eq!(same, 0.0);
        let close = kl_1d_hist(&a, &b, -4.0, 4.0, 40).unwrap();
        assert!(close >= 0.0 && close < 0.05, "kl {close}");
        let shifted: Vec<f64> = a.iter().map(|x| x + 3.0).collect();
        let far = kl_1d_hist(&a, &shifted, -4.0, 7.0, 40).unwrap();
        assert!(far > 1.0, "kl {far}");
    }

    #[test]
    fn jsd_bounds_and_symmetry() {
        let mut rng = stream(44, Role::Oracle { tag: 604 });
        let a: Vec<Vec<f64>> = (0..3000)
            .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 10.0, p[1]]).collect();
        let lo = [-14.0, -4.0];
        let hi = [14.0, 4.0];
        let d_ab = jsd_2d_hist(&a, &b, lo, hi, 30).unwrap();
        let d_ba = jsd_2d_hist(&b, &a, lo, hi, 30).unwrap();
        assert!((d_ab - d_ba).abs() < 1e-12);
        // disjoint supports: JSD approaches ln 2
        assert!(d_ab > 0.99 * std::f64::consts::LN_2, "jsd {d_ab}");
        assert!(d_ab <= std::f64::consts::LN_2 + 1e-12);
        assert_eq!(jsd_2d_hist(&a, &a, lo, hi, 30).unwrap(), 0.0);
    }

    #[test]
    fn sphere_mode_weights_recover_mixture() {
        use crate::targets::vmf_sample_oracle;
        let modes = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let mut samples = Vec::new();
        samples.extend(vmf_sample_oracle(&modes[0], 50.0, 500, 1).unwrap());
        samples.extend(vmf_sample_oracle(&modes[1], 50.0, 300, 2).unwrap());
        samples.extend(vmf_sample_oracle(&modes[2], 50.0, 200, 3).unwrap());
        let w = sphere_mode_weights(&samples, &modes).unwrap();
        assert!((w[0] - 0.5).abs() < 0.03);
        assert!((w[1] - 0.3).abs() < 0.03);
        assert!((w[2] - 0.2).abs() < 0.03);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let dirs = sphere_mode_directions(&samples, &modes).unwrap();
        for (d, m) in dirs.iter().zip(&modes) {
            let ang = dot(d, m).clamp(-1.0, 1.0).acos();
            assert!(ang < 2.0f64.to_radians(), "angle {ang}");
        }
    }

    #[test]
    fn energy_w2_matches_manual_pushforward() {
        let energy = |x: &[f64]| -> Result<f64> { Ok(norm2(x)) };
        let a = vec![vec![3.0, 4.0], vec![0.0, 1.0]];
        let b = vec![vec![5.0, 12.0], vec![0.0, 2.0]];
        // energies: a -> {5, 1}, b -> {13, 2} ; sorted coupling (1,2),(5,13)
        let expect = ((1.0f64 + 64.0) / 2.0).sqrt();
        assert!((energy_w2(&a, &b, &energy).unwrap() - expect).abs() < 1e-12);
    }
}
