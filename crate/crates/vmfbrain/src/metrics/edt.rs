//! Exact Euclidean distance transform on 3D voxel grids.
//!
//! Separable lower-envelope squared-distance transform (one 1D pass per
//! axis). All intermediate values are integers represented in f64 (well
//! inside the exactly-representable range for any realistic grid), so
//! the result is the exact squared Euclidean distance to the nearest
//! source voxel — no approximation to within floating-point sqrt.

use ndarray::Array3;

/// Finite stand-in for "no source here"; far larger than any squared
/// grid distance yet small enough to keep envelope arithmetic exact.
const FAR: f64 = 1e12;

/// 1D squared-distance transform: out[q] = min_p ((q - p)^2 + f[p]).
///
/// `v` and `z` are scratch buffers of length n and n + 1.
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    debug_assert!(out.len() == n && v.len() == n && z.len() == n + 1);
    if n == 1 {
        out[0] = f[0];
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                debug_assert!(k > 0, "z[0] = -inf keeps the envelope non-empty");
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        out[q] = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Exact squared Euclidean distance from every voxel to the nearest
/// `true` voxel of `sources` (unit spacing on all three axes). Voxels
/// stay at or above [`FAR`] when there is no source at all.
pub fn squared_edt_3d(sources: &ndarray::ArrayView3<bool>) -> Array3<f64> {
    let (ns, nh, nw) = sources.dim();
    let mut dist = Array3::from_shape_fn((ns, nh, nw), |idx| {
        if sources[idx] {
            0.0
        } else {
            FAR
        }
    });
    let max_n = ns.max(nh).max(nw);
    let mut f = vec![0.0f64; max_n];
    let mut out = vec![0.0f64; max_n];
    let mut v = vec![0usize; max_n];
    let mut z = vec![0.0f64; max_n + 1];

    // slice axis
    for i in 0..nh {
        for j in 0..nw {
            for s in 0..ns {
                f[s] = dist[[s, i, j]];
            }
            dt_1d(&f[..ns], &mut out[..ns], &mut v[..ns], &mut z[..=ns]);
            for s in 0..ns {
                dist[[s, i, j]] = out[s];
            }
        }
    }
    // row axis
    for s in 0..ns {
        for j in 0..nw {
            for i in 0..nh {
                f[i] = dist[[s, i, j]];
            }
            dt_1d(&f[..nh], &mut out[..nh], &mut v[..nh], &mut z[..=nh]);
            for i in 0..nh {
                dist[[s, i, j]] = out[i];
            }
        }
    }
    // column axis
    for s in 0..ns {
        for i in 0..nh {
            for j in 0..nw {
                f[j] = dist[[s, i, j]];
            }
            dt_1d(&f[..nw], &mut out[..nw], &mut v[..nw], &mut z[..=nw]);
            for j in 0..nw {
                dist[[s, i, j]] = out[j];
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3 as A3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(sources: &A3<bool>) -> A3<f64> {
        let dim = sources.dim();
        let src: Vec<(usize, usize, usize)> = sources
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|(idx, _)| idx)
            .collect();
        A3::from_shape_fn(dim, |(s, i, j)| {
            src.iter()
                .map(|&(ss, si, sj)| {
                    let d = (s as f64 - ss as f64).powi(2)
                        + (i as f64 - si as f64).powi(2)
                        + (j as f64 - sj as f64).powi(2);
                    d
                })
                .fold(f64::INFINITY, f64::min)
        })
    }

    #[test]
    fn single_source_gives_squared_distances() {
        let mut src = A3::from_elem((4, 5, 6), false);
        src[[1, 2, 3]] = true;
        let d = squared_edt_3d(&src.view());
        assert_eq!(d[[1, 2, 3]], 0.0);
        assert_eq!(d[[1, 2, 0]], 9.0);
        assert_eq!(d[[3, 2, 3]], 4.0);
        assert_eq!(d[[0, 0, 0]], 1.0 + 4.0 + 9.0);
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let src = A3::from_shape_fn((4, 7, 6), |_| rng.random_range(0..10) == 0);
            if !src.iter().any(|&v| v) {
                continue;
            }
            let fast = squared_edt_3d(&src.view());
            let slow = brute_force(&src);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert_eq!(a, b, "exact squared distances expected");
            }
        }
    }

    #[test]
    fn two_points_five_apart_along_one_axis() {
        let mut src = A3::from_elem((1, 1, 8), false);
        src[[0, 0, 1]] = true;
        let d = squared_edt_3d(&src.view());
        assert_eq!(d[[0, 0, 6]], 25.0);
    }

    #[test]
    fn all_sources_is_identically_zero() {
        let src = A3::from_elem((3, 3, 3), true);
        let d = squared_edt_3d(&src.view());
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_sources_stays_far() {
        let src = A3::from_elem((2, 2, 2), false);
        let d = squared_edt_3d(&src.view());
        assert!(d.iter().all(|&v| v >= FAR));
    }
}
