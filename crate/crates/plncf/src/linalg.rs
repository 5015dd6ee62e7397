//! Small dense-vector helpers shared across the crate.
//!
//! Everything here operates on `&[f64]` slices; the embedding and layer
//! types in [`crate::models`] own their storage as flat `Vec<f64>`.

/// Norms are clamped below at this floor before any division, so cosine
/// values stay finite even for zero vectors (e.g. at initialization).
pub const NORM_FLOOR: f64 = 1e-8;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with the [`NORM_FLOOR`] clamp on both norms.
///
/// The floored variant maps a zero vector against anything to 0.0, which is
/// the convention used by the pseudo-label pathway at initialization.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a).max(NORM_FLOOR);
    let nb = norm(b).max(NORM_FLOOR);
    dot(a, b) / (na * nb)
}

/// In-place l2 normalization with the [`NORM_FLOOR`] clamp.
pub fn normalize(a: &mut [f64]) {
    let n = norm(a).max(NORM_FLOOR);
    for x in a.iter_mut() {
        *x /= n;
    }
}

/// Copying counterpart of [`normalize`].
pub fn normalized(a: &[f64]) -> Vec<f64> {
    let mut out = a.to_vec();
    normalize(&mut out);
    out
}

/// Cosine distance `1 - cos(a, b)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine(a, b)
}

/// Cosine plus its gradients with respect to both arguments, consistent with
/// the floored [`cosine`]: when a norm sits below [`NORM_FLOOR`] the floor is
/// treated as a constant, so the analytic gradient matches finite differences
/// of the floored forward on either side of the clamp.
pub fn cosine_with_grads(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let naf = na.max(NORM_FLOOR);
    let nbf = nb.max(NORM_FLOOR);
    let d = dot(a, b);
    let cos = d / (naf * nbf);
    let grad = |this: &[f64], other: &[f64], n_this: f64, nf_this: f64, nf_other: f64| {
        if n_this > NORM_FLOOR {
            // d/dx [dot(x,b) / (|x| |b|)] = b/(|x||b|) - cos * x/|x|^2
            this.iter()
                .zip(other)
                .map(|(&x, &o)| o / (nf_this * nf_other) - cos * x / (n_this * n_this))
                .collect()
        } else {
            // Below the floor the denominator is constant.
            other.iter().map(|&o| o / (nf_this * nf_other)).collect()
        }
    };
    let da = grad(a, b, na, naf, nbf);
    let db = grad(b, a, nb, nbf, naf);
    (cos, da, db)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean and sample standard deviation (n-1 denominator).
///
/// Returns `(mean, 0.0)` for a single value; panics on empty input.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "mean_std of empty slice");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_identical_is_one() {
        let v = vec![0.3, -1.2, 4.0];
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 2.0];
        assert!(cosine(&a, &b).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_vector_floors_to_zero() {
        let z = vec![0.0; 4];
        let v = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(cosine(&z, &v), 0.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn cosine_grads_match_finite_differences() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(31);
        let h = 1e-6;
        for _ in 0..50 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, da, db) = cosine_with_grads(&a, &b);
            for i in 0..5 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[i] += h;
                am[i] -= h;
                let fd = (cosine(&ap, &b) - cosine(&am, &b)) / (2.0 * h);
                assert!((fd - da[i]).abs() < 1e-6, "da[{i}]: fd {fd} vs {}", da[i]);
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[i] += h;
                bm[i] -= h;
                let fd = (cosine(&a, &bp) - cosine(&a, &bm)) / (2.0 * h);
                assert!((fd - db[i]).abs() < 1e-6, "db[{i}]: fd {fd} vs {}", db[i]);
            }
        }
    }

    #[test]
    fn cosine_grad_is_orthogonal_to_its_argument() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(32);
        for _ in 0..50 {
            let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, da, db) = cosine_with_grads(&a, &b);
            assert!(dot(&a, &da).abs() < 1e-10);
            assert!(dot(&b, &db).abs() < 1e-10);
        }
    }

    #[test]
    fn cosine_grad_below_floor_is_constant_denominator() {
        let a = vec![0.0; 3];
        let b = vec![1.0, 2.0, 2.0];
        let (cos, da, _) = cosine_with_grads(&a, &b);
        assert_eq!(cos, 0.0);
        // |b| = 3, floored |a| = 1e-8: gradient is b / (1e-8 * 3).
        for (g, &bv) in da.iter().zip(&b) {
            assert!((g - bv / (NORM_FLOOR * 3.0)).abs() < 1e-3);
        }
    }

    #[test]
    fn mean_std_two_points() {
        let (m, s) = mean_std(&[2.0, 4.0]);
        assert!((m - 3.0).abs() < 1e-12);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
