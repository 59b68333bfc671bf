//! Low-dimensional basis of a sampling trajectory.
//!
//! The basis for correcting `d_{t_i}` is built from the history buffer
//! `{x_T, d_{t_N}, ..., d_{t_{i+1}}}` with `d_{t_i}` appended as an extra row
//! (no projection step): the leading right-singular vectors of that uncentered
//! matrix are orthonormalized behind `d / ‖d‖`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PasError, Result};
use crate::solvers::HistoryBuffer;
use crate::Vector;

pub const DEFAULT_BASIS_SIZE: usize = 4;
pub const DEFAULT_DROP_TOL: f64 = 1e-8;
/// Norm below which a direction cannot define `u_1`.
pub const MIN_DIRECTION_NORM: f64 = 1e-30;
/// Singular values below this fraction of the largest are treated as rank deficiency.
const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    vectors: Vec<Vector>,
    first_is_direction: bool,
}

impl OrthonormalBasis {
    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn first_is_direction(&self) -> bool {
        self.first_is_direction
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    /// `Uᵀ g`.
    pub fn project(&self, g: &Vector) -> Vec<f64> {
        self.vectors.iter().map(|u| u.dot(g)).collect()
    }

    /// Largest deviation of `UᵀU` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, u) in self.vectors.iter().enumerate() {
            for (b, w) in self.vectors.iter().enumerate() {
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((u.dot(w) - want).abs());
            }
        }
        worst
    }
}

/// Coordinates of a direction in an [`OrthonormalBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoordinateVector(pub Vec<f64>);

impl CoordinateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The leading `k` coordinates, used when a basis came out smaller than requested.
    pub fn truncated(&self, k: usize) -> CoordinateVector {
        CoordinateVector(self.0[..k.min(self.0.len())].to_vec())
    }
}

/// Modified Gram–Schmidt with one re-orthogonalization pass.
///
/// A vector is dropped when its residual after projection falls below
/// `drop_tol · ‖input‖`.
pub fn gram_schmidt(vectors: &[Vector], drop_tol: f64) -> Result<Vec<Vector>> {
    let mut out: Vec<Vector> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let rest = w.norm();
        if rest <= drop_tol * norm {
            continue;
        }
        out.push(w / rest);
    }
    if out.is_empty() {
        return Err(PasError::EmptyBasis);
    }
    Ok(out)
}

fn rows_to_matrix<'a>(rows: impl Iterator<Item = &'a Vector>, n_rows: usize, dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_rows, dim);
    for (r, row) in rows.enumerate() {
        m.row_mut(r).copy_from(&row.transpose());
    }
    m
}

/// Right-singular vectors with their singular values, largest first, after
/// discarding numerically null directions. Signs follow the largest-magnitude
/// projection convention: `X v` has a positive entry of largest absolute value.
fn leading_right_singular_vectors(x: &DMatrix<f64>, k: usize) -> Vec<(f64, Vector)> {
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let Some(&top) = order.first() else {
        return Vec::new();
    };
    let sigma_max = svd.singular_values[top];
    order
        .into_iter()
        .filter(|&j| svd.singular_values[j] > RANK_TOL * sigma_max)
        .take(k)
        .map(|j| {
            let v: Vector = v_t.row(j).transpose();
            let proj = x * &v;
            let pivot = proj.iamax();
            let v = if proj[pivot] < 0.0 { -v } else { v };
            (svd.singular_values[j], v)
        })
        .collect()
}

/// Basis of up to `k` vectors with `u_1 = d/‖d‖`; degenerate candidates are dropped.
pub fn pca_basis(history: &HistoryBuffer, d: &Vector, k: usize) -> Result<OrthonormalBasis> {
    if !(2..=4).contains(&k) {
        return Err(PasError::invalid(format!("basis size must be 2..=4, got {k}")));
    }
    if d.len() != history.dim() {
        return Err(PasError::invalid(format!(
            "direction has dimension {} but history has {}",
            d.len(),
            history.dim()
        )));
    }
    let norm = d.norm();
    if !(norm >= MIN_DIRECTION_NORM) {
        return Err(PasError::DegenerateDirection(norm));
    }

    let x = rows_to_matrix(history.rows().chain(std::iter::once(d)), history.len() + 1, d.len());
    let mut candidates = Vec::with_capacity(k);
    candidates.push(d / norm);
    candidates.extend(leading_right_singular_vectors(&x, k - 1).into_iter().map(|(_, v)| v));

    let vectors = gram_schmidt(&candidates, DEFAULT_DROP_TOL)?;
    Ok(OrthonormalBasis {
        vectors,
        first_is_direction: true,
    })
}

/// `(‖d‖, 0, ..., 0)` of length `k`, so that `U C = d`.
pub fn init_coordinates(d: &Vector, k: usize) -> Result<CoordinateVector> {
    if k == 0 {
        return Err(PasError::invalid("basis size must be >= 1"));
    }
    let norm = d.norm();
    if !(norm >= MIN_DIRECTION_NORM) {
        return Err(PasError::DegenerateDirection(norm));
    }
    let mut c = vec![0.0; k];
    c[0] = norm;
    Ok(CoordinateVector(c))
}

/// `Σ_j c_j u_j`.
pub fn reconstruct_direction(basis: &OrthonormalBasis, coords: &CoordinateVector) -> Result<Vector> {
    if basis.len() != coords.len() {
        return Err(PasError::invalid(format!(
            "basis has {} vectors but {} coordinates were given",
            basis.len(),
            coords.len()
        )));
    }
    let mut out = Vector::zeros(basis.dim());
    for (u, c) in basis.vectors.iter().zip(&coords.0) {
        out.axpy(*c, u, 1.0);
    }
    Ok(out)
}

/// Cumulative fraction of `Σσ²` captured by the leading `1..=max_k` singular
/// values of the uncentered row matrix.
pub fn cumulative_variance(rows: &[Vector], max_k: usize) -> Result<Vec<f64>> {
    if rows.len() < 2 {
        return Err(PasError::invalid(format!("need at least 2 rows, got {}", rows.len())));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(PasError::invalid("rows have differing dimensions"));
    }
    let x = rows_to_matrix(rows.iter(), rows.len(), dim);
    let mut sigma2: Vec<f64> = x.singular_values().iter().map(|s| s * s).collect();
    sigma2.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sigma2.iter().sum();
    if !(total > 0.0) {
        return Err(PasError::UndefinedVariance);
    }
    let mut acc = 0.0;
    Ok((0..max_k)
        .map(|j| {
            if let Some(s) = sigma2.get(j) {
                acc += s;
            }
            (acc / total).min(1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn textbook_gram_schmidt() {
        let out = gram_schmidt(&[v(&[1.0, 0.0, 0.0]), v(&[1.0, 1.0, 0.0])], 1e-8).unwrap();
        assert_eq!(out.len(), 2);
        assert!((&out[0] - v(&[1.0, 0.0, 0.0])).norm() < 1e-15);
        assert!((&out[1] - v(&[0.0, 1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn collinear_vector_dropped() {
        let out = gram_schmidt(&[v(&[1.0, 0.0]), v(&[2.0, 0.0])], 1e-8).unwrap();
        assert_eq!(out, vec![v(&[1.0, 0.0])]);
    }

    #[test]
    fn all_degenerate_is_an_error() {
        assert!(matches!(
            gram_schmidt(&[Vector::zeros(3), Vector::zeros(3)], 1e-8),
            Err(PasError::EmptyBasis)
        ));
    }

    #[test]
    fn gram_schmidt_random_and_idempotent() {
        let mut rng = rng::stream(3, Purpose::Probe, 0);
        for _ in 0..50 {
            let vs: Vec<Vector> = (0..4).map(|_| rng::standard_normal_vector(&mut rng, 8)).collect();
            let q = gram_schmidt(&vs, 1e-8).unwrap();
            assert_eq!(q.len(), 4);
            for (a, u) in q.iter().enumerate() {
                for (b, w) in q.iter().enumerate() {
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((u.dot(w) - want).abs() < 1e-10);
                }
            }
            let again = gram_schmidt(&q, 1e-8).unwrap();
            for (a, b) in q.iter().zip(&again) {
                assert!((a - b).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_two_history() {
        let mut h = HistoryBuffer::new(v(&[2.0, 0.0, 0.0]));
        h.push(v(&[-1.0, 0.0, 0.0])).unwrap();
        h.push(v(&[0.5, 0.0, 0.0])).unwrap();
        let b = pca_basis(&h, &v(&[0.0, 1.0, 0.0]), 4).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.vectors()[0], v(&[0.0, 1.0, 0.0]));
        assert!((b.vectors()[1][0].abs() - 1.0).abs() < 1e-14);
        assert!(b.vectors()[1][2].abs() < 1e-14);
    }

    #[test]
    fn basis_size_bounds_and_degenerate_direction() {
        let h = HistoryBuffer::new(v(&[1.0, 2.0]));
        assert!(pca_basis(&h, &v(&[1.0, 0.0]), 1).is_err());
        assert!(pca_basis(&h, &v(&[1.0, 0.0]), 5).is_err());
        assert!(matches!(
            pca_basis(&h, &v(&[0.0, 0.0]), 4),
            Err(PasError::DegenerateDirection(_))
        ));
        assert!(pca_basis(&h, &v(&[1.0, 0.0, 0.0]), 4).is_err());
    }

    #[test]
    fn coordinates_initialise_to_the_norm() {
        assert_eq!(init_coordinates(&v(&[3.0, 4.0]), 4).unwrap().0, vec![5.0, 0.0, 0.0, 0.0]);
        assert_eq!(init_coordinates(&v(&[3.0, 4.0]), 2).unwrap().0, vec![5.0, 0.0]);
        assert!(init_coordinates(&v(&[0.0, 0.0]), 4).is_err());
    }

    #[test]
    fn reconstruction_cases() {
        let mut rng = rng::stream(5, Purpose::Probe, 0);
        let mut h = HistoryBuffer::new(rng::standard_normal_vector(&mut rng, 6));
        for _ in 0..4 {
            h.push(rng::standard_normal_vector(&mut rng, 6)).unwrap();
        }
        let d = rng::standard_normal_vector(&mut rng, 6);
        let b = pca_basis(&h, &d, 4).unwrap();
        assert_eq!(b.len(), 4);

        let back = reconstruct_direction(&b, &init_coordinates(&d, 4).unwrap()).unwrap();
        assert!((&back - &d).norm() / d.norm() < 1e-12);
        let zero = reconstruct_direction(&b, &CoordinateVector(vec![0.0; 4])).unwrap();
        assert_eq!(zero, Vector::zeros(6));
        let u2 = reconstruct_direction(&b, &CoordinateVector(vec![0.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(u2, b.vectors()[1]);
        assert!(reconstruct_direction(&b, &CoordinateVector(vec![1.0; 3])).is_err());
    }

    #[test]
    fn variance_of_rank_one_rows() {
        let rows = vec![v(&[1.0, 2.0, 3.0]), v(&[-2.0, -4.0, -6.0]), v(&[0.5, 1.0, 1.5])];
        let f = cumulative_variance(&rows, 3).unwrap();
        for x in f {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_errors() {
        assert!(matches!(
            cumulative_variance(&[Vector::zeros(3), Vector::zeros(3)], 2),
            Err(PasError::UndefinedVariance)
        ));
        assert!(cumulative_variance(&[v(&[1.0])], 1).is_err());
    }

    #[test]
    fn variance_is_monotone_and_ends_at_one() {
        let mut rng = rng::stream(8, Purpose::Probe, 0);
        let rows: Vec<Vector> = (0..12).map(|_| rng::standard_normal_vector(&mut rng, 5)).collect();
        let f = cumulative_variance(&rows, 7).unwrap();
        assert!(f.windows(2).all(|w| w[1] >= w[0]));
        assert!((f[6] - 1.0).abs() < 1e-12);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::rng::{self, Purpose};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn basis_is_orthonormal_and_led_by_direction(seed in any::<u64>(), rows in 1usize..12, k in 2usize..=4) {
            let mut rng = rng::stream(seed, Purpose::Probe, 0);
            let mut h = HistoryBuffer::new(rng::standard_normal_vector(&mut rng, 8) * 80.0);
            for _ in 1..rows {
                h.push(rng::standard_normal_vector(&mut rng, 8)).unwrap();
            }
            let d = rng::standard_normal_vector(&mut rng, 8);
            let b = pca_basis(&h, &d, k).unwrap();
            prop_assert!(b.len() <= k);
            prop_assert!(b.orthonormality_defect() < 1e-10);
            prop_assert!((&b.vectors()[0] - &d / d.norm()).amax() < 1e-12);
        }

        #[test]
        fn basis_is_scale_equivariant(seed in any::<u64>(), gamma in 1e-3f64..1e3) {
            let mut rng = rng::stream(seed, Purpose::Probe, 1);
            let rows: Vec<Vector> = (0..6).map(|_| rng::standard_normal_vector(&mut rng, 10)).collect();
            let d = rng::standard_normal_vector(&mut rng, 10);
            let build = |scale: f64| {
                let mut h = HistoryBuffer::new(&rows[0] * scale);
                for r in &rows[1..] {
                    h.push(r * scale).unwrap();
                }
                pca_basis(&h, &(&d * scale), 4).unwrap()
            };
            let (a, b) = (build(1.0), build(gamma));
            prop_assert_eq!(a.len(), b.len());
            for (u, w) in a.vectors().iter().zip(b.vectors()) {
                prop_assert!(u.dot(w).abs() > 1.0 - 1e-10);
            }
        }
    }
}
