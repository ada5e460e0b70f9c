//! Dense kernels: pivoted Householder QR, blocked Cholesky, symmetric Jacobi
//! eigendecomposition and blocked Gram products.
//!
//! Matrix products go through `ndarray::linalg::general_mat_mul`, which uses
//! the optimized `matrixmultiply` kernels for `f32`/`f64`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::scalar::Scalar;

const GRAM_BLOCK: usize = 256;
const CHOLESKY_BLOCK: usize = 128;

/// Orthonormal basis of the column space of `a`, computed by Householder QR
/// with column pivoting. Columns whose remaining norm falls below
/// `rel_tol * ||a||_F` are treated as dependent.
pub fn orthonormal_basis<T: Scalar>(a: ArrayView2<T>, rel_tol: T) -> Array2<T> {
    let (n, k) = a.dim();
    let mut w = a.to_owned();
    let frob = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let tol = rel_tol * frob;
    let mut reflectors: Vec<Array1<T>> = Vec::new();

    for j in 0..k.min(n) {
        // pivot: largest trailing column norm
        let (best, best_norm) = (j..k)
            .map(|c| {
                let norm = w.slice(s![j.., c]).iter().map(|&v| v * v).sum::<T>().sqrt();
                (c, norm)
            })
            .fold((j, -T::one()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best_norm <= tol || best_norm == T::zero() {
            break;
        }
        if best != j {
            for i in 0..n {
                w.swap([i, j], [i, best]);
            }
        }
        let mut v = w.slice(s![j.., j]).to_owned();
        let alpha = if v[0] >= T::zero() { -best_norm } else { best_norm };
        v[0] = v[0] - alpha;
        let vnorm2 = v.dot(&v);
        if vnorm2 > T::zero() {
            let two = T::of(2.0);
            for c in j..k {
                let mut col = w.slice_mut(s![j.., c]);
                let proj = v.dot(&col) * two / vnorm2;
                col.scaled_add(-proj, &v);
            }
        }
        reflectors.push(v);
    }

    let rank = reflectors.len();
    let mut q = Array2::<T>::zeros((n, rank));
    for i in 0..rank {
        q[[i, i]] = T::one();
    }
    let two = T::of(2.0);
    for (j, v) in reflectors.iter().enumerate().rev() {
        let vnorm2 = v.dot(v);
        if vnorm2 == T::zero() {
            continue;
        }
        let mut block = q.slice_mut(s![j.., ..]);
        let proj = v.dot(&block) .mapv(|x| x * two / vnorm2);
        for (c, &pc) in proj.iter().enumerate() {
            block.column_mut(c).scaled_add(-pc, v);
        }
    }
    q
}

/// `x * x^T` for an `r x c` view, computed block-row by block-row over the
/// lower triangle and mirrored.
pub fn gram_rows<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let r = x.nrows();
    let mut g = Array2::<T>::zeros((r, r));
    let mut start = 0;
    while start < r {
        let end = (start + GRAM_BLOCK).min(r);
        let lhs = x.slice(s![start..end, ..]);
        let rhs = x.slice(s![..end, ..]);
        let mut out = g.slice_mut(s![start..end, ..end]);
        general_mat_mul(T::one(), &lhs, &rhs.t(), T::zero(), &mut out);
        start = end;
    }
    mirror_lower(&mut g);
    g
}

fn mirror_lower<T: Scalar>(g: &mut Array2<T>) {
    let n = g.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            g[[i, j]] = g[[j, i]];
        }
    }
}

/// Failure of [`cholesky_in_place`]: the pivot at `index` was not above the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub index: usize,
}

/// Blocked right-looking Cholesky factorization `a = L L^T`. On success the
/// lower triangle of `a` holds `L` and the strict upper triangle is zeroed.
/// A pivot `<= pivot_floor` aborts the factorization.
pub fn cholesky_in_place<T: Scalar>(
    a: &mut Array2<T>,
    pivot_floor: T,
) -> Result<(), NotPositiveDefinite> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut k = 0;
    while k < n {
        let b = CHOLESKY_BLOCK.min(n - k);
        factor_diagonal_block(a, k, b, pivot_floor)?;
        solve_panel(a, k, b);
        let next = k + b;
        if next < n {
            let (left, mut right) = a.view_mut().split_at(Axis(1), next);
            let panel = left.slice(s![.., k..next]);
            let mut row = next;
            while row < n {
                let row_end = (row + CHOLESKY_BLOCK).min(n);
                let lhs = panel.slice(s![row..row_end, ..]);
                let rhs = panel.slice(s![next..row_end, ..]);
                let mut target = right.slice_mut(s![row..row_end, ..row_end - next]);
                general_mat_mul(-T::one(), &lhs, &rhs.t(), T::one(), &mut target);
                row = row_end;
            }
        }
        k = next;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            a[[i, j]] = T::zero();
        }
    }
    Ok(())
}

fn factor_diagonal_block<T: Scalar>(
    a: &mut Array2<T>,
    k: usize,
    b: usize,
    pivot_floor: T,
) -> Result<(), NotPositiveDefinite> {
    for j in k..k + b {
        let mut d = a[[j, j]];
        for l in k..j {
            d = d - a[[j, l]] * a[[j, l]];
        }
        if !(d > pivot_floor) {
            return Err(NotPositiveDefinite { index: j });
        }
        let ljj = d.sqrt();
        a[[j, j]] = ljj;
        for i in (j + 1)..k + b {
            let mut v = a[[i, j]];
            for l in k..j {
                v = v - a[[i, l]] * a[[j, l]];
            }
            a[[i, j]] = v / ljj;
        }
    }
    Ok(())
}

fn solve_panel<T: Scalar>(a: &mut Array2<T>, k: usize, b: usize) {
    let n = a.nrows();
    let (diag, mut below) = a.view_mut().split_at(Axis(0), k + b);
    let l11 = diag.slice(s![k..k + b, k..k + b]);
    let mut panel = below.slice_mut(s![.., k..k + b]);
    for mut row in panel.rows_mut() {
        for j in 0..b {
            let mut v = row[j];
            for l in 0..j {
                v = v - row[l] * l11[[j, l]];
            }
            row[j] = v / l11[[j, j]];
        }
    }
    debug_assert_eq!(below.nrows(), n - k - b);
}

/// Solves `L L^T x = rhs` given the factor from [`cholesky_in_place`].
pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, rhs: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut z = rhs.to_owned();
    for i in 0..n {
        let row = l.row(i);
        let acc = row.slice(s![..i]).dot(&z.slice(s![..i]));
        z[i] = (z[i] - acc) / row[i];
    }
    // back substitution with L^T, sweeping rows of L
    for i in (0..n).rev() {
        z[i] = z[i] / l[[i, i]];
        let xi = z[i];
        let row = l.row(i);
        for j in 0..i {
            z[j] = z[j] - row[j] * xi;
        }
    }
    z
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and a matrix whose columns are the matching eigenvectors.
pub fn symmetric_eigen<T: Scalar>(m: &Array2<T>) -> (Array1<T>, Array2<T>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = Array2::<T>::eye(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        let total: T = a.iter().map(|&x| x * x).sum();
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s_ = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s_ * akq;
                    a[[k, q]] = s_ * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s_ * aqk;
                    a[[q, k]] = s_ * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s_ * vkq;
                    v[[k, q]] = s_ * vkp + c * vkq;
                }
            }
        }
    }
    (a.diag().to_owned(), v)
}

/// Minimum-norm solution of `g x = rhs` for symmetric positive semi-definite
/// `g`, discarding eigenvalues below `dim * eps * max_eigenvalue`.
pub fn psd_pinv_solve<T: Scalar>(g: &Array2<T>, rhs: ArrayView1<T>) -> Array1<T> {
    let (vals, vecs) = symmetric_eigen(g);
    let dim = g.nrows();
    let max = vals.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let cutoff = T::of_usize(dim.max(1)) * T::epsilon() * T::of(10.0) * max;
    let coords = vecs.t().dot(&rhs);
    let scaled = Array1::from_iter(
        coords
            .iter()
            .zip(vals.iter())
            .map(|(&c, &d)| if d > cutoff { c / d } else { T::zero() }),
    );
    vecs.dot(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn basis_is_orthonormal_and_spans_input() {
        let a = random(40, 4, 3);
        let q = orthonormal_basis(a.view(), 1e-10);
        assert_eq!(q.ncols(), 4);
        let qtq = q.t().dot(&q);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - expect).abs() < 1e-12);
            }
        }
        let recon = q.dot(&q.t().dot(&a));
        assert!((&recon - &a).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn basis_drops_dependent_columns() {
        let mut a = random(10, 3, 1);
        let c0 = a.column(0).to_owned();
        let c1 = a.column(1).to_owned();
        a.column_mut(2).assign(&(&c0 * 2.0 - &c1));
        assert_eq!(orthonormal_basis(a.view(), 1e-10).ncols(), 2);
        assert_eq!(orthonormal_basis(Array2::<f64>::zeros((5, 2)).view(), 1e-10).ncols(), 0);
    }

    #[test]
    fn blocked_cholesky_matches_reconstruction() {
        // larger than one block to exercise the panel and trailing updates
        let x = random(300, 320, 9);
        let mut g = gram_rows(x.view());
        for i in 0..300 {
            g[[i, i]] += 1.0;
        }
        let orig = g.clone();
        cholesky_in_place(&mut g, 0.0).unwrap();
        let recon = g.dot(&g.t());
        let err = (&recon - &orig).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(err < 1e-9, "reconstruction error {err}");
        let rhs = Array1::from_iter((0..300).map(|i| (i as f64).sin()));
        let sol = cholesky_solve(&g, rhs.view());
        let resid = orig.dot(&sol) - &rhs;
        assert!(resid.iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = array![[1.0, 2.0], [2.0, 1.0]];
        assert_eq!(cholesky_in_place(&mut m, 0.0), Err(NotPositiveDefinite { index: 1 }));
    }

    #[test]
    fn gram_matches_plain_product() {
        let x = random(270, 13, 5);
        let g = gram_rows(x.view());
        let direct = x.dot(&x.t());
        assert!((&g - &direct).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn jacobi_diagonalizes() {
        let x = random(6, 6, 2);
        let m = x.t().dot(&x);
        let (vals, vecs) = symmetric_eigen(&m);
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        assert!((&recon - &m).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn pinv_solve_gives_min_norm() {
        // rank-one system: [1 1; 1 1] x = [2, 2] has min-norm solution (1, 1)
        let g = array![[1.0f64, 1.0], [1.0, 1.0]];
        let x = psd_pinv_solve(&g, array![2.0, 2.0].view());
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
