//! Anchor projection, the gamma transform, and closed-form ridge / anchor
//! estimation.
//!
//! The anchor estimator minimizes
//!
//! ```text
//! ||(I - P)(Y - X b)||^2 + gamma ||P (Y - X b)||^2 + lambda ||b||^2
//! ```
//!
//! where `P` projects onto the span of the anchors plus a constant column.
//! It is computed as ridge regression on `X~ = X + (sqrt(gamma) - 1) P X`
//! (and likewise `Y~`), so `gamma = 1` reproduces plain ridge exactly.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{mean_std, AnchorMatrix, FeatureStats, ForcingSeries, GridShape, GriddedDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Projection onto `span(A, 1)`, held as a thin orthonormal basis so the
/// `n x n` matrix is never formed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator<T> {
    basis: Array2<T>,
}

impl<T: Scalar> ProjectionOperator<T> {
    pub fn basis(&self) -> ArrayView2<'_, T> {
        self.basis.view()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project(&self, v: ArrayView1<T>) -> Array1<T> {
        self.basis.dot(&self.basis.t().dot(&v))
    }

    /// `(I - P) v`.
    pub fn residual(&self, v: ArrayView1<T>) -> Array1<T> {
        &v - &self.project(v)
    }

    pub fn project_matrix(&self, x: ArrayView2<T>) -> Array2<T> {
        self.basis.dot(&self.basis.t().dot(&x))
    }

    fn check_rows(&self, n: usize) -> Result<()> {
        if n != self.n() {
            return Err(Error::Shape(format!(
                "projection built on {} rows applied to {n} rows",
                self.n()
            )));
        }
        Ok(())
    }
}

/// Relative rank tolerance for the anchor QR.
fn rank_tolerance<T: Scalar>() -> T {
    T::of(1e-10).max(T::epsilon() * T::of(10.0))
}

/// Projection onto the column space of `[1, A]`.
pub fn anchor_projection<T: Scalar>(a: ArrayView2<T>) -> ProjectionOperator<T> {
    let ones = Array2::<T>::ones((a.nrows(), 1));
    let augmented = concatenate(Axis(1), &[ones.view(), a]).expect("row counts agree");
    ProjectionOperator {
        basis: linalg::orthonormal_basis(augmented.view(), rank_tolerance()),
    }
}

impl<T: Scalar> From<&AnchorMatrix<T>> for ProjectionOperator<T> {
    fn from(a: &AnchorMatrix<T>) -> Self {
        anchor_projection(a.values())
    }
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<()> {
    if !(gamma >= T::zero()) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    Ok(())
}

/// `X~ = (I - P) X + sqrt(gamma) P X`, same for `Y`.
pub fn anchor_transform<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    proj: &ProjectionOperator<T>,
    gamma: T,
) -> Result<(Array2<T>, Array1<T>)> {
    let mut xt = x.to_owned();
    let mut yt = y.to_owned();
    anchor_transform_in_place(&mut xt, &mut yt, proj, gamma)?;
    Ok((xt, yt))
}

/// In-place form of [`anchor_transform`], used when `X` is too large to copy.
pub fn anchor_transform_in_place<T: Scalar>(
    x: &mut Array2<T>,
    y: &mut Array1<T>,
    proj: &ProjectionOperator<T>,
    gamma: T,
) -> Result<()> {
    check_gamma(gamma)?;
    proj.check_rows(x.nrows())?;
    proj.check_rows(y.len())?;
    let coef = gamma.sqrt() - T::one();
    if coef == T::zero() || proj.rank() == 0 {
        return Ok(());
    }
    let q = proj.basis.view();
    let mut qtx = Array2::<T>::zeros((q.ncols(), x.ncols()));
    general_mat_mul(T::one(), &q.t(), &x.view(), T::zero(), &mut qtx);
    general_mat_mul(coef, &q, &qtx, T::one(), x);
    let py = proj.project(y.view());
    y.scaled_add(coef, &py);
    Ok(())
}

/// Which closed form to use for ridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverPath {
    /// Primal when `p <= n`, dual otherwise.
    #[default]
    Auto,
    /// `(X^T X + lambda I) b = X^T Y`, a `p x p` system.
    Primal,
    /// `b = X^T (X X^T + lambda I)^-1 Y`, an `n x n` system.
    Dual,
}

impl SolverPath {
    pub fn resolve(self, n: usize, p: usize) -> SolverPath {
        match self {
            SolverPath::Auto if p > n => SolverPath::Dual,
            SolverPath::Auto => SolverPath::Primal,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution<T> {
    pub beta: Array1<T>,
    pub path: SolverPath,
    /// Set when `lambda = 0` met a singular Gram matrix and the
    /// minimum-norm solution was returned instead.
    pub min_norm: bool,
}

/// Closed-form minimizer of `||Y - X b||^2 + lambda ||b||^2` (no intercept).
pub fn solve_ridge<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: T,
    path: SolverPath,
) -> Result<RidgeSolution<T>> {
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::Shape(format!("X has {n} rows but Y has {}", y.len())));
    }
    let path = path.resolve(n, p);
    let (beta, min_norm) = match path {
        SolverPath::Primal => {
            let rhs = x.t().dot(&y);
            let (coef, min_norm) = solve_regularized_gram(|| linalg::gram_rows(x.t()), rhs.view(), lambda)?;
            (coef, min_norm)
        }
        _ => {
            let (alpha, min_norm) = solve_regularized_gram(|| linalg::gram_rows(x), y, lambda)?;
            (x.t().dot(&alpha), min_norm)
        }
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("ridge solution is not finite".into()));
    }
    Ok(RidgeSolution {
        beta,
        path,
        min_norm,
    })
}

/// Solve `(G + lambda I) z = rhs`, falling back to the pseudo-inverse when the
/// Cholesky factorization hits a (numerically) zero pivot.
fn solve_regularized_gram<T: Scalar>(
    gram: impl Fn() -> Array2<T>,
    rhs: ArrayView1<T>,
    lambda: T,
) -> Result<(Array1<T>, bool)> {
    let mut g = gram();
    let dim = g.nrows();
    if dim == 0 {
        return Ok((Array1::zeros(0), false));
    }
    let max_diag = g.diag().iter().fold(T::zero(), |m, &v| m.max(v));
    for i in 0..dim {
        g[[i, i]] = g[[i, i]] + lambda;
    }
    let floor = if lambda == T::zero() {
        T::of(1e-10).max(T::of_usize(dim) * T::epsilon()) * max_diag
    } else {
        T::zero()
    };
    match linalg::cholesky_in_place(&mut g, floor) {
        Ok(()) => Ok((linalg::cholesky_solve(&g, rhs), false)),
        Err(_) => {
            drop(g);
            let mut g = gram();
            for i in 0..dim {
                g[[i, i]] = g[[i, i]] + lambda;
            }
            Ok((linalg::psd_pinv_solve(&g, rhs), true))
        }
    }
}

/// A fitted linear predictor together with the preprocessing it expects.
///
/// `beta` and `intercept` act on standardized features and produce a
/// standardized target; [`LinearModel::predict`] handles both conversions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub beta: Array1<T>,
    pub intercept: T,
    pub gamma: T,
    pub lambda: T,
    pub feature_stats: FeatureStats<T>,
    pub grid_shape: Option<GridShape>,
    pub solver: SolverPath,
    pub min_norm: bool,
    pub anchor_names: Vec<String>,
    pub target_name: String,
}

impl<T: Scalar> LinearModel<T> {
    /// Model with identity preprocessing, e.g. for hand-built coefficients.
    pub fn from_coefficients(beta: Array1<T>, intercept: T) -> Self {
        let p = beta.len();
        LinearModel {
            beta,
            intercept,
            gamma: T::one(),
            lambda: T::zero(),
            feature_stats: FeatureStats::identity(p),
            grid_shape: None,
            solver: SolverPath::Auto,
            min_norm: false,
            anchor_names: Vec::new(),
            target_name: String::new(),
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Predictions in original target units.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        if x.ncols() != self.p() {
            return Err(Error::Shape(format!(
                "model has {} coefficients, data has {} columns",
                self.p(),
                x.ncols()
            )));
        }
        let z = self.feature_stats.apply_features(x)?;
        let raw = z.dot(&self.beta).mapv(|v| v + self.intercept);
        Ok(self.feature_stats.invert_target(raw.view()))
    }

    /// Coefficients mapped back to original feature and target units:
    /// `y ~ c + sum_j w_j x_j`.
    pub fn original_units(&self) -> (Array1<T>, T) {
        let s = &self.feature_stats;
        let w = Array1::from_iter(
            self.beta
                .iter()
                .zip(&s.stds)
                .map(|(&b, &sd)| b * s.target_std / sd),
        );
        let offset = s.target_mean + s.target_std * self.intercept
            - w.iter().zip(&s.means).map(|(&wj, &m)| wj * m).sum::<T>();
        (w, offset)
    }

    fn from_solution(sol: RidgeSolution<T>, gamma: T, lambda: T) -> Self {
        let mut model = LinearModel::from_coefficients(sol.beta, T::zero());
        model.gamma = gamma;
        model.lambda = lambda;
        model.solver = sol.path;
        model.min_norm = sol.min_norm;
        model
    }
}

pub fn predict<T: Scalar>(model: &LinearModel<T>, x: ArrayView2<T>) -> Result<Array1<T>> {
    model.predict(x)
}

/// Ridge on already standardized data. The returned model carries identity
/// statistics.
pub fn fit_ridge<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, lambda: T) -> Result<LinearModel<T>> {
    fit_ridge_with(x, y, lambda, SolverPath::Auto)
}

pub fn fit_ridge_with<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: T,
    path: SolverPath,
) -> Result<LinearModel<T>> {
    let sol = solve_ridge(x, y, lambda, path)?;
    Ok(LinearModel::from_solution(sol, T::one(), lambda))
}

/// Anchor regression on already standardized data:
/// `fit_ridge(anchor_transform(X, Y, P_A, gamma), lambda)`.
pub fn fit_anchor<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    a: ArrayView2<T>,
    gamma: T,
    lambda: T,
) -> Result<LinearModel<T>> {
    fit_anchor_with(x, y, a, gamma, lambda, SolverPath::Auto)
}

pub fn fit_anchor_with<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    a: ArrayView2<T>,
    gamma: T,
    lambda: T,
    path: SolverPath,
) -> Result<LinearModel<T>> {
    fit_anchor_owned(x.to_owned(), y.to_owned(), a, gamma, lambda, path)
}

/// Like [`fit_anchor_with`] but transforms `x` in place, so peak memory is
/// one copy of the data plus the chosen Gram matrix.
pub fn fit_anchor_owned<T: Scalar>(
    mut x: Array2<T>,
    mut y: Array1<T>,
    a: ArrayView2<T>,
    gamma: T,
    lambda: T,
    path: SolverPath,
) -> Result<LinearModel<T>> {
    check_gamma(gamma)?;
    if a.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "anchors have {} rows, X has {}",
            a.nrows(),
            x.nrows()
        )));
    }
    let proj = anchor_projection(a);
    anchor_transform_in_place(&mut x, &mut y, &proj, gamma)?;
    let sol = solve_ridge(x.view(), y.view(), lambda, path)?;
    Ok(LinearModel::from_solution(sol, gamma, lambda))
}

/// Hyperparameters of the standardized anchor estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorRegression<T> {
    pub gamma: T,
    pub lambda: T,
    pub path: SolverPath,
}

impl<T: Scalar> AnchorRegression<T> {
    pub fn new(gamma: T, lambda: T) -> Self {
        AnchorRegression {
            gamma,
            lambda,
            path: SolverPath::Auto,
        }
    }

    /// Plain ridge (`gamma = 1`, anchors ignored).
    pub fn ridge(lambda: T) -> Self {
        AnchorRegression::new(T::one(), lambda)
    }

    /// Standardize with statistics of `x`/`y`, fit, and attach the statistics
    /// to the model. `anchors = None` is only valid for `gamma = 1`.
    pub fn fit(&self, x: ArrayView2<T>, y: ArrayView1<T>, anchors: Option<ArrayView2<T>>) -> Result<LinearModel<T>> {
        let stats = FeatureStats::compute(x, y)?;
        let xs = stats.apply_features(x)?;
        let ys = stats.apply_target(y);
        let mut model = match anchors {
            Some(a) => fit_anchor_owned(xs, ys, a, self.gamma, self.lambda, self.path)?,
            None if self.gamma == T::one() => {
                let sol = solve_ridge(xs.view(), ys.view(), self.lambda, self.path)?;
                LinearModel::from_solution(sol, T::one(), self.lambda)
            }
            None => {
                return Err(Error::Config(format!(
                    "gamma = {} requires anchor variables",
                    self.gamma
                )))
            }
        };
        model.feature_stats = stats;
        Ok(model)
    }

    pub fn fit_dataset(
        &self,
        ds: &GriddedDataset<T>,
        y: &ForcingSeries<T>,
        anchors: Option<&AnchorMatrix<T>>,
    ) -> Result<LinearModel<T>> {
        let mut model = self.fit(ds.values(), y.values(), anchors.map(|a| a.values()))?;
        model.grid_shape = Some(ds.grid_shape());
        if self.gamma != T::one() {
            model.anchor_names = anchors.map(|a| a.names().to_vec()).unwrap_or_default();
        }
        model.target_name = y.name().to_string();
        Ok(model)
    }
}

/// How strongly the residuals of a model still depend on the anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDiagnostics<T> {
    /// Pearson correlation of the residuals with each anchor column.
    pub correlations: Vec<T>,
    /// `||P_A r||`.
    pub projected_norm: T,
    /// Residuals had zero variance; correlations were reported as 0.
    pub degenerate: bool,
}

pub fn residual_anchor_diagnostics<T: Scalar>(
    model: &LinearModel<T>,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    a: ArrayView2<T>,
) -> Result<ResidualDiagnostics<T>> {
    if y.len() != x.nrows() || a.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "rows disagree: X {}, Y {}, A {}",
            x.nrows(),
            y.len(),
            a.nrows()
        )));
    }
    let residuals = &y - &model.predict(x)?;
    let proj = anchor_projection(a);
    let projected_norm = proj.project(residuals.view()).iter().map(|&v| v * v).sum::<T>().sqrt();
    let (r_mean, r_std) = mean_std(residuals.view());
    let scale = y.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let degenerate = r_std <= T::epsilon() * T::of(64.0) * scale.max(r_mean.abs());
    let correlations = a
        .axis_iter(Axis(1))
        .map(|col| {
            if degenerate {
                return T::zero();
            }
            let (a_mean, a_std) = mean_std(col);
            if a_std == T::zero() {
                return T::zero();
            }
            let cov = residuals
                .iter()
                .zip(col.iter())
                .map(|(&r, &v)| (r - r_mean) * (v - a_mean))
                .sum::<T>()
                / T::of_usize(col.len());
            cov / (r_std * a_std)
        })
        .collect();
    Ok(ResidualDiagnostics {
        correlations,
        projected_norm,
        degenerate,
    })
}
