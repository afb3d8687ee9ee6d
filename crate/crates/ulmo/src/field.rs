//! Log-linear utilisation model over covariate fields.
//!
//! A [`StationaryModel`] defines the long-run utilisation distribution as a
//! weighted sum of differentiable covariate fields: `log pi(x) = sum_k
//! beta_k psi_k(x)`, up to an additive constant. Only the gradient of
//! `log pi` enters the movement dynamics, so the constant is irrelevant
//! everywhere except [`StationaryModel::normalize_ud`], which produces a
//! discretized, normalized utilisation raster.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::raster::{GridSpec, RasterGrid};

/// A differentiable covariate field `psi_k` with value and gradient.
#[derive(Clone)]
pub enum CovariateField {
    /// Bilinear interpolation of a raster; two-dimensional.
    Raster(Arc<RasterGrid>),
    /// Squared distance to a center, `psi(x) = ||x - c||^2`.
    ///
    /// With a negative coefficient this models home-range behaviour around
    /// `c`; on its own it yields a Gaussian utilisation distribution.
    QuadraticDistance { center: Vec<f64> },
    /// Caller-supplied value and gradient functions, the extension point
    /// for analytic test fields and future basis expansions.
    Analytic(AnalyticField),
}

/// Value and gradient closures for [`CovariateField::Analytic`].
#[derive(Clone)]
pub struct AnalyticField {
    pub dim: usize,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    gradient: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl AnalyticField {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        AnalyticField { dim, value: Arc::new(value), gradient: Arc::new(gradient) }
    }

    /// Planar field `a . x`, whose gradient is the constant vector `a`.
    pub fn planar(slope: Vec<f64>) -> Self {
        let a = slope.clone();
        let b = slope.clone();
        AnalyticField::new(
            slope.len(),
            move |x| x.iter().zip(&a).map(|(xi, ai)| xi * ai).sum(),
            move |_| b.clone(),
        )
    }
}

impl std::fmt::Debug for CovariateField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovariateField::Raster(g) => f
                .debug_struct("Raster")
                .field("n_cols", &g.spec().n_cols)
                .field("n_rows", &g.spec().n_rows)
                .finish(),
            CovariateField::QuadraticDistance { center } => {
                f.debug_struct("QuadraticDistance").field("center", center).finish()
            }
            CovariateField::Analytic(a) => {
                f.debug_struct("Analytic").field("dim", &a.dim).finish()
            }
        }
    }
}

impl CovariateField {
    pub fn raster(grid: RasterGrid) -> Self {
        CovariateField::Raster(Arc::new(grid))
    }

    pub fn dim(&self) -> usize {
        match self {
            CovariateField::Raster(_) => 2,
            CovariateField::QuadraticDistance { center } => center.len(),
            CovariateField::Analytic(a) => a.dim,
        }
    }

    /// Field value `psi_k(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            CovariateField::Raster(g) => g.bilinear_value(x[0], x[1]),
            CovariateField::QuadraticDistance { center } => {
                Ok(x.iter().zip(center).map(|(xi, ci)| (xi - ci).powi(2)).sum())
            }
            CovariateField::Analytic(a) => Ok((a.value)(x)),
        }
    }

    /// Accumulate `w * grad psi_k(x)` into `out`.
    pub fn add_gradient(&self, x: &[f64], w: f64, out: &mut [f64]) -> Result<()> {
        match self {
            CovariateField::Raster(g) => {
                let grad = g.bilinear_gradient(x[0], x[1])?;
                out[0] += w * grad[0];
                out[1] += w * grad[1];
            }
            CovariateField::QuadraticDistance { center } => {
                for ((o, xi), ci) in out.iter_mut().zip(x).zip(center) {
                    *o += w * 2.0 * (xi - ci);
                }
            }
            CovariateField::Analytic(a) => {
                for (o, gi) in out.iter_mut().zip((a.gradient)(x)) {
                    *o += w * gi;
                }
            }
        }
        Ok(())
    }
}

/// Weighted sum of covariate fields defining `log pi` up to a constant.
#[derive(Debug, Clone)]
pub struct StationaryModel {
    fields: Vec<CovariateField>,
    beta: Vec<f64>,
    dim: usize,
}

impl StationaryModel {
    pub fn new(fields: Vec<CovariateField>, beta: Vec<f64>) -> Result<Self> {
        if fields.len() != beta.len() {
            return Err(Error::invalid(format!(
                "{} fields but {} coefficients",
                fields.len(),
                beta.len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        let dim = fields.first().map_or(2, CovariateField::dim);
        if let Some(f) = fields.iter().find(|f| f.dim() != dim) {
            return Err(Error::invalid(format!(
                "field dimension {} does not match model dimension {dim}",
                f.dim()
            )));
        }
        Ok(StationaryModel { fields, beta, dim })
    }

    /// Model with no fields: `log pi = 0`, i.e. a free (uniform) landscape.
    pub fn free(dim: usize) -> Self {
        StationaryModel { fields: Vec::new(), beta: Vec::new(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fields(&self) -> &[CovariateField] {
        &self.fields
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Same fields, different coefficients.
    pub fn with_beta(&self, beta: Vec<f64>) -> Result<Self> {
        StationaryModel::new(self.fields.clone(), beta)
    }

    /// `log pi(x) = sum_k beta_k psi_k(x)`, unnormalized.
    pub fn log_pi(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut acc = 0.0;
        for (field, b) in self.fields.iter().zip(&self.beta) {
            acc += b * field.value(x)?;
        }
        Ok(acc)
    }

    /// `grad log pi(x) = sum_k beta_k grad psi_k(x)`.
    pub fn grad_log_pi(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.grad_log_pi_into(x, &mut out)?;
        Ok(out)
    }

    /// As [`grad_log_pi`](Self::grad_log_pi), accumulating into a caller
    /// buffer (hot loops).
    pub fn grad_log_pi_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        out.fill(0.0);
        for (field, b) in self.fields.iter().zip(&self.beta) {
            field.add_gradient(x, *b, out)?;
        }
        Ok(())
    }

    /// Whether every raster field's domain contains `x`. Quadratic and
    /// analytic fields are unbounded.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.fields.iter().all(|f| match f {
            CovariateField::Raster(g) => g.spec().contains(x[0], x[1]),
            _ => true,
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has dimension {}, model has dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Discretize and normalize the utilisation distribution on a grid.
    ///
    /// Cell values are `exp(log pi(center))` scaled so that values times
    /// cell area sum to one. Log values are shifted by their maximum before
    /// exponentiation to avoid overflow.
    pub fn normalize_ud(&self, spec: GridSpec) -> Result<UdRaster> {
        if self.dim != 2 {
            return Err(Error::invalid("normalize_ud requires a 2-d model"));
        }
        let mut log_vals = Vec::with_capacity(spec.n_cells());
        for row in 0..spec.n_rows {
            for col in 0..spec.n_cols {
                let (x, y) = spec.cell_center(row, col);
                log_vals.push(self.log_pi(&[x, y])?);
            }
        }
        let max = log_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut values: Vec<f64> = log_vals.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = values.iter().sum::<f64>() * spec.cell_area();
        for v in &mut values {
            *v /= total;
        }
        Ok(UdRaster { grid: RasterGrid::new(spec, values)? })
    }
}

/// A normalized utilisation distribution on a grid: cell values times cell
/// area sum to one.
#[derive(Debug, Clone)]
pub struct UdRaster {
    pub grid: RasterGrid,
}

impl UdRaster {
    pub fn values(&self) -> &[f64] {
        self.grid.values()
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }
}

/// Normalized histogram of positions on a grid, as a density raster.
///
/// Each point is assigned to the cell with the nearest center; points
/// outside the grid are an error.
pub fn histogram_ud<'a>(
    positions: impl IntoIterator<Item = &'a [f64]>,
    spec: GridSpec,
) -> Result<UdRaster> {
    let mut counts = vec![0.0; spec.n_cells()];
    let mut n = 0usize;
    for (i, p) in positions.into_iter().enumerate() {
        let (row, col) = spec
            .cell_of(p[0], p[1])
            .ok_or_else(|| Error::domain(format!("position {i} ({}, {}) off grid", p[0], p[1])))?;
        counts[row * spec.n_cols + col] += 1.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("histogram of zero positions"));
    }
    let scale = 1.0 / (n as f64 * spec.cell_area());
    for c in &mut counts {
        *c *= scale;
    }
    Ok(UdRaster { grid: RasterGrid::new(spec, counts)? })
}

/// Parse a plain-text model specification.
///
/// One field per line: `raster <path> <beta>`, `quadratic <cx> <cy> <beta>`,
/// or `plane <ax> <ay> <beta>`. Blank lines and `#` comments are ignored.
/// Raster paths are resolved relative to `base_dir`.
pub fn parse_model_spec(text: &str, base_dir: &Path) -> Result<StationaryModel> {
    let mut fields = Vec::new();
    let mut beta = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        let bad = |msg: &str| {
            Error::invalid(format!("model spec line {}: {msg}: {raw:?}", lineno + 1))
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        match kind {
            "raster" => {
                if rest.len() != 2 {
                    return Err(bad("expected: raster <path> <beta>"));
                }
                let grid = RasterGrid::read_ascii_file(base_dir.join(rest[0]))?;
                fields.push(CovariateField::raster(grid));
                beta.push(num(rest[1])?);
            }
            "quadratic" => {
                if rest.len() != 3 {
                    return Err(bad("expected: quadratic <cx> <cy> <beta>"));
                }
                fields.push(CovariateField::QuadraticDistance {
                    center: vec![num(rest[0])?, num(rest[1])?],
                });
                beta.push(num(rest[2])?);
            }
            "plane" => {
                if rest.len() != 3 {
                    return Err(bad("expected: plane <ax> <ay> <beta>"));
                }
                fields.push(CovariateField::Analytic(AnalyticField::planar(vec![
                    num(rest[0])?,
                    num(rest[1])?,
                ])));
                beta.push(num(rest[2])?);
            }
            other => return Err(bad(&format!("unknown field type {other:?}"))),
        }
    }
    StationaryModel::new(fields, beta)
}

/// Load a model specification file (see [`parse_model_spec`]).
pub fn load_model_spec(path: impl AsRef<Path>) -> Result<StationaryModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read model spec {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_model_spec(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    fn random_raster(rng: &mut crate::rng::Rng, spec: GridSpec) -> RasterGrid {
        let values: Vec<f64> = (0..spec.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        RasterGrid::new(spec, values).unwrap()
    }

    fn mixed_model(rng: &mut crate::rng::Rng, beta: Vec<f64>) -> StationaryModel {
        let spec = GridSpec::square(0.0, 1.0, 12).unwrap();
        let fields = vec![
            CovariateField::raster(random_raster(rng, spec)),
            CovariateField::raster(random_raster(rng, spec)),
            CovariateField::QuadraticDistance { center: vec![0.5, 0.5] },
        ];
        StationaryModel::new(fields, beta).unwrap()
    }

    #[test]
    fn zero_beta_gives_zero_everywhere() {
        let mut rng = crate::rng::master(11);
        let m = mixed_model(&mut rng, vec![0.0, 0.0, 0.0]);
        assert_eq!(m.log_pi(&[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(m.grad_log_pi(&[0.3, 0.7]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_closed_form() {
        let m = StationaryModel::new(
            vec![CovariateField::QuadraticDistance { center: vec![0.0, 0.0] }],
            vec![-10.0],
        )
        .unwrap();
        assert_relative_eq!(m.log_pi(&[0.1, 0.0]).unwrap(), -0.1, max_relative = 1e-14);
        let g = m.grad_log_pi(&[0.1, 0.0]).unwrap();
        // 2 * beta * (x - c)
        assert_relative_eq!(g[0], -2.0, max_relative = 1e-14);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn mixed_model_matches_direct_sum() {
        let mut rng = crate::rng::master(12);
        let m = mixed_model(&mut rng, vec![2.0, 5.0, -10.0]);
        for _ in 0..20 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let direct: f64 = m
                .fields()
                .iter()
                .zip(m.beta())
                .map(|(f, b)| b * f.value(&x).unwrap())
                .sum();
            assert_relative_eq!(m.log_pi(&x).unwrap(), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::master(13);
        let m = mixed_model(&mut rng, vec![1.5, -0.7, -4.0]);
        for _ in 0..50 {
            let x = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let g = m.grad_log_pi(&x).unwrap();
            let h = 1e-7;
            for axis in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[axis] += h;
                xm[axis] -= h;
                let fd = (m.log_pi(&xp).unwrap() - m.log_pi(&xm).unwrap()) / (2.0 * h);
                assert!((g[axis] - fd).abs() < 1e-6, "axis {axis}: {} vs {fd}", g[axis]);
            }
        }
    }

    #[test]
    fn gradient_linear_in_beta() {
        let mut rng = crate::rng::master(14);
        let beta = vec![1.2, -0.4, -3.0];
        let m1 = mixed_model(&mut rng, beta.clone());
        let m2 = m1.with_beta(beta.iter().map(|b| 2.5 * b).collect()).unwrap();
        for _ in 0..20 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let g1 = m1.grad_log_pi(&x).unwrap();
            let g2 = m2.grad_log_pi(&x).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                assert_relative_eq!(2.5 * a, *b, max_relative = 1e-12, epsilon = 1e-300);
            }
        }
    }

    #[test]
    fn zero_coefficient_field_is_noop() {
        let mut rng = crate::rng::master(15);
        let m = mixed_model(&mut rng, vec![1.0, 2.0, -5.0]);
        let mut fields = m.fields().to_vec();
        fields.push(CovariateField::QuadraticDistance { center: vec![0.2, 0.9] });
        let mut beta = m.beta().to_vec();
        beta.push(0.0);
        let m2 = StationaryModel::new(fields, beta).unwrap();
        let x = [0.4, 0.6];
        assert_eq!(m.log_pi(&x).unwrap(), m2.log_pi(&x).unwrap());
        assert_eq!(m.grad_log_pi(&x).unwrap(), m2.grad_log_pi(&x).unwrap());
    }

    #[test]
    fn normalize_ud_uniform_when_flat() {
        let m = StationaryModel::free(2);
        let spec = GridSpec::square(0.0, 1.0, 11).unwrap();
        let ud = m.normalize_ud(spec).unwrap();
        let total_area = spec.n_cells() as f64 * spec.cell_area();
        for v in ud.values() {
            assert_relative_eq!(*v, 1.0 / total_area, max_relative = 1e-12);
        }
    }

    #[test]
    fn normalize_ud_sums_to_one_and_nonnegative() {
        let mut rng = crate::rng::master(16);
        let m = mixed_model(&mut rng, vec![2.0, 5.0, -10.0]);
        let spec = GridSpec::square(0.0, 1.0, 21).unwrap();
        let ud = m.normalize_ud(spec).unwrap();
        assert!(ud.values().iter().all(|v| *v >= 0.0));
        let sum: f64 = ud.values().iter().sum::<f64>() * spec.cell_area();
        assert_relative_eq!(sum, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn normalize_ud_matches_gaussian_density() {
        // Quadratic-only model: pi is an isotropic Gaussian with
        // variance 1/(2|beta|).
        let kappa = 8.0;
        let m = StationaryModel::new(
            vec![CovariateField::QuadraticDistance { center: vec![0.0, 0.0] }],
            vec![-kappa],
        )
        .unwrap();
        let spec = GridSpec::square(-2.0, 2.0, 161).unwrap();
        let ud = m.normalize_ud(spec).unwrap();
        let sigma2 = 1.0 / (2.0 * kappa);
        let mut err_sum = 0.0;
        for row in 0..spec.n_rows {
            for col in 0..spec.n_cols {
                let (x, y) = spec.cell_center(row, col);
                let gauss = (-(x * x + y * y) / (2.0 * sigma2)).exp()
                    / (2.0 * std::f64::consts::PI * sigma2);
                err_sum += (ud.grid.value(row, col) - gauss).abs() * spec.cell_area();
            }
        }
        assert!(err_sum < 1e-3, "L1 error {err_sum}");
    }

    #[test]
    fn normalize_ud_invariant_to_constant_shift() {
        let mut rng = crate::rng::master(17);
        let m = mixed_model(&mut rng, vec![1.0, -2.0, -6.0]);
        let mut fields = m.fields().to_vec();
        // A constant field shifts log pi without changing the UD.
        fields.push(CovariateField::Analytic(AnalyticField::new(
            2,
            |_| 1.0,
            |_| vec![0.0, 0.0],
        )));
        let mut beta = m.beta().to_vec();
        beta.push(7.3);
        let m2 = StationaryModel::new(fields, beta).unwrap();
        let spec = GridSpec::square(0.0, 1.0, 15).unwrap();
        let a = m.normalize_ud(spec).unwrap();
        let b = m2.normalize_ud(spec).unwrap();
        for (va, vb) in a.values().iter().zip(b.values()) {
            assert_relative_eq!(va, vb, max_relative = 1e-12);
        }
    }

    #[test]
    fn histogram_counts_and_normalizes() {
        let spec = GridSpec::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let pts: Vec<Vec<f64>> = vec![vec![0.1, 0.1], vec![0.2, 0.0], vec![0.9, 0.9], vec![1.0, 1.0]];
        let ud = histogram_ud(pts.iter().map(|p| p.as_slice()), spec).unwrap();
        // cells: (0,0) gets 2, (1,1) gets 2, others 0; area 1 per cell.
        assert_relative_eq!(ud.grid.value(0, 0), 0.5);
        assert_relative_eq!(ud.grid.value(1, 1), 0.5);
        assert_eq!(ud.grid.value(0, 1), 0.0);
    }

    #[test]
    fn model_spec_parses_and_reports_errors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::square(0.0, 1.0, 5).unwrap();
        let grid = RasterGrid::from_fn(spec, |x, y| x + y).unwrap();
        grid.write_ascii_file(dir.path().join("cov.asc")).unwrap();
        let text = "# comment\nraster cov.asc 2.0\nquadratic 0.5 0.5 -10\nplane 1 0 0.3\n";
        let m = parse_model_spec(text, dir.path()).unwrap();
        assert_eq!(m.n_fields(), 3);
        assert_eq!(m.beta(), &[2.0, -10.0, 0.3]);

        let err = parse_model_spec("raster missing.asc 1.0", dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing.asc"));
        let err = parse_model_spec("sphere 1 2 3", dir.path()).unwrap_err();
        assert!(err.to_string().contains("unknown field type"));
    }
}
