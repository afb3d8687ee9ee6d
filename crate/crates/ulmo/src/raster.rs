//! Gridded spatial covariates with bilinear interpolation.
//!
//! A [`RasterGrid`] stores one value per cell of a rectangular grid and
//! evaluates the bilinear surface through the four surrounding cell-center
//! values, together with its analytic gradient. Geometry is cell-center
//! based: the origin is the center of the first (lowest x, lowest y) cell,
//! and the evaluation domain is the rectangle spanned by the outermost cell
//! centers. Evaluation outside that rectangle is an error, never an
//! extrapolation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Cell-center grid geometry, without values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    /// x coordinate of the first cell center (map units).
    pub x_origin: f64,
    /// y coordinate of the first cell center (map units).
    pub y_origin: f64,
    /// Cell width, > 0.
    pub dx: f64,
    /// Cell height, > 0.
    pub dy: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl GridSpec {
    pub fn new(
        x_origin: f64,
        y_origin: f64,
        dx: f64,
        dy: f64,
        n_cols: usize,
        n_rows: usize,
    ) -> Result<Self> {
        let spec = GridSpec { x_origin, y_origin, dx, dy, n_cols, n_rows };
        spec.validate()?;
        Ok(spec)
    }

    /// Square grid of `n × n` cells whose centers span `[lo, hi]` on both axes.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::invalid("square grid needs n >= 2 and hi > lo"));
        }
        let step = (hi - lo) / (n - 1) as f64;
        GridSpec::new(lo, lo, step, step, n, n)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || !(self.dy > 0.0) || !self.dx.is_finite() || !self.dy.is_finite() {
            return Err(Error::invalid("grid cell size must be positive and finite"));
        }
        if self.n_cols < 2 || self.n_rows < 2 {
            return Err(Error::invalid("grid needs at least 2 columns and 2 rows"));
        }
        if !self.x_origin.is_finite() || !self.y_origin.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn x_max(&self) -> f64 {
        self.x_origin + (self.n_cols - 1) as f64 * self.dx
    }

    pub fn y_max(&self) -> f64 {
        self.y_origin + (self.n_rows - 1) as f64 * self.dy
    }

    pub fn n_cells(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Whether `(x, y)` lies in the evaluation domain (outermost cell centers).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_origin && x <= self.x_max() && y >= self.y_origin && y <= self.y_max()
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_origin + col as f64 * self.dx,
            self.y_origin + row as f64 * self.dy,
        )
    }

    /// Cell whose center is nearest to `(x, y)`, for histogram binning.
    ///
    /// Returns `None` outside the evaluation domain.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let col = ((x - self.x_origin) / self.dx).round() as usize;
        let row = ((y - self.y_origin) / self.dy).round() as usize;
        Some((row.min(self.n_rows - 1), col.min(self.n_cols - 1)))
    }

    fn out_of_domain(&self, x: f64, y: f64) -> Error {
        Error::domain(format!(
            "point ({x}, {y}) outside raster domain [{}, {}] x [{}, {}]",
            self.x_origin,
            self.x_max(),
            self.y_origin,
            self.y_max()
        ))
    }
}

/// Rectangular grid of covariate values supporting bilinear evaluation.
///
/// Values are stored row-major with row 0 at `y_origin` (lowest y). All
/// operations are pure reads on the immutable grid; sharing across threads
/// is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.n_cells() {
            return Err(Error::invalid(format!(
                "expected {} values for a {}x{} grid, got {}",
                spec.n_cells(),
                spec.n_rows,
                spec.n_cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite raster value {v}")));
        }
        Ok(RasterGrid { spec, values })
    }

    /// Build a raster by evaluating `f(x, y)` at every cell center.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(spec.n_cells());
        for row in 0..spec.n_rows {
            for col in 0..spec.n_cols {
                let (x, y) = spec.cell_center(row, col);
                values.push(f(x, y));
            }
        }
        RasterGrid::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.n_cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Stencil cell and in-cell offsets for a point.
    ///
    /// Points exactly on an interior cell-center gridline resolve to the
    /// cell on the lower-left side, so the gradient is deterministic there.
    fn stencil(&self, x: f64, y: f64) -> Result<(usize, usize, f64, f64)> {
        let s = &self.spec;
        if !s.contains(x, y) {
            return Err(s.out_of_domain(x, y));
        }
        let u = (x - s.x_origin) / s.dx;
        let v = (y - s.y_origin) / s.dy;
        let col = ((u - 1.0).ceil().max(0.0) as usize).min(s.n_cols - 2);
        let row = ((v - 1.0).ceil().max(0.0) as usize).min(s.n_rows - 2);
        Ok((row, col, u - col as f64, v - row as f64))
    }

    /// Bilinear surface value at `(x, y)`.
    ///
    /// Reproduces cell-center values exactly at cell centers.
    pub fn bilinear_value(&self, x: f64, y: f64) -> Result<f64> {
        let (row, col, tx, ty) = self.stencil(x, y)?;
        let v00 = self.value(row, col);
        let v10 = self.value(row, col + 1);
        let v01 = self.value(row + 1, col);
        let v11 = self.value(row + 1, col + 1);
        Ok(v00 * (1.0 - tx) * (1.0 - ty)
            + v10 * tx * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v11 * tx * ty)
    }

    /// Analytic gradient of the bilinear surface at `(x, y)`.
    pub fn bilinear_gradient(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        let (row, col, tx, ty) = self.stencil(x, y)?;
        let v00 = self.value(row, col);
        let v10 = self.value(row, col + 1);
        let v01 = self.value(row + 1, col);
        let v11 = self.value(row + 1, col + 1);
        Ok([
            ((v10 - v00) * (1.0 - ty) + (v11 - v01) * ty) / self.spec.dx,
            ((v01 - v00) * (1.0 - tx) + (v11 - v10) * tx) / self.spec.dy,
        ])
    }

    /// Parse an ESRI ASCII grid.
    ///
    /// Header keys: ncols, nrows, xllcorner, yllcorner, cellsize,
    /// NODATA_value. Cells equal to the NODATA value are rejected with an
    /// error; this crate does not interpolate missing data.
    pub fn from_ascii(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace().peekable();
        let mut header = std::collections::HashMap::new();
        while let Some(&tok) = tokens.peek() {
            let key = tok.to_ascii_lowercase();
            if !matches!(
                key.as_str(),
                "ncols" | "nrows" | "xllcorner" | "yllcorner" | "cellsize" | "nodata_value"
            ) {
                break;
            }
            tokens.next();
            let val: f64 = tokens
                .next()
                .ok_or_else(|| Error::invalid(format!("missing value for header key {key}")))?
                .parse()
                .map_err(|_| Error::invalid(format!("bad value for header key {key}")))?;
            header.insert(key, val);
        }
        let get = |k: &str| {
            header
                .get(k)
                .copied()
                .ok_or_else(|| Error::invalid(format!("missing header key {k}")))
        };
        let n_cols = get("ncols")? as usize;
        let n_rows = get("nrows")? as usize;
        let cellsize = get("cellsize")?;
        let spec = GridSpec::new(
            get("xllcorner")? + cellsize / 2.0,
            get("yllcorner")? + cellsize / 2.0,
            cellsize,
            cellsize,
            n_cols,
            n_rows,
        )?;
        let nodata = header.get("nodata_value").copied();

        // File rows run top (highest y) to bottom.
        let mut values = vec![0.0; spec.n_cells()];
        for file_row in 0..n_rows {
            let row = n_rows - 1 - file_row;
            for col in 0..n_cols {
                let tok = tokens.next().ok_or_else(|| {
                    Error::invalid(format!("raster data ended early at row {file_row}"))
                })?;
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad raster value {tok:?}")))?;
                if nodata.is_some_and(|nd| v == nd) {
                    return Err(Error::invalid(format!(
                        "NODATA cell at file row {file_row}, column {col}; \
                         NODATA cells are not supported"
                    )));
                }
                values[row * n_cols + col] = v;
            }
        }
        if tokens.next().is_some() {
            return Err(Error::invalid("trailing data after raster values"));
        }
        RasterGrid::new(spec, values)
    }

    pub fn read_ascii_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid(format!("cannot read raster {}: {e}", path.display()))
        })?;
        RasterGrid::from_ascii(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    /// Serialize as an ESRI ASCII grid. Requires square cells (dx == dy).
    pub fn to_ascii(&self) -> Result<String> {
        let s = &self.spec;
        if s.dx != s.dy {
            return Err(Error::invalid(
                "ESRI ASCII grids require square cells (dx == dy)",
            ));
        }
        let mut out = String::new();
        let _ = writeln!(out, "ncols {}", s.n_cols);
        let _ = writeln!(out, "nrows {}", s.n_rows);
        let _ = writeln!(out, "xllcorner {}", s.x_origin - s.dx / 2.0);
        let _ = writeln!(out, "yllcorner {}", s.y_origin - s.dy / 2.0);
        let _ = writeln!(out, "cellsize {}", s.dx);
        let _ = writeln!(out, "NODATA_value -9999");
        for file_row in 0..s.n_rows {
            let row = s.n_rows - 1 - file_row;
            for col in 0..s.n_cols {
                if col > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", self.value(row, col));
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_ascii_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ascii()?)?;
        Ok(())
    }
}
