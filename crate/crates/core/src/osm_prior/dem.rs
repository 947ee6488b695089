//! ESRI ASCII-grid elevation models and bilinear terrain sampling.

use std::fmt::Write as _;

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Raster elevation grid. `heights` is row-major with the northernmost row
/// first, as in the ASCII-grid file; cell centers sit at
/// `origin + (col + 0.5, n_rows - row - 0.5) * cell_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemGrid {
    /// Lower-left corner of the lower-left cell.
    pub origin: Vector2<f64>,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub heights: Vec<f64>,
    pub nodata: f64,
}

/// Axis-aligned extent of the cell centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHull {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl DemGrid {
    /// Constant-elevation grid.
    pub fn flat(
        origin: Vector2<f64>,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        z: f64,
    ) -> Self {
        Self {
            origin,
            cell_size,
            n_rows,
            n_cols,
            heights: vec![z; n_rows * n_cols],
            nodata: -9999.0,
        }
    }

    pub fn hull(&self) -> GridHull {
        let half = 0.5 * self.cell_size;
        GridHull {
            min: self.origin + Vector2::new(half, half),
            max: self.origin
                + Vector2::new(
                    (self.n_cols as f64 - 0.5) * self.cell_size,
                    (self.n_rows as f64 - 0.5) * self.cell_size,
                ),
        }
    }

    /// Value of the cell in column `col`, counting rows from the south.
    fn cell_from_south(&self, col: usize, row_from_south: usize) -> f64 {
        self.heights[(self.n_rows - 1 - row_from_south) * self.n_cols + col]
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || !v.is_finite()
    }

    /// Serializes to the ASCII-grid layout read by [`load_dem`].
    pub fn to_ascii_grid(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ncols {}", self.n_cols);
        let _ = writeln!(s, "nrows {}", self.n_rows);
        let _ = writeln!(s, "xllcorner {}", self.origin.x);
        let _ = writeln!(s, "yllcorner {}", self.origin.y);
        let _ = writeln!(s, "cellsize {}", self.cell_size);
        let _ = writeln!(s, "NODATA_value {}", self.nodata);
        for row in self.heights.chunks(self.n_cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Parses an ESRI ASCII grid.
pub fn load_dem(grid_bytes: &[u8]) -> Result<DemGrid> {
    let text = std::str::from_utf8(grid_bytes)
        .map_err(|e| Error::Format(format!("DEM is not UTF-8: {e}")))?;
    let mut tokens = text.split_whitespace().peekable();

    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut cell = None;
    let mut nodata = -9999.0;
    while let Some(&key) = tokens.peek() {
        if key.parse::<f64>().is_ok() {
            break;
        }
        tokens.next();
        let value = tokens
            .next()
            .ok_or_else(|| Error::Format(format!("DEM header `{key}` has no value")))?;
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Format(format!("DEM header `{key}`: bad value `{v}`")))
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(num(value)? as usize),
            "nrows" => nrows = Some(num(value)? as usize),
            "xllcorner" => xll = Some(num(value)?),
            "yllcorner" => yll = Some(num(value)?),
            "cellsize" => cell = Some(num(value)?),
            "nodata_value" => nodata = num(value)?,
            other => return Err(Error::Format(format!("unknown DEM header `{other}`"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("DEM header missing `{k}`"));
    let n_cols = ncols.ok_or_else(|| missing("ncols"))?;
    let n_rows = nrows.ok_or_else(|| missing("nrows"))?;
    let origin = Vector2::new(
        xll.ok_or_else(|| missing("xllcorner"))?,
        yll.ok_or_else(|| missing("yllcorner"))?,
    );
    let cell_size = cell.ok_or_else(|| missing("cellsize"))?;
    if !(cell_size > 0.0) || n_cols == 0 || n_rows == 0 {
        return Err(Error::Format(
            "DEM needs positive cellsize and non-empty extent".into(),
        ));
    }

    let heights = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("non-numeric DEM cell `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if heights.len() != n_rows * n_cols {
        return Err(Error::Format(format!(
            "DEM declares {n_rows}x{n_cols} cells but holds {}",
            heights.len()
        )));
    }
    Ok(DemGrid {
        origin,
        cell_size,
        n_rows,
        n_cols,
        heights,
        nodata,
    })
}

/// Bilinear interpolation between the four cell centers around `xy`.
pub fn sample_dem(dem: &DemGrid, xy: &Vector2<f64>) -> Result<f64> {
    const EDGE_TOL: f64 = 1e-9;
    let fx = (xy.x - dem.origin.x) / dem.cell_size - 0.5;
    let fy = (xy.y - dem.origin.y) / dem.cell_size - 0.5;
    let (max_x, max_y) = ((dem.n_cols - 1) as f64, (dem.n_rows - 1) as f64);
    if !(fx >= -EDGE_TOL && fx <= max_x + EDGE_TOL && fy >= -EDGE_TOL && fy <= max_y + EDGE_TOL) {
        return Err(Error::OutOfRange(format!("({:.3}, {:.3})", xy.x, xy.y)));
    }
    let fx = fx.clamp(0.0, max_x);
    let fy = fy.clamp(0.0, max_y);
    let c0 = (fx.floor() as usize).min(dem.n_cols.saturating_sub(2));
    let r0 = (fy.floor() as usize).min(dem.n_rows.saturating_sub(2));
    let c1 = (c0 + 1).min(dem.n_cols - 1);
    let r1 = (r0 + 1).min(dem.n_rows - 1);
    let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);

    let z00 = dem.cell_from_south(c0, r0);
    let z10 = dem.cell_from_south(c1, r0);
    let z01 = dem.cell_from_south(c0, r1);
    let z11 = dem.cell_from_south(c1, r1);
    if [z00, z10, z01, z11].iter().any(|&z| dem.is_nodata(z)) {
        return Err(Error::NoData { x: xy.x, y: xy.y });
    }
    let south = z00 * (1.0 - tx) + z10 * tx;
    let north = z01 * (1.0 - tx) + z11 * tx;
    Ok(south * (1.0 - ty) + north * ty)
}
