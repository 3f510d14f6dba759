//! Dataset handling: FRED-MD style ingestion, stationarity transformations,
//! unit-variance scaling and the block-diagonal time-varying-parameter design.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An inclusive monthly period range. `None` ends are open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeriodRange {
    pub start: Option<Period>,
    pub end: Option<Period>,
}

/// A monthly period, e.g. 2005-01.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub struct Period {
    pub year: i32,
    pub month: u32,
}

impl Period {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Data(format!("invalid month {month}")));
        }
        Ok(Period { year, month })
    }

    /// Parse `YYYY-MM`, `YYYY:MM` or `M/D/YYYY`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once(['-', ':']) {
            let year: i32 = a
                .parse()
                .map_err(|_| Error::Data(format!("unparseable date {s:?}")))?;
            let month: u32 = b
                .parse()
                .map_err(|_| Error::Data(format!("unparseable date {s:?}")))?;
            return Period::new(year, month);
        }
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() == 3 {
            let month: u32 = parts[0]
                .parse()
                .map_err(|_| Error::Data(format!("unparseable date {s:?}")))?;
            let year: i32 = parts[2]
                .parse()
                .map_err(|_| Error::Data(format!("unparseable date {s:?}")))?;
            return Period::new(year, month);
        }
        Err(Error::Data(format!("unparseable date {s:?}")))
    }

    pub fn next(self) -> Period {
        if self.month == 12 {
            Period { year: self.year + 1, month: 1 }
        } else {
            Period { year: self.year, month: self.month + 1 }
        }
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl PeriodRange {
    /// Parse `START..END` where either side may be empty or `end`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::Data(format!("range {s:?} must be START..END")))?;
        let start = match a.trim() {
            "" | "start" => None,
            t => Some(Period::parse(t)?),
        };
        let end = match b.trim() {
            "" | "end" => None,
            t => Some(Period::parse(t)?),
        };
        Ok(PeriodRange { start, end })
    }

    pub fn contains(&self, p: Period) -> bool {
        self.start.is_none_or(|s| s <= p) && self.end.is_none_or(|e| p <= e)
    }
}

/// A panel of monthly series with FRED-MD transformation codes.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Series mnemonics, one per column.
    pub names: Vec<String>,
    /// T x N value matrix.
    pub values: DMatrix<f64>,
    /// Period labels, one per row.
    pub time_index: Vec<Period>,
    /// Per-series transformation code in {1, 2, 4, 5, 6}.
    pub transform_codes: Vec<u8>,
}

impl Dataset {
    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("unknown series {name:?}")))
    }

    /// Keep only the named series, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_>>()?;
        let values = DMatrix::from_fn(self.n_periods(), idx.len(), |r, c| self.values[(r, idx[c])]);
        Ok(Dataset {
            names: names.to_vec(),
            values,
            time_index: self.time_index.clone(),
            transform_codes: idx.iter().map(|&i| self.transform_codes[i]).collect(),
        })
    }

    /// Keep only rows [start, end).
    pub fn slice_rows(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            names: self.names.clone(),
            values: self.values.rows(start, end - start).into_owned(),
            time_index: self.time_index[start..end].to_vec(),
            transform_codes: self.transform_codes.clone(),
        }
    }

    /// Debug export: one date column followed by the series columns.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let codes: Vec<String> = std::iter::once("transform".to_string())
            .chain(self.transform_codes.iter().map(|c| c.to_string()))
            .collect();
        w.write_record(&codes)?;
        for t in 0..self.n_periods() {
            let mut rec = vec![self.time_index[t].to_string()];
            rec.extend((0..self.n_series()).map(|j| format!("{}", self.values[(t, j)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Load a FRED-MD style CSV: header row of mnemonics (first cell is the date
/// column), a second row of transformation codes, then one row per month.
/// Rows outside `range` are dropped; transforms are NOT applied.
pub fn load_fred_csv(path: &Path, range: PeriodRange) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = rdr.records();

    let header = rows
        .next()
        .ok_or_else(|| Error::Data("empty file".into()))??;
    let names: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
    if names.is_empty() {
        return Err(Error::Data("no series columns in header".into()));
    }

    let code_row = rows
        .next()
        .ok_or_else(|| Error::Data("missing transformation-code row".into()))??;
    let mut transform_codes = Vec::with_capacity(names.len());
    for (j, cell) in code_row.iter().skip(1).enumerate() {
        let code: f64 = cell.parse().map_err(|_| {
            Error::Data(format!("unparseable transform code {:?} for {}", cell, names[j]))
        })?;
        transform_codes.push(code as u8);
    }
    if transform_codes.len() != names.len() {
        return Err(Error::Data("transform-code row length mismatch".into()));
    }

    let mut periods = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in rows {
        let rec = rec?;
        let date_cell = match rec.get(0) {
            Some(c) if !c.is_empty() => c,
            _ => continue, // trailing blank line
        };
        let p = Period::parse(date_cell)?;
        if !range.contains(p) {
            continue;
        }
        let mut row = Vec::with_capacity(names.len());
        for j in 0..names.len() {
            let cell = rec.get(j + 1).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell == "." {
                row.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("unparseable cell {:?} at {} / {}", cell, p, names[j]))
                })?;
                row.push(Some(v));
            }
        }
        periods.push(p);
        cells.push(row);
    }
    if periods.is_empty() {
        return Err(Error::Data("no rows in range".into()));
    }

    for (j, name) in names.iter().enumerate() {
        if cells.iter().all(|r| r[j].is_none()) {
            return Err(Error::Data(format!("series {name} has no observations in range")));
        }
    }

    // Trim leading/trailing rows with any missing value; interior gaps are an error.
    let complete = |row: &Vec<Option<f64>>| row.iter().all(|c| c.is_some());
    let first = cells
        .iter()
        .position(complete)
        .ok_or_else(|| Error::Data("no complete rows in range".into()))?;
    let last = cells.iter().rposition(complete).unwrap();
    for t in first..=last {
        for j in 0..names.len() {
            if cells[t][j].is_none() {
                return Err(Error::Data(format!(
                    "interior missing value at {} in series {}",
                    periods[t], names[j]
                )));
            }
        }
    }
    let n_rows = last - first + 1;
    if n_rows < 2 {
        return Err(Error::Data("fewer than two complete rows in range".into()));
    }

    let values = DMatrix::from_fn(n_rows, names.len(), |r, c| cells[first + r][c].unwrap());
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in data".into()));
    }
    Ok(Dataset {
        names,
        values,
        time_index: periods[first..=last].to_vec(),
        transform_codes,
    })
}

fn diff_order(code: u8) -> Result<usize> {
    match code {
        1 | 4 => Ok(0),
        2 | 5 => Ok(1),
        6 => Ok(2),
        c => Err(Error::Data(format!("unknown transform code {c}"))),
    }
}

/// Apply the per-series stationarity transformation and trim the leading
/// rows lost to differencing so that all series stay aligned.
///
/// Codes: 1 = level, 2 = first difference, 4 = log, 5 = log difference,
/// 6 = second log difference.
pub fn apply_transforms(d: &Dataset) -> Result<Dataset> {
    let t_in = d.n_periods();
    let max_order = d
        .transform_codes
        .iter()
        .map(|&c| diff_order(c))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    if t_in <= max_order {
        return Err(Error::Data(format!(
            "{t_in} rows is too short for differencing order {max_order}"
        )));
    }
    let t_out = t_in - max_order;
    let mut values = DMatrix::zeros(t_out, d.n_series());
    for j in 0..d.n_series() {
        let code = d.transform_codes[j];
        let col: Vec<f64> = (0..t_in).map(|t| d.values[(t, j)]).collect();
        let series = transform_series(&col, code, &d.names[j])?;
        // series is aligned to the tail of the sample; keep the last t_out values
        let offset = series.len() - t_out;
        for t in 0..t_out {
            values[(t, j)] = series[offset + t];
        }
    }
    Ok(Dataset {
        names: d.names.clone(),
        values,
        time_index: d.time_index[max_order..].to_vec(),
        transform_codes: d.transform_codes.clone(),
    })
}

fn transform_series(x: &[f64], code: u8, name: &str) -> Result<Vec<f64>> {
    let logs = |x: &[f64]| -> Result<Vec<f64>> {
        x.iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(Error::Data(format!("nonpositive value {v} under log transform in {name}")))
                }
            })
            .collect()
    };
    let diff = |x: &[f64]| x.windows(2).map(|w| w[1] - w[0]).collect::<Vec<f64>>();
    match code {
        1 => Ok(x.to_vec()),
        2 => Ok(diff(x)),
        4 => logs(x),
        5 => Ok(diff(&logs(x)?)),
        6 => Ok(diff(&diff(&logs(x)?))),
        c => Err(Error::Data(format!("unknown transform code {c}"))),
    }
}

/// A regression scaled so that the response and every regressor column have
/// unit sample variance. Scales are kept so results can be mapped back.
#[derive(Debug, Clone)]
pub struct StandardizedRegression {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub scale_y: f64,
    pub scale_x: Vec<f64>,
}

impl StandardizedRegression {
    pub fn t_len(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Map a coefficient on standardized data back to raw units.
    pub fn unscale_coef(&self, j: usize, beta_std: f64) -> f64 {
        beta_std * self.scale_y / self.scale_x[j]
    }

    /// Recover the raw response/regressors.
    pub fn unstandardize(&self) -> (DVector<f64>, DMatrix<f64>) {
        let y = &self.y * self.scale_y;
        let mut x = self.x.clone();
        for j in 0..self.k() {
            x.column_mut(j).scale_mut(self.scale_x[j]);
        }
        (y, x)
    }
}

fn sample_sd(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let ss = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ss / (n - 1.0)).sqrt()
}

/// Scale `y` and each column of `x` to unit sample variance.
/// Columns listed in `unit_scale` (e.g. an intercept) keep scale 1.
pub fn standardize_with(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    unit_scale: &[usize],
) -> Result<StandardizedRegression> {
    if y.len() != x.nrows() {
        return Err(Error::Dim(format!("y has {} rows, x has {}", y.len(), x.nrows())));
    }
    if y.len() < 2 {
        return Err(Error::Data("need at least two observations".into()));
    }
    let sy = sample_sd(y.as_slice());
    if sy <= 0.0 || !sy.is_finite() {
        return Err(Error::Data("response is constant".into()));
    }
    let mut scale_x = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        if unit_scale.contains(&j) {
            scale_x.push(1.0);
            continue;
        }
        let s = sample_sd(x.column(j).as_slice());
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::Data(format!("column {j} is constant and cannot be standardized")));
        }
        scale_x.push(s);
    }
    let ys = y / sy;
    let mut xs = x.clone();
    for j in 0..x.ncols() {
        xs.column_mut(j).scale_mut(1.0 / scale_x[j]);
    }
    Ok(StandardizedRegression { y: ys, x: xs, scale_y: sy, scale_x })
}

/// Scale `y` and every column of `x` to unit sample variance.
pub fn standardize(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<StandardizedRegression> {
    standardize_with(y, x, &[])
}

/// The T x (T*K) block-diagonal design that carries one coefficient vector
/// per period: row t holds `x_t'` in block t. Stored implicitly; only the
/// T x K regressor matrix is kept. An optional T x T identity block appends
/// a time-varying intercept column per period.
#[derive(Debug, Clone)]
pub struct TvpDesign {
    pub x: DMatrix<f64>,
    pub with_eta: bool,
}

/// Build the sparse TVP design over the columns of `x`.
pub fn build_tvp_design(x: &DMatrix<f64>, with_eta: bool) -> TvpDesign {
    TvpDesign { x: x.clone(), with_eta }
}

impl TvpDesign {
    pub fn t_len(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Number of columns including the eta block.
    pub fn m(&self) -> usize {
        self.t_len() * self.k() + if self.with_eta { self.t_len() } else { 0 }
    }

    /// `Z * gamma` (plus the eta block when present), computed blockwise.
    pub fn mul(&self, theta: &DVector<f64>) -> DVector<f64> {
        let (t_len, k) = (self.t_len(), self.k());
        assert_eq!(theta.len(), self.m(), "theta length mismatch");
        let mut out = DVector::zeros(t_len);
        for t in 0..t_len {
            let mut acc = 0.0;
            for j in 0..k {
                acc += self.x[(t, j)] * theta[t * k + j];
            }
            if self.with_eta {
                acc += theta[t_len * k + t];
            }
            out[t] = acc;
        }
        out
    }

    /// `Z' * v` stacked as (gamma_1', ..., gamma_T', eta')'.
    pub fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let (t_len, k) = (self.t_len(), self.k());
        assert_eq!(v.len(), t_len, "v length mismatch");
        let mut out = DVector::zeros(self.m());
        for t in 0..t_len {
            for j in 0..k {
                out[t * k + j] = self.x[(t, j)] * v[t];
            }
            if self.with_eta {
                out[t_len * k + t] = v[t];
            }
        }
        out
    }

    /// Dense realization; only sensible for small T*K (tests, tiny problems).
    pub fn dense(&self) -> DMatrix<f64> {
        let (t_len, k) = (self.t_len(), self.k());
        let mut z = DMatrix::zeros(t_len, self.m());
        for t in 0..t_len {
            for j in 0..k {
                z[(t, t * k + j)] = self.x[(t, j)];
            }
            if self.with_eta {
                z[(t, t_len * k + t)] = 1.0;
            }
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_toy_fred_csv() {
        let f = write_temp(
            "sasdate,A,B\nTransform:,5,2\n1/1/2000,1.0,3.0\n2/1/2000,2.718281828,5.0\n3/1/2000,7.389056099,4.0\n",
        );
        let d = load_fred_csv(f.path(), PeriodRange::default()).unwrap();
        assert_eq!(d.n_series(), 2);
        assert_eq!(d.transform_codes, vec![5, 2]);
        assert_eq!(d.n_periods(), 3);
        assert_eq!(d.time_index[0], Period::new(2000, 1).unwrap());
    }

    #[test]
    fn empty_range_is_an_error() {
        let f = write_temp("sasdate,A\nTransform:,1\n1/1/2000,1.0\n");
        let r = PeriodRange::parse("2010-01..2010-12").unwrap();
        let err = load_fred_csv(f.path(), r).unwrap_err();
        assert!(err.to_string().contains("no rows in range"), "{err}");
    }

    #[test]
    fn leading_missing_trimmed_interior_missing_rejected() {
        let f = write_temp(
            "sasdate,A,B\nTransform:,1,1\n1/1/2000,,3.0\n2/1/2000,2.0,4.0\n3/1/2000,3.0,5.0\n",
        );
        let d = load_fred_csv(f.path(), PeriodRange::default()).unwrap();
        assert_eq!(d.n_periods(), 2);

        let f = write_temp(
            "sasdate,A,B\nTransform:,1,1\n1/1/2000,1.0,3.0\n2/1/2000,NA,4.0\n3/1/2000,3.0,5.0\n",
        );
        assert!(load_fred_csv(f.path(), PeriodRange::default()).is_err());
    }

    #[test]
    fn transform_examples() {
        let ds = |vals: Vec<f64>, code: u8| Dataset {
            names: vec!["a".into()],
            values: DMatrix::from_column_slice(vals.len(), 1, &vals),
            time_index: (0..vals.len() as u32)
                .map(|i| Period::new(2000, 1 + i % 12).unwrap())
                .collect(),
            transform_codes: vec![code],
        };
        // code 5 on [1, e] -> [1.0]
        let out = apply_transforms(&ds(vec![1.0, std::f64::consts::E], 5)).unwrap();
        assert_relative_eq!(out.values[(0, 0)], 1.0, epsilon = 1e-12);
        // code 2 on [3, 5, 4] -> [2, -1]
        let out = apply_transforms(&ds(vec![3.0, 5.0, 4.0], 2)).unwrap();
        assert_eq!(out.n_periods(), 2);
        assert_relative_eq!(out.values[(0, 0)], 2.0);
        assert_relative_eq!(out.values[(1, 0)], -1.0);
        // code 6 on [1, e, e^3] -> [1.0]
        let e = std::f64::consts::E;
        let out = apply_transforms(&ds(vec![1.0, e, e * e * e], 6)).unwrap();
        assert_eq!(out.n_periods(), 1);
        assert_relative_eq!(out.values[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn transform_errors() {
        let d = Dataset {
            names: vec!["a".into()],
            values: DMatrix::from_column_slice(2, 1, &[-1.0, 2.0]),
            time_index: vec![Period::new(2000, 1).unwrap(), Period::new(2000, 2).unwrap()],
            transform_codes: vec![5],
        };
        assert!(apply_transforms(&d).is_err());
        let d2 = Dataset { transform_codes: vec![3], ..d };
        assert!(apply_transforms(&d2).is_err());
    }

    #[test]
    fn transforms_align_series_of_mixed_order() {
        let d = Dataset {
            names: vec!["lvl".into(), "dd".into()],
            values: DMatrix::from_columns(&[
                DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
                DVector::from_vec(vec![1.0, 2.0, 4.0, 8.0]),
            ]),
            time_index: (1..=4).map(|m| Period::new(2000, m).unwrap()).collect(),
            transform_codes: vec![1, 6],
        };
        let out = apply_transforms(&d).unwrap();
        assert_eq!(out.n_periods(), 2); // lost two rows to the second difference
        assert_eq!(out.time_index[0], Period::new(2000, 3).unwrap());
        assert_relative_eq!(out.values[(0, 0)], 3.0); // level series trimmed, not shifted
    }

    #[test]
    fn standardize_examples() {
        let y = DVector::from_vec(vec![-1.0, 1.0]);
        let x = DMatrix::from_column_slice(2, 1, &[2.0, 6.0]);
        let sr = standardize(&y, &x).unwrap();
        let s = (2.0f64 / 1.0).sqrt();
        assert_relative_eq!(sr.y[0], -1.0 / s, epsilon = 1e-14);
        assert_relative_eq!(sr.y[1], 1.0 / s, epsilon = 1e-14);
        // unit-variance input passes through
        let sr2 = standardize(&sr.y.clone(), &sr.x.clone()).unwrap();
        assert_relative_eq!(sr2.scale_y, 1.0, epsilon = 1e-12);
        assert!((sr2.y - sr.y).norm() < 1e-12);
        // constant column rejected with the column named
        let xc = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let err = standardize(&y, &xc).unwrap_err();
        assert!(err.to_string().contains("column 0"), "{err}");
    }

    #[test]
    fn tvp_design_structure() {
        let x = DMatrix::from_column_slice(2, 1, &[3.0, 5.0]);
        let td = build_tvp_design(&x, false);
        let z = td.dense();
        assert_eq!(z, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]));
        let zero = td.mul(&DVector::zeros(2));
        assert_eq!(zero, DVector::zeros(2));

        let td = build_tvp_design(&x, true);
        let theta = DVector::from_vec(vec![0.0, 0.0, 1.0, 2.0]);
        assert_eq!(td.mul(&theta), DVector::from_vec(vec![1.0, 2.0]));
    }
}
