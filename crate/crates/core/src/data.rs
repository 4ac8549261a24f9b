//! CSV ingestion, chronological splitting, sliding-window construction,
//! and per-channel standardization fitted on the training split only.
//!
//! Splits follow the usual border convention: validation and test keep the
//! trailing `lookback` rows of the preceding split as context, so their
//! first forecast target is their own first row. Targets never cross split
//! boundaries because the border is exactly one look-back window long.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::MultivariateSeries;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: first header column must be `date`, found `{found}`")]
    MissingDateColumn { path: String, found: String },
    #[error("{path}: no channel columns after the date column")]
    NoChannels { path: String },
    #[error("{path}: need at least 2 data rows, found {rows}")]
    TooFewRows { path: String, rows: usize },
    #[error("{path}: line {line} has {got} fields, expected {expected}")]
    Ragged { path: String, line: u64, got: usize, expected: usize },
    #[error("{path}: non-numeric value `{value}` at line {line}, column `{column}`")]
    NonNumeric { path: String, line: u64, column: String, value: String },
    #[error("ratios must be positive with sum at most 1, got {train}/{val}/{test}")]
    BadRatios { train: f64, val: f64, test: f64 },
    #[error("{split} split has {rows} rows, needs at least lookback + horizon = {need}")]
    SplitTooShort { split: &'static str, rows: usize, need: usize },
    #[error("monthly scheme needs {need} rows, the series has {rows}")]
    TooShortForMonths { rows: usize, need: usize },
    #[error("series of {rows} rows cannot hold one {need}-row window")]
    SeriesTooShort { rows: usize, need: usize },
    #[error("stride must be positive")]
    ZeroStride,
}

/// Read a `date`-labeled CSV into a channels-by-time series.
/// The first column is kept verbatim as timestamps; the rest must parse
/// as finite numbers.
pub fn load_csv(path: impl AsRef<Path>) -> Result<MultivariateSeries, DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                DataError::Io { path: display.clone(), source: io }
            } else {
                unreachable!()
            }
        }
        _ => DataError::Csv { path: display.clone(), source: e },
    })?;

    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv { path: display.clone(), source: e })?
        .clone();
    let mut cols = headers.iter();
    match cols.next() {
        Some(first) if first.eq_ignore_ascii_case("date") => {}
        Some(first) => {
            return Err(DataError::MissingDateColumn { path: display, found: first.to_string() })
        }
        None => return Err(DataError::MissingDateColumn { path: display, found: String::new() }),
    }
    let channel_names: Vec<String> = cols.map(str::to_string).collect();
    if channel_names.is_empty() {
        return Err(DataError::NoChannels { path: display });
    }

    let expected = headers.len();
    let mut timestamps = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                if let csv::ErrorKind::UnequalLengths { pos, expected_len, len } = e.kind() {
                    return Err(DataError::Ragged {
                        path: display,
                        line: pos.as_ref().map(|p| p.line()).unwrap_or_default(),
                        got: *len as usize,
                        expected: *expected_len as usize,
                    });
                }
                return Err(DataError::Csv { path: display, source: e });
            }
        };
        if record.len() != expected {
            return Err(DataError::Ragged {
                path: display,
                line: record.position().map(|p| p.line()).unwrap_or_default(),
                got: record.len(),
                expected,
            });
        }
        timestamps.push(record[0].to_string());
        let mut row = Vec::with_capacity(expected - 1);
        for (i, field) in record.iter().skip(1).enumerate() {
            let parsed: Result<f64, _> = field.trim().parse();
            match parsed {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(DataError::NonNumeric {
                        path: display,
                        line: record.position().map(|p| p.line()).unwrap_or_default(),
                        column: channel_names[i].clone(),
                        value: field.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }

    if rows.len() < 2 {
        return Err(DataError::TooFewRows { path: display, rows: rows.len() });
    }

    let t = rows.len();
    let c = channel_names.len();
    let mut values = Array2::zeros((c, t));
    for (ti, row) in rows.iter().enumerate() {
        for (ci, v) in row.iter().enumerate() {
            values[[ci, ti]] = *v;
        }
    }
    let mut series = MultivariateSeries::new(values, channel_names);
    series.timestamps = Some(timestamps);
    Ok(series)
}

/// Write a series back out in the same `date`-first CSV layout. Missing
/// timestamps become the row index. Values print in shortest-roundtrip
/// form, so a written file reloads bit-identically.
pub fn save_csv(path: impl AsRef<Path>, series: &MultivariateSeries) -> Result<(), DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| DataError::Csv { path: display.clone(), source: e })?;
    let mut header = vec!["date".to_string()];
    header.extend(series.channel_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| DataError::Csv { path: display.clone(), source: e })?;
    for t in 0..series.len() {
        let stamp = match &series.timestamps {
            Some(ts) => ts[t].clone(),
            None => t.to_string(),
        };
        let mut record = vec![stamp];
        for c in 0..series.channels() {
            record.push(series.values[[c, t]].to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| DataError::Csv { path: display.clone(), source: e })?;
    }
    writer.flush().map_err(|e| DataError::Io { path: display, source: e })?;
    Ok(())
}

/// Chronological split rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// 12/4/4 months of 30 days at hourly resolution: 8640/2880/2880
    /// usable rows; anything beyond is ignored.
    EttMonths,
    /// Fractions of the full length; test takes its floor share and
    /// validation absorbs the remainder.
    Ratio { train: f64, val: f64, test: f64 },
}

impl SplitScheme {
    pub fn default_ratio() -> Self {
        SplitScheme::Ratio { train: 0.7, val: 0.1, test: 0.2 }
    }

    /// Usable (non-border) row counts per split.
    fn usable_rows(&self, total: usize) -> Result<(usize, usize, usize), DataError> {
        match *self {
            SplitScheme::EttMonths => {
                let month = 30 * 24;
                let (train, val, test) = (12 * month, 4 * month, 4 * month);
                let need = train + val + test;
                if total < need {
                    return Err(DataError::TooShortForMonths { rows: total, need });
                }
                Ok((train, val, test))
            }
            SplitScheme::Ratio { train, val, test } => {
                let ok = train > 0.0 && val > 0.0 && test > 0.0 && train + val + test <= 1.0 + 1e-9;
                if !ok {
                    return Err(DataError::BadRatios { train, val, test });
                }
                let n_train = (total as f64 * train).floor() as usize;
                let n_test = (total as f64 * test).floor() as usize;
                let n_val = total - n_train - n_test;
                Ok((n_train, n_val, n_test))
            }
        }
    }
}

/// The three chronological parts. Validation and test include
/// `border` rows of preceding context before their own rows.
#[derive(Debug, Clone)]
pub struct SplitSeries {
    pub train: MultivariateSeries,
    pub val: MultivariateSeries,
    pub test: MultivariateSeries,
    /// Context rows prepended to val and test (equal to the look-back).
    pub border: usize,
}

/// Copy of the rows in `start..end` (time axis), labels preserved.
pub fn slice_time(series: &MultivariateSeries, start: usize, end: usize) -> MultivariateSeries {
    let values = series.values.slice(s![.., start..end]).to_owned();
    let timestamps = series.timestamps.as_ref().map(|ts| ts[start..end].to_vec());
    MultivariateSeries { values, channel_names: series.channel_names.clone(), timestamps }
}

/// Split a series chronologically, granting val/test a `lookback`-row
/// border of context from the preceding split. Each part must still hold
/// at least one full window.
pub fn split(
    series: &MultivariateSeries,
    scheme: SplitScheme,
    lookback: usize,
    horizon: usize,
) -> Result<SplitSeries, DataError> {
    let total = series.len();
    let (n_train, n_val, n_test) = scheme.usable_rows(total)?;
    let need = lookback + horizon;
    for (name, rows, extra) in [
        ("train", n_train, 0),
        ("val", n_val, lookback),
        ("test", n_test, lookback),
    ] {
        if rows + extra < need {
            return Err(DataError::SplitTooShort { split: name, rows: rows + extra, need });
        }
    }
    let border = lookback.min(n_train);
    let train_end = n_train;
    let val_end = n_train + n_val;
    let test_end = n_train + n_val + n_test;
    Ok(SplitSeries {
        train: slice_time(series, 0, train_end),
        val: slice_time(series, train_end - border, val_end),
        test: slice_time(series, val_end - border, test_end),
        border,
    })
}

/// Which split a windowed dataset was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Val => write!(f, "val"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

/// Per-channel affine standardizer fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero; their std is clamped to 1.
    pub clamped_channels: Vec<usize>,
}

impl Scaler {
    pub fn fit(values: &ArrayView2<f64>) -> Self {
        let c = values.nrows();
        let t = values.ncols().max(1) as f64;
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        let mut clamped = Vec::new();
        for ch in 0..c {
            let row = values.row(ch);
            let mu = row.sum() / t;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / t;
            let sigma = var.sqrt();
            mean.push(mu);
            if sigma > 0.0 {
                std.push(sigma);
            } else {
                clamped.push(ch);
                std.push(1.0);
            }
        }
        Scaler { mean, std, clamped_channels: clamped }
    }

    pub fn transform(&self, values: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = values.to_owned();
        for (ch, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| (v - self.mean[ch]) / self.std[ch]);
        }
        out
    }

    pub fn inverse(&self, values: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = values.to_owned();
        for (ch, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v * self.std[ch] + self.mean[ch]);
        }
        out
    }

    fn apply(&self, series: &MultivariateSeries) -> MultivariateSeries {
        MultivariateSeries {
            values: self.transform(&series.values.view()),
            channel_names: series.channel_names.clone(),
            timestamps: series.timestamps.clone(),
        }
    }
}

/// Fit a scaler on the training part only and transform all three parts.
pub fn standardize(parts: &SplitSeries) -> (SplitSeries, Scaler) {
    let scaler = Scaler::fit(&parts.train.values.view());
    let out = SplitSeries {
        train: scaler.apply(&parts.train),
        val: scaler.apply(&parts.val),
        test: scaler.apply(&parts.test),
        border: parts.border,
    };
    (out, scaler)
}

/// Sliding (lookback, target) windows over one split, stored as a single
/// matrix with views handed out per instance.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    values: Array2<f64>,
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub split_tag: SplitTag,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        let need = self.lookback + self.horizon;
        if self.values.ncols() < need {
            0
        } else {
            (self.values.ncols() - need) / self.stride + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    /// Views of instance `i`: the look-back block and its forecast target.
    pub fn instance(&self, i: usize) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        let start = i * self.stride;
        let mid = start + self.lookback;
        let end = mid + self.horizon;
        (self.values.slice(s![.., start..mid]), self.values.slice(s![.., mid..end]))
    }

    /// A copy holding only the first `n` instances (all, if fewer exist).
    pub fn take(&self, n: usize) -> WindowedDataset {
        let n = n.min(self.len()).max(1);
        let cols = (n - 1) * self.stride + self.lookback + self.horizon;
        let cols = cols.min(self.values.ncols());
        WindowedDataset {
            values: self.values.slice(s![.., ..cols]).to_owned(),
            lookback: self.lookback,
            horizon: self.horizon,
            stride: self.stride,
            split_tag: self.split_tag,
        }
    }
}

/// Build sliding windows with the given stride over one series.
pub fn window(
    series: &MultivariateSeries,
    tag: SplitTag,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowedDataset, DataError> {
    if stride == 0 {
        return Err(DataError::ZeroStride);
    }
    let need = lookback + horizon;
    if series.len() < need {
        return Err(DataError::SeriesTooShort { rows: series.len(), need });
    }
    Ok(WindowedDataset {
        values: series.values.clone(),
        lookback,
        horizon,
        stride,
        split_tag: tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn ramp_series(channels: usize, t: usize) -> MultivariateSeries {
        let values =
            Array2::from_shape_fn((channels, t), |(c, i)| (c * 100_000 + i) as f64);
        let names = (0..channels).map(|c| format!("ch{c}")).collect();
        MultivariateSeries::new(values, names)
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_a_well_formed_file() {
        let f = write_temp("date,a,b\n2020-01-01,1.5,2\n2020-01-02,-3,4.25\n");
        let s = load_csv(f.path()).unwrap();
        assert_eq!(s.channel_names, vec!["a", "b"]);
        assert_eq!(s.channels(), 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s.values[[0, 0]], 1.5);
        assert_eq!(s.values[[1, 1]], 4.25);
        assert_eq!(s.timestamps.as_ref().unwrap()[1], "2020-01-02");
    }

    #[test]
    fn two_rows_is_the_minimum() {
        let f = write_temp("date,a\nx,1\n");
        assert!(matches!(load_csv(f.path()), Err(DataError::TooFewRows { rows: 1, .. })));
    }

    #[test]
    fn non_numeric_cell_is_located_by_line_and_column() {
        let mut content = String::from("date,a,hufl\n");
        for i in 0..20 {
            if i == 15 {
                content.push_str(&format!("t{i},1.0,oops\n"));
            } else {
                content.push_str(&format!("t{i},1.0,2.0\n"));
            }
        }
        let f = write_temp(&content);
        let err = load_csv(f.path()).unwrap_err();
        let msg = err.to_string();
        // Header is line 1, so data row 16 sits on line 17.
        assert!(msg.contains("line 17"), "{msg}");
        assert!(msg.contains("hufl"), "{msg}");
        assert!(msg.contains("oops"), "{msg}");
    }

    #[test]
    fn ragged_row_is_rejected() {
        let f = write_temp("date,a,b\nx,1,2\ny,3\nz,4,5\n");
        let err = load_csv(f.path()).unwrap_err();
        assert!(matches!(err, DataError::Ragged { .. }), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_csv("/nonexistent/nowhere.csv").unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
    }

    #[test]
    fn nan_text_is_non_numeric() {
        let f = write_temp("date,a\nx,1\ny,NaN\nz,2\n");
        let err = load_csv(f.path()).unwrap_err();
        assert!(matches!(err, DataError::NonNumeric { .. }), "{err}");
    }

    #[test]
    fn save_then_load_is_identity() {
        let mut series = ramp_series(3, 40);
        series.values[[1, 7]] = 0.1 + 0.2; // deliberately not representable exactly
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        save_csv(&path, &series).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.values, series.values);
        assert_eq!(back.channel_names, series.channel_names);
    }

    #[test]
    fn ratio_split_on_1000_rows_is_700_100_200() {
        let series = ramp_series(2, 1000);
        let parts = split(&series, SplitScheme::default_ratio(), 48, 24).unwrap();
        assert_eq!(parts.train.len(), 700);
        assert_eq!(parts.val.len(), 100 + 48);
        assert_eq!(parts.test.len(), 200 + 48);
        assert_eq!(parts.border, 48);
        // Chronological continuity: val starts 48 rows before train's end.
        assert_eq!(parts.val.values[[0, 0]], series.values[[0, 700 - 48]]);
        assert_eq!(parts.test.values[[0, 0]], series.values[[0, 800 - 48]]);
    }

    #[test]
    fn monthly_split_matches_the_hourly_convention() {
        let series = ramp_series(1, 17420);
        let parts = split(&series, SplitScheme::EttMonths, 96, 96).unwrap();
        assert_eq!(parts.train.len(), 8640);
        assert_eq!(parts.val.len(), 2880 + 96);
        assert_eq!(parts.test.len(), 2880 + 96);
        // Rows past 14400 are unused.
        let last = parts.test.values[[0, parts.test.len() - 1]];
        assert_eq!(last, series.values[[0, 14399]]);
    }

    #[test]
    fn short_split_is_rejected() {
        let series = ramp_series(1, 100);
        let err = split(&series, SplitScheme::default_ratio(), 48, 24).unwrap_err();
        assert!(matches!(err, DataError::SplitTooShort { .. }), "{err}");
    }

    #[test]
    fn window_counts_match_the_formula() {
        for (t, l, h, stride, want) in [
            (200, 96, 96, 1, 9),
            (192, 96, 96, 1, 1),
            (200, 96, 96, 4, 3),
            (50, 10, 5, 1, 36),
            (50, 10, 5, 7, 6),
        ] {
            let series = ramp_series(1, t);
            let ds = window(&series, SplitTag::Train, l, h, stride).unwrap();
            assert_eq!(ds.len(), want, "T={t} L={l} H={h} stride={stride}");
        }
    }

    #[test]
    fn too_short_series_cannot_be_windowed() {
        let series = ramp_series(1, 20);
        assert!(window(&series, SplitTag::Train, 16, 8, 1).is_err());
    }

    #[test]
    fn instances_are_the_expected_slices() {
        let series = ramp_series(2, 30);
        let ds = window(&series, SplitTag::Train, 5, 3, 1).unwrap();
        let (x, y) = ds.instance(4);
        assert_eq!(x.dim(), (2, 5));
        assert_eq!(y.dim(), (2, 3));
        assert_eq!(x[[0, 0]], 4.0);
        assert_eq!(x[[0, 4]], 8.0);
        assert_eq!(y[[0, 0]], 9.0);
        assert_eq!(y[[1, 2]], 100_011.0);
    }

    #[test]
    fn adjacent_instances_overlap_fully_but_for_one_column() {
        let series = ramp_series(1, 40);
        let ds = window(&series, SplitTag::Train, 8, 4, 1).unwrap();
        let (x0, y0) = ds.instance(0);
        let (x1, y1) = ds.instance(1);
        assert_eq!(x0.slice(s![.., 1..]), x1.slice(s![.., ..7]));
        assert_eq!(y0.slice(s![.., 1..]), y1.slice(s![.., ..3]));
    }

    #[test]
    fn standardized_train_split_has_zero_mean_unit_std() {
        let series = ramp_series(3, 500);
        let parts = split(&series, SplitScheme::default_ratio(), 20, 10).unwrap();
        let (std_parts, scaler) = standardize(&parts);
        assert!(scaler.clamped_channels.is_empty());
        for ch in 0..3 {
            let row = std_parts.train.values.row(ch);
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "channel {ch} var {var}");
        }
    }

    #[test]
    fn constant_channel_is_clamped_to_zero() {
        let mut series = ramp_series(2, 300);
        series.values.row_mut(1).fill(42.0);
        let parts = split(&series, SplitScheme::default_ratio(), 10, 5).unwrap();
        let (std_parts, scaler) = standardize(&parts);
        assert_eq!(scaler.clamped_channels, vec![1]);
        assert_eq!(scaler.std[1], 1.0);
        assert!(std_parts.train.values.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scaler_inverse_undoes_transform() {
        let series = ramp_series(3, 200);
        let scaler = Scaler::fit(&series.values.view());
        let z = scaler.transform(&series.values.view());
        let back = scaler.inverse(&z.view());
        for (a, b) in back.iter().zip(series.values.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scaler_ignores_val_and_test_rows() {
        let series = ramp_series(2, 1000);
        let parts = split(&series, SplitScheme::default_ratio(), 48, 24).unwrap();
        let (_, base) = standardize(&parts);
        let mut poisoned = parts.clone();
        poisoned.test.values.mapv_inplace(|v| v * 1000.0 + 7.0);
        poisoned.val.values.mapv_inplace(|v| -v);
        let (_, refit) = standardize(&poisoned);
        assert_eq!(base, refit);
    }

    #[test]
    fn val_targets_never_reach_into_train_rows() {
        let series = ramp_series(1, 1000);
        let parts = split(&series, SplitScheme::default_ratio(), 48, 24).unwrap();
        let ds = window(&parts.val, SplitTag::Val, 48, 24, 1).unwrap();
        // First usable val row is ramp value 700; every target must sit at
        // or past it. Look-backs may dip into the border context.
        let first_val_value = 700.0;
        for i in 0..ds.len() {
            let (_, y) = ds.instance(i);
            assert!(y.iter().all(|v| *v >= first_val_value), "instance {i}");
        }
        // The border exists precisely so the first target IS the first row.
        let (_, y0) = ds.instance(0);
        assert_eq!(y0[[0, 0]], first_val_value);
    }

    #[test]
    fn window_count_on_bordered_val_split() {
        // Usable rows V with an L-row border: windows = V - H + 1.
        let series = ramp_series(1, 1000);
        let parts = split(&series, SplitScheme::default_ratio(), 48, 24).unwrap();
        let ds = window(&parts.val, SplitTag::Val, 48, 24, 1).unwrap();
        assert_eq!(ds.len(), 100 - 24 + 1);
    }
}
