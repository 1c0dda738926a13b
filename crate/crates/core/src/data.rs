//! Ingestion, reduction, windowing and subspace projection of multivariate
//! time series.
//!
//! All values are kept row-major: row `t` holds the `M` feature values of
//! sample `t`. A window of length `l_w` is the contiguous block of rows
//! `[start, start + l_w)`, stored flat with the same row-major layout, so
//! entry `(step, feature)` lives at `step * M + feature`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subspace::Subspace;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Argument(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Argument("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Rows `[start, end)` as a flat row-major slice.
    pub fn row_block(&self, start: usize, end: usize) -> &[f64] {
        &self.data[start * self.cols..end * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub values: Matrix,
    pub labels: Option<Vec<u8>>,
    pub feature_names: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn new(values: Matrix, labels: Option<Vec<u8>>, feature_names: Vec<String>) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Data("dataset must have at least one row and one feature".into()));
        }
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, feature {}",
                i / values.cols(),
                i % values.cols()
            )));
        }
        if feature_names.len() != values.cols() {
            return Err(Error::Data(format!(
                "{} feature names for {} features",
                feature_names.len(),
                values.cols()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != values.rows() {
                return Err(Error::Data(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    values.rows()
                )));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::Data("labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            values,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.values.cols()
    }
}

/// Reads a comma-separated file with a header row. With `has_labels`, the
/// last column must be named `label` and hold 0/1 values.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, has_labels)
}

pub fn read_csv(reader: impl std::io::Read, has_labels: bool) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let mut names: Vec<String> = header.iter().map(str::to_owned).collect();
    if has_labels {
        match names.last().map(String::as_str) {
            Some("label") => {
                names.pop();
            }
            _ => return Err(Error::Data("last column must be named `label`".into())),
        }
    }
    let m = names.len();
    if m == 0 {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (col, field) in record.iter().enumerate().take(m) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {col}: `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "line {line}, column {col}: non-finite value `{field}`"
                )));
            }
            values.push(v);
        }
        if has_labels {
            let field = &record[m];
            let label = match field {
                "0" => 0,
                "1" => 1,
                _ => return Err(Error::Data(format!("line {line}: label `{field}` is not 0 or 1"))),
            };
            labels.push(label);
        }
    }
    if values.is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let n = values.len() / m;
    TimeSeriesDataset::new(Matrix::new(n, m, values)?, has_labels.then_some(labels), names)
}

pub fn write_csv(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = ds.feature_names.join(",");
    if ds.labels.is_some() {
        header.push_str(",label");
    }
    writeln!(out, "{header}").map_err(io)?;
    for t in 0..ds.len() {
        let mut line = ds
            .values
            .row(t)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(labels) = &ds.labels {
            line.push(',');
            line.push_str(if labels[t] == 1 { "1" } else { "0" });
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// How a group of `sigma` consecutive samples collapses into one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Lower median: the element at index `(sigma - 1) / 2` of the sorted group.
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDataset {
    pub values: Matrix,
    pub labels: Option<Vec<u8>>,
    pub sigma: usize,
}

/// Lower median of a non-empty slice.
pub fn lower_median(values: &mut [f64]) -> f64 {
    let mid = (values.len() - 1) / 2;
    *values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
}

/// Decimates the series by collapsing disjoint groups of `sigma` rows.
/// Trailing rows that do not fill a group are dropped; labels reduce by max.
pub fn reduce(ds: &TimeSeriesDataset, sigma: usize, agg: Aggregation) -> Result<ReducedDataset> {
    if sigma == 0 {
        return Err(Error::Argument("sigma must be at least 1".into()));
    }
    if sigma > ds.len() {
        return Err(Error::Argument(format!(
            "sigma {sigma} exceeds series length {}",
            ds.len()
        )));
    }
    let m = ds.num_features();
    let groups = ds.len() / sigma;
    let mut data = Vec::with_capacity(groups * m);
    let mut buf = vec![0.0; sigma];
    for g in 0..groups {
        for f in 0..m {
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = ds.values.get(g * sigma + k, f);
            }
            data.push(match agg {
                Aggregation::Median => lower_median(&mut buf),
                Aggregation::Mean => buf.iter().sum::<f64>() / sigma as f64,
            });
        }
    }
    let labels = ds.labels.as_ref().map(|labels| {
        labels
            .chunks_exact(sigma)
            .map(|c| c.iter().copied().max().unwrap_or(0))
            .collect()
    });
    Ok(ReducedDataset {
        values: Matrix::new(groups, m, data)?,
        labels,
        sigma,
    })
}

/// Per-feature min-max scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(values: &Matrix) -> Self {
        let m = values.cols();
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        for r in 0..values.rows() {
            for (f, &v) in values.row(r).iter().enumerate() {
                min[f] = min[f].min(v);
                max[f] = max[f].max(v);
            }
        }
        Self { min, max }
    }

    pub fn transform(&self, values: &Matrix) -> Result<Matrix> {
        if values.cols() != self.min.len() {
            return Err(Error::Argument(format!(
                "scaler fitted on {} features, got {}",
                self.min.len(),
                values.cols()
            )));
        }
        let m = values.cols();
        let data = values
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = i % m;
                let range = self.max[f] - self.min[f];
                // Constant features are only shifted.
                if range > 0.0 {
                    (v - self.min[f]) / range
                } else {
                    v - self.min[f]
                }
            })
            .collect();
        Matrix::new(values.rows(), m, data)
    }

    pub fn transform_dataset(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        TimeSeriesDataset::new(self.transform(&ds.values)?, ds.labels.clone(), ds.feature_names.clone())
    }
}

/// Overlapping windows over a series. Each window is stored flat,
/// row-major, `window_len * num_features` values.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    window_len: usize,
    num_features: usize,
    stride: usize,
    data: Vec<f64>,
    origin_index: Vec<usize>,
    labels: Option<Vec<u8>>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.origin_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin_index.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of scalar entries per window.
    pub fn window_size(&self) -> usize {
        self.window_len * self.num_features
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_size();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn windows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        let w = self.window_size().max(1);
        self.data.chunks_exact(w).take(self.len())
    }

    pub fn origin_index(&self) -> &[usize] {
        &self.origin_index
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Windows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let w = self.window_size();
        Self {
            window_len: self.window_len,
            num_features: self.num_features,
            stride: self.stride,
            data: self.data[start * w..end * w].to_vec(),
            origin_index: self.origin_index[start..end].to_vec(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }

    /// Projects every window onto the features of `g`.
    pub fn project(&self, g: &Subspace) -> Result<Self> {
        let cols = checked_columns(g, self.num_features)?;
        let mut data = Vec::with_capacity(self.len() * self.window_len * cols.len());
        for w in self.windows() {
            for step in w.chunks_exact(self.num_features) {
                data.extend(cols.iter().map(|&c| step[c]));
            }
        }
        Ok(Self {
            window_len: self.window_len,
            num_features: cols.len(),
            stride: self.stride,
            data,
            origin_index: self.origin_index.clone(),
            labels: self.labels.clone(),
        })
    }
}

/// Slides a window of `window_len` rows with the given stride. A window's
/// label is 1 when any covered sample is labelled 1.
pub fn make_windows(rows: &Matrix, labels: Option<&[u8]>, window_len: usize, stride: usize) -> Result<WindowedDataset> {
    if window_len == 0 || stride == 0 {
        return Err(Error::Argument("window length and stride must be positive".into()));
    }
    if let Some(l) = labels {
        if l.len() != rows.rows() {
            return Err(Error::Argument("labels length differs from row count".into()));
        }
    }
    let count = if rows.rows() >= window_len {
        (rows.rows() - window_len) / stride + 1
    } else {
        0
    };
    let mut data = Vec::with_capacity(count * window_len * rows.cols());
    let mut origin_index = Vec::with_capacity(count);
    let mut window_labels = labels.map(|_| Vec::with_capacity(count));
    for i in 0..count {
        let start = i * stride;
        data.extend_from_slice(rows.row_block(start, start + window_len));
        origin_index.push(start);
        if let (Some(out), Some(l)) = (window_labels.as_mut(), labels) {
            out.push(l[start..start + window_len].iter().copied().max().unwrap_or(0));
        }
    }
    Ok(WindowedDataset {
        window_len,
        num_features: rows.cols(),
        stride,
        data,
        origin_index,
        labels: window_labels,
    })
}

/// Chronological 80/20 split: the first `ceil(0.8 * count)` windows train.
pub fn split_train_val(wd: &WindowedDataset) -> Result<(WindowedDataset, WindowedDataset)> {
    let n = wd.len();
    if n < 5 {
        return Err(Error::Argument(format!("need at least 5 windows to split, got {n}")));
    }
    let n_train = (4 * n).div_ceil(5);
    Ok((wd.slice(0, n_train), wd.slice(n_train, n)))
}

fn checked_columns(g: &Subspace, num_features: usize) -> Result<Vec<usize>> {
    let cols: Vec<usize> = g.iter().collect();
    if let Some(&bad) = cols.iter().find(|&&c| c >= num_features) {
        return Err(Error::Argument(format!(
            "feature index {bad} out of range for {num_features} features"
        )));
    }
    Ok(cols)
}

/// Selects the columns of `g` (ascending) from a single flat window.
pub fn project_subspace(window: &[f64], num_features: usize, g: &Subspace) -> Result<Vec<f64>> {
    if num_features == 0 || !window.len().is_multiple_of(num_features) {
        return Err(Error::Argument(
            "window length is not a multiple of the feature count".into(),
        ));
    }
    let cols = checked_columns(g, num_features)?;
    Ok(window
        .chunks_exact(num_features)
        .flat_map(|step| cols.iter().map(move |&c| step[c]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_feature(values: &[f64]) -> TimeSeriesDataset {
        TimeSeriesDataset::new(
            Matrix::new(values.len(), 1, values.to_vec()).unwrap(),
            None,
            vec!["x".into()],
        )
        .unwrap()
    }

    #[test]
    fn csv_read_back() {
        let ds = read_csv("a,b\n1,2\n3,4\n5,6\n".as_bytes(), false).unwrap();
        assert_eq!((ds.len(), ds.num_features()), (3, 2));
        assert_eq!(ds.values.row(1), &[3.0, 4.0]);
        assert_eq!(ds.feature_names, vec!["a", "b"]);

        let ds = read_csv("a,label\n1,0\n2,0\n3,1\n".as_bytes(), true).unwrap();
        assert_eq!(ds.labels, Some(vec![0, 0, 1]));
        assert_eq!(ds.num_features(), 1);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            read_csv("a,b\n1,NaN\n".as_bytes(), false),
            Err(Error::Data(_))
        ));
        assert!(matches!(read_csv("".as_bytes(), false), Err(Error::Data(_))));
        assert!(matches!(read_csv("a,b\n".as_bytes(), false), Err(Error::Data(_))));
        match read_csv("a,b\n1,2\n3,x\n".as_bytes(), false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            read_csv("a,b\n1,2\n3\n".as_bytes(), false),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            read_csv("a,label\n1,2\n".as_bytes(), true),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn reduce_examples() {
        let ds = single_feature(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(reduce(&ds, 5, Aggregation::Median).unwrap().values.as_slice(), &[3.0]);
        // lower middle element of each sorted pair
        let ds = single_feature(&[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(
            reduce(&ds, 2, Aggregation::Median).unwrap().values.as_slice(),
            &[1.0, 5.0]
        );
        assert_eq!(
            reduce(&ds, 2, Aggregation::Mean).unwrap().values.as_slice(),
            &[2.0, 6.0]
        );
        let r = reduce(&ds, 1, Aggregation::Median).unwrap();
        assert_eq!(r.values, ds.values);
        assert!(matches!(reduce(&ds, 5, Aggregation::Median), Err(Error::Argument(_))));
    }

    #[test]
    fn reduce_drops_tail_and_maxes_labels() {
        let ds = TimeSeriesDataset::new(
            Matrix::new(7, 1, vec![1.0; 7]).unwrap(),
            Some(vec![0, 0, 1, 0, 0, 0, 1]),
            vec!["x".into()],
        )
        .unwrap();
        let r = reduce(&ds, 3, Aggregation::Median).unwrap();
        assert_eq!(r.values.rows(), 2);
        assert_eq!(r.labels, Some(vec![1, 0]));
    }

    #[test]
    fn window_counts() {
        let rows = Matrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(make_windows(&rows, None, 3, 1).unwrap().len(), 8);
        let whole = make_windows(&rows, None, 10, 1).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole.window(0), rows.as_slice());
        assert!(make_windows(&rows, None, 11, 1).unwrap().is_empty());

        let rows = Matrix::new(5, 1, (0..5).map(f64::from).collect()).unwrap();
        let w = make_windows(&rows, None, 2, 2).unwrap();
        assert_eq!(w.origin_index(), &[0, 2]);
        assert_eq!(w.window(1), &[2.0, 3.0]);
    }

    #[test]
    fn window_labels_use_max() {
        let rows = Matrix::new(4, 1, vec![0.0; 4]).unwrap();
        let w = make_windows(&rows, Some(&[0, 0, 1, 0]), 2, 1).unwrap();
        assert_eq!(w.labels(), Some(&[0u8, 1, 1][..]));
    }

    #[test]
    fn split_sizes() {
        let rows = Matrix::new(10, 1, vec![0.0; 10]).unwrap();
        let w = make_windows(&rows, None, 1, 1).unwrap();
        let (t, v) = split_train_val(&w).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        assert!(t.origin_index().iter().max() < v.origin_index().iter().min());

        let w = make_windows(&rows, None, 6, 1).unwrap();
        let (t, v) = split_train_val(&w).unwrap();
        assert_eq!((t.len(), v.len()), (4, 1));

        let w = make_windows(&rows, None, 7, 1).unwrap();
        assert!(matches!(split_train_val(&w), Err(Error::Argument(_))));
    }

    #[test]
    fn projection() {
        let window = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let g = Subspace::from_iter([0, 2]);
        assert_eq!(project_subspace(&window, 3, &g).unwrap(), vec![1.0, 3.0, 4.0, 6.0]);
        let all = Subspace::from_iter(0..3);
        assert_eq!(project_subspace(&window, 3, &all).unwrap(), window.to_vec());
        assert_eq!(
            project_subspace(&window, 3, &Subspace::from_iter([1])).unwrap(),
            vec![2.0, 5.0]
        );
        assert!(project_subspace(&window, 3, &Subspace::from_iter([3])).is_err());
    }

    #[test]
    fn scaler_maps_train_range_to_unit() {
        let m = Matrix::new(3, 2, vec![0.0, 5.0, 5.0, 5.0, 10.0, 5.0]).unwrap();
        let s = MinMaxScaler::fit(&m);
        let t = s.transform(&m).unwrap();
        assert_eq!(t.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(t.column(1), vec![0.0, 0.0, 0.0]);
    }
}
