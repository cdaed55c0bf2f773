//! Datasets: toy generators, CSV ingestion, standardization, domain boxes and
//! train/test splits.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::DomainBox;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `n × d`, one point per row.
    pub points: Array2<f64>,
    /// `true` marks an anomaly.
    pub labels: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, points: Array2<f64>, labels: Option<Vec<bool>>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if points.ncols() == 0 {
            return Err(Error::Data("dataset has no columns".into()));
        }
        if let Some(l) = &labels {
            if l.len() != points.nrows() {
                return Err(Error::DimensionMismatch { expected: points.nrows(), got: l.len() });
            }
        }
        Ok(Self { name: name.into(), points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn select(&self, rows: &[usize]) -> Result<Self> {
        let points = self.points.select(Axis(0), rows);
        let labels = self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect());
        Dataset::new(self.name.clone(), points, labels)
    }

    fn rows_where(&self, anomaly: bool) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == anomaly).collect(),
            None if !anomaly => (0..self.len()).collect(),
            None => Vec::new(),
        }
    }

    /// Points labelled normal (all points when unlabelled).
    pub fn normals(&self) -> Array2<f64> {
        self.points.select(Axis(0), &self.rows_where(false))
    }

    /// Points labelled anomalous (none when unlabelled).
    pub fn anomalies(&self) -> Array2<f64> {
        self.points.select(Axis(0), &self.rows_where(true))
    }

    pub fn apply(&self, stats: &StandardizationStats) -> Result<Self> {
        Dataset::new(self.name.clone(), stats.transform(&self.points)?, self.labels.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Axes that were constant and got `std = 1`.
    #[serde(default)]
    pub constant_axes: Vec<usize>,
}

impl StandardizationStats {
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.ncols() });
        }
        let mut out = x.clone();
        for (k, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[k]) / self.std[k]);
        }
        Ok(out)
    }
}

pub const TOY_NAMES: [&str; 5] = ["one_blob", "two_circles", "two_blobs", "blob_cloud", "two_moons"];

/// 2D toy distributions. Points are not standardized.
pub fn make_toy<R: Rng + ?Sized>(name: &str, n: usize, noise: f64, rng: &mut R) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("toy dataset needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::Config(format!("noise must be non-negative, got {noise}")));
    }
    let mut pts = match name {
        "two_moons" => {
            let n_out = n / 2;
            let n_in = n - n_out;
            let mut p = Array2::zeros((n, 2));
            for i in 0..n_out {
                let t = PI * i as f64 / (n_out.max(2) - 1) as f64;
                p[[i, 0]] = t.cos();
                p[[i, 1]] = t.sin();
            }
            for i in 0..n_in {
                let t = PI * i as f64 / (n_in.max(2) - 1) as f64;
                p[[n_out + i, 0]] = 1.0 - t.cos();
                p[[n_out + i, 1]] = 0.5 - t.sin();
            }
            p
        }
        "two_circles" => {
            let n_out = n / 2;
            let n_in = n - n_out;
            let mut p = Array2::zeros((n, 2));
            for i in 0..n_out {
                let t = 2.0 * PI * i as f64 / n_out as f64;
                p[[i, 0]] = t.cos();
                p[[i, 1]] = t.sin();
            }
            for i in 0..n_in {
                let t = 2.0 * PI * i as f64 / n_in as f64;
                p[[n_out + i, 0]] = 0.5 * t.cos();
                p[[n_out + i, 1]] = 0.5 * t.sin();
            }
            p
        }
        "one_blob" => gaussian_cluster(rng, n, [0.0, 0.0], 1.0),
        "two_blobs" => {
            let a = gaussian_cluster(rng, n / 2, [-2.0, 0.0], 0.5);
            let b = gaussian_cluster(rng, n - n / 2, [2.0, 0.0], 0.5);
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("same width")
        }
        "blob_cloud" => {
            // A tight blob inside a sparse, wide cloud.
            let n_blob = (3 * n) / 4;
            let a = gaussian_cluster(rng, n_blob, [0.0, 0.0], 0.3);
            let b = gaussian_cluster(rng, n - n_blob, [0.0, 0.0], 2.0);
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("same width")
        }
        other => {
            return Err(Error::Config(format!(
                "unknown toy dataset '{other}' (expected one of {})",
                TOY_NAMES.join(", ")
            )))
        }
    };
    if noise > 0.0 {
        pts.mapv_inplace(|v| v + noise * rng.sample::<f64, _>(StandardNormal));
    }
    Dataset::new(name, pts, None)
}

fn gaussian_cluster<R: Rng + ?Sized>(rng: &mut R, n: usize, center: [f64; 2], std: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |(_, k)| center[k] + std * rng.sample::<f64, _>(StandardNormal))
}

/// `n` points uniform in the disk of radius `radius` about the origin.
pub fn uniform_disk<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Result<Dataset> {
    let mut p = Array2::zeros((n, 2));
    for mut row in p.rows_mut() {
        let r = radius * rng.random::<f64>().sqrt();
        let t = 2.0 * PI * rng.random::<f64>();
        row[0] = r * t.cos();
        row[1] = r * t.sin();
    }
    Dataset::new("disk", p, None)
}

/// `n` points uniform on the sphere of radius `radius` in 3D.
pub fn uniform_sphere<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Result<Dataset> {
    let mut p = Array2::zeros((n, 3));
    for mut row in p.rows_mut() {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        for k in 0..3 {
            row[k] = radius * v[k] / norm;
        }
    }
    Dataset::new("sphere", p, None)
}

/// Zero mean and unit sample standard deviation per axis.
pub fn standardize(data: &Dataset) -> Result<(Dataset, StandardizationStats)> {
    if data.len() < 2 {
        return Err(Error::Data("standardization needs at least 2 points".into()));
    }
    let stats = compute_stats(&data.points);
    Ok((data.apply(&stats)?, stats))
}

fn compute_stats(x: &Array2<f64>) -> StandardizationStats {
    let n = x.nrows() as f64;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut std = Vec::with_capacity(x.ncols());
    let mut constant_axes = Vec::new();
    for (k, col) in x.columns().into_iter().enumerate() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        mean.push(m);
        if sd > 0.0 && sd.is_finite() {
            std.push(sd);
        } else {
            constant_axes.push(k);
            std.push(1.0);
        }
    }
    StandardizationStats { mean, std, constant_axes }
}

pub const DEFAULT_HALF_WIDTH_SIGMAS: f64 = 5.0;

/// Per axis `mean ± half_width_sigmas · std` (sample std, constant axes use 1).
pub fn domain_box(data: &Dataset, half_width_sigmas: f64) -> Result<DomainBox> {
    if !(half_width_sigmas > 0.0) {
        return Err(Error::Config(format!("half width must be positive, got {half_width_sigmas}")));
    }
    let stats = if data.len() >= 2 {
        compute_stats(&data.points)
    } else {
        StandardizationStats { mean: data.points.row(0).to_vec(), std: vec![1.0; data.dim()], constant_axes: vec![] }
    };
    let low = stats.mean.iter().zip(&stats.std).map(|(m, s)| m - half_width_sigmas * s).collect();
    let high = stats.mean.iter().zip(&stats.std).map(|(m, s)| m + half_width_sigmas * s).collect();
    DomainBox::new(low, high)
}

/// Reads a comma-separated file with a header row. With `label_column`, that
/// column is removed from the features and any nonzero value marks an anomaly.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, msg: e.to_string() })?.clone();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse { row: 1, msg: format!("missing label column '{name}'") })?,
        ),
        None => None,
    };
    let width = headers.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        // Line numbers are 1-based and include the header.
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if rec.len() != width {
            return Err(Error::Parse { row, msg: format!("expected {width} fields, found {}", rec.len()) });
        }
        for (k, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric cell '{cell}' in column '{}'", &headers[k]),
            })?;
            if Some(k) == label_idx {
                labels.push(v != 0.0);
            } else {
                values.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Empty("csv data rows"));
    }
    let d = width - usize::from(label_idx.is_some());
    let points = Array2::from_shape_vec((rows, d), values).map_err(|e| Error::Data(e.to_string()))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, points, label_idx.map(|_| labels))
}

/// Writes `x0,x1,…[,label]` with shortest round-trip float formatting.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(data))?;
    Ok(())
}

pub fn csv_string(data: &Dataset) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("x{k}")).collect();
    if data.labels.is_some() {
        header.push("label".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in data.points.rows().into_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = &data.labels {
            cells.push(if l[i] { "1" } else { "0" }.into());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Deterministic shuffled split with `round(n · train_fraction)` training rows.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n = data.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Data(format!("split of {n} points at {train_fraction} leaves one side empty")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((data.select(&idx[..n_train])?, data.select(&idx[n_train..])?))
}

/// Anomaly-detection protocol for labelled tabular data: normals are split in
/// two, statistics come from the training normals only, and the test set holds
/// the held-out normals plus every anomaly.
#[derive(Debug, Clone)]
pub struct AdSplit {
    pub train: Dataset,
    pub test_normals: Array2<f64>,
    pub test_anomalies: Array2<f64>,
    pub stats: StandardizationStats,
}

pub fn ad_protocol_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<AdSplit> {
    if data.labels.is_none() {
        return Err(Error::Data("anomaly-detection split requires labels".into()));
    }
    let normals = Dataset::new(data.name.clone(), data.normals(), None)?;
    let anomalies = data.anomalies();
    if anomalies.nrows() == 0 {
        return Err(Error::Data("no anomalies in labelled data".into()));
    }
    let (train_raw, test_raw) = split(&normals, train_fraction, seed)?;
    let (train, stats) = standardize(&train_raw)?;
    let test_normals = stats.transform(&test_raw.points)?;
    let test_anomalies = stats.transform(&anomalies)?;
    Ok(AdSplit { train, test_normals, test_anomalies, stats })
}

/// Mean and sample std of each column, for tests and diagnostics.
pub fn column_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let m = x.mean_axis(Axis(0)).expect("non-empty");
    let sd = x.std_axis(Axis(0), 1.0);
    (m, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn toy_shapes() {
        for name in TOY_NAMES {
            let d = make_toy(name, 100, 0.1, &mut rng(0)).unwrap();
            assert_eq!(d.points.dim(), (100, 2), "{name}");
            assert!(d.points.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn toy_unknown_name() {
        assert!(make_toy("three_moons", 10, 0.0, &mut rng(0)).is_err());
        assert!(make_toy("two_moons", 1, 0.0, &mut rng(0)).is_err());
    }

    #[test]
    fn noiseless_circles_on_radii() {
        let d = make_toy("two_circles", 101, 0.0, &mut rng(0)).unwrap();
        for r in d.points.rows() {
            let rad = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!((rad - 1.0).abs() < 1e-12 || (rad - 0.5).abs() < 1e-12, "{rad}");
        }
    }

    #[test]
    fn noiseless_moons_on_half_circles() {
        let d = make_toy("two_moons", 200, 0.0, &mut rng(0)).unwrap();
        for r in d.points.rows() {
            let upper = (r[0] * r[0] + r[1] * r[1]).sqrt();
            let lower = ((r[0] - 1.0).powi(2) + (r[1] - 0.5).powi(2)).sqrt();
            assert!(
                (upper - 1.0).abs() < 1e-12 && r[1] >= -1e-12 || (lower - 1.0).abs() < 1e-12 && r[1] <= 0.5 + 1e-12
            );
        }
    }

    #[test]
    fn toy_repeatable() {
        let a = make_toy("blob_cloud", 50, 0.05, &mut rng(3)).unwrap();
        let b = make_toy("blob_cloud", 50, 0.05, &mut rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standardize_two_points() {
        let d = Dataset::new("t", array![[0.0], [2.0]], None).unwrap();
        let (s, stats) = standardize(&d).unwrap();
        // Sample std of {0, 2} is sqrt(2).
        let r = 1.0 / 2f64.sqrt();
        assert!((s.points[[0, 0]] + r).abs() < 1e-15 && (s.points[[1, 0]] - r).abs() < 1e-15);
        assert_eq!(stats.mean, vec![1.0]);
    }

    #[test]
    fn standardize_recomputed_moments() {
        let d = make_toy("two_blobs", 300, 0.2, &mut rng(5)).unwrap();
        let (s, _) = standardize(&d).unwrap();
        let (m, sd) = column_moments(&s.points);
        for k in 0..2 {
            assert!(m[k].abs() <= 1e-10);
            assert!((sd[k] - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn constant_axis_flagged() {
        let d = Dataset::new("t", array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]], None).unwrap();
        let (s, stats) = standardize(&d).unwrap();
        assert_eq!(stats.constant_axes, vec![1]);
        assert_eq!(stats.std[1], 1.0);
        assert!(s.points.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn domain_box_examples() {
        let d = make_toy("two_moons", 400, 0.1, &mut rng(1)).unwrap();
        let (s, _) = standardize(&d).unwrap();
        let b = domain_box(&s, 5.0).unwrap();
        for k in 0..2 {
            assert!((b.low()[k] + 5.0).abs() < 1e-9 && (b.high()[k] - 5.0).abs() < 1e-9);
        }
        let b1 = domain_box(&s, 1.0).unwrap();
        assert!((b1.high()[0] - 1.0).abs() < 1e-9);
        let raw = Dataset::new("t", array![[1.0], [5.0]], None).unwrap();
        let std = (8.0f64).sqrt();
        let b2 = domain_box(&raw, 5.0).unwrap();
        assert!((b2.low()[0] - (3.0 - 5.0 * std)).abs() < 1e-12);
    }

    #[test]
    fn domain_box_mean3_std2() {
        // Values chosen so the sample std is exactly 2.
        let raw = Dataset::new("t", array![[1.0], [3.0], [5.0]], None).unwrap();
        let b = domain_box(&raw, 5.0).unwrap();
        assert_eq!((b.low()[0], b.high()[0]), (-7.0, 13.0));
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_three_rows() {
        let f = write_tmp("a,b\n1,2\n3,4\n5.5,-6e-1\n");
        let d = load_csv(f.path(), None).unwrap();
        assert_eq!(d.points, array![[1.0, 2.0], [3.0, 4.0], [5.5, -0.6]]);
        assert!(d.labels.is_none());
    }

    #[test]
    fn csv_labels_partition() {
        let f = write_tmp("a,y,b\n1,0,2\n3,1,4\n5,0,6\n7,1,8\n9,0,1\n");
        let d = load_csv(f.path(), Some("y")).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.normals().nrows(), 3);
        assert_eq!(d.anomalies().nrows(), 2);
        assert_eq!(d.anomalies().row(0).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn csv_errors_carry_rows() {
        let ragged = write_tmp("a,b\n1,2\n3\n");
        match load_csv(ragged.path(), None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let bad = write_tmp("a,b\n1,2\n3,x\n");
        match load_csv(bad.path(), None) {
            Err(Error::Parse { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains('x'));
            }
            other => panic!("{other:?}"),
        }
        let nolabel = write_tmp("a,b\n1,2\n");
        assert!(matches!(load_csv(nolabel.path(), Some("y")), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn csv_missing_file_names_path() {
        let err = load_csv(Path::new("/nonexistent/file.csv"), None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/file.csv"));
    }

    #[test]
    fn split_halves() {
        let d = make_toy("one_blob", 100, 0.0, &mut rng(0)).unwrap();
        let (a, b) = split(&d, 0.5, 7).unwrap();
        assert_eq!((a.len(), b.len()), (50, 50));
        let mut all: Vec<Vec<u64>> = a
            .points
            .rows()
            .into_iter()
            .chain(b.points.rows())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u64>> =
            d.points.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        let (a2, _) = split(&d, 0.5, 7).unwrap();
        assert_eq!(a, a2);
        assert!(split(&d, 0.001, 7).is_err());
        assert!(split(&d, 1.0, 7).is_err());
    }

    #[test]
    fn ad_protocol_uses_train_stats() {
        let pts = Array2::from_shape_fn((20, 2), |(i, k)| (i * 2 + k) as f64);
        let labels = (0..20).map(|i| i >= 16).collect();
        let d = Dataset::new("t", pts, Some(labels)).unwrap();
        let s = ad_protocol_split(&d, 0.5, 1).unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.test_normals.nrows(), 8);
        assert_eq!(s.test_anomalies.nrows(), 4);
        let (m, _) = column_moments(&s.train.points);
        assert!(m[0].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn standardize_idempotent(vals in proptest::collection::vec(-1e3f64..1e3, 6..40)) {
            let n = vals.len() / 2;
            let x = Array2::from_shape_vec((n, 2), vals[..2 * n].to_vec()).unwrap();
            let d = Dataset::new("p", x, None).unwrap();
            let (a, sa) = standardize(&d).unwrap();
            prop_assume!(sa.constant_axes.is_empty());
            let (b, _) = standardize(&a).unwrap();
            for (u, v) in a.points.iter().zip(b.points.iter()) {
                prop_assert!((u - v).abs() <= 1e-10);
            }
        }

        #[test]
        fn csv_round_trip_bitwise(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 3..30)) {
            let n = vals.len() / 3;
            let x = Array2::from_shape_vec((n, 3), vals[..3 * n].to_vec()).unwrap();
            let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let d = Dataset::new("p", x, Some(labels)).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_csv(&d, f.path()).unwrap();
            let back = load_csv(f.path(), Some("label")).unwrap();
            prop_assert_eq!(&back.labels, &d.labels);
            for (u, v) in back.points.iter().zip(d.points.iter()) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
            prop_assert_eq!(csv_string(&back), csv_string(&d));
        }
    }
}
