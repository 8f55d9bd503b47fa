//! Motion distance between feature distributions, top-1 accuracy and embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure, Error, Result};
use crate::recognizer::PredictionMatrix;

/// Mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// A summary with the given moments, for tests and closed-form checks.
    pub fn from_moments(mean: Vec<f64>, cov: Vec<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        ensure!(cov.len() == d * d, Argument, "covariance of {} entries for dimension {d}", cov.len());
        Ok(Self { mean, cov, n })
    }
}

pub fn fit_gaussian<R: AsRef<[f32]>>(feats: &[R]) -> Result<GaussianSummary> {
    let n = feats.len();
    ensure!(n >= 2, Argument, "a Gaussian fit needs at least two samples, got {n}");
    let d = feats[0].as_ref().len();
    ensure!(
        feats.iter().all(|r| r.as_ref().len() == d),
        Argument,
        "feature rows differ in length"
    );
    let mut mean = vec![0.0f64; d];
    for r in feats {
        for (m, &x) in mean.iter_mut().zip(r.as_ref()) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0f64; d * d];
    for r in feats {
        let c: Vec<f64> = r.as_ref().iter().zip(&mean).map(|(&x, m)| x as f64 - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianSummary { mean, cov, n })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians, clamped at zero.
pub fn fmd(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let d = a.dim();
    ensure!(b.dim() == d, Argument, "feature dimensions {d} and {} differ", b.dim());
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = DMatrix::from_row_slice(d, d, &a.cov);
    let sb = DMatrix::from_row_slice(d, d, &b.cov);
    let ra = psd_sqrt(&sa);
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let value = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::Numeric("motion distance".into()));
    }
    Ok(value.max(0.0))
}

/// Fraction of rows whose argmax (smallest index on ties) equals the label.
pub fn accuracy(preds: &PredictionMatrix, labels: &[u32]) -> Result<f64> {
    ensure!(
        preds.len() == labels.len(),
        Argument,
        "{} predictions for {} labels",
        preds.len(),
        labels.len()
    );
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.argmax().iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// CSV with header `label,f0,...` and one row per sample, values to 9 significant digits.
pub fn embeddings_csv<R: AsRef<[f32]>>(feats: &[R], labels: &[u32]) -> Result<String> {
    ensure!(feats.len() == labels.len(), Argument, "{} feature rows for {} labels", feats.len(), labels.len());
    let d = feats.first().map_or(0, |r| r.as_ref().len());
    ensure!(feats.iter().all(|r| r.as_ref().len() == d), Argument, "feature rows differ in length");
    let mut out = String::from("label");
    for i in 0..d {
        write!(out, ",f{i}").expect("string write");
    }
    out.push('\n');
    for (r, l) in feats.iter().zip(labels) {
        write!(out, "{l}").expect("string write");
        for x in r.as_ref() {
            write!(out, ",{x:.8e}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings<R: AsRef<[f32]>>(feats: &[R], labels: &[u32], path: &Path) -> Result<()> {
    let csv = embeddings_csv(feats, labels)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_embeddings`].
pub fn read_embeddings(path: &Path) -> Result<(Vec<Vec<f32>>, Vec<u32>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let label = fields
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| bad(format!("label: {e}")))?;
        let row = fields
            .map(|f| f.parse::<f32>().map_err(|e| bad(format!("value {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        labels.push(label);
        feats.push(row);
    }
    Ok((feats, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(mu: f64, var: f64) -> GaussianSummary {
        GaussianSummary::from_moments(vec![mu], vec![var], 10).unwrap()
    }

    #[test]
    fn two_point_fit() {
        let g = fit_gaussian(&[[0.0f32, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(g.mean, vec![1.0, 0.0]);
        assert_eq!(g.cov, vec![2.0, 0.0, 0.0, 0.0]);
        assert!(fit_gaussian(&[[1.0f32]]).is_err());
        let same = fit_gaussian(&[[3.0f32, 1.0], [3.0, 1.0], [3.0, 1.0]]).unwrap();
        assert!(same.cov.iter().all(|&c| c == 0.0));
        let a = fit_gaussian(&[[1.0f32, 2.0], [3.0, 5.0], [0.0, 1.0]]).unwrap();
        let b = fit_gaussian(&[[0.0f32, 1.0], [1.0, 2.0], [3.0, 5.0]]).unwrap();
        for (x, y) in a.cov.iter().zip(&b.cov) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_closed_forms() {
        assert!((fmd(&scalar(0.0, 1.0), &scalar(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((fmd(&scalar(0.0, 1.0), &scalar(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        let a = fit_gaussian(&[[1.0f32, 0.5, 2.0], [0.0, 1.0, 1.0], [2.0, 2.0, 0.0], [1.0, 0.0, 1.0]]).unwrap();
        assert!(fmd(&a, &a).unwrap() < 1e-6);
        assert!(fmd(&a, &scalar(0.0, 1.0)).is_err());
    }

    #[test]
    fn accuracy_counts() {
        let p = PredictionMatrix {
            rows: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.2, 0.8]],
        };
        assert_eq!(accuracy(&p, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&p, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[1, 0, 1, 0]).unwrap(), 0.0);
        assert!(accuracy(&p, &[0]).is_err());
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let feats = vec![vec![0.1f32, -2.5], vec![1.0 / 3.0, 7e-9], vec![123456.78, 0.0]];
        export_embeddings(&feats, &[0, 1, 2], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("label,f0,f1\n"));
        let (back, labels) = read_embeddings(&path).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);
        assert_eq!(back, feats);
        export_embeddings::<Vec<f32>>(&[], &[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "label\n");
    }

    proptest! {
        #[test]
        fn symmetric_and_diagonal_closed_form(
            mu in prop::collection::vec(-3.0f64..3.0, 8),
            var in prop::collection::vec(0.0f64..4.0, 8),
        ) {
            let d = 4;
            let diag = |v: &[f64]| {
                let mut c = vec![0.0; d * d];
                for i in 0..d { c[i * d + i] = v[i]; }
                c
            };
            let a = GaussianSummary::from_moments(mu[..d].to_vec(), diag(&var[..d]), 5).unwrap();
            let b = GaussianSummary::from_moments(mu[d..].to_vec(), diag(&var[d..]), 5).unwrap();
            let want: f64 = (0..d)
                .map(|i| (mu[i] - mu[d + i]).powi(2) + (var[i].sqrt() - var[d + i].sqrt()).powi(2))
                .sum();
            let ab = fmd(&a, &b).unwrap();
            prop_assert!((ab - want).abs() < 1e-8);
            prop_assert!((ab - fmd(&b, &a).unwrap()).abs() < 1e-6);
        }
    }
}
