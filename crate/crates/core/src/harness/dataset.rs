//! Labelled SPD datasets: the `spdcsv` text format, train/test splits, and a
//! seeded synthetic generator.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::geometry::{rie_exp, Frame, MetricSpec};
use crate::linalg::{sym_eig, SpdMatrix, SymMatrix, PD_TOLERANCE};
use crate::random::{random_sym, seeded, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub matrix: SpdMatrix,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    classes: usize,
    samples: Vec<Sample>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// Every sample starts in the training split.
    pub fn new(n: usize, classes: usize, samples: Vec<Sample>) -> Result<Self> {
        if n == 0 || classes == 0 {
            return Err(Error::Config(format!("dataset needs n ≥ 1 and C ≥ 1, got n={n}, C={classes}")));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.matrix.dim() != n {
                return Err(Error::Validation {
                    line: i + 2,
                    message: format!("sample is {}x{}, expected {n}x{n}", s.matrix.dim(), s.matrix.dim()),
                });
            }
            if s.label >= classes {
                return Err(Error::Validation {
                    line: i + 2,
                    message: format!("label {} out of range for {classes} classes", s.label),
                });
            }
        }
        let train = (0..samples.len()).collect();
        Ok(Dataset {
            n,
            classes,
            samples,
            train,
            test: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    /// Seeded stratified split: within each class, `train_fraction` of the
    /// samples (rounded) go to training.
    pub fn split(&mut self, train_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!("train fraction must lie in [0, 1], got {train_fraction}")));
        }
        let mut rng = seeded(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.classes {
            let mut members: Vec<usize> = (0..self.samples.len()).filter(|&i| self.samples[i].label == c).collect();
            members.shuffle(&mut rng);
            let cut = (members.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&members[..cut]);
            test.extend_from_slice(&members[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        self.train = train;
        self.test = test;
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<(&SpdMatrix, usize)> {
        indices
            .iter()
            .map(|&i| (&self.samples[i].matrix, self.samples[i].label))
            .collect()
    }
}

/// Parses the `spdcsv` format: header `n=<dim>,classes=<C>`, then one
/// `label,v₁,…,v_{n²}` row per sample (row-major).
pub fn parse_spdcsv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let (n, classes) = parse_header(header)?;
    let mut samples = Vec::new();
    for (index, line) in lines {
        let line_no = index + 1;
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n * n + 1 {
            return Err(parse_err(format!("expected label plus {} values, found {} fields", n * n, fields.len())));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("label {:?} is not a non-negative integer", fields[0])))?;
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(format!("value {f:?} is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        let sym = SymMatrix::from_row_slice(n, &values).map_err(|e| parse_err(e.to_string()))?;
        let min = sym_eig(&sym)?.min_value();
        if !(min > PD_TOLERANCE) {
            return Err(Error::Validation {
                line: line_no,
                message: format!("matrix is not positive definite (minimum eigenvalue {min:e})"),
            });
        }
        if label >= classes {
            return Err(Error::Validation {
                line: line_no,
                message: format!("label {label} out of range for {classes} classes"),
            });
        }
        samples.push(Sample {
            matrix: SpdMatrix::from_sym(sym)?,
            label,
        });
    }
    Dataset::new(n, classes, samples)
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let bad = || Error::Parse {
        line: 1,
        message: format!("header must be `n=<dim>,classes=<C>`, found {header:?}"),
    };
    let mut n = None;
    let mut classes = None;
    for part in header.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(bad)?;
        let value: usize = value.trim().parse().map_err(|_| bad())?;
        match key.trim() {
            "n" => n = Some(value),
            "classes" => classes = Some(value),
            _ => return Err(bad()),
        }
    }
    match (n, classes) {
        (Some(n), Some(c)) if n > 0 && c > 0 => Ok((n, c)),
        _ => Err(bad()),
    }
}

pub fn format_spdcsv(data: &Dataset) -> String {
    let mut out = format!("n={},classes={}\n", data.n, data.classes);
    for s in &data.samples {
        out.push_str(&s.label.to_string());
        for v in s.matrix.as_sym().vectorize() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_spdcsv(&fs::read_to_string(path)?)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, format_spdcsv(data))?;
    Ok(())
}

/// Maximum prototype draws before generation gives up.
pub const PROTOTYPE_RETRIES: usize = 1000;

/// Class prototypes at unit chart distance from the identity, pairwise at
/// least `4·spread` apart in the chart, with samples `Exp_{P_c}(ξ)` for
/// Gaussian symmetric `ξ` of entry scale `spread/√n`.
pub fn synth_generate(
    n: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    metric: MetricSpec,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = seeded(seed);
    let prototypes = draw_prototypes(&mut rng, n, classes, spread, metric)?;
    let scale = spread / (n as f64).sqrt();
    let mut samples = Vec::with_capacity(classes * per_class);
    for (label, p) in prototypes.iter().enumerate() {
        for _ in 0..per_class {
            let xi = random_sym(&mut rng, n, scale);
            samples.push(Sample {
                matrix: rie_exp(metric, p, &xi)?,
                label,
            });
        }
    }
    Dataset::new(n, classes, samples)
}

/// The class prototypes [`synth_generate`] uses for the same arguments.
pub fn synth_prototypes(n: usize, classes: usize, spread: f64, metric: MetricSpec, seed: u64) -> Result<Vec<SpdMatrix>> {
    draw_prototypes(&mut seeded(seed), n, classes, spread, metric)
}

fn draw_prototypes(
    rng: &mut SeededRng,
    n: usize,
    classes: usize,
    spread: f64,
    metric: MetricSpec,
) -> Result<Vec<SpdMatrix>> {
    if n < 2 || classes < 2 || !(spread > 0.0) {
        return Err(Error::Config(format!(
            "synthesis needs n ≥ 2, C ≥ 2 and spread > 0, got n={n}, C={classes}, spread={spread}"
        )));
    }
    metric.check(n)?;
    let identity = Frame::at(metric, &SpdMatrix::identity(n))?;
    let mut prototypes: Vec<(SpdMatrix, DMatrix<f64>)> = Vec::with_capacity(classes);
    for _ in 0..PROTOTYPE_RETRIES {
        if prototypes.len() == classes {
            break;
        }
        let m = random_sym(rng, n, 1.0);
        let m = m.scale(1.0 / identity.push(m.as_matrix())?.norm());
        let p = rie_exp(metric, &SpdMatrix::identity(n), &m)?;
        let chart = Frame::at(metric, &p)?.chart().clone();
        if prototypes.iter().all(|(_, c)| (c - &chart).norm() >= 4.0 * spread) {
            prototypes.push((p, chart));
        }
    }
    if prototypes.len() < classes {
        return Err(Error::Generation(format!(
            "could not place {classes} prototypes {} apart after {PROTOTYPE_RETRIES} draws; use fewer classes or a larger n",
            4.0 * spread
        )));
    }
    Ok(prototypes.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_dist;

    #[test]
    fn single_identity_sample() {
        let d = parse_spdcsv("n=2,classes=1\n0,1,0,0,1\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.samples()[0].matrix, SpdMatrix::identity(2));
        assert_eq!(d.samples()[0].label, 0);
    }

    #[test]
    fn save_then_load_is_exact() {
        let data = synth_generate(3, 2, 5, 0.3, MetricSpec::lcm(0.5), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.spdcsv");
        save_dataset(&data, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in data.samples().iter().zip(back.samples()) {
            assert_eq!(a.label, b.label);
            assert!((a.matrix.as_matrix() - b.matrix.as_matrix()).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn short_row_names_its_line() {
        let err = parse_spdcsv("n=2,classes=2\n0,1,0,0,1\n1,1,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn asymmetric_row_is_a_parse_error() {
        let err = parse_spdcsv("n=2,classes=1\n0,1,0.5,0,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn indefinite_row_reports_min_eigenvalue() {
        let err = parse_spdcsv("n=2,classes=1\n0,1,2,2,1\n").unwrap_err();
        match err {
            Error::Validation { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("minimum eigenvalue -9.99"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_header_and_label() {
        assert!(matches!(parse_spdcsv("dim=2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_spdcsv("n=2,classes=2\n2,1,0,0,1\n"), Err(Error::Validation { line: 2, .. })));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synth_generate(4, 3, 6, 0.2, MetricSpec::STANDARD_LEM, 11).unwrap();
        let b = synth_generate(4, 3, 6, 0.2, MetricSpec::STANDARD_LEM, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_generate(4, 3, 6, 0.2, MetricSpec::STANDARD_LEM, 12).unwrap());
    }

    #[test]
    fn vanishing_spread_collapses_onto_prototypes() {
        let metric = MetricSpec::STANDARD_LCM;
        let spread = 1e-13;
        let data = synth_generate(3, 2, 4, spread, metric, 4).unwrap();
        let protos = synth_prototypes(3, 2, spread, metric, 4).unwrap();
        for s in data.samples() {
            assert!((s.matrix.as_matrix() - protos[s.label].as_matrix()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn nearest_prototype_separates_classes() {
        for metric in [MetricSpec::STANDARD_LEM, MetricSpec::lcm(0.5)] {
            let (n, c, spread, seed) = (6, 3, 0.1, 21);
            let data = synth_generate(n, c, 100, spread, metric, seed).unwrap();
            let protos = synth_prototypes(n, c, spread, metric, seed).unwrap();
            let correct = data
                .samples()
                .iter()
                .filter(|s| {
                    let d: Vec<f64> = protos.iter().map(|p| geodesic_dist(metric, &s.matrix, p).unwrap()).collect();
                    let best = (0..c).min_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap();
                    best == s.label
                })
                .count();
            assert!(correct as f64 >= 0.99 * data.len() as f64, "{metric}: {correct}/300");
        }
    }

    #[test]
    fn impossible_separation_is_a_generation_error() {
        let err = synth_generate(2, 40, 1, 0.5, MetricSpec::STANDARD_LEM, 0).unwrap_err();
        assert!(matches!(err, Error::Generation(_)), "{err}");
    }

    #[test]
    fn split_is_stratified() {
        let mut data = synth_generate(3, 3, 10, 0.2, MetricSpec::STANDARD_LEM, 2).unwrap();
        data.split(0.7, 5).unwrap();
        assert_eq!(data.train_indices().len(), 21);
        assert_eq!(data.test_indices().len(), 9);
        for c in 0..3 {
            let t = data.train_indices().iter().filter(|&&i| data.samples()[i].label == c).count();
            assert_eq!(t, 7);
        }
    }
}
