//! Synthetic datasets and evaluation metrics.

use crate::models::{classifier_forward, MlpSpec, ModelError, ParameterVector};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("class {class} has {count} samples; an even split needs an even count")]
    OddClass { class: usize, count: usize },
    #[error("label sets overlap on {0}")]
    Overlap(usize),
    #[error("label set {0} is empty")]
    EmptyLabelSet(&'static str),
    #[error("label {0} is not covered by either label set")]
    Uncovered(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    /// `[N, d]`
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(DataError::Shape(format!(
                "{} points, {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(DataError::Shape(format!(
                "label {bad} with {classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.x.row_slice(i)
    }

    fn subset(
        &self,
        name: String,
        idx: &[usize],
        relabel: impl Fn(usize) -> usize,
        classes: usize,
    ) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.point(i));
        }
        Self {
            name,
            x: Tensor::from_parts(idx.len(), d, data),
            y: idx.iter().map(|&i| relabel(self.y[i])).collect(),
            classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }
}

pub const CIRCLE_POINTS: usize = 18;

/// 18 points on the unit circle at angles 2πk/18; class k/6 (three contiguous arcs).
pub fn circle_dataset() -> LabeledDataset {
    let mut data = Vec::with_capacity(2 * CIRCLE_POINTS);
    let mut y = Vec::with_capacity(CIRCLE_POINTS);
    for k in 0..CIRCLE_POINTS {
        let t = 2.0 * PI * k as f64 / CIRCLE_POINTS as f64;
        data.push(t.cos());
        data.push(t.sin());
        y.push(k / 6);
    }
    LabeledDataset {
        name: "circle-18".into(),
        x: Tensor::from_parts(CIRCLE_POINTS, 2, data),
        y,
        classes: 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Within each class, samples alternate between the halves.
    #[default]
    Alternating,
    /// Within each class, the first half goes to D₁ and the rest to D₂.
    Arc,
}

/// Splits every class evenly between two datasets.
pub fn split_dataset(
    d: &LabeledDataset,
    mode: SplitMode,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for class in 0..d.classes {
        let members: Vec<usize> = (0..d.len()).filter(|&i| d.y[i] == class).collect();
        if members.len() % 2 != 0 {
            return Err(DataError::OddClass {
                class,
                count: members.len(),
            });
        }
        let half = members.len() / 2;
        for (k, &i) in members.iter().enumerate() {
            let to_first = match mode {
                SplitMode::Alternating => k % 2 == 0,
                SplitMode::Arc => k < half,
            };
            if to_first {
                first.push(i);
            } else {
                second.push(i);
            }
        }
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((
        d.subset(format!("{}-1", d.name), &first, |l| l, d.classes),
        d.subset(format!("{}-2", d.name), &second, |l| l, d.classes),
    ))
}

/// Result of [`label_partition`]; `*_labels[new] = old`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPartition {
    pub a: LabeledDataset,
    pub b: LabeledDataset,
    pub a_labels: Vec<usize>,
    pub b_labels: Vec<usize>,
}

impl LabelPartition {
    pub fn to_old_a(&self, new: usize) -> usize {
        self.a_labels[new]
    }

    pub fn to_old_b(&self, new: usize) -> usize {
        self.b_labels[new]
    }
}

/// Routes samples by label into two datasets with dense re-indexed labels.
pub fn label_partition(d: &LabeledDataset, a: &[usize], b: &[usize]) -> Result<LabelPartition> {
    let sa: BTreeSet<usize> = a.iter().copied().collect();
    let sb: BTreeSet<usize> = b.iter().copied().collect();
    if sa.is_empty() {
        return Err(DataError::EmptyLabelSet("A"));
    }
    if sb.is_empty() {
        return Err(DataError::EmptyLabelSet("B"));
    }
    if let Some(&l) = sa.intersection(&sb).next() {
        return Err(DataError::Overlap(l));
    }
    if let Some(&l) = d.y.iter().find(|l| !sa.contains(l) && !sb.contains(l)) {
        return Err(DataError::Uncovered(l));
    }
    let a_labels: Vec<usize> = sa.into_iter().collect();
    let b_labels: Vec<usize> = sb.into_iter().collect();
    let pick = |labels: &[usize], suffix: &str| {
        let idx: Vec<usize> = (0..d.len()).filter(|&i| labels.contains(&d.y[i])).collect();
        let map = |old: usize| {
            labels
                .iter()
                .position(|&l| l == old)
                .expect("routed by label")
        };
        d.subset(format!("{}-{suffix}", d.name), &idx, map, labels.len())
    };
    Ok(LabelPartition {
        a: pick(&a_labels, "a"),
        b: pick(&b_labels, "b"),
        a_labels,
        b_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    /// 8×8 horizontal stripes (class 0) versus checkerboards (class 1).
    StripesVsChecks8x8,
}

pub const PATTERN_SIDE: usize = 8;

/// Binary 8×8 patterns; each pixel flips with probability `jitter` (seeded).
pub fn pattern_dataset(
    kind: PatternKind,
    per_class: usize,
    jitter: f64,
    seed: u64,
) -> LabeledDataset {
    let PatternKind::StripesVsChecks8x8 = kind;
    let n = PATTERN_SIDE;
    let stripes: Vec<f64> = (0..n * n)
        .map(|k| if (k / n) % 2 == 0 { 1.0 } else { 0.0 })
        .collect();
    let checks: Vec<f64> = (0..n * n)
        .map(|k| if (k / n + k % n) % 2 == 0 { 1.0 } else { 0.0 })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * per_class * n * n);
    let mut y = Vec::with_capacity(2 * per_class);
    for (class, base) in [&stripes, &checks].into_iter().enumerate() {
        for _ in 0..per_class {
            for &v in base.iter() {
                let flip = jitter > 0.0 && rng.gen::<f64>() < jitter;
                data.push(if flip { 1.0 - v } else { v });
            }
            y.push(class);
        }
    }
    LabeledDataset {
        name: "stripes-vs-checks-8x8".into(),
        x: Tensor::from_parts(2 * per_class, n * n, data),
        y,
        classes: 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 8,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

/// Mean SSIM over all `window × window` positions (uniform weights, population statistics).
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize, p: SsimParams) -> Result<f64> {
    if a.len() != b.len() || a.len() != height * width {
        return Err(DataError::Shape(format!(
            "images of {} and {} pixels for {height}x{width}",
            a.len(),
            b.len()
        )));
    }
    let win = p.window.min(height).min(width).max(1);
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=height - win {
        for c0 in 0..=width - win {
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r0 + win {
                for c in c0..c0 + win {
                    sa += a[r * width + c];
                    sb += b[r * width + c];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for r in r0..r0 + win {
                for c in c0..c0 + win {
                    let (da, db) = (a[r * width + c] - ma, b[r * width + c] - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Euclidean,
    Ssim { height: usize, width: usize },
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// For every sample row, the closest dataset row and its score
/// (distance for Euclidean, similarity for SSIM). Ties go to the lowest index.
pub fn nearest_neighbor(
    samples: &Tensor,
    dataset: &Tensor,
    metric: Metric,
) -> Result<Vec<(usize, f64)>> {
    if dataset.rows() == 0 {
        return Err(DataError::Empty);
    }
    if samples.rows() > 0 && samples.cols() != dataset.cols() {
        return Err(DataError::Shape(format!(
            "samples have dimension {}, dataset {}",
            samples.cols(),
            dataset.cols()
        )));
    }
    if let Metric::Ssim { height, width } = metric {
        if height * width != dataset.cols() {
            return Err(DataError::Shape(format!(
                "SSIM needs {height}x{width} images, data has dimension {}",
                dataset.cols()
            )));
        }
    }
    (0..samples.rows())
        .map(|i| {
            let s = samples.row_slice(i);
            let mut best = (0usize, f64::NAN);
            for j in 0..dataset.rows() {
                let d = dataset.row_slice(j);
                let (score, better) = match metric {
                    Metric::Euclidean => {
                        let v = euclidean(s, d);
                        (v, best.1.is_nan() || v < best.1)
                    }
                    Metric::Ssim { height, width } => {
                        let v = ssim(s, d, height, width, SsimParams::default())?;
                        (v, best.1.is_nan() || v > best.1)
                    }
                };
                if better {
                    best = (j, score);
                }
            }
            Ok(best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// Mean over generated samples of the distance to the nearest training point.
    pub mean_nn_distance: f64,
    /// For each training point, the distance to the nearest generated sample.
    pub train_min_distance: Vec<f64>,
    /// Fraction of generated samples whose argmax logit equals their label.
    pub label_fraction: f64,
}

pub fn coverage_report(
    generated: &Tensor,
    labels: &[usize],
    train: &LabeledDataset,
    spec: &MlpSpec,
    zeta: &ParameterVector,
) -> Result<CoverageReport> {
    if generated.rows() != labels.len() {
        return Err(DataError::Shape(format!(
            "{} samples, {} labels",
            generated.rows(),
            labels.len()
        )));
    }
    if generated.rows() > 0 && generated.cols() != train.dim() {
        return Err(DataError::Shape(
            "generated and training dimensions differ".into(),
        ));
    }
    let nn = nearest_neighbor(generated, &train.x, Metric::Euclidean)?;
    let mean_nn_distance = if nn.is_empty() {
        f64::NAN
    } else {
        nn.iter().map(|p| p.1).sum::<f64>() / nn.len() as f64
    };
    let train_min_distance = if generated.rows() == 0 {
        vec![f64::INFINITY; train.len()]
    } else {
        nearest_neighbor(&train.x, generated, Metric::Euclidean)?
            .into_iter()
            .map(|p| p.1)
            .collect()
    };
    let label_fraction = if generated.rows() == 0 {
        0.0
    } else {
        let logits = classifier_forward(spec, zeta, generated)?;
        let hits = (0..generated.rows())
            .filter(|&i| argmax(logits.row_slice(i)) == labels[i])
            .count();
        hits as f64 / generated.rows() as f64
    };
    Ok(CoverageReport {
        mean_nn_distance,
        train_min_distance,
        label_fraction,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `samples` within `radius` of some row of `reference`.
pub fn fraction_within(samples: &Tensor, reference: &Tensor, radius: f64) -> Result<f64> {
    if samples.rows() == 0 {
        return Ok(0.0);
    }
    let nn = nearest_neighbor(samples, reference, Metric::Euclidean)?;
    Ok(nn.iter().filter(|p| p.1 <= radius).count() as f64 / nn.len() as f64)
}

/// Fraction of rows strictly nearer to `a` than to `b`.
pub fn fraction_nearer(samples: &Tensor, a: &Tensor, b: &Tensor) -> Result<f64> {
    if samples.rows() == 0 {
        return Ok(0.0);
    }
    let na = nearest_neighbor(samples, a, Metric::Euclidean)?;
    let nb = nearest_neighbor(samples, b, Metric::Euclidean)?;
    let hits = na.iter().zip(&nb).filter(|(p, q)| p.1 < q.1).count();
    Ok(hits as f64 / samples.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_kaiming;

    #[test]
    fn circle_shape_and_geometry() {
        let d = circle_dataset();
        assert_eq!(d.len(), 18);
        assert_eq!(d.class_counts(), vec![6, 6, 6]);
        for i in 0..18 {
            let p = d.point(i);
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12);
            let q = d.point((i + 1) % 18);
            let cos = p[0] * q[0] + p[1] * q[1];
            assert!((cos.acos() - 20f64.to_radians()).abs() < 1e-12);
        }
        assert_eq!(circle_dataset(), d);
    }

    #[test]
    fn alternating_split_partitions_evenly() {
        let d = circle_dataset();
        let (a, b) = split_dataset(&d, SplitMode::Alternating).unwrap();
        assert_eq!((a.len(), b.len()), (9, 9));
        assert_eq!(a.class_counts(), vec![3, 3, 3]);
        assert_eq!(b.class_counts(), vec![3, 3, 3]);
        let mut all: Vec<Vec<u64>> = (0..9)
            .flat_map(|i| [a.point(i), b.point(i)])
            .map(|p| p.iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 18);
        assert_eq!(split_dataset(&d, SplitMode::Alternating).unwrap(), (a, b));
        let (arc_a, _) = split_dataset(&d, SplitMode::Arc).unwrap();
        assert_eq!(arc_a.class_counts(), vec![3, 3, 3]);
    }

    #[test]
    fn odd_class_cannot_split() {
        let d = LabeledDataset::new("odd", Tensor::zeros(3, 1), vec![0, 0, 0], 1).unwrap();
        assert_eq!(
            split_dataset(&d, SplitMode::Alternating),
            Err(DataError::OddClass { class: 0, count: 3 })
        );
    }

    #[test]
    fn label_partition_routes_and_reindexes() {
        let y = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let x = Tensor::matrix(8, 1, (0..8).map(f64::from).collect()).unwrap();
        let d = LabeledDataset::new("four", x, y.clone(), 4).unwrap();
        let p = label_partition(&d, &[0, 1], &[2, 3]).unwrap();
        assert_eq!((p.a.len(), p.b.len()), (4, 4));
        assert_eq!(p.b.y, vec![0, 1, 0, 1]);
        for (i, &l) in p.b.y.iter().enumerate() {
            let orig = p.b.point(i)[0] as usize;
            assert_eq!(p.to_old_b(l), y[orig]);
        }
        assert_eq!(
            label_partition(&d, &[0, 1, 2, 3], &[]),
            Err(DataError::EmptyLabelSet("B"))
        );
        assert_eq!(
            label_partition(&d, &[0, 1, 2], &[2, 3]),
            Err(DataError::Overlap(2))
        );
    }

    #[test]
    fn pattern_examples() {
        let d = pattern_dataset(PatternKind::StripesVsChecks8x8, 50, 0.02, 1);
        assert_eq!((d.len(), d.dim()), (100, 64));
        assert_eq!(
            d,
            pattern_dataset(PatternKind::StripesVsChecks8x8, 50, 0.02, 1)
        );
        let clean = pattern_dataset(PatternKind::StripesVsChecks8x8, 5, 0.0, 1);
        for i in 1..5 {
            assert_eq!(clean.point(i), clean.point(0));
        }
        assert_eq!(clean.point(0).iter().sum::<f64>() / 64.0, 0.5);
    }

    #[test]
    fn ssim_examples() {
        let p = SsimParams::default();
        let d = pattern_dataset(PatternKind::StripesVsChecks8x8, 2, 0.1, 3);
        let (a, b) = (d.point(0), d.point(3));
        assert!((ssim(a, a, 8, 8, p).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(a, b, 8, 8, p).unwrap(), ssim(b, a, 8, 8, p).unwrap());
        // μ=0 vs μ=1, σ=0: (C1·C2)/((1+C1)·C2)
        let c1 = 1e-4;
        let got = ssim(&[0.0; 64], &[1.0; 64], 8, 8, p).unwrap();
        assert!((got - c1 / (1.0 + c1)).abs() < 1e-15);
        assert!(ssim(&[0.0; 3], &[0.0; 4], 2, 2, p).is_err());
    }

    #[test]
    fn nearest_neighbor_examples() {
        let data = Tensor::matrix(3, 2, vec![0.0, 0.0, 2.0, 0.0, -2.0, 0.0]).unwrap();
        let q = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 5.0]).unwrap();
        let nn = nearest_neighbor(&q, &data, Metric::Euclidean).unwrap();
        assert_eq!(nn[0], (1, 0.0));
        let tie = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let d2 = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            nearest_neighbor(&tie, &d2, Metric::Euclidean).unwrap()[0].0,
            0
        );
        assert!(nearest_neighbor(
            &q,
            &data,
            Metric::Ssim {
                height: 8,
                width: 8
            }
        )
        .is_err());
    }

    #[test]
    fn nearest_neighbor_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let qs: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Tensor::matrix(50, 2, data).unwrap();
        let q = Tensor::matrix(20, 2, qs.clone()).unwrap();
        let nn = nearest_neighbor(&q, &data, Metric::Euclidean).unwrap();
        for i in 0..20 {
            let mut best = (0, f64::INFINITY);
            for j in 0..50 {
                let dx = qs[2 * i] - data.at(j, 0);
                let dy = qs[2 * i + 1] - data.at(j, 1);
                let dist = (dx * dx + dy * dy).sqrt();
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            assert_eq!(nn[i], best);
        }
        // reversing the query order permutes the answers
        let rev: Vec<f64> = (0..20)
            .rev()
            .flat_map(|i| [qs[2 * i], qs[2 * i + 1]])
            .collect();
        let nn_rev = nearest_neighbor(
            &Tensor::matrix(20, 2, rev).unwrap(),
            &data,
            Metric::Euclidean,
        )
        .unwrap();
        for i in 0..20 {
            assert_eq!(nn_rev[19 - i], nn[i]);
        }
    }

    #[test]
    fn coverage_examples() {
        let d = circle_dataset();
        let spec = MlpSpec::uniform(vec![2, 8, 3], false).unwrap();
        let z = init_kaiming(&spec, 0);
        let same = coverage_report(&d.x, &d.y, &d, &spec, &z).unwrap();
        assert_eq!(same.mean_nn_distance, 0.0);
        assert!(same.train_min_distance.iter().all(|&v| v == 0.0));
        assert!((0.0..=1.0).contains(&same.label_fraction));
        let shifted: Vec<f64> =
            d.x.data()
                .iter()
                .enumerate()
                .map(|(k, v)| if k % 2 == 0 { v + 10.0 } else { *v })
                .collect();
        let far = coverage_report(
            &Tensor::matrix(18, 2, shifted).unwrap(),
            &d.y,
            &d,
            &spec,
            &z,
        )
        .unwrap();
        assert!((far.mean_nn_distance - 10.0).abs() < 1.0);
    }
}
