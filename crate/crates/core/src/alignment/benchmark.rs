//! Benchmark evaluation: per-subject alignment + distance statistics, pooled
//! aggregates, and cumulative error curves.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, SimilarityTransform};

use super::icp::{icp_align, AlignmentReport, IcpOptions};
use super::solve::{kabsch_rigid, umeyama_similarity};
use super::{scan_to_mesh_distance_mm, AlignMode, ScanCloud};

/// Median / mean / std of a distance sample, in millimeters. Std is the
/// population standard deviation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DistanceStats {
    pub count: usize,
    pub median_mm: f64,
    pub mean_mm: f64,
    pub std_mm: f64,
}

/// Distances are sorted internally, so the result is independent of input
/// order (subjects may be evaluated concurrently).
pub fn distance_stats(distances_mm: &[f64]) -> Result<DistanceStats> {
    if distances_mm.is_empty() {
        return Err(Error::invalid("cannot compute statistics of an empty distance set"));
    }
    if distances_mm.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }
    let mut sorted = distances_mm.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let var = sorted.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    Ok(DistanceStats {
        count: n,
        median_mm: median,
        mean_mm: mean,
        std_mm: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold_mm: f64,
    pub fraction: f64,
}

/// Cumulative error curve: for each threshold `k·bin_width` up to `max`,
/// the fraction of distances ≤ threshold.
pub fn cumulative_error_curve(
    distances_mm: &[f64],
    bin_width_mm: f64,
    max_mm: f64,
) -> Result<Vec<CurvePoint>> {
    if distances_mm.is_empty() {
        return Err(Error::invalid("cannot build a cumulative curve from no distances"));
    }
    if !(bin_width_mm > 0.0) || !(max_mm >= bin_width_mm) {
        return Err(Error::invalid(format!(
            "bad curve binning: bin {bin_width_mm} mm, max {max_mm} mm"
        )));
    }
    if distances_mm.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }
    let mut sorted = distances_mm.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let bins = (max_mm / bin_width_mm).round() as usize;
    let mut curve = Vec::with_capacity(bins);
    for k in 1..=bins {
        let threshold = k as f64 * bin_width_mm;
        let below = sorted.partition_point(|&d| d <= threshold);
        curve.push(CurvePoint {
            threshold_mm: threshold,
            fraction: below as f64 / n,
        });
    }
    Ok(curve)
}

/// How to initialize the per-subject alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Landmark correspondences only — zero ICP iterations. This is the
    /// sparse protocol: fast but sensitive to landmark placement.
    Landmarks,
    /// Landmark alignment followed by dense ICP refinement.
    DenseIcp,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub alignment: AlignMode,
    pub init: InitMode,
    pub icp: IcpOptions,
    pub curve_bin_mm: f64,
    pub curve_max_mm: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            alignment: AlignMode::Rigid,
            init: InitMode::DenseIcp,
            icp: IcpOptions::default(),
            curve_bin_mm: 0.1,
            curve_max_mm: 10.0,
        }
    }
}

/// One evaluation unit: a predicted mesh, the reference scan, and resolved
/// landmark correspondences (point on prediction, point on scan).
#[derive(Debug, Clone)]
pub struct SubjectPair {
    pub id: String,
    pub prediction: Mesh,
    pub scan: ScanCloud,
    pub correspondences: Vec<(Vector3<f64>, Vector3<f64>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectReport {
    pub id: String,
    pub report: AlignmentReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub protocol: Protocol,
    pub per_subject: Vec<SubjectReport>,
    /// Subjects that could not be evaluated; excluded from the aggregate but
    /// never silently dropped.
    pub failures: Vec<SubjectFailure>,
    /// Stats over all pooled per-point distances of successful subjects.
    pub aggregate: DistanceStats,
    pub curve: Vec<CurvePoint>,
}

fn evaluate_subject(pair: &SubjectPair, protocol: &Protocol) -> Result<AlignmentReport> {
    if pair.correspondences.len() < 4 {
        return Err(Error::Degenerate(format!(
            "subject needs ≥4 landmark correspondences, got {}",
            pair.correspondences.len()
        )));
    }
    let src: Vec<Vector3<f64>> = pair.correspondences.iter().map(|c| c.0).collect();
    let dst: Vec<Vector3<f64>> = pair.correspondences.iter().map(|c| c.1).collect();
    let init: SimilarityTransform = match protocol.alignment {
        AlignMode::Rigid => kabsch_rigid(&src, &dst, None)?.into(),
        AlignMode::Similarity => umeyama_similarity(&src, &dst, None)?,
    };
    match protocol.init {
        InitMode::DenseIcp => icp_align(
            &pair.prediction,
            &pair.scan,
            protocol.alignment,
            &init,
            &protocol.icp,
        ),
        InitMode::Landmarks => {
            use crate::geometry::PointTransform;
            let moved = Mesh {
                vertices: init.apply_points(&pair.prediction.vertices),
                faces: pair.prediction.faces.clone(),
                albedo: None,
            };
            let distances_mm = scan_to_mesh_distance_mm(&pair.scan, &moved)?;
            let stats = distance_stats(&distances_mm)?;
            let lmk_residual_mm = src
                .iter()
                .zip(&dst)
                .map(|(s, d)| (init.apply(s) - d).norm())
                .sum::<f64>()
                / src.len() as f64
                * 1000.0;
            Ok(AlignmentReport {
                mode: protocol.alignment,
                transform: init,
                distances_mm,
                stats,
                history_mm: vec![lmk_residual_mm],
            })
        }
    }
}

/// Evaluates every pair under the protocol. Subjects run in parallel; the
/// pooled distances are sorted before aggregation so the result does not
/// depend on evaluation order.
pub fn benchmark_evaluate(pairs: &[SubjectPair], protocol: &Protocol) -> Result<BenchmarkResult> {
    let outcomes: Vec<(String, Result<AlignmentReport>)> = pairs
        .par_iter()
        .map(|pair| (pair.id.clone(), evaluate_subject(pair, protocol)))
        .collect();
    let mut per_subject = Vec::new();
    let mut failures = Vec::new();
    let mut pooled: Vec<f64> = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(report) => {
                pooled.extend_from_slice(&report.distances_mm);
                per_subject.push(SubjectReport { id, report });
            }
            Err(e) => failures.push(SubjectFailure {
                id,
                error: e.to_string(),
            }),
        }
    }
    if per_subject.is_empty() {
        return Err(Error::OptimizationFailed(format!(
            "all {} subjects failed evaluation",
            pairs.len()
        )));
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let aggregate = distance_stats(&pooled)?;
    let curve = cumulative_error_curve(&pooled, protocol.curve_bin_mm, protocol.curve_max_mm)?;
    Ok(BenchmarkResult {
        protocol: *protocol,
        per_subject,
        failures,
        aggregate,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn stats_on_known_sample() {
        let s = distance_stats(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.median_mm, 2.0);
        assert!((s.mean_mm - 2.0).abs() < 1e-12);
        assert!((s.std_mm - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let even = distance_stats(&[1.0, 2.0, 3.0, 10.0]).unwrap();
        assert_eq!(even.median_mm, 2.5);
    }

    #[test]
    fn median_bounded_by_mean_plus_std() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..50 {
            let data: Vec<f64> = (0..200).map(|_| rng.random::<f64>().powi(3) * 10.0).collect();
            let s = distance_stats(&data).unwrap();
            assert!(s.median_mm <= s.mean_mm + s.std_mm + 1e-12);
        }
    }

    #[test]
    fn curve_counts_directly() {
        let curve = cumulative_error_curve(&[1.0, 2.0, 3.0], 1.0, 3.0).unwrap();
        assert_eq!(curve.len(), 3);
        assert!((curve[0].fraction - 1.0 / 3.0).abs() < 1e-15);
        assert!((curve[1].fraction - 2.0 / 3.0).abs() < 1e-15);
        assert!((curve[2].fraction - 1.0).abs() < 1e-15);
    }

    #[test]
    fn curve_of_zero_distances_is_flat_one() {
        let curve = cumulative_error_curve(&[0.0; 10], 0.5, 5.0).unwrap();
        for p in curve {
            assert_eq!(p.fraction, 1.0);
        }
    }

    #[test]
    fn curve_matches_brute_force_counting() {
        let mut rng = StdRng::seed_from_u64(32);
        let data: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 8.0).collect();
        let curve = cumulative_error_curve(&data, 0.25, 8.0).unwrap();
        for p in &curve {
            let count = data.iter().filter(|&&d| d <= p.threshold_mm).count();
            assert_eq!(p.fraction, count as f64 / data.len() as f64);
        }
        // Monotone, ends ≤ 1.
        for w in curve.windows(2) {
            assert!(w[1].fraction >= w[0].fraction);
        }
        assert!(curve.last().unwrap().fraction <= 1.0);
    }

    #[test]
    fn empty_curve_input_is_an_error() {
        assert!(cumulative_error_curve(&[], 1.0, 5.0).is_err());
        assert!(distance_stats(&[]).is_err());
    }
}
