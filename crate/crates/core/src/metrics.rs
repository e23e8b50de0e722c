//! Displacement-error metrics: ADE (average), MDE (worst step), FDE (final
//! step), each averaged over instances, plus the per-class report emitted
//! after evaluation.
//!
//! All three accumulate in f64 regardless of the model's scalar type, so a
//! report never depends on summation order quirks of reduced precision.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::{to_f64, Scalar};
use crate::scene::AgentClass;

/// Per-step Euclidean distances between one predicted and one true
/// trajectory.
pub fn displacement_series<S: Scalar>(pred: &[[S; 3]], gt: &[[S; 3]]) -> Result<Vec<f64>> {
    if pred.is_empty() {
        return Err(CoreError::Invalid(
            "displacement of an empty trajectory".to_string(),
        ));
    }
    if pred.len() != gt.len() {
        return Err(CoreError::Shape {
            op: "displacement_series",
            detail: format!("{} predicted steps vs {} true steps", pred.len(), gt.len()),
        });
    }
    Ok(pred
        .iter()
        .zip(gt.iter())
        .map(|(p, g)| {
            let dx = to_f64(p[0]) - to_f64(g[0]);
            let dy = to_f64(p[1]) - to_f64(g[1]);
            let dz = to_f64(p[2]) - to_f64(g[2]);
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .collect())
}

fn check_instances<T, U>(preds: &[T], gts: &[U], op: &'static str) -> Result<()> {
    if preds.is_empty() {
        return Err(CoreError::Invalid(format!("{op} requires at least one instance")));
    }
    if preds.len() != gts.len() {
        return Err(CoreError::Shape {
            op,
            detail: format!("{} predictions vs {} ground truths", preds.len(), gts.len()),
        });
    }
    Ok(())
}

fn mean_over_instances<S: Scalar>(
    preds: &[Vec<[S; 3]>],
    gts: &[Vec<[S; 3]>],
    op: &'static str,
    reduce: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    check_instances(preds, gts, op)?;
    let mut total = 0.0;
    for (pred, gt) in preds.iter().zip(gts.iter()) {
        total += reduce(&displacement_series(pred, gt)?);
    }
    Ok(total / preds.len() as f64)
}

/// Mean over instances of the mean-over-steps displacement.
pub fn ade<S: Scalar>(preds: &[Vec<[S; 3]>], gts: &[Vec<[S; 3]>]) -> Result<f64> {
    mean_over_instances(preds, gts, "ade", |d| {
        d.iter().sum::<f64>() / d.len() as f64
    })
}

/// Mean over instances of the worst per-step displacement.
pub fn mde<S: Scalar>(preds: &[Vec<[S; 3]>], gts: &[Vec<[S; 3]>]) -> Result<f64> {
    mean_over_instances(preds, gts, "mde", |d| d.iter().copied().fold(0.0, f64::max))
}

/// Mean over instances of the final-step displacement.
pub fn fde<S: Scalar>(preds: &[Vec<[S; 3]>], gts: &[Vec<[S; 3]>]) -> Result<f64> {
    mean_over_instances(preds, gts, "fde", |d| *d.last().expect("non-empty series"))
}

/// One table cell group: the three displacement errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(rename = "ADE")]
    pub ade: f64,
    #[serde(rename = "MDE")]
    pub mde: f64,
    #[serde(rename = "FDE")]
    pub fde: f64,
}

impl MetricRow {
    pub fn compute<S: Scalar>(preds: &[Vec<[S; 3]>], gts: &[Vec<[S; 3]>]) -> Result<MetricRow> {
        Ok(MetricRow {
            ade: ade(preds, gts)?,
            mde: mde(preds, gts)?,
            fde: fde(preds, gts)?,
        })
    }
}

/// Evaluation summary: overall and per-class displacement errors. A class
/// with no instances in the data reports as absent (`null` in JSON), never
/// as zero error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub all: MetricRow,
    pub pedestrian: Option<MetricRow>,
    pub vehicle: Option<MetricRow>,
    pub rider: Option<MetricRow>,
    pub instances: usize,
    /// Single-stream prediction calls per second, grid construction
    /// included. Absent when the report was built without timing.
    pub throughput: Option<f64>,
}

impl MetricsReport {
    pub fn compute<S: Scalar>(
        preds: &[Vec<[S; 3]>],
        gts: &[Vec<[S; 3]>],
        classes: &[AgentClass],
        throughput: Option<f64>,
    ) -> Result<MetricsReport> {
        check_instances(preds, gts, "metrics_report")?;
        if classes.len() != preds.len() {
            return Err(CoreError::Shape {
                op: "metrics_report",
                detail: format!("{} classes vs {} instances", classes.len(), preds.len()),
            });
        }
        let by_class = |class: AgentClass| -> Result<Option<MetricRow>> {
            let mut p = Vec::new();
            let mut g = Vec::new();
            for i in 0..preds.len() {
                if classes[i] == class {
                    p.push(preds[i].clone());
                    g.push(gts[i].clone());
                }
            }
            if p.is_empty() {
                return Ok(None);
            }
            Ok(Some(MetricRow::compute(&p, &g)?))
        };
        Ok(MetricsReport {
            all: MetricRow::compute(preds, gts)?,
            pedestrian: by_class(AgentClass::Pedestrian)?,
            vehicle: by_class(AgentClass::Vehicle)?,
            rider: by_class(AgentClass::Rider)?,
            instances: preds.len(),
            throughput,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn one(points: &[[f64; 3]]) -> Vec<Vec<[f64; 3]>> {
        vec![points.to_vec()]
    }

    #[test]
    fn single_instance_with_step_errors_three_and_four() {
        let pred = one(&[[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]]);
        let gt = one(&[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(ade(&pred, &gt).unwrap(), 3.5);
        assert_eq!(mde(&pred, &gt).unwrap(), 4.0);
        assert_eq!(fde(&pred, &gt).unwrap(), 4.0);
    }

    #[test]
    fn instance_means_average_across_instances() {
        // Instance ADEs 1 and 3 → 2.
        let preds = vec![
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0.0, 0.0, 3.0], [3.0, 0.0, 0.0]],
        ];
        let gts = vec![vec![[0.0; 3]; 2], vec![[0.0; 3]; 2]];
        assert_eq!(ade(&preds, &gts).unwrap(), 2.0);
    }

    #[test]
    fn perfect_prediction_scores_zero_everywhere() {
        let gt = vec![vec![[1.5, -2.0, 0.25], [3.0, 1.0, -0.5], [0.0, 0.0, 9.0]]];
        let row = MetricRow::compute(&gt, &gt).unwrap();
        assert_eq!((row.ade, row.mde, row.fde), (0.0, 0.0, 0.0));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let good = vec![vec![[0.0; 3]]];
        let empty: Vec<Vec<[f64; 3]>> = vec![];
        assert!(ade(&empty, &empty).is_err());
        assert!(ade(&good, &vec![vec![[0.0; 3]], vec![[0.0; 3]]]).is_err());
        // Instance with zero steps.
        let hollow: Vec<Vec<[f64; 3]>> = vec![vec![]];
        assert!(ade(&hollow, &hollow).is_err());
        // Step-count mismatch inside an instance.
        assert!(ade(&good, &vec![vec![[0.0; 3]; 2]]).is_err());
    }

    fn random_instances(
        seed: u64,
        n: usize,
        t_f: usize,
    ) -> (Vec<Vec<[f64; 3]>>, Vec<Vec<[f64; 3]>>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rand_traj = |t: usize| -> Vec<[f64; 3]> {
            (0..t)
                .map(|_| {
                    [
                        rng.gen_range(-10.0..10.0),
                        rng.gen_range(-10.0..10.0),
                        rng.gen_range(-2.0..2.0),
                    ]
                })
                .collect()
        };
        let preds: Vec<_> = (0..n).map(|_| rand_traj(t_f)).collect();
        let gts: Vec<_> = (0..n).map(|_| rand_traj(t_f)).collect();
        (preds, gts)
    }

    #[test]
    fn average_error_never_exceeds_worst_step_error() {
        let (preds, gts) = random_instances(5, 1000, 4);
        assert!(ade(&preds, &gts).unwrap() <= mde(&preds, &gts).unwrap());
    }

    #[test]
    fn final_error_equals_average_error_for_single_step_futures() {
        let (preds, gts) = random_instances(6, 1000, 1);
        // Identical arithmetic, so exact equality is required.
        assert_eq!(ade(&preds, &gts).unwrap(), fde(&preds, &gts).unwrap());
    }

    #[test]
    fn metrics_are_translation_invariant() {
        let (preds, gts) = random_instances(7, 50, 5);
        let shift = |trajs: &[Vec<[f64; 3]>]| -> Vec<Vec<[f64; 3]>> {
            trajs
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|p| [p[0] + 128.0, p[1] - 64.0, p[2] + 32.0])
                        .collect()
                })
                .collect()
        };
        let a = MetricRow::compute(&preds, &gts).unwrap();
        let b = MetricRow::compute(&shift(&preds), &shift(&gts)).unwrap();
        assert!((a.ade - b.ade).abs() < 1e-9);
        assert!((a.mde - b.mde).abs() < 1e-9);
        assert!((a.fde - b.fde).abs() < 1e-9);
    }

    #[test]
    fn permuting_instances_leaves_metrics_unchanged() {
        let (mut preds, mut gts) = random_instances(8, 64, 3);
        let a = MetricRow::compute(&preds, &gts).unwrap();
        preds.reverse();
        gts.reverse();
        let b = MetricRow::compute(&preds, &gts).unwrap();
        assert!((a.ade - b.ade).abs() < 1e-12);
        assert!((a.mde - b.mde).abs() < 1e-12);
        assert!((a.fde - b.fde).abs() < 1e-12);
    }

    #[test]
    fn report_groups_by_class_and_leaves_missing_classes_absent() {
        let preds = vec![
            vec![[1.0, 0.0, 0.0]],
            vec![[2.0, 0.0, 0.0]],
            vec![[4.0, 0.0, 0.0]],
        ];
        let gts = vec![vec![[0.0; 3]]; 3];
        let classes = vec![
            AgentClass::Pedestrian,
            AgentClass::Pedestrian,
            AgentClass::Vehicle,
        ];
        let report = MetricsReport::compute(&preds, &gts, &classes, Some(123.0)).unwrap();
        assert_eq!(report.instances, 3);
        assert_eq!(report.all.ade, 7.0 / 3.0);
        assert_eq!(report.pedestrian.unwrap().ade, 1.5);
        assert_eq!(report.vehicle.unwrap().ade, 4.0);
        assert!(report.rider.is_none());
        assert_eq!(report.throughput, Some(123.0));
    }

    #[test]
    fn report_serializes_with_the_expected_keys() {
        let preds = vec![vec![[3.0, 0.0, 0.0]]];
        let gts = vec![vec![[0.0; 3]]];
        let report =
            MetricsReport::compute(&preds, &gts, &[AgentClass::Rider], None).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec!["all", "instances", "pedestrian", "rider", "throughput", "vehicle"]
        );
        assert!(obj["pedestrian"].is_null());
        let rider = obj["rider"].as_object().unwrap();
        let mut rider_keys: Vec<&str> = rider.keys().map(String::as_str).collect();
        rider_keys.sort_unstable();
        assert_eq!(rider_keys, vec!["ADE", "FDE", "MDE"]);
        assert_eq!(rider["ADE"], 3.0);
        let back: MetricsReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }
}
