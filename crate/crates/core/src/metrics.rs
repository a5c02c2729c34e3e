//! Pixel errors, slot-set distances, and ranking metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wm_numeric::{solve_assignment, Array};

use crate::error::{Error, Result};

pub fn pixel_mse(pred: &Array, target: &Array) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Model(format!(
            "image shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

fn check_pair(pred: &Array, target: &Array) -> Result<()> {
    if pred.dims2() != target.dims2() {
        return Err(Error::Model(format!(
            "slot sets differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// `k × k` matrix of squared distances between rows.
pub fn squared_distances(pred: &Array, target: &Array) -> Array {
    let k = pred.rows();
    let mut c = Array::zeros(&[k, k]);
    for i in 0..k {
        for j in 0..k {
            let d: f64 = pred
                .row_slice(i)
                .iter()
                .zip(target.row_slice(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            c.set(i, j, d);
        }
    }
    c
}

/// L2 distance between the concatenated slot vectors.
pub fn fixed_order_distance(pred: &Array, target: &Array) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Minimum over slot permutations of the L2 distance, solved exactly as a
/// linear assignment on squared row distances.
pub fn eq_distance(pred: &Array, target: &Array) -> Result<f64> {
    check_pair(pred, target)?;
    let sol = solve_assignment(&squared_distances(pred, target))?;
    Ok(sol.total_cost.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    FixedOrder,
    Equivariant,
}

impl Distance {
    pub fn eval(self, pred: &Array, target: &Array) -> Result<f64> {
        match self {
            Self::FixedOrder => fixed_order_distance(pred, target),
            Self::Equivariant => eq_distance(pred, target),
        }
    }
}

/// Mean reciprocal rank of each true target among all targets, ranked by
/// distance to the prediction. Ties go to the lower candidate index.
pub fn ranking_mrr(preds: &[Array], targets: &[Array], distance: Distance) -> Result<f64> {
    if preds.len() != targets.len() || preds.len() < 2 {
        return Err(Error::Model(format!(
            "ranking needs at least two aligned pairs, got {} / {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (i, p) in preds.iter().enumerate() {
        let d: Vec<f64> = targets.iter().map(|t| distance.eval(p, t)).collect::<Result<_>>()?;
        total += 1.0 / rank_of(&d, i) as f64;
    }
    Ok(total / preds.len() as f64)
}

/// 1-based rank of candidate `i` under ascending distance, ties by index.
pub fn rank_of(distances: &[f64], i: usize) -> usize {
    let di = distances[i];
    1 + distances
        .iter()
        .enumerate()
        .filter(|&(j, &d)| d < di || (d == di && j < i))
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub variant: String,
    pub seed: u64,
    pub dataset_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, value: f64, variant: &str, seed: u64, dataset_hash: &str) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Model(format!("metric {metric} is not finite")));
        }
        self.rows.push(MetricRow {
            metric: metric.into(),
            value,
            variant: variant.into(),
            seed,
            dataset_hash: dataset_hash.into(),
        });
        Ok(())
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.value)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// `depth,mean_l1,variant,seed` rows.
pub fn write_depth_curve(path: &Path, curve: &[f64], variant: &str, seed: u64) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "depth,mean_l1,variant,seed")?;
    for (d, v) in curve.iter().enumerate() {
        writeln!(f, "{d},{v},{variant},{seed}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f64]]) -> Array {
        Array::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn swapped_sets_have_zero_distance() {
        let a = set(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let b = set(&[&[0.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(eq_distance(&a, &b).unwrap(), 0.0);
        assert_eq!(fixed_order_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn one_dimensional_example() {
        let z = set(&[&[0.0], &[1.0]]);
        let zh = set(&[&[1.05], &[0.0]]);
        assert!((fixed_order_distance(&zh, &z).unwrap() - 2.1025f64.sqrt()).abs() < 1e-12);
        assert!((eq_distance(&zh, &z).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ranks_and_mrr() {
        assert_eq!(rank_of(&[0.5, 0.1, 0.9], 0), 2);
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 1), 2);
        let zs = vec![set(&[&[0.0]]), set(&[&[1.0]]), set(&[&[2.0]])];
        assert_eq!(ranking_mrr(&zs, &zs, Distance::Equivariant).unwrap(), 1.0);
        assert!(ranking_mrr(&zs[..1], &zs[..1], Distance::FixedOrder).is_err());
    }

    #[test]
    fn pixel_mse_examples() {
        let a = Array::filled(&[4, 3], 1.0);
        let b = Array::zeros(&[4, 3]);
        assert_eq!(pixel_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(pixel_mse(&a, &b).unwrap(), 1.0);
        assert!(pixel_mse(&a, &Array::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn report_round_trip() {
        let mut r = MetricReport::default();
        r.push("mse", 0.25, "cosmos", 1, "abc").unwrap();
        assert!(r.push("mse", f64::NAN, "cosmos", 1, "abc").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        r.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("metric,value,variant,seed,dataset_hash"));
        assert_eq!(MetricReport::read_csv(&p).unwrap(), r);
    }
}
