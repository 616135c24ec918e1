//! Binarization and intersection-over-union scoring of predicted masks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskgen::BinaryMask;
use crate::nixnet::ProbabilityMap;

pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Pixel is inpainted iff `p >= threshold`; ties go to the positive class.
pub fn binarize(p: &ProbabilityMap, threshold: f32) -> BinaryMask {
    let data = p.data().iter().map(|&v| (v >= threshold) as u8).collect();
    BinaryMask::new(p.height(), p.width(), data).expect("probability map dimensions are consistent")
}

/// Intersection and union sizes of the positive class.
pub fn iou_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize)> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    Ok((inter, union))
}

/// `|pred ∧ gt| / |pred ∨ gt|` over inpainted pixels. Two empty masks agree
/// vacuously and score `1.0`.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, union) = iou_counts(pred, gt)?;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Per-image IoUs and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_image_iou: Vec<f64>,
    pub miou: f64,
    pub count: usize,
}

impl EvalResult {
    pub fn from_ious(per_image_iou: Vec<f64>) -> Result<Self> {
        if per_image_iou.is_empty() {
            return Err(Error::EmptyInput);
        }
        let count = per_image_iou.len();
        let miou = per_image_iou.iter().sum::<f64>() / count as f64;
        Ok(Self {
            per_image_iou,
            miou,
            count,
        })
    }
}

/// Binarize each map at 0.5 and average the per-image IoUs.
pub fn miou(pairs: &[(ProbabilityMap, BinaryMask)]) -> Result<EvalResult> {
    let ious = pairs
        .iter()
        .map(|(p, gt)| iou(&binarize(p, DEFAULT_THRESHOLD), gt))
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_ious(ious)
}

/// Mean IoU of already-binary predictions.
pub fn miou_masks(pairs: &[(BinaryMask, BinaryMask)]) -> Result<EvalResult> {
    let ious = pairs
        .iter()
        .map(|(p, gt)| iou(p, gt))
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_ious(ious)
}

/// mIoU table with models or variants as rows and test sets as columns.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    /// mIoU per column, `None` where not evaluated.
    pub values: Vec<Option<f64>>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) {
        self.rows.push(TableRow {
            name: name.into(),
            values,
        });
    }
}

impl fmt::Display for ResultTable {
    /// Percent mIoU with two decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        let col_w: Vec<usize> = self.columns.iter().map(|c| c.len().max(6)).collect();
        write!(f, "{:<name_w$}", "Model")?;
        for (c, w) in self.columns.iter().zip(&col_w) {
            write!(f, " | {c:>w$}")?;
        }
        writeln!(f)?;
        write!(f, "{}", "-".repeat(name_w))?;
        for w in &col_w {
            write!(f, "-+-{}", "-".repeat(*w))?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<name_w$}", row.name)?;
            for (i, w) in col_w.iter().enumerate() {
                match row.values.get(i).copied().flatten() {
                    Some(v) => write!(f, " | {:>w$.2}", v * 100.0)?,
                    None => write!(f, " | {:>w$}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pmap(h: usize, w: usize, v: f32) -> ProbabilityMap {
        ProbabilityMap::new(h, w, vec![v; h * w]).unwrap()
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&pmap(4, 4, 0.7), 0.5), BinaryMask::ones(4, 4));
        assert_eq!(binarize(&pmap(4, 4, 0.3), 0.5), BinaryMask::zeros(4, 4));
        assert_eq!(binarize(&pmap(1, 1, 0.5), 0.5), BinaryMask::ones(1, 1));
    }

    #[test]
    fn iou_examples() {
        let a = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = BinaryMask::from_fn(4, 4, |r, _| r >= 2);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        // |pred| = 6, |gt| = 4, overlap 3.
        let pred = BinaryMask::from_fn(4, 4, |r, c| r * 4 + c < 6);
        let gt = BinaryMask::from_fn(4, 4, |r, c| (3..7).contains(&(r * 4 + c)));
        assert_eq!(iou_counts(&pred, &gt).unwrap(), (3, 7));
        assert!((iou(&pred, &gt).unwrap() - 0.428571).abs() < 1e-6);
        let z = BinaryMask::zeros(3, 3);
        assert_eq!(iou(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn iou_shape_mismatch() {
        let err = iou(&BinaryMask::zeros(3, 3), &BinaryMask::zeros(3, 4)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn miou_examples() {
        let gt = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        let perfect =
            ProbabilityMap::new(4, 4, gt.data().iter().map(|&v| v as f32).collect()).unwrap();
        let wrong =
            ProbabilityMap::new(4, 4, gt.data().iter().map(|&v| 1.0 - v as f32).collect()).unwrap();
        let r = miou(&[(perfect.clone(), gt.clone()), (wrong, gt.clone())]).unwrap();
        assert_eq!(r.per_image_iou, vec![1.0, 0.0]);
        assert_eq!(r.miou, 0.5);
        assert_eq!(r.count, 2);
        assert_eq!(miou(&[(perfect, gt)]).unwrap().miou, 1.0);
        assert!(matches!(miou(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn table_layout() {
        let mut t = ResultTable::new(vec!["GL".into(), "CA".into()]);
        t.push("Full", vec![Some(0.9133), None]);
        let s = t.to_string();
        assert!(s.contains("91.33"));
        assert!(s.lines().count() == 3);
    }
}
