//! Confusion-matrix based segmentation metrics.
//!
//! Every metric here is a pure function of a [`ConfusionMatrix`]. A class
//! whose IoU has an empty union (absent from both ground truth and
//! prediction) is *undefined* and excluded from every average. The Missing
//! Class IoU additionally drops classes absent from the ground truth; their
//! false positives still count against the classes they overwrote, through
//! those classes' false negatives.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataprep::ClassMask;
use crate::error::{Error, Result};

/// Rendering of an undefined per-class value in CSV output.
pub const UNDEFINED: &str = "Nan";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// Row-major: `counts[g * C + p]` pixels of ground truth `g` predicted as `p`.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if c == 0 {
            return Err(Error::invalid("confusion matrix needs at least one class"));
        }
        let mut counts = Vec::with_capacity(c * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("confusion row length", c, row.len()));
            }
            counts.extend_from_slice(row);
        }
        Ok(ConfusionMatrix {
            num_classes: c,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn add_pixel(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.num_classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.counts[gt * self.num_classes..(gt + 1) * self.num_classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, pred)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("classes", self.num_classes, other.num_classes));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes).map(<[u64]>::to_vec).collect()
    }
}

/// Per-pixel tally of `gt` against `pred`.
pub fn confusion(gt: &ClassMask, pred: &ClassMask, num_classes: usize) -> Result<ConfusionMatrix> {
    if gt.width() != pred.width() {
        return Err(Error::shape("prediction width", gt.width(), pred.width()));
    }
    if gt.height() != pred.height() {
        return Err(Error::shape("prediction height", gt.height(), pred.height()));
    }
    for (name, mask) in [("ground truth", gt), ("prediction", pred)] {
        if mask.num_classes() > num_classes {
            return Err(Error::invalid(format!(
                "{name} mask declares {} classes but evaluation uses {num_classes}",
                mask.num_classes()
            )));
        }
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&g, &p) in gt.classes().iter().zip(pred.classes()) {
        cm.add_pixel(g as usize, p as usize);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassIoU {
    pub class: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// `None` when the union is empty.
    pub value: Option<f64>,
    pub gt_present: bool,
}

pub fn class_iou(cm: &ConfusionMatrix, class: usize) -> Result<ClassIoU> {
    if class >= cm.num_classes() {
        return Err(Error::invalid(format!(
            "class {class} outside [0, {})",
            cm.num_classes()
        )));
    }
    let tp = cm.get(class, class);
    let fp = cm.col_sum(class) - tp;
    let fn_ = cm.row_sum(class) - tp;
    let union = tp + fp + fn_;
    Ok(ClassIoU {
        class,
        tp,
        fp,
        fn_,
        value: (union > 0).then(|| tp as f64 / union as f64),
        gt_present: tp + fn_ > 0,
    })
}

pub fn per_class_iou(cm: &ConfusionMatrix) -> Vec<ClassIoU> {
    (0..cm.num_classes())
        .map(|c| class_iou(cm, c).expect("class index is in range"))
        .collect()
}

pub fn pixel_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("accuracy of an empty confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Mean IoU over the classes with a defined value.
pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    mean_of(per_class_iou(cm).iter().filter_map(|c| c.value))
        .ok_or_else(|| Error::invalid("mean IoU undefined: no class has a non-empty union"))
}

/// Mean IoU over exactly the classes present in the ground truth.
pub fn missing_class_iou(cm: &ConfusionMatrix) -> Result<f64> {
    mean_of(
        per_class_iou(cm)
            .iter()
            .filter(|c| c.gt_present)
            .filter_map(|c| c.value),
    )
    .ok_or_else(|| Error::invalid("Missing Class IoU undefined: ground truth is empty"))
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Metrics of one evaluated image, together with the matrix they derive from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image: String,
    pub dataset: String,
    pub percent: u32,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassIoU>,
    pub accuracy: f64,
    pub miou: f64,
    pub missing_class_iou: f64,
}

impl EvalRecord {
    pub fn from_confusion(
        image: impl Into<String>,
        dataset: impl Into<String>,
        percent: u32,
        confusion: ConfusionMatrix,
    ) -> Result<Self> {
        Ok(EvalRecord {
            image: image.into(),
            dataset: dataset.into(),
            percent,
            per_class: per_class_iou(&confusion),
            accuracy: pixel_accuracy(&confusion)?,
            miou: mean_iou(&confusion)?,
            missing_class_iou: missing_class_iou(&confusion)?,
            confusion,
        })
    }

    /// True when every stored metric equals its recomputation from the matrix.
    pub fn is_consistent(&self) -> bool {
        EvalRecord::from_confusion(
            self.image.clone(),
            self.dataset.clone(),
            self.percent,
            self.confusion.clone(),
        )
        .map(|r| &r == self)
        .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Metrics per image, then averaged over the images where defined.
    PerImageMean,
    /// One confusion matrix summed over all images.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: EvalMode,
    pub accuracy: f64,
    pub miou: f64,
    pub missing_class_iou: f64,
    pub per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEvaluation {
    pub dataset: String,
    pub percent: u32,
    pub records: Vec<EvalRecord>,
    pub per_image_mean: Aggregate,
    pub pooled: Aggregate,
}

impl DatasetEvaluation {
    pub fn aggregate(&self, mode: EvalMode) -> &Aggregate {
        match mode {
            EvalMode::PerImageMean => &self.per_image_mean,
            EvalMode::Pooled => &self.pooled,
        }
    }
}

/// A ground-truth/prediction pair under an image identifier.
pub struct EvalPair<'a> {
    pub image: String,
    pub gt: &'a ClassMask,
    pub pred: &'a ClassMask,
}

pub fn evaluate_dataset(
    pairs: &[EvalPair<'_>],
    num_classes: usize,
    dataset: &str,
    percent: u32,
) -> Result<DatasetEvaluation> {
    if pairs.is_empty() {
        return Err(Error::invalid("no image pairs to evaluate"));
    }
    let records = pairs
        .par_iter()
        .map(|pair| {
            confusion(pair.gt, pair.pred, num_classes)
                .and_then(|cm| EvalRecord::from_confusion(&pair.image, dataset, percent, cm))
                .map_err(|e| Error::invalid(format!("image {}: {e}", pair.image)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pooled_cm = ConfusionMatrix::new(num_classes);
    for r in &records {
        pooled_cm.merge(&r.confusion)?;
    }
    let pooled = Aggregate {
        mode: EvalMode::Pooled,
        accuracy: pixel_accuracy(&pooled_cm)?,
        miou: mean_iou(&pooled_cm)?,
        missing_class_iou: missing_class_iou(&pooled_cm)?,
        per_class: per_class_iou(&pooled_cm).iter().map(|c| c.value).collect(),
    };
    let n = records.len() as f64;
    let per_image_mean = Aggregate {
        mode: EvalMode::PerImageMean,
        accuracy: records.iter().map(|r| r.accuracy).sum::<f64>() / n,
        miou: records.iter().map(|r| r.miou).sum::<f64>() / n,
        missing_class_iou: records.iter().map(|r| r.missing_class_iou).sum::<f64>() / n,
        per_class: (0..num_classes)
            .map(|c| mean_of(records.iter().filter_map(|r| r.per_class[c].value)))
            .collect(),
    };
    Ok(DatasetEvaluation {
        dataset: dataset.to_string(),
        percent,
        records,
        per_image_mean,
        pooled,
    })
}

fn fmt_optional(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

/// Percent with one decimal, the precision of the published tables.
pub fn format_percent(value: Option<f64>) -> String {
    value.map_or_else(|| UNDEFINED.to_string(), |v| format!("{:.1}", (v * 1000.0).round() / 10.0))
}

/// `image,class,tp,fp,fn,iou,gt_present`, one row per image and class.
pub fn write_per_image_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["image", "class", "tp", "fp", "fn", "iou", "gt_present"])?;
    for r in records {
        for c in &r.per_class {
            w.write_record([
                r.image.clone(),
                c.class.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                fmt_optional(c.value),
                c.gt_present.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `dataset,percent,accuracy,miou,missing_class_iou,iou_class_<c>…`.
pub fn write_aggregate_csv(path: &Path, evaluations: &[&DatasetEvaluation], mode: EvalMode) -> Result<()> {
    let classes = evaluations
        .iter()
        .map(|e| e.aggregate(mode).per_class.len())
        .max()
        .unwrap_or(0);
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["dataset", "percent", "accuracy", "miou", "missing_class_iou"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..classes).map(|c| format!("iou_class_{c}")));
    w.write_record(&header)?;
    for e in evaluations {
        let a = e.aggregate(mode);
        let mut row = vec![
            e.dataset.clone(),
            e.percent.to_string(),
            a.accuracy.to_string(),
            a.miou.to_string(),
            a.missing_class_iou.to_string(),
        ];
        row.extend((0..classes).map(|c| fmt_optional(a.per_class.get(c).copied().flatten())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::Palette;
    use proptest::prelude::*;

    // Classes: 0 background, 1 yellow, 2 blue, 3 green.
    fn dummy_6x6() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[
            vec![32, 0, 1, 1],
            vec![0, 1, 0, 0],
            vec![0, 0, 1, 0],
            vec![0, 0, 0, 0],
        ])
        .unwrap()
    }

    fn mask(classes: Vec<u8>, w: usize, c: usize) -> ClassMask {
        let h = classes.len() / w;
        ClassMask::new(w, h, classes, Palette::evenly_spaced(c).unwrap()).unwrap()
    }

    #[test]
    fn identical_masks_give_diagonal() {
        let m = mask(vec![0, 1, 2, 3, 3, 2], 3, 4);
        let cm = confusion(&m, &m, 4).unwrap();
        assert_eq!(cm.trace(), 6);
        assert_eq!(cm.total(), 6);
    }

    #[test]
    fn all_wrong_tally() {
        let gt = mask(vec![0; 9], 3, 2);
        let pred = mask(vec![1; 9], 3, 2);
        let cm = confusion(&gt, &pred, 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![0, 9], vec![0, 0]]);
        assert_eq!(pixel_accuracy(&cm).unwrap(), 0.0);
    }

    #[test]
    fn dummy_tallies() {
        let cm = dummy_6x6();
        assert_eq!(cm.total(), 36);
        let ious = per_class_iou(&cm);
        assert_eq!((ious[1].tp, ious[1].fp, ious[1].fn_), (1, 0, 0));
        assert_eq!((ious[2].tp, ious[2].fp, ious[2].fn_), (1, 1, 0));
        assert_eq!((ious[3].tp, ious[3].fp, ious[3].fn_), (0, 1, 0));
        assert_eq!((ious[0].tp, ious[0].fp, ious[0].fn_), (32, 0, 2));
        assert_eq!(ious[2].value, Some(0.5));
        assert_eq!(ious[0].value, Some(32.0 / 34.0));
        assert!(!ious[3].gt_present);
        assert_eq!(ious[3].value, Some(0.0));
    }

    #[test]
    fn dummy_metrics() {
        let cm = dummy_6x6();
        let expect_missing = (1.0 + 0.5 + 32.0 / 34.0) / 3.0;
        assert!((missing_class_iou(&cm).unwrap() - expect_missing).abs() < 1e-12);
        assert!((mean_iou(&cm).unwrap() - (1.0 + 0.5 + 32.0 / 34.0) / 4.0).abs() < 1e-12);
        assert!((pixel_accuracy(&cm).unwrap() - 34.0 / 36.0).abs() < 1e-12);
        assert!((expect_missing - 0.8137).abs() < 1e-4);
    }

    #[test]
    fn absent_class_is_undefined() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 0]]).unwrap();
        assert_eq!(class_iou(&cm, 1).unwrap().value, None);
        assert_eq!(mean_iou(&cm).unwrap(), 1.0);
        assert_eq!(missing_class_iou(&cm).unwrap(), 1.0);
    }

    #[test]
    fn empty_matrix_errors() {
        let cm = ConfusionMatrix::new(3);
        assert!(pixel_accuracy(&cm).is_err());
        assert!(mean_iou(&cm).is_err());
        assert!(missing_class_iou(&cm).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = mask(vec![0; 4], 2, 2);
        let b = mask(vec![0; 6], 2, 2);
        assert!(confusion(&a, &b, 2).is_err());
        assert!(confusion(&a, &a, 1).is_err());
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(Some(0.65055)), "65.1");
        assert_eq!(format_percent(Some(0.975)), "97.5");
        assert_eq!(format_percent(None), "Nan");
    }

    fn pairs_of<'a>(items: &'a [(ClassMask, ClassMask)]) -> Vec<EvalPair<'a>> {
        items
            .iter()
            .enumerate()
            .map(|(i, (g, p))| EvalPair {
                image: format!("img{i}"),
                gt: g,
                pred: p,
            })
            .collect()
    }

    #[test]
    fn single_image_modes_agree() {
        let items = vec![(mask(vec![0, 0, 1, 1], 2, 2), mask(vec![0, 1, 1, 1], 2, 2))];
        let ev = evaluate_dataset(&pairs_of(&items), 2, "d", 0).unwrap();
        let r = &ev.records[0];
        for a in [&ev.per_image_mean, &ev.pooled] {
            assert!((a.accuracy - r.accuracy).abs() < 1e-12);
            assert!((a.miou - r.miou).abs() < 1e-12);
            assert!((a.missing_class_iou - r.missing_class_iou).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_support_pooled_differs_from_mean() {
        // Image A: classes {0,1}; gt row-split, prediction misses 4 pixels of class 1.
        let ga: Vec<u8> = [0u8; 8].iter().chain(&[1u8; 8]).copied().collect();
        let mut pa = ga.clone();
        pa[8..12].fill(0);
        // Image B: class 2 only; perfect prediction.
        let gb: Vec<u8> = vec![2u8; 16];
        let items = vec![
            (mask(ga, 4, 4), mask(pa, 4, 4)),
            (mask(gb.clone(), 4, 4), mask(gb, 4, 4)),
        ];
        let ev = evaluate_dataset(&pairs_of(&items), 4, "d", 0).unwrap();
        // Hand oracle. A: IoU0 = 8/12, IoU1 = 4/8, classes 2,3 undefined.
        // B: IoU2 = 1, classes 0,1,3 undefined.
        let miou_a = (8.0 / 12.0 + 0.5) / 2.0;
        let miou_b = 1.0;
        assert!((ev.per_image_mean.miou - (miou_a + miou_b) / 2.0).abs() < 1e-12);
        // Pooled: IoU = [8/12, 4/8, 1, undefined].
        let pooled = (8.0 / 12.0 + 0.5 + 1.0) / 3.0;
        assert!((ev.pooled.miou - pooled).abs() < 1e-12);
        assert!((ev.pooled.miou - ev.per_image_mean.miou).abs() > 1e-3);
        assert!((ev.per_image_mean.accuracy - (28.0 / 32.0)).abs() < 1e-12);
        assert_eq!(ev.per_image_mean.per_class[2], Some(1.0));
    }

    #[test]
    fn repeated_pairs_keep_per_image_mean() {
        let base = (mask(vec![0, 1, 1, 2], 2, 3), mask(vec![0, 1, 2, 2], 2, 3));
        let one = evaluate_dataset(&pairs_of(std::slice::from_ref(&base)), 3, "d", 0).unwrap();
        let many: Vec<_> = std::iter::repeat_n(base, 5).collect();
        let five = evaluate_dataset(&pairs_of(&many), 3, "d", 0).unwrap();
        assert!((one.per_image_mean.miou - five.per_image_mean.miou).abs() < 1e-12);
        assert!((one.per_image_mean.missing_class_iou - five.per_image_mean.missing_class_iou).abs() < 1e-12);
    }

    #[test]
    fn mismatched_pair_names_image() {
        let items = vec![
            (mask(vec![0; 4], 2, 2), mask(vec![0; 4], 2, 2)),
            (mask(vec![0; 4], 2, 2), mask(vec![0; 6], 3, 2)),
        ];
        let msg = evaluate_dataset(&pairs_of(&items), 2, "d", 0).unwrap_err().to_string();
        assert!(msg.contains("img1"), "{msg}");
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![(mask(vec![0, 0, 1, 1], 2, 3), mask(vec![0, 1, 1, 1], 2, 3))];
        let ev = evaluate_dataset(&pairs_of(&items), 3, "toy", 50).unwrap();
        let p = dir.path().join("per_image.csv");
        write_per_image_csv(&p, &ev.records).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image,class,tp,fp,fn,iou,gt_present\n"));
        assert!(text.contains("img0,2,0,0,0,Nan,false"));
        let p = dir.path().join("aggregate.csv");
        write_aggregate_csv(&p, &[&ev], EvalMode::PerImageMean).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "dataset,percent,accuracy,miou,missing_class_iou,iou_class_0,iou_class_1,iou_class_2"
        );
        assert!(lines.next().unwrap().starts_with("toy,50,0.75,"));
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (
            prop::collection::vec(0u8..4, 64),
            prop::collection::vec(0u8..4, 64),
        )
    }

    proptest! {
        #[test]
        fn iou_matches_set_oracle((g, p) in arb_pair()) {
            let cm = confusion(&mask(g.clone(), 8, 4), &mask(p.clone(), 8, 4), 4).unwrap();
            for c in 0..4u8 {
                let inter = g.iter().zip(&p).filter(|(&a, &b)| a == c && b == c).count();
                let union = g.iter().zip(&p).filter(|(&a, &b)| a == c || b == c).count();
                let expect = (union > 0).then(|| inter as f64 / union as f64);
                prop_assert_eq!(class_iou(&cm, c as usize).unwrap().value, expect);
            }
        }

        #[test]
        fn metrics_bounded_and_permutation_invariant((g, p) in arb_pair(), perm_seed in 0usize..24) {
            let perms: Vec<[u8; 4]> = {
                let mut v = Vec::new();
                for a in 0..4u8 { for b in 0..4u8 { for c in 0..4u8 { for d in 0..4u8 {
                    let s = [a, b, c, d];
                    if (0..4).all(|x| s.contains(&x)) { v.push(s); }
                }}}}
                v
            };
            let perm = perms[perm_seed];
            let cm = confusion(&mask(g.clone(), 8, 4), &mask(p.clone(), 8, 4), 4).unwrap();
            let g2: Vec<u8> = g.iter().map(|&c| perm[c as usize]).collect();
            let p2: Vec<u8> = p.iter().map(|&c| perm[c as usize]).collect();
            let cm2 = confusion(&mask(g2, 8, 4), &mask(p2, 8, 4), 4).unwrap();
            let (m, mc, acc) = (mean_iou(&cm).unwrap(), missing_class_iou(&cm).unwrap(), pixel_accuracy(&cm).unwrap());
            prop_assert!(m <= 1.0 && mc <= 1.0);
            prop_assert!((m - mean_iou(&cm2).unwrap()).abs() < 1e-12);
            prop_assert!((mc - missing_class_iou(&cm2).unwrap()).abs() < 1e-12);
            prop_assert!((acc - pixel_accuracy(&cm2).unwrap()).abs() < 1e-12);
            // Classes dropped by the missing-class rule have tp = 0, so IoU 0.
            prop_assert!(mc >= m - 1e-12);
        }

        #[test]
        fn no_spurious_classes_means_equal_metrics(g in prop::collection::vec(0u8..4, 64), keep in prop::collection::vec(any::<bool>(), 64)) {
            // Prediction only uses classes that appear in gt.
            let present: Vec<u8> = (0..4).filter(|c| g.contains(c)).collect();
            let p: Vec<u8> = g.iter().zip(&keep).map(|(&c, &k)| if k { c } else { present[0] }).collect();
            let cm = confusion(&mask(g, 8, 4), &mask(p, 8, 4), 4).unwrap();
            prop_assert!((mean_iou(&cm).unwrap() - missing_class_iou(&cm).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn records_recomputable((g, p) in arb_pair()) {
            let cm = confusion(&mask(g, 8, 4), &mask(p, 8, 4), 4).unwrap();
            let r = EvalRecord::from_confusion("x", "d", 0, cm).unwrap();
            prop_assert!(r.is_consistent());
        }
    }
}
