//! Per-class confusion tallies over word-final positions, macro-F1 over
//! the full label set or the focus subset, and evaluation reports.

mod report;

pub use report::{
    evaluate_checkpoint, evaluate_corpus, punctuate, ClassReport, CorpusCounts, EvalOptions, EvalReport, LangReport,
    ReportMeta,
};

use serde::{Deserialize, Serialize, Serializer};

use crate::datapipe::{TaggedSequence, O};
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn support(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    /// `2TP / (2TP + FP + FN)`, or `None` without support.
    pub fn f1(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| (2 * self.tp) as f64 / d as f64)
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

/// Tallies indexed by label id. Slot [`O`] stays zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
    /// Word-final positions seen.
    pub positions: u64,
}

impl ConfusionCounts {
    pub fn new(n_labels: usize) -> Self {
        Self {
            classes: vec![ClassCounts::default(); n_labels],
            positions: 0,
        }
    }

    pub fn n_labels(&self) -> usize {
        self.classes.len()
    }

    /// Adds the word-final positions of one sequence.
    ///
    /// Agreement on a class is a TP; otherwise a non-O prediction is an FP
    /// of the predicted class and a non-O reference an FN of its class.
    pub fn accumulate(&mut self, reference: &TaggedSequence, predicted: &[usize]) -> Result<()> {
        if predicted.len() != reference.labels.len() || reference.word_final.len() != reference.labels.len() {
            return Err(Error::Alignment {
                reference: reference.labels.len(),
                predicted: predicted.len(),
            });
        }
        let n = self.n_labels();
        for ((&r, &p), &fin) in reference.labels.iter().zip(predicted).zip(&reference.word_final) {
            if !fin {
                continue;
            }
            if r >= n || p >= n {
                return Err(Error::Registry(format!("label {} outside {n} labels", r.max(p))));
            }
            self.positions += 1;
            if r == p {
                if r != O {
                    self.classes[r].tp += 1;
                }
                continue;
            }
            if p != O {
                self.classes[p].fp += 1;
            }
            if r != O {
                self.classes[r].fn_ += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.n_labels() != self.n_labels() {
            return Err(Error::Alignment {
                reference: self.n_labels(),
                predicted: other.n_labels(),
            });
        }
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        self.positions += other.positions;
        Ok(())
    }

    /// Copy keeping only the tallies of `subset`.
    pub fn restricted(&self, subset: &[usize]) -> Self {
        let mut out = Self::new(self.n_labels());
        out.positions = self.positions;
        for &c in subset {
            if let Some(k) = self.classes.get(c) {
                out.classes[c] = *k;
            }
        }
        out
    }
}

/// How classes with no reference or predicted occurrence enter the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroSupport {
    /// Left out of the average.
    #[default]
    Exclude,
    /// Counted as F1 = 0.
    AsZero,
}

/// Macro-F1 outcome. `NoSupport` means no class of the subset occurred in
/// either reference or prediction, so the average is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacroF1 {
    Score(f64),
    NoSupport,
}

impl MacroF1 {
    pub fn value(self) -> Option<f64> {
        match self {
            MacroF1::Score(v) => Some(v),
            MacroF1::NoSupport => None,
        }
    }

    /// The score, with an undefined average read as 0.
    pub fn or_zero(self) -> f64 {
        self.value().unwrap_or(0.0)
    }
}

impl Serialize for MacroF1 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MacroF1::Score(v) => s.serialize_f64(*v),
            MacroF1::NoSupport => s.serialize_str("no-support"),
        }
    }
}

/// Unweighted mean of per-class F1 over `subset`. [`O`] is never averaged.
pub fn macro_f1(counts: &ConfusionCounts, subset: &[usize], mode: ZeroSupport) -> Result<MacroF1> {
    if subset.is_empty() {
        return Err(config_err("subset", "macro-F1 needs at least one class"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for &c in subset {
        if c == O {
            continue;
        }
        let k = counts
            .classes
            .get(c)
            .ok_or_else(|| Error::Registry(format!("class {c} outside {} labels", counts.n_labels())))?;
        match (k.f1(), mode) {
            (Some(f), _) => {
                sum += f;
                n += 1;
            }
            (None, ZeroSupport::AsZero) => n += 1,
            (None, ZeroSupport::Exclude) => {}
        }
    }
    Ok(if n == 0 { MacroF1::NoSupport } else { MacroF1::Score(sum / n as f64) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(labels: Vec<usize>, word_final: Vec<bool>) -> TaggedSequence {
        TaggedSequence {
            lang: "x".into(),
            ids: vec![0; labels.len()],
            labels,
            word_final,
        }
    }

    fn table(rows: &[(u64, u64, u64)]) -> ConfusionCounts {
        let mut c = ConfusionCounts::new(rows.len() + 1);
        for (i, &(tp, fp, fn_)) in rows.iter().enumerate() {
            c.classes[i + 1] = ClassCounts { tp, fp, fn_ };
        }
        c
    }

    #[test]
    fn perfect_and_all_o() {
        let s = seq(vec![0, 1, 0, 2, 3], vec![false, true, true, true, true]);
        let mut c = ConfusionCounts::new(4);
        c.accumulate(&s, &s.labels.clone()).unwrap();
        assert!(c.classes.iter().all(|k| k.fp == 0 && k.fn_ == 0));
        assert_eq!(c.positions, 4);

        let o = seq(vec![0; 4], vec![true; 4]);
        let mut c = ConfusionCounts::new(4);
        c.accumulate(&o, &[0; 4]).unwrap();
        assert!(c.classes.iter().all(|k| k.support() == 0));
        assert_eq!(macro_f1(&c, &[1, 2, 3], ZeroSupport::Exclude).unwrap(), MacroF1::NoSupport);
        assert_eq!(macro_f1(&c, &[1, 2, 3], ZeroSupport::AsZero).unwrap(), MacroF1::Score(0.0));
    }

    #[test]
    fn non_final_positions_are_ignored() {
        let s = seq(vec![0, 1], vec![false, true]);
        let mut c = ConfusionCounts::new(3);
        c.accumulate(&s, &[2, 1]).unwrap();
        assert_eq!(c.classes[2], ClassCounts::default());
        assert_eq!(c.classes[1].tp, 1);
    }

    #[test]
    fn alignment_mismatch_errors() {
        let s = seq(vec![0, 1], vec![true, true]);
        let mut c = ConfusionCounts::new(3);
        assert!(matches!(c.accumulate(&s, &[0]), Err(Error::Alignment { .. })));
    }

    #[test]
    fn closed_forms() {
        assert_eq!(macro_f1(&table(&[(3, 0, 0)]), &[1], ZeroSupport::Exclude).unwrap(), MacroF1::Score(1.0));
        let t = table(&[(4, 0, 0), (1, 1, 1)]);
        assert_eq!(macro_f1(&t, &[1, 2], ZeroSupport::Exclude).unwrap(), MacroF1::Score(0.75));
        // zero-support third class only matters in AsZero mode
        let t = table(&[(4, 0, 0), (1, 1, 1), (0, 0, 0)]);
        assert_eq!(macro_f1(&t, &[1, 2, 3], ZeroSupport::Exclude).unwrap(), MacroF1::Score(0.75));
        assert_eq!(macro_f1(&t, &[1, 2, 3], ZeroSupport::AsZero).unwrap(), MacroF1::Score(0.5));
        assert!(macro_f1(&t, &[], ZeroSupport::Exclude).is_err());
        assert_eq!(serde_json::to_string(&MacroF1::NoSupport).unwrap(), "\"no-support\"");
    }

    #[test]
    fn tallies_match_pairwise_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = 6;
            let len = rng.random_range(1..40);
            let labels: Vec<usize> = (0..len).map(|_| if rng.random::<f64>() < 0.5 { 0 } else { rng.random_range(1..n) }).collect();
            let fin: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < 0.7).collect();
            let labels: Vec<usize> = labels.iter().zip(&fin).map(|(&l, &f)| if f { l } else { 0 }).collect();
            let pred: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
            let s = seq(labels.clone(), fin.clone());
            let mut c = ConfusionCounts::new(n);
            c.accumulate(&s, &pred).unwrap();
            for k in 1..n {
                let pairs = || (0..len).filter(|&i| fin[i]).map(|i| (labels[i], pred[i]));
                let tp = pairs().filter(|&(r, p)| r == k && p == k).count() as u64;
                let fp = pairs().filter(|&(r, p)| r != k && p == k).count() as u64;
                let fn_ = pairs().filter(|&(r, p)| r == k && p != k).count() as u64;
                assert_eq!(c.classes[k], ClassCounts { tp, fp, fn_ });
            }
            assert_eq!(c.positions, fin.iter().filter(|&&f| f).count() as u64);
        }
    }

    proptest! {
        #[test]
        fn singleton_subset_is_class_f1(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let t = table(&[(tp, fp, fn_)]);
            let m = macro_f1(&t, &[1], ZeroSupport::Exclude).unwrap();
            prop_assert_eq!(m.value(), t.classes[1].f1());
        }

        #[test]
        fn fp_to_tp_never_lowers_f1(tp in 0u64..50, fp in 1u64..50, fn_ in 0u64..50) {
            let before = ClassCounts { tp, fp, fn_ }.f1().unwrap();
            let after = ClassCounts { tp: tp + 1, fp: fp - 1, fn_ }.f1().unwrap();
            prop_assert!(after >= before);
        }

        #[test]
        fn restriction_matches_subset_average(rows in proptest::collection::vec((0u64..9, 0u64..9, 0u64..9), 2..12)) {
            let t = table(&rows);
            let focus: Vec<usize> = (1..=rows.len()).step_by(2).collect();
            let a = macro_f1(&t, &focus, ZeroSupport::Exclude).unwrap();
            let all: Vec<usize> = (1..=rows.len()).collect();
            let b = macro_f1(&t.restricted(&focus), &all, ZeroSupport::Exclude).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
