use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub languages: BTreeSet<String>,
    pub step_budget: usize,
    pub mask_ratio: f64,
}

/// Ordered pretraining phases; phase `k` owns steps
/// `[Σ_{j<k} budget_j, Σ_{j≤k} budget_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseAt<'a> {
    pub index: usize,
    pub mask_ratio: f64,
    pub languages: &'a BTreeSet<String>,
}

/// Languages of the four-phase language curriculum.
pub const FOUNDATION_LANGS: [&str; 1] = ["en"];
pub const MID_HIGH_LANGS: [&str; 13] = [
    "hi", "te", "ta", "bn", "ml", "mr", "kn", "gu", "as", "or", "pa", "sd", "ur",
];
pub const LOW_LANGS: [&str; 9] = ["brx", "doi", "kok", "ks", "mai", "mni", "ne", "sa", "sat"];

impl CurriculumPlan {
    /// Four phases: foundation @0.30, mid/high-resource @0.25,
    /// low-resource @0.15, then everything @0.25.
    ///
    /// Budgets are 30% / 40% / 20% / 10% of `total_steps`, which must be a
    /// positive multiple of 10 so every split is exact.
    pub fn staged<S: AsRef<str>>(
        total_steps: usize,
        foundation: &[S],
        mid: &[S],
        low: &[S],
    ) -> Result<Self> {
        if total_steps == 0 || !total_steps.is_multiple_of(10) {
            return Err(config_err("curriculum.total_steps", "must be a positive multiple of 10"));
        }
        let set = |ls: &[S]| ls.iter().map(|l| l.as_ref().to_string()).collect::<BTreeSet<_>>();
        let tenth = total_steps / 10;
        let all: BTreeSet<String> = set(foundation)
            .into_iter()
            .chain(set(mid))
            .chain(set(low))
            .collect();
        let plan = Self {
            phases: vec![
                Phase {
                    name: "foundation".into(),
                    languages: set(foundation),
                    step_budget: 3 * tenth,
                    mask_ratio: 0.30,
                },
                Phase {
                    name: "mid-high-resource".into(),
                    languages: set(mid),
                    step_budget: 4 * tenth,
                    mask_ratio: 0.25,
                },
                Phase {
                    name: "low-resource".into(),
                    languages: set(low),
                    step_budget: 2 * tenth,
                    mask_ratio: 0.15,
                },
                Phase {
                    name: "consolidation".into(),
                    languages: all,
                    step_budget: tenth,
                    mask_ratio: 0.25,
                },
            ],
        };
        plan.validate()?;
        Ok(plan)
    }

    /// English, then 13 mid/high-resource Indic languages, then 9
    /// low-resource ones, then all 23.
    pub fn indic_default(total_steps: usize) -> Result<Self> {
        Self::staged(total_steps, &FOUNDATION_LANGS, &MID_HIGH_LANGS, &LOW_LANGS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(config_err("curriculum.phases", "no phases"));
        }
        let mut union = BTreeSet::new();
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.mask_ratio > 0.0 && p.mask_ratio < 1.0) {
                return Err(config_err(format!("curriculum.phases[{i}].mask_ratio"), "must lie in (0, 1)"));
            }
            if p.step_budget == 0 {
                return Err(config_err(format!("curriculum.phases[{i}].step_budget"), "must be positive"));
            }
            if p.languages.is_empty() {
                return Err(config_err(format!("curriculum.phases[{i}].languages"), "empty"));
            }
            union.extend(p.languages.iter().cloned());
        }
        if self.phases.last().map(|p| &p.languages) != Some(&union) {
            return Err(config_err(
                "curriculum.phases[-1].languages",
                "final phase must cover every language of the plan",
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.step_budget).sum()
    }

    /// First step of each phase.
    pub fn boundaries(&self) -> Vec<usize> {
        self.phases
            .iter()
            .scan(0, |acc, p| {
                let start = *acc;
                *acc += p.step_budget;
                Some(start)
            })
            .collect()
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.phases.iter().flat_map(|p| p.languages.iter().cloned()).collect()
    }

    pub fn phase_at(&self, step: usize) -> Result<PhaseAt<'_>> {
        let mut end = 0;
        for (index, p) in self.phases.iter().enumerate() {
            end += p.step_budget;
            if step < end {
                return Ok(PhaseAt {
                    index,
                    mask_ratio: p.mask_ratio,
                    languages: &p.languages,
                });
            }
        }
        Err(Error::StepOutOfRange {
            step,
            total: self.total_steps(),
        })
    }
}
