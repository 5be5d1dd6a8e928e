//! Value-rank trajectories and the trend rules that map a faulty case to a
//! defect type.
//!
//! A value-rank is the competition rank of the true class within one layer's
//! class distribution (1 = most likely, ties share the better rank). Over a
//! footprint these form a trajectory `rv_1..rv_n`. Consecutive pairs are
//! counted as improving (`rv_{j+1} < rv_j`) or worsening (`rv_{j+1} > rv_j`),
//! and the two counts are compared against thresholds:
//!
//! | improving ≥ t_a | worsening ≥ t_d | defect |
//! |-----------------|-----------------|--------|
//! | no              | yes             | UTD    |
//! | yes             | no              | SD     |
//! | no              | no              | ITD (flat at a wrong rank) |
//! | yes             | yes             | ITD (oscillating) |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::FootprintSpecifics;

/// Human-readable statement of the trend rule, echoed into reports.
pub const TREND_RULE: &str = "value-rank = 1 + number of classes with strictly greater likelihood \
than the true class (competition ranking). Over consecutive layers, A counts improving pairs \
(rank decreases toward 1) and D counts worsening pairs (rank increases). UTD if A < t_a and \
D >= t_d; SD if A >= t_a and D < t_d; ITD otherwise (flat or oscillating). This pair-count rule \
is one concrete reading of the trend descriptions: ranks improving but not reaching 1 (SD), \
ranks worsening (UTD), ranks constant at a wrong value or oscillating (ITD).";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DefectType {
    /// Insufficient training data.
    ITD,
    /// Unreliable training data.
    UTD,
    /// Structure defect.
    SD,
}

impl DefectType {
    /// Report order, which is also the tie-break order for the dominant defect.
    pub const ALL: [DefectType; 3] = [DefectType::ITD, DefectType::UTD, DefectType::SD];

    pub fn as_str(self) -> &'static str {
        match self {
            DefectType::ITD => "ITD",
            DefectType::UTD => "UTD",
            DefectType::SD => "SD",
        }
    }
}

impl fmt::Display for DefectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefectType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ITD" => Ok(DefectType::ITD),
            "UTD" => Ok(DefectType::UTD),
            "SD" => Ok(DefectType::SD),
            other => Err(Error::arg(format!("unknown defect type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendThresholds {
    pub ascend: usize,
    pub descend: usize,
}

impl TrendThresholds {
    pub fn new(ascend: usize, descend: usize) -> Result<Self> {
        if ascend == 0 || descend == 0 {
            return Err(Error::arg("trend thresholds must be at least 1"));
        }
        Ok(TrendThresholds { ascend, descend })
    }
}

/// `ceil(0.2 * n)` for both thresholds.
pub fn default_thresholds(layer_count: usize) -> Result<TrendThresholds> {
    if layer_count < 2 {
        return Err(Error::arg(format!(
            "thresholds need at least 2 layers, got {layer_count}"
        )));
    }
    let t = layer_count.div_ceil(5).max(1);
    Ok(TrendThresholds {
        ascend: t,
        descend: t,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueRankList {
    pub ranks: Vec<usize>,
    pub true_label: usize,
    pub case_id: usize,
}

/// Competition rank of `true_class` in `likelihoods`.
pub fn value_rank(likelihoods: &[f64], true_class: usize) -> Result<usize> {
    let Some(&target) = likelihoods.get(true_class) else {
        return Err(Error::arg(format!(
            "class {true_class} out of range for {} likelihoods",
            likelihoods.len()
        )));
    };
    if likelihoods.iter().any(|v| v.is_nan()) {
        return Err(Error::arg("likelihood vector contains NaN"));
    }
    Ok(1 + likelihoods.iter().filter(|&&v| v > target).count())
}

pub fn value_rank_list(dfs: &FootprintSpecifics) -> Result<ValueRankList> {
    let ranks = dfs
        .per_layer_likelihoods
        .iter()
        .map(|s| value_rank(s, dfs.true_label))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueRankList {
        ranks,
        true_label: dfs.true_label,
        case_id: dfs.source_case_id,
    })
}

/// Improving and worsening consecutive pairs of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrendCounts {
    pub improving: usize,
    pub worsening: usize,
}

pub fn trend_counts(ranks: &[usize]) -> TrendCounts {
    let mut c = TrendCounts {
        improving: 0,
        worsening: 0,
    };
    for w in ranks.windows(2) {
        if w[1] < w[0] {
            c.improving += 1;
        } else if w[1] > w[0] {
            c.worsening += 1;
        }
    }
    c
}

pub fn classify_trend(ranks: &ValueRankList, th: TrendThresholds) -> Result<DefectType> {
    match ranks.ranks.last() {
        None => return Err(Error::arg("empty value-rank list")),
        Some(1) => {
            return Err(Error::arg(format!(
                "case {} is classified correctly (final rank 1)",
                ranks.case_id
            )))
        }
        Some(_) => {}
    }
    let c = trend_counts(&ranks.ranks);
    let ascending = c.improving >= th.ascend;
    let descending = c.worsening >= th.descend;
    Ok(match (ascending, descending) {
        (false, true) => DefectType::UTD,
        (true, false) => DefectType::SD,
        _ => DefectType::ITD,
    })
}

/// 1-based layer after which the value-rank never improves again, capped at `n - 1`.
pub fn stall_layer(ranks: &ValueRankList) -> usize {
    let r = &ranks.ranks;
    let n = r.len();
    if n < 2 {
        return 1;
    }
    let last_improvement = r.windows(2).rposition(|w| w[1] < w[0]);
    match last_improvement {
        // pair (k, k+1) improved, so the stall starts at layer k + 2 (1-based)
        Some(k) => (k + 2).min(n - 1),
        None => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedCase {
    pub case_id: usize,
    pub defect: DefectType,
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub counts: BTreeMap<DefectType, usize>,
    pub ratios: BTreeMap<DefectType, f64>,
    /// `None` when there are no faulty cases.
    pub dominant: Option<DefectType>,
    pub faulty_case_total: usize,
    pub per_case: Vec<ClassifiedCase>,
}

impl DefectReport {
    pub fn no_faulty_cases(&self) -> bool {
        self.faulty_case_total == 0
    }

    /// True when the dominant defect's count exceeds every other count.
    pub fn dominant_is_strict(&self) -> bool {
        let Some(d) = self.dominant else {
            return false;
        };
        let top = self.counts[&d];
        self.counts.iter().all(|(k, &v)| *k == d || v < top)
    }
}

pub fn aggregate(per_case: Vec<ClassifiedCase>) -> DefectReport {
    let mut counts: BTreeMap<DefectType, usize> = DefectType::ALL.iter().map(|&d| (d, 0)).collect();
    for c in &per_case {
        *counts.get_mut(&c.defect).expect("all defects present") += 1;
    }
    let total = per_case.len();
    let ratios = counts
        .iter()
        .map(|(&d, &c)| {
            (
                d,
                if total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64
                },
            )
        })
        .collect();
    let dominant = (total > 0).then(|| {
        DefectType::ALL
            .iter()
            .copied()
            .fold(DefectType::ITD, |best, d| {
                if counts[&d] > counts[&best] {
                    d
                } else {
                    best
                }
            })
    });
    DefectReport {
        counts,
        ratios,
        dominant,
        faulty_case_total: total,
        per_case,
    }
}
