//! Report documents: JSON for machines, aligned text for people, CSV of
//! value-rank trajectories for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::footprint::{
    stall_layer, DefectReport, DefectType, TrendThresholds, ValueRankList, TREND_RULE,
};
use crate::inject::InjectionManifest;
use crate::probe::FootprintSpecifics;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub model: ModelSummary,
    pub injection: Option<InjectionSummary>,
    pub base_test_accuracy: f64,
    pub test_case_total: usize,
    pub faulty_case_total: usize,
    pub no_faulty_cases: bool,
    pub counts: BTreeMap<DefectType, usize>,
    pub ratios: BTreeMap<DefectType, f64>,
    pub dominant: Option<DefectType>,
    pub dominant_is_strict: bool,
    pub thresholds: TrendThresholds,
    pub trend_rule: String,
    /// Most common stall layer among cases labelled SD: a candidate place to
    /// add depth. `None` when no case is SD.
    pub suggested_layer: Option<usize>,
    pub per_case: Vec<CaseEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub layer_count: usize,
    pub class_count: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSummary {
    pub kind: DefectType,
    pub affected_case_count: usize,
    pub removed_layer: Option<usize>,
    pub detail: String,
}

impl From<&InjectionManifest> for InjectionSummary {
    fn from(m: &InjectionManifest) -> Self {
        let s = &m.spec;
        let detail = match s.kind {
            DefectType::ITD => format!(
                "removed {:.0}% of classes {:?}",
                s.itd_fraction * 100.0,
                s.itd_classes
            ),
            DefectType::UTD => format!(
                "relabeled {:.0}% of class {} as class {}",
                s.utd_fraction * 100.0,
                s.utd_source,
                s.utd_target
            ),
            DefectType::SD => format!("removed hidden layer {}", s.sd_layer),
        };
        InjectionSummary {
            kind: s.kind,
            affected_case_count: m.affected_case_ids.len(),
            removed_layer: m.removed_layer,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: usize,
    pub true_label: usize,
    pub predicted_label: usize,
    pub defect: DefectType,
    pub ranks: Vec<usize>,
    pub stall_layer: usize,
}

pub(crate) fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub(crate) fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Everything [`ReportDocument::build`] needs besides the classified cases.
pub struct ReportContext<'a> {
    pub config: serde_json::Value,
    pub model: ModelSummary,
    pub injection: Option<&'a InjectionManifest>,
    pub base_test_accuracy: f64,
    pub test_case_total: usize,
    pub thresholds: TrendThresholds,
}

impl ReportDocument {
    /// `footprints` and `report.per_case` must describe the same cases in the same order.
    pub fn build(
        ctx: ReportContext<'_>,
        footprints: &[FootprintSpecifics],
        report: &DefectReport,
    ) -> Self {
        debug_assert_eq!(footprints.len(), report.per_case.len());
        let per_case: Vec<CaseEntry> = footprints
            .iter()
            .zip(&report.per_case)
            .map(|(f, c)| CaseEntry {
                case_id: c.case_id,
                true_label: f.true_label,
                predicted_label: f.predicted_label,
                defect: c.defect,
                ranks: c.ranks.clone(),
                stall_layer: stall_layer(&ValueRankList {
                    ranks: c.ranks.clone(),
                    true_label: f.true_label,
                    case_id: c.case_id,
                }),
            })
            .collect();
        let mut stalls: BTreeMap<usize, usize> = BTreeMap::new();
        for c in per_case.iter().filter(|c| c.defect == DefectType::SD) {
            *stalls.entry(c.stall_layer).or_default() += 1;
        }
        // most frequent; the shallowest layer wins ties
        let suggested_layer = stalls
            .iter()
            .fold(None, |best: Option<(usize, usize)>, (&l, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((l, n)),
            })
            .map(|(l, _)| l);
        ReportDocument {
            schema_version: SCHEMA_VERSION,
            tool: "rankprobe".to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: ctx.config,
            model: ctx.model,
            injection: ctx.injection.map(InjectionSummary::from),
            base_test_accuracy: round6(ctx.base_test_accuracy),
            test_case_total: ctx.test_case_total,
            faulty_case_total: report.faulty_case_total,
            no_faulty_cases: report.no_faulty_cases(),
            counts: report.counts.clone(),
            ratios: report
                .ratios
                .iter()
                .map(|(&d, &r)| (d, round3(r)))
                .collect(),
            dominant: report.dominant,
            dominant_is_strict: report.dominant_is_strict(),
            thresholds: ctx.thresholds,
            trend_rule: TREND_RULE.to_string(),
            suggested_layer,
            per_case,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "{} {} defect report", self.tool, self.tool_version);
        let _ = writeln!(w);
        let widths: Vec<String> = self.model.widths.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(
            w,
            "model        {} layers, widths {}",
            self.model.layer_count,
            widths.join("-")
        );
        if let Some(inj) = &self.injection {
            let _ = writeln!(w, "injected     {} ({})", inj.kind, inj.detail);
        }
        let _ = writeln!(w, "test acc     {:.4}", self.base_test_accuracy);
        let _ = writeln!(
            w,
            "faulty       {} of {}",
            self.faulty_case_total, self.test_case_total
        );
        let _ = writeln!(
            w,
            "thresholds   ascend >= {}, descend >= {}",
            self.thresholds.ascend, self.thresholds.descend
        );
        let _ = writeln!(w);
        if self.no_faulty_cases {
            let _ = writeln!(w, "no faulty cases: nothing to diagnose");
            return out;
        }
        let _ = writeln!(w, "defect  count  ratio");
        for d in DefectType::ALL {
            let _ = writeln!(
                w,
                "{:<6}  {:>5}  {:>5.3}",
                d.as_str(),
                self.counts.get(&d).copied().unwrap_or(0),
                self.ratios.get(&d).copied().unwrap_or(0.0)
            );
        }
        let _ = writeln!(w);
        if let Some(d) = self.dominant {
            let tie = if self.dominant_is_strict {
                ""
            } else {
                " (tied)"
            };
            let _ = writeln!(w, "dominant     {d}{tie}");
            let advice = match d {
                DefectType::ITD => "collect more training data for the affected classes",
                DefectType::UTD => "review training labels for mislabeled cases",
                DefectType::SD => "deepen or widen the network",
            };
            let _ = writeln!(w, "suggestion   {advice}");
        }
        if let Some(l) = self.suggested_layer {
            let _ = writeln!(w, "stall layer  {l} (most common among SD cases)");
        }
        let _ = writeln!(w);
        let _ = writeln!(w, "rule: {}", self.trend_rule);
        out
    }

    /// `case_id,true_label,predicted_label,defect,rv_1,...,rv_n`, one row per faulty case.
    pub fn trajectories_csv(&self) -> String {
        let n = self.model.layer_count;
        let mut out = String::from("case_id,true_label,predicted_label,defect");
        for i in 1..=n {
            let _ = write!(out, ",rv_{i}");
        }
        out.push('\n');
        for c in &self.per_case {
            let _ = write!(
                out,
                "{},{},{},{}",
                c.case_id, c.true_label, c.predicted_label, c.defect
            );
            for r in &c.ranks {
                let _ = write!(out, ",{r}");
            }
            out.push('\n');
        }
        out
    }
}
