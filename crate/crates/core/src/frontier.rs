//! Robustness gain against coordination cost: Pareto filtering and the
//! per-comparison economics table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::benchmark::{Metric, RunRecord, SCHEMA_VERSION};
use crate::error::{ApemoError, Result};
use crate::scheduler::PolicyKind;
use crate::stats::{pair_runs, DeltaReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub label: String,
    /// Relative gain, percent.
    pub gain: f64,
    /// Relative cost increase, percent.
    pub cost_increase: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw: Vec<DeltaReport>,
}

impl FrontierPoint {
    pub fn new(label: impl Into<String>, gain: f64, cost_increase: f64) -> Result<Self> {
        let label = label.into();
        if !gain.is_finite() || !cost_increase.is_finite() {
            return Err(ApemoError::invalid(format!(
                "frontier point {label:?} has non-finite coordinates"
            )));
        }
        Ok(Self {
            label,
            gain,
            cost_increase,
            raw: Vec::new(),
        })
    }
}

/// `a` is at least as good on both axes and strictly better on one.
pub fn dominates(a: &FrontierPoint, b: &FrontierPoint) -> bool {
    a.gain >= b.gain
        && a.cost_increase <= b.cost_increase
        && (a.gain > b.gain || a.cost_increase < b.cost_increase)
}

/// Non-dominated subset, in input order. Points equal on both axes are all
/// kept.
pub fn pareto_front(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[j]
            .gain
            .total_cmp(&points[i].gain)
            .then(points[i].cost_increase.total_cmp(&points[j].cost_increase))
    });
    let mut keep = vec![false; points.len()];
    let mut best_cost = f64::INFINITY;
    let mut g = 0;
    while g < order.len() {
        let gain = points[order[g]].gain;
        let mut end = g;
        while end < order.len() && points[order[end]].gain == gain {
            end += 1;
        }
        // Sorted by cost within the group, so the first is the cheapest.
        let cheapest = points[order[g]].cost_increase;
        if cheapest < best_cost {
            for &i in &order[g..end] {
                if points[i].cost_increase == cheapest {
                    keep[i] = true;
                }
            }
            best_cost = cheapest;
        }
        g = end;
    }
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p).cloned())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viability {
    pub viable: bool,
    /// `gain / cost_increase`; `None` when both are zero.
    pub ratio: Option<f64>,
    pub ratio_infinite: bool,
}

/// Gain must strictly exceed the cost increase.
pub fn viability(p: &FrontierPoint) -> Viability {
    let viable = p.gain > p.cost_increase;
    if p.cost_increase == 0.0 {
        return Viability {
            viable,
            ratio: (p.gain != 0.0).then_some(if p.gain > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }),
            ratio_infinite: p.gain != 0.0,
        };
    }
    Viability {
        viable,
        ratio: Some(p.gain / p.cost_increase),
        ratio_infinite: false,
    }
}

/// `(treatment - baseline) / baseline * 100`.
pub fn relative_pct(treatment: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(ApemoError::UndefinedRatio(
            "relative delta against a zero baseline".into(),
        ));
    }
    Ok((treatment - baseline) / baseline * 100.0)
}

/// Paired means of one comparison, the input to a frontier row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub label: String,
    pub metric: Metric,
    pub treatment_mean: f64,
    pub baseline_mean: f64,
    pub treatment_cost: f64,
    pub baseline_cost: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub label: String,
    pub metric: Metric,
    pub gain_pct: f64,
    pub cost_pct: f64,
    pub viable: bool,
    pub ratio: Option<f64>,
    pub ratio_infinite: bool,
    pub n: usize,
}

impl FrontierRow {
    pub fn point(&self) -> FrontierPoint {
        FrontierPoint {
            label: self.label.clone(),
            gain: self.gain_pct,
            cost_increase: self.cost_pct,
            raw: Vec::new(),
        }
    }
}

pub fn frontier_row(s: &ComparisonSummary) -> Result<FrontierRow> {
    let gain = relative_pct(s.treatment_mean, s.baseline_mean)?;
    let cost = relative_pct(s.treatment_cost, s.baseline_cost)?;
    let v = viability(&FrontierPoint::new(s.label.clone(), gain, cost)?);
    Ok(FrontierRow {
        label: s.label.clone(),
        metric: s.metric,
        gain_pct: gain,
        cost_pct: cost,
        viable: v.viable,
        ratio: v.ratio,
        ratio_infinite: v.ratio_infinite,
        n: s.n,
    })
}

/// One row per comparison. Rows that cannot be formed are returned as
/// diagnostics instead.
pub fn frontier_table(summaries: &[ComparisonSummary]) -> (Vec<FrontierRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for s in summaries {
        match frontier_row(s) {
            Ok(r) => rows.push(r),
            Err(e) => diags.push(format!("{}: {e}", s.label)),
        }
    }
    (rows, diags)
}

/// A comparison requested for the frontier table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierSpec {
    pub label: String,
    pub block: String,
    pub baseline: PolicyKind,
    #[serde(default = "default_treatment")]
    pub treatment: PolicyKind,
    /// Defaults to endpoint quality for trap blocks and mean quality
    /// otherwise.
    #[serde(default)]
    pub metric: Option<Metric>,
}

fn default_treatment() -> PolicyKind {
    PolicyKind::Apemo
}

/// Paired means for `spec` out of a block's records.
pub fn summarize(spec: &FrontierSpec, records: &[RunRecord]) -> Result<ComparisonSummary> {
    let trapped = records.iter().any(|r| r.trap.is_some());
    let metric = spec.metric.unwrap_or(if trapped {
        Metric::EndpointQuality
    } else {
        Metric::MeanQuality
    });
    let of = |p: PolicyKind| -> Vec<RunRecord> {
        records.iter().filter(|r| r.policy == p).cloned().collect()
    };
    let (t, b) = (of(spec.treatment), of(spec.baseline));
    let q = pair_runs(&t, &b, metric)?;
    let c = pair_runs(&t, &b, Metric::TotalCost)?;
    let avg = |xs: &mut dyn Iterator<Item = f64>, n: usize| xs.sum::<f64>() / n as f64;
    Ok(ComparisonSummary {
        label: spec.label.clone(),
        metric,
        treatment_mean: avg(&mut q.deltas.iter().map(|d| d.treatment), q.deltas.len()),
        baseline_mean: avg(&mut q.deltas.iter().map(|d| d.baseline), q.deltas.len()),
        treatment_cost: avg(&mut c.deltas.iter().map(|d| d.treatment), c.deltas.len()),
        baseline_cost: avg(&mut c.deltas.iter().map(|d| d.baseline), c.deltas.len()),
        n: q.deltas.len(),
    })
}

/// Summaries for every spec whose block is present; missing blocks and
/// failed pairings become diagnostics.
pub fn summarize_all(
    specs: &[FrontierSpec],
    blocks: &BTreeMap<String, Vec<RunRecord>>,
) -> (Vec<ComparisonSummary>, Vec<String>) {
    let mut out = Vec::new();
    let mut diags = Vec::new();
    for s in specs {
        match blocks.get(&s.block) {
            None => diags.push(format!("{}: block {:?} has no records", s.label, s.block)),
            Some(recs) => match summarize(s, recs) {
                Ok(c) => out.push(c),
                Err(e) => diags.push(format!("{}: {e}", s.label)),
            },
        }
    }
    (out, diags)
}

pub fn render_table(rows: &[FrontierRow]) -> String {
    let mut out = String::new();
    let w = rows.iter().map(|r| r.label.len()).max().unwrap_or(7).max(7);
    let _ = writeln!(
        out,
        "{:<w$}  {:<16}  {:>12}  {:>12}  {:>8}  {:>6}",
        "setting", "metric", "gain", "cost", "ratio", "viable"
    );
    let _ = writeln!(out, "{}", "-".repeat(w + 64));
    for r in rows {
        let ratio = match r.ratio {
            Some(x) if x.is_infinite() => if x > 0.0 { "inf" } else { "-inf" }.to_string(),
            Some(x) => format!("{x:.2}"),
            None => "n/a".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<w$}  {:<16}  {:>+11.2}%  {:>+11.2}%  {:>8}  {:>6}",
            r.label,
            r.metric.name(),
            r.gain_pct,
            r.cost_pct,
            ratio,
            if r.viable { "yes" } else { "no" }
        );
    }
    out
}

pub fn to_csv(rows: &[FrontierRow]) -> String {
    let mut out = String::from("label,gain_pct,cost_pct,viable\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", csv_field(&r.label), r.gain_pct, r.cost_pct, r.viable);
    }
    out
}

pub fn to_jsonl(rows: &[FrontierRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        let mut v = serde_json::to_value(r)?;
        v["schema_version"] = SCHEMA_VERSION.into();
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pt(label: &str, g: f64, c: f64) -> FrontierPoint {
        FrontierPoint::new(label, g, c).unwrap()
    }

    fn labels(v: &[FrontierPoint]) -> Vec<&str> {
        v.iter().map(|p| p.label.as_str()).collect()
    }

    #[test]
    fn front_examples() {
        assert_eq!(labels(&pareto_front(&[pt("a", 1.0, 1.0)])), ["a"]);
        let pts = [pt("a", 10.0, 5.0), pt("b", 8.0, 6.0), pt("c", 12.0, 4.0)];
        assert_eq!(labels(&pareto_front(&pts)), ["c"]);
        let pts = [pt("a", 10.0, 5.0), pt("b", 12.0, 8.0)];
        assert_eq!(labels(&pareto_front(&pts)), ["a", "b"]);
        let pts = [pt("a", 10.0, 5.0), pt("b", 10.0, 5.0), pt("c", 10.0, 6.0)];
        assert_eq!(labels(&pareto_front(&pts)), ["a", "b"]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn viability_examples() {
        assert!(viability(&pt("l", 14.49, 6.28)).viable);
        assert!(!viability(&pt("b", 3.0, 3.0)).viable);
        assert!(viability(&pt("s", 8.48, 3.39)).viable);
        let z = viability(&pt("z", 2.0, 0.0));
        assert!(z.viable && z.ratio_infinite);
        let null = viability(&pt("n", 0.0, 0.0));
        assert!(!null.viable && null.ratio.is_none());
        assert_relative_eq!(viability(&pt("r", 14.49, 6.28)).ratio.unwrap(), 14.49 / 6.28);
    }

    #[test]
    fn rows_from_means() {
        let s = ComparisonSummary {
            label: "trap".into(),
            metric: Metric::EndpointQuality,
            treatment_mean: 0.6494,
            baseline_mean: 0.5,
            treatment_cost: 1053.3,
            baseline_cost: 1000.0,
            n: 20,
        };
        let r = frontier_row(&s).unwrap();
        assert_relative_eq!(r.gain_pct, 29.88, epsilon = 1e-9);
        assert_relative_eq!(r.cost_pct, 5.33, epsilon = 1e-9);
        assert!(r.viable);
        let null = ComparisonSummary {
            treatment_mean: 0.5,
            treatment_cost: 1000.0,
            ..s.clone()
        };
        let r = frontier_row(&null).unwrap();
        assert_eq!((r.gain_pct, r.cost_pct, r.viable), (0.0, 0.0, false));
        let zero = ComparisonSummary {
            baseline_mean: 0.0,
            ..s
        };
        let (rows, diags) = frontier_table(&[zero]);
        assert!(rows.is_empty() && diags.len() == 1);
    }

    #[test]
    fn missing_block_is_a_diagnostic() {
        let spec = FrontierSpec {
            label: "x".into(),
            block: "nope".into(),
            baseline: PolicyKind::Uniform,
            treatment: PolicyKind::Apemo,
            metric: None,
        };
        let (rows, diags) = summarize_all(&[spec], &BTreeMap::new());
        assert!(rows.is_empty());
        assert!(diags[0].contains("nope"));
    }

    #[test]
    fn csv_schema() {
        let r = frontier_row(&ComparisonSummary {
            label: "a,b".into(),
            metric: Metric::MeanQuality,
            treatment_mean: 1.1,
            baseline_mean: 1.0,
            treatment_cost: 1.0,
            baseline_cost: 1.0,
            n: 1,
        })
        .unwrap();
        let csv = to_csv(&[r]);
        assert!(csv.starts_with("label,gain_pct,cost_pct,viable\n\"a,b\","));
    }

    fn brute(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
        points
            .iter()
            .filter(|p| !points.iter().any(|q| dominates(q, p)))
            .cloned()
            .collect()
    }

    fn cloud() -> impl Strategy<Value = Vec<FrontierPoint>> {
        prop::collection::vec((0u8..20, 0u8..20), 1..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (g, c))| pt(&i.to_string(), g as f64, c as f64))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn front_matches_brute_force(points in cloud()) {
            prop_assert_eq!(pareto_front(&points), brute(&points));
        }

        #[test]
        fn front_is_idempotent_and_covering(points in cloud()) {
            let f = pareto_front(&points);
            prop_assert_eq!(pareto_front(&f), f.clone());
            for p in &points {
                let in_front = f.iter().any(|q| q.label == p.label);
                prop_assert!(in_front || f.iter().any(|q| dominates(q, p)));
            }
        }
    }
}
