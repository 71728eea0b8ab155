//! Budget curves: upper envelopes, performance at a budget, and area under
//! the curve over a shared window.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    TokenCost,
    Latency,
}

impl BudgetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetKind::TokenCost => "token_cost",
            BudgetKind::Latency => "latency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullMode {
    /// Upper concave hull of the non-dominated points.
    #[default]
    Convex,
    /// Non-dominated points only, linearly joined.
    Staircase,
}

/// What happens past the last frontier point inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// Append the base system's measured point.
    #[default]
    AppendBase,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCurve {
    pub kind: BudgetKind,
    /// Budgets strictly increasing.
    pub points: Vec<(f64, f64)>,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Keeps the best performance per budget, drops every point that some
/// cheaper-or-equal point matches, and with [`HullMode::Convex`] also drops
/// points on or below the hull chord.
pub fn upper_envelope(points: &[(f64, f64)], kind: BudgetKind, mode: HullMode) -> FrontierCurve {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut stair: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        match stair.last() {
            Some(last) if p.1 <= last.1 => {}
            _ => stair.push(p),
        }
    }
    if mode == HullMode::Staircase {
        return FrontierCurve { kind, points: stair };
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(stair.len());
    for p in stair {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    FrontierCurve { kind, points: hull }
}

fn with_anchor(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v = Vec::with_capacity(points.len() + 1);
    if points.first().is_none_or(|p| p.0 > 0.0) {
        v.push((0.0, 0.0));
    }
    v.extend_from_slice(points);
    v
}

fn interpolate(points: &[(f64, f64)], b: f64) -> f64 {
    let last = points[points.len() - 1];
    if b >= last.0 {
        return last.1;
    }
    if b <= points[0].0 {
        return points[0].1;
    }
    let l = points.partition_point(|p| p.0 <= b) - 1;
    let (b0, p0) = points[l];
    let (b1, p1) = points[l + 1];
    p0 + (b - b0) / (b1 - b0) * (p1 - p0)
}

/// Linear interpolation on the frontier anchored at (0, 0), flat past the
/// last point.
pub fn perf_at_budget(frontier: &FrontierCurve, budget: f64) -> f64 {
    if budget <= 0.0 {
        return 0.0;
    }
    interpolate(&with_anchor(&frontier.points), budget)
}

/// Trapezoidal area over `[0, window]`.
pub fn auc(frontier: &FrontierCurve, window: f64, base: Option<(f64, f64)>, ext: Extension) -> Result<f64, Error> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::Config(format!("integration window must be positive, got {window}")));
    }
    let mut pts = with_anchor(&frontier.points);
    if let (Extension::AppendBase, Some(bp)) = (ext, base) {
        if pts[pts.len() - 1].0 < bp.0 {
            pts.push(bp);
        }
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        let (b0, p0) = w[0];
        if b0 >= window {
            break;
        }
        let (b1, p1) = if w[1].0 > window { (window, interpolate(&pts, window)) } else { w[1] };
        area += (b1 - b0) * (p0 + p1) / 2.0;
    }
    let last = pts[pts.len() - 1];
    if last.0 < window {
        area += (window - last.0) * last.1;
    }
    Ok(area)
}

/// Rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub kind: BudgetKind,
    pub budget: f64,
    pub performance: f64,
    pub method: String,
    pub dataset: String,
}

pub fn write_frontier_csv(w: impl Write, rows: &[FrontierRow]) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "budget", "performance", "method", "dataset"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.kind.as_str().to_string(),
            r.budget.to_string(),
            r.performance.to_string(),
            r.method.clone(),
            r.dataset.clone(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(points: &[(f64, f64)]) -> FrontierCurve {
        FrontierCurve { kind: BudgetKind::TokenCost, points: points.to_vec() }
    }

    #[test]
    fn envelope_drops_points_below_chord() {
        let e = upper_envelope(&[(1.0, 0.5), (2.0, 0.4), (3.0, 0.9)], BudgetKind::TokenCost, HullMode::Convex);
        assert_eq!(e.points, vec![(1.0, 0.5), (3.0, 0.9)]);
        let one = upper_envelope(&[(2.0, 0.3)], BudgetKind::Latency, HullMode::Convex);
        assert_eq!(one.points, vec![(2.0, 0.3)]);
        let col = upper_envelope(&[(1.0, 0.25), (2.0, 0.5), (3.0, 0.75)], BudgetKind::TokenCost, HullMode::Convex);
        assert_eq!(col.points, vec![(1.0, 0.25), (3.0, 0.75)]);
        let dup = upper_envelope(&[(1.0, 0.1), (1.0, 0.4)], BudgetKind::TokenCost, HullMode::Convex);
        assert_eq!(dup.points, vec![(1.0, 0.4)]);
        let st = upper_envelope(&[(1.0, 0.5), (2.0, 0.6), (3.0, 0.9), (4.0, 0.8)], BudgetKind::TokenCost, HullMode::Staircase);
        assert_eq!(st.points, vec![(1.0, 0.5), (2.0, 0.6), (3.0, 0.9)]);
    }

    #[test]
    fn interpolation_cases() {
        let c = curve(&[(1.0, 0.5), (3.0, 0.9)]);
        assert_eq!(perf_at_budget(&c, 2.0), 0.7);
        assert_eq!(perf_at_budget(&c, 1.0), 0.5);
        assert_eq!(perf_at_budget(&c, 3.0), 0.9);
        assert_eq!(perf_at_budget(&c, 10.0), 0.9);
        assert_eq!(perf_at_budget(&c, 0.0), 0.0);
        assert_eq!(perf_at_budget(&c, 0.5), 0.25);
    }

    #[test]
    fn auc_by_hand() {
        let c = curve(&[(1.0, 0.5), (2.0, 0.8)]);
        assert!((auc(&c, 2.0, None, Extension::Flat).unwrap() - 0.9).abs() < 1e-12);
        let z = curve(&[(1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(auc(&z, 5.0, None, Extension::Flat).unwrap(), 0.0);
        let far = curve(&[(2.0, 1.0)]);
        assert!((auc(&far, 1.0, None, Extension::Flat).unwrap() - 0.25).abs() < 1e-12);
        // one point plus an appended base point
        let one = curve(&[(1.0, 0.6)]);
        let a = auc(&one, 3.0, Some((3.0, 0.8)), Extension::AppendBase).unwrap();
        assert!((a - (0.3 + 2.0 * 0.7)).abs() < 1e-12);
        let f = auc(&one, 3.0, Some((3.0, 0.8)), Extension::Flat).unwrap();
        assert!((f - (0.3 + 1.2)).abs() < 1e-12);
        assert!(auc(&one, 0.0, None, Extension::Flat).is_err());
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]) - 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn csv_header_and_quoting() {
        let mut buf = Vec::new();
        let rows = vec![FrontierRow {
            kind: BudgetKind::Latency,
            budget: 1.5,
            performance: 0.25,
            method: "a,b".into(),
            dataset: "synth".into(),
        }];
        write_frontier_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "kind,budget,performance,method,dataset\nlatency,1.5,0.25,\"a,b\",synth\n");
    }

    fn scatter() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.01f64..10.0, 0.0f64..1.0), 1..30)
    }

    proptest! {
        #[test]
        fn envelope_is_idempotent_concave_monotone(pts in scatter()) {
            let e = upper_envelope(&pts, BudgetKind::TokenCost, HullMode::Convex);
            let again = upper_envelope(&e.points, BudgetKind::TokenCost, HullMode::Convex);
            prop_assert_eq!(&again, &e);
            for w in e.points.windows(2) {
                prop_assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
            }
            for w in e.points.windows(3) {
                prop_assert!(cross(w[0], w[1], w[2]) < 0.0);
            }
            for p in &pts {
                prop_assert!(perf_at_budget(&e, p.0) >= p.1 - 1e-12);
            }
        }

        #[test]
        fn pab_monotone_and_auc_respects_domination(pts in scatter(), bump in 0.0f64..0.5, b1 in 0.0f64..12.0, b2 in 0.0f64..12.0) {
            let e = upper_envelope(&pts, BudgetKind::TokenCost, HullMode::Convex);
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(perf_at_budget(&e, lo) <= perf_at_budget(&e, hi) + 1e-12);
            let better: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1 + bump)).collect();
            let eb = upper_envelope(&better, BudgetKind::TokenCost, HullMode::Convex);
            let a = auc(&e, 10.0, None, Extension::Flat).unwrap();
            let b = auc(&eb, 10.0, None, Extension::Flat).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }
}
