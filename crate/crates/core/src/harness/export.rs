use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{HarnessError, ResultRow};
use crate::cells::ArchKind;

pub const CSV_COLUMNS: [&str; 15] = [
    "study",
    "config_hash",
    "group",
    "arch",
    "depth",
    "n_params",
    "n_h",
    "trial",
    "seed",
    "feasible",
    "objective",
    "eval_objective",
    "steps",
    "hp",
    "extras",
];

fn opt_f64(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Format(format!("csv: {e}"))
}

/// Header plus one line per row; `hp` and `extras` are JSON objects.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.study.clone(),
            r.config_hash.clone(),
            r.group.clone(),
            r.arch.to_string(),
            r.depth.to_string(),
            r.n_params.to_string(),
            r.n_h.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.feasible.to_string(),
            opt_f64(r.objective),
            opt_f64(r.eval_objective),
            r.steps.to_string(),
            serde_json::to_string(&r.hp)?,
            serde_json::to_string(&r.extras)?,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the output of [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_COLUMNS) {
        return Err(HarnessError::Format("unexpected csv header".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let bad = |i: usize| HarnessError::Format(format!("csv column {}: {:?}", CSV_COLUMNS[i], field(i)));
        let num = |i: usize| field(i).parse::<usize>().map_err(|_| bad(i));
        let opt = |i: usize| -> Result<Option<f64>, HarnessError> {
            match field(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(i)),
            }
        };
        rows.push(ResultRow {
            study: field(0).to_string(),
            config_hash: field(1).to_string(),
            group: field(2).to_string(),
            arch: field(3).parse::<ArchKind>().map_err(|_| bad(3))?,
            depth: num(4)?,
            n_params: num(5)?,
            n_h: num(6)?,
            trial: num(7)?,
            seed: field(8).parse().map_err(|_| bad(8))?,
            feasible: field(9).parse().map_err(|_| bad(9))?,
            objective: opt(10)?,
            eval_objective: opt(11)?,
            steps: num(12)?,
            hp: serde_json::from_str(field(13))?,
            extras: serde_json::from_str(field(14))?,
        });
    }
    Ok(rows)
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite objectives"));
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Per-iteration traces of one group: after trial `i`, the best and the
/// median objective over the feasible trials so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCurve {
    pub group: String,
    pub min_trace: Vec<Option<f64>>,
    pub median_trace: Vec<Option<f64>>,
    pub infeasible: usize,
}

/// Curves keyed by `key(row)`, in key order; rows within a key are taken in
/// trial order.
pub fn best_curve(rows: &[ResultRow], key: impl Fn(&ResultRow) -> String) -> Vec<BestCurve> {
    let mut by: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by.entry(key(r)).or_default().push(r);
    }
    by.into_iter()
        .map(|(group, mut rs)| {
            rs.sort_by(|a, b| (a.trial, &a.group).cmp(&(b.trial, &b.group)));
            let mut seen = Vec::new();
            let mut best: Option<f64> = None;
            let (mut min_trace, mut median_trace) = (Vec::new(), Vec::new());
            let mut infeasible = 0;
            for r in rs {
                match r.objective.filter(|_| r.feasible) {
                    Some(v) => {
                        seen.push(v);
                        best = Some(best.map_or(v, |b| b.min(v)));
                    }
                    None => infeasible += 1,
                }
                min_trace.push(best);
                median_trace.push(median(&mut seen.clone()));
            }
            BestCurve {
                group,
                min_trace,
                median_trace,
                infeasible,
            }
        })
        .collect()
}

/// Outcome of one (arch, depth, size) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub arch: ArchKind,
    pub depth: usize,
    pub n_params: usize,
    pub n_h: usize,
    pub trials: usize,
    pub infeasible: usize,
    pub infeasible_pct: f64,
    /// Best feasible validation objective.
    pub best: Option<f64>,
    /// Median over feasible trials only.
    pub median: Option<f64>,
    /// Evaluation objective of the best trial.
    pub best_eval: Option<f64>,
    /// Extras of the best trial.
    pub best_extras: BTreeMap<String, f64>,
}

/// One summary per group in first-appearance order.
pub fn group_summaries(rows: &[ResultRow]) -> Vec<GroupSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.group.as_str()) {
            order.push(&r.group);
        }
    }
    order
        .into_iter()
        .map(|g| {
            let rs: Vec<&ResultRow> = rows.iter().filter(|r| r.group == g).collect();
            let first = rs[0];
            let feasible: Vec<&ResultRow> = rs.iter().copied().filter(|r| r.feasible && r.objective.is_some()).collect();
            let best = feasible
                .iter()
                .min_by(|a, b| a.objective.partial_cmp(&b.objective).expect("finite objectives"));
            let mut vals: Vec<f64> = feasible.iter().filter_map(|r| r.objective).collect();
            let infeasible = rs.len() - feasible.len();
            GroupSummary {
                group: g.to_string(),
                arch: first.arch,
                depth: first.depth,
                n_params: first.n_params,
                n_h: first.n_h,
                trials: rs.len(),
                infeasible,
                infeasible_pct: 100.0 * infeasible as f64 / rs.len() as f64,
                best: best.and_then(|r| r.objective),
                median: median(&mut vals),
                best_eval: best.and_then(|r| r.eval_objective),
                best_extras: best.map(|r| r.extras.clone()).unwrap_or_default(),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.6}"))
}

/// Plain-text table of [`group_summaries`].
pub fn write_summary<W: Write>(rows: &[ResultRow], mut out: W) -> Result<(), HarnessError> {
    writeln!(
        out,
        "{:<20} {:>8} {:>6} {:>11} {:>12} {:>12} {:>12}  best extras",
        "group", "params", "trials", "infeasible", "best", "median", "best eval"
    )?;
    for s in group_summaries(rows) {
        let extras: Vec<String> = s.best_extras.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        writeln!(
            out,
            "{:<20} {:>8} {:>6} {:>10.1}% {:>12} {:>12} {:>12}  {}",
            s.group,
            s.n_params,
            s.trials,
            s.infeasible_pct,
            cell(s.best),
            cell(s.median),
            cell(s.best_eval),
            extras.join(" ")
        )?;
    }
    Ok(())
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Best objective against parameter count on a log-x axis, one polyline
/// per architecture series (per arch and depth when depths differ).
pub fn svg_plot(rows: &[ResultRow], title: &str) -> String {
    let summaries = group_summaries(rows);
    let many_depths = summaries.iter().any(|s| s.depth != summaries[0].depth);
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &summaries {
        let name = if many_depths {
            format!("{}/d{}", s.arch, s.depth)
        } else {
            s.arch.to_string()
        };
        let pts = series.entry(name).or_default();
        if let Some(b) = s.best {
            pts.push(((s.n_params.max(1) as f64).log10(), b));
        }
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    }
    let all: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    let range = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi - lo > 1e-12) {
            (false, _) => (0.0, 1.0),
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
        }
    };
    let ((x0, x1), (y0, y1)) = (range(|p| p.0), range(|p| p.1));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (SVG_W - 2.0 * MARGIN);
    let py = |y: f64| SVG_H - MARGIN - (y - y0) / (y1 - y0) * (SVG_H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        SVG_W / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN, SVG_W - MARGIN, MARGIN, SVG_H - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    for d in (x0.floor() as i32)..=(x1.ceil() as i32) {
        let x = d as f64;
        if x < x0 - 1e-9 || x > x1 + 1e-9 {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="11">1e{d}</text>"#,
            px(x),
            bottom + 16.0
        );
    }
    for (v, label) in [(y0, y0), (y1, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">{label:.4}</text>"#,
            left - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">parameters (log scale)</text>"#,
        SVG_W / 2.0,
        SVG_H - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">best objective</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            escape(name),
            points.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            right + 4.0,
            top + 16.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
