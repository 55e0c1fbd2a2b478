// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV, JSON, text and SVG renderings of results. Layer and head numbers
//! are 1-based in every output.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::bias::{BiasScoreMap, HeadPartition};
use crate::debias::EvalReport;
use crate::error::{Error, Result};
use crate::lab::{GroupStat, LabReport, StatResult};
use crate::scalar::Scalar;

pub const HISTOGRAM_BINS: usize = 40;

pub fn bias_scores_csv<T: Scalar>(map: &BiasScoreMap<T>) -> String {
    let mut out = String::from("layer,head,bias_score\n");
    for ((l, h), s) in map.iter() {
        writeln!(out, "{},{},{}", l + 1, h + 1, s.to_f64_lossless()).unwrap();
    }
    out
}

pub fn parse_bias_scores_csv(text: &str) -> Result<BiasScoreMap<f64>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidArgument(format!("bias-score CSV line {}: `{line}`", n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [l, h, s] = fields[..] else { return Err(bad()) };
        let l: usize = l.parse().map_err(|_| bad())?;
        let h: usize = h.parse().map_err(|_| bad())?;
        let s: f64 = s.parse().map_err(|_| bad())?;
        if l == 0 || h == 0 {
            return Err(bad());
        }
        rows.push((l - 1, h - 1, s));
    }
    let layers = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let heads = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut scores = vec![None; layers * heads];
    for (l, h, s) in rows {
        let slot = &mut scores[l * heads + h];
        if slot.replace(s).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate bias score for head {}-{}", l + 1, h + 1)));
        }
    }
    let scores = scores
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidArgument("bias-score CSV does not cover every head".into()))?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("bias-score CSV is empty".into()));
    }
    BiasScoreMap::new(layers, heads, scores)
}

/// Equal-width bins over the score range; the last bin is closed.
pub fn histogram_csv<T: Scalar>(map: &BiasScoreMap<T>) -> String {
    let values: Vec<f64> = map.scores.iter().map(|s| s.to_f64_lossless()).collect();
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        (lo, hi) = (0.0, 0.0);
    }
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for v in values {
        let bin = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    let mut out = String::from("bin,lower,upper,count\n");
    for (i, c) in counts.iter().enumerate() {
        let lower = lo + width * i as f64;
        let upper = if i + 1 == HISTOGRAM_BINS { hi } else { lo + width * (i + 1) as f64 };
        writeln!(out, "{},{},{},{}", i + 1, lower, upper, c).unwrap();
    }
    out
}

const CELL: usize = 36;
const MARGIN: usize = 48;

/// Layer-by-head grid shaded by `max(score, 0)`, layer 1 on top. Negative
/// and zero scores are white.
pub fn heatmap_svg<T: Scalar>(map: &BiasScoreMap<T>) -> String {
    let peak = map
        .scores
        .iter()
        .map(|s| s.to_f64_lossless())
        .fold(0.0, f64::max);
    let width = MARGIN + map.heads * CELL + 8;
    let height = MARGIN + map.layers * CELL + 8;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="16" font-family="sans-serif" font-size="12" text-anchor="middle">head</text>"#,
        MARGIN + map.heads * CELL / 2
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="12" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 12 {})">layer</text>"#,
        MARGIN + map.layers * CELL / 2,
        MARGIN + map.layers * CELL / 2
    )
    .unwrap();
    for h in 0..map.heads {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            MARGIN + h * CELL + CELL / 2,
            MARGIN - 6,
            h + 1
        )
        .unwrap();
    }
    for l in 0..map.layers {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            MARGIN - 6,
            MARGIN + l * CELL + CELL / 2 + 4,
            l + 1
        )
        .unwrap();
    }
    for ((l, h), s) in map.iter() {
        let v = s.to_f64_lossless().max(0.0);
        let t = if peak > 0.0 { v / peak } else { 0.0 };
        let fade = (255.0 * (1.0 - t)).round() as u8;
        let (x, y) = (MARGIN + h * CELL, MARGIN + l * CELL);
        writeln!(
            svg,
            r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#ff{fade:02x}{fade:02x}" stroke="#cccccc"/>"##
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="9" text-anchor="middle">{}-{}</text>"#,
            x + CELL / 2,
            y + CELL / 2 + 3,
            l + 1,
            h + 1
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean normalized attention of each group for original and counter
/// sentences.
pub fn group_bars_svg(report: &LabReport) -> String {
    let groups: Vec<(&str, &GroupStat)> = [("biased", &report.biased), ("regular", &report.regular)]
        .into_iter()
        .filter_map(|(n, g)| g.as_ref().map(|g| (n, g)))
        .collect();
    let peak = groups
        .iter()
        .flat_map(|(_, g)| [g.mean_w_orig, g.mean_w_counter])
        .fold(0.0, f64::max);
    let (bar, gap, plot_h) = (40usize, 30usize, 200usize);
    let width = 60 + groups.len() * (2 * bar + gap) + 20;
    let height = plot_h + 80;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    let base = 20 + plot_h;
    writeln!(svg, r#"<line x1="50" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, width - 10).unwrap();
    for (i, (name, g)) in groups.iter().enumerate() {
        let x0 = 60 + i * (2 * bar + gap);
        for (j, (v, color)) in [(g.mean_w_orig, "#d62728"), (g.mean_w_counter, "#1f77b4")].iter().enumerate() {
            let h = if peak > 0.0 { (v / peak * plot_h as f64).round() as usize } else { 0 };
            writeln!(
                svg,
                r#"<rect x="{}" y="{}" width="{bar}" height="{h}" fill="{color}"/>"#,
                x0 + j * bar,
                base - h
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{name}</text>"#,
            x0 + bar,
            base + 16
        )
        .unwrap();
    }
    writeln!(
        svg,
        r##"<text x="60" y="{}" font-family="sans-serif" font-size="11" fill="#d62728">original</text>"##,
        base + 40
    )
    .unwrap();
    writeln!(
        svg,
        r##"<text x="140" y="{}" font-family="sans-serif" font-size="11" fill="#1f77b4">counter</text>"##,
        base + 40
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

fn stat_json(s: &StatResult) -> Value {
    json!({
        "N": s.n,
        "mean_d": s.mean_d,
        "stddev_d": s.stddev_d,
        "t": if s.t_stat.is_finite() { json!(s.t_stat) } else { json!(if s.t_stat > 0.0 { "inf" } else { "-inf" }) },
        "p": s.p_value,
        "degenerate": s.degenerate,
    })
}

fn heads_json(heads: &[(usize, usize)]) -> Value {
    Value::Array(heads.iter().map(|(l, h)| json!([l + 1, h + 1])).collect())
}

fn group_json(g: &Option<GroupStat>) -> Value {
    match g {
        None => Value::Null,
        Some(g) => {
            let mut v = stat_json(&g.stat);
            v["heads"] = heads_json(&g.heads);
            v["mean_w_orig"] = json!(g.mean_w_orig);
            v["mean_w_counter"] = json!(g.mean_w_counter);
            v
        }
    }
}

pub fn lab_report_json(report: &LabReport) -> Value {
    let heads: Vec<Value> = report
        .heads
        .iter()
        .map(|h| {
            let mut v = stat_json(&h.stat);
            v["layer"] = json!(h.layer + 1);
            v["head"] = json!(h.head + 1);
            v
        })
        .collect();
    json!({
        "seed": report.options.seed,
        "pairs": report.options.pairs,
        "aggregation": match report.options.aggregation {
            crate::lab::GroupAggregation::SentenceMean => "sentence-mean",
            crate::lab::GroupAggregation::Pooled => "pooled",
        },
        "heads": heads,
        "groups": {
            "biased": group_json(&report.biased),
            "regular": group_json(&report.regular),
        },
    })
}

/// One row per (pair, head) with both attention values and d.
pub fn lab_samples_csv(report: &LabReport) -> String {
    let t = &report.table;
    let mut out = String::from("pair,sentence,layer,head,w_orig,w_counter,d,degenerate\n");
    for (p, pair) in report.pairs.iter().enumerate() {
        for l in 0..t.layers {
            for h in 0..t.heads {
                let (o, c) = t.w(p, l, h);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    p + 1,
                    pair.sentence + 1,
                    l + 1,
                    h + 1,
                    o,
                    c,
                    o - c,
                    t.is_degenerate(p, l, h)
                )
                .unwrap();
            }
        }
    }
    out
}

pub fn pairs_csv(report: &LabReport) -> String {
    let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
    let mut out = String::from("pair,sentence,original,counter\n");
    for (p, pair) in report.pairs.iter().enumerate() {
        writeln!(out, "{},{},{},{}", p + 1, pair.sentence + 1, quote(&pair.original), quote(&pair.counter)).unwrap();
    }
    out
}

/// Token and normalized attention from the target word, `excluded` for
/// dropped columns.
pub fn attention_edges_csv(edges: &[(String, Option<f64>)]) -> String {
    let mut out = String::from("position,token,normalized_score\n");
    for (i, (tok, v)) in edges.iter().enumerate() {
        let tok = format!("\"{}\"", tok.replace('"', "\"\""));
        match v {
            Some(v) => writeln!(out, "{},{tok},{v}", i + 1).unwrap(),
            None => writeln!(out, "{},{tok},excluded", i + 1).unwrap(),
        }
    }
    out
}

pub fn partition_json(p: &HeadPartition) -> Value {
    json!({ "biased": heads_json(&p.biased), "regular": heads_json(&p.regular) })
}

pub fn eval_json(rows: &[EvalReport]) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| {
                json!({
                    "strategy": r.strategy.to_string(),
                    "masked_heads": heads_json(&r.masked),
                    "seat": r.seat,
                    r.metric: r.perplexity,
                    "tokens": r.tokens,
                })
            })
            .collect(),
    )
}

/// Aligned text table: strategy, masked count, SEAT, perplexity.
pub fn eval_table(rows: &[EvalReport]) -> String {
    let metric = rows.first().map_or("pppl", |r| r.metric).to_uppercase();
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.strategy.to_string(),
                r.masked.len().to_string(),
                format!("{:.4}", r.seat),
                format!("{:.4}", r.perplexity),
            ]
        })
        .collect();
    let header = ["strategy".to_string(), "masked".into(), "SEAT".into(), metric];
    let widths: Vec<usize> = (0..4)
        .map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap())
        .collect();
    let line = |c: &[String; 4]| {
        format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
            c[0],
            c[1],
            c[2],
            c[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        )
    };
    let mut out = line(&header);
    for c in &cells {
        out.push_str(&line(c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips() {
        let map = BiasScoreMap::new(2, 3, vec![0.1, -2.5e-7, 3.0, 0.0, 1.0 / 3.0, -1.0]).unwrap();
        let csv = bias_scores_csv(&map);
        assert!(csv.starts_with("layer,head,bias_score\n1,1,0.1\n"));
        assert_eq!(parse_bias_scores_csv(&csv).unwrap(), map);
    }

    #[test]
    fn incomplete_csv_is_rejected() {
        assert!(parse_bias_scores_csv("layer,head,bias_score\n1,1,0.5\n2,2,0.1\n").is_err());
    }

    #[test]
    fn all_zero_heatmap_is_white() {
        let svg = heatmap_svg(&BiasScoreMap::new(2, 2, vec![0.0f64; 4]).unwrap());
        assert_eq!(svg.matches("fill=\"#ffffff\"").count(), 4);
    }

    #[test]
    fn single_positive_score_shades_one_cell() {
        let svg = heatmap_svg(&BiasScoreMap::new(2, 2, vec![-1.0f64, 0.0, 0.0, 0.7]).unwrap());
        assert_eq!(svg.matches("fill=\"#ff0000\"").count(), 1);
        assert_eq!(svg.matches("fill=\"#ffffff\"").count(), 3);
        assert!(svg.contains(">2-2<"));
    }

    #[test]
    fn histogram_counts_every_head() {
        let map = BiasScoreMap::new(1, 3, vec![0.0f64, 1.0, 1.0]).unwrap();
        let csv = histogram_csv(&map);
        assert_eq!(csv.lines().count(), HISTOGRAM_BINS + 1);
        let total: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 3);
        assert!(csv.lines().last().unwrap().ends_with(",2"));
    }
}
