//! Hand-written SVG charts. Output depends only on the input rows.

use std::fmt::Write;

use oinfo_core::experiments::{AggregateRow, KeyValue, SelectionMethod};
use oinfo_core::{LayerId, Objective};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;

fn color_for_objective(o: Objective) -> &'static str {
    match o {
        Objective::Synergy => "#2b6cb0",
        Objective::Redundancy => "#c53030",
    }
}

fn color_for_method(m: SelectionMethod) -> &'static str {
    match m {
        SelectionMethod::Synergy => "#2b6cb0",
        SelectionMethod::MiMixture => "#2f855a",
        SelectionMethod::MiAnova => "#b7791f",
        SelectionMethod::Random => "#718096",
    }
}

fn header(out: &mut String, width: f64, height: f64) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
}

/// Round-number tick spacing for a span.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

struct Axis {
    lo: f64,
    hi: f64,
    top: f64,
    bottom: f64,
}

impl Axis {
    fn y(&self, v: f64) -> f64 {
        self.bottom - (v - self.lo) / (self.hi - self.lo) * (self.bottom - self.top)
    }

    fn draw(&self, out: &mut String, left: f64, right: f64, fmt_tick: impl Fn(f64) -> String) {
        let step = tick_step(self.hi - self.lo);
        let mut t = (self.lo / step).ceil() * step;
        while t <= self.hi + 1e-12 {
            let y = self.y(t);
            writeln!(
                out,
                r##"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#e2e8f0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                left - 4.0,
                y + 4.0,
                fmt_tick(t)
            )
            .unwrap();
            t += step;
        }
        writeln!(
            out,
            r#"<line x1="{left:.2}" y1="{:.2}" x2="{left:.2}" y2="{:.2}" stroke="black"/>"#,
            self.top, self.bottom
        )
        .unwrap();
    }
}

fn legend(out: &mut String, x: f64, y: f64, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let ex = x + i as f64 * 110.0;
        writeln!(
            out,
            r#"<rect x="{ex:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            y - 9.0,
            ex + 14.0,
            y
        )
        .unwrap();
    }
}

/// Per-layer grouped bars of mean Omega against k. Rows must be keyed by
/// (layer, k, objective).
pub fn profile_chart(rows: &[AggregateRow]) -> String {
    let entries: Vec<(LayerId, usize, Objective, f64)> = rows
        .iter()
        .filter_map(|r| match r.keys.as_slice() {
            [KeyValue::Layer(l), KeyValue::K(k), KeyValue::Objective(o)] => Some((*l, *k, *o, r.mean)),
            _ => None,
        })
        .collect();
    let max_abs = entries
        .iter()
        .map(|e| e.3.abs())
        .fold(0.0f64, f64::max)
        .max(1e-3);
    let ks: Vec<usize> = {
        let mut v: Vec<usize> = entries.iter().map(|e| e.1).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let width = 3.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + 20.0;
    let mut out = String::new();
    header(&mut out, width, height);
    let axis = Axis {
        lo: -max_abs * 1.05,
        hi: max_abs * 1.05,
        top: MARGIN,
        bottom: MARGIN + PANEL_H,
    };
    for (p, layer) in LayerId::ALL.iter().enumerate() {
        let left = MARGIN + p as f64 * (PANEL_W + MARGIN);
        let right = left + PANEL_W;
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{layer}</text>"#,
            (left + right) / 2.0,
            MARGIN - 12.0
        )
        .unwrap();
        axis.draw(&mut out, left, right, |t| format!("{t:.2}"));
        let zero = axis.y(0.0);
        writeln!(
            out,
            r#"<line x1="{left:.2}" y1="{zero:.2}" x2="{right:.2}" y2="{zero:.2}" stroke="black"/>"#
        )
        .unwrap();
        let slot = PANEL_W / ks.len().max(1) as f64;
        for (i, k) in ks.iter().enumerate() {
            let cx = left + (i as f64 + 0.5) * slot;
            for (j, obj) in Objective::BOTH.iter().enumerate() {
                let Some(e) = entries.iter().find(|e| e.0 == *layer && e.1 == *k && e.2 == *obj) else {
                    continue;
                };
                let bw = slot * 0.4;
                let x = cx - bw + j as f64 * bw;
                let y = axis.y(e.3);
                let (top, h) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
                writeln!(
                    out,
                    r#"<rect x="{x:.2}" y="{top:.2}" width="{bw:.2}" height="{h:.2}" fill="{}"/>"#,
                    color_for_objective(*obj)
                )
                .unwrap();
            }
            writeln!(
                out,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#,
                axis.bottom + 14.0
            )
            .unwrap();
        }
    }
    writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">k (neurons)</text>"#,
        width / 2.0,
        axis.bottom + 30.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="12" y="{:.2}" transform="rotate(-90 12 {:.2})" text-anchor="middle">Omega (nats)</text>"#,
        (axis.top + axis.bottom) / 2.0,
        (axis.top + axis.bottom) / 2.0
    )
    .unwrap();
    let legend_entries: Vec<(String, &str)> = Objective::BOTH
        .iter()
        .map(|o| (o.to_string(), color_for_objective(*o)))
        .collect();
    legend(&mut out, MARGIN, height - 8.0, &legend_entries);
    out.push_str("</svg>\n");
    out
}

/// Mean test accuracy against k, one line per method. Rows must be keyed by
/// (method, k).
pub fn retrain_chart(rows: &[AggregateRow]) -> String {
    let entries: Vec<(SelectionMethod, usize, f64)> = rows
        .iter()
        .filter_map(|r| match r.keys.as_slice() {
            [KeyValue::Method(m), KeyValue::K(k)] => Some((*m, *k, r.mean)),
            _ => None,
        })
        .collect();
    let (k_lo, k_hi) = entries
        .iter()
        .fold((usize::MAX, 0), |(lo, hi), e| (lo.min(e.1), hi.max(e.1)));
    let (a_lo, a_hi) = entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.2), hi.max(e.2)));
    let pad = ((a_hi - a_lo) * 0.1).max(0.005);
    let axis = Axis {
        lo: (a_lo - pad).max(0.0),
        hi: (a_hi + pad).min(1.0),
        top: MARGIN,
        bottom: MARGIN + PANEL_H,
    };
    let left = MARGIN + 10.0;
    let right = left + 1.5 * PANEL_W;
    let width = right + MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + 20.0;
    let x_of = |k: usize| {
        if k_hi == k_lo {
            (left + right) / 2.0
        } else {
            left + (k - k_lo) as f64 / (k_hi - k_lo) as f64 * (right - left)
        }
    };
    let mut out = String::new();
    header(&mut out, width, height);
    axis.draw(&mut out, left, right, |t| format!("{t:.3}"));
    writeln!(
        out,
        r#"<line x1="{left:.2}" y1="{b:.2}" x2="{right:.2}" y2="{b:.2}" stroke="black"/>"#,
        b = axis.bottom
    )
    .unwrap();
    let mut ks: Vec<usize> = entries.iter().map(|e| e.1).collect();
    ks.sort_unstable();
    ks.dedup();
    for k in &ks {
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#,
            x_of(*k),
            axis.bottom + 14.0
        )
        .unwrap();
    }
    let mut legend_entries = Vec::new();
    for method in SelectionMethod::ALL {
        let mut pts: Vec<(usize, f64)> = entries
            .iter()
            .filter(|e| e.0 == method)
            .map(|e| (e.1, e.2))
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by_key(|p| p.0);
        let color = color_for_method(method);
        let path: Vec<String> = pts
            .iter()
            .map(|(k, a)| format!("{:.2},{:.2}", x_of(*k), axis.y(*a)))
            .collect();
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        )
        .unwrap();
        for (k, a) in &pts {
            writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                x_of(*k),
                axis.y(*a)
            )
            .unwrap();
        }
        legend_entries.push((method.to_string(), color));
    }
    writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">k (neurons kept per hidden layer)</text>"#,
        (left + right) / 2.0,
        axis.bottom + 30.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="12" y="{:.2}" transform="rotate(-90 12 {:.2})" text-anchor="middle">test accuracy</text>"#,
        (axis.top + axis.bottom) / 2.0,
        (axis.top + axis.bottom) / 2.0
    )
    .unwrap();
    legend(&mut out, left, height - 8.0, &legend_entries);
    out.push_str("</svg>\n");
    out
}
