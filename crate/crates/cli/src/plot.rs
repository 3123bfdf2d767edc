//! Minimal SVG line charts of a trace: one panel per signal group, one
//! polyline per channel.

use std::fmt::Write as _;

use hecovert_core::control_sim::{SimTrace, TraceRow};

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 180.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 30.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Panel {
    title: &'static str,
    prefix: &'static str,
    pick: fn(&TraceRow<f64>) -> &[f64],
}

const PANELS: [Panel; 4] = [
    Panel { title: "plant input u", prefix: "u", pick: |r| &r.u },
    Panel { title: "controller input u_c", prefix: "uc", pick: |r| &r.u_c },
    Panel { title: "plant output y", prefix: "y", pick: |r| &r.y },
    Panel { title: "controller output y_c", prefix: "yc", pick: |r| &r.y_c },
];

/// Renders `trace` as an SVG document. Non-finite samples are left out.
pub fn trace_svg(trace: &SimTrace<f64>) -> String {
    let full_h = MARGIN_T + PANELS.len() as f64 * (PANEL_H + MARGIN_T + MARGIN_B);
    let full_w = MARGIN_L + PANEL_W + MARGIN_R;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full_w}" height="{full_h}" viewBox="0 0 {full_w} {full_h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (k_lo, k_hi) = match (trace.rows.first(), trace.rows.last()) {
        (Some(a), Some(b)) => (a.k as f64, (b.k as f64).max(a.k as f64 + 1.0)),
        _ => (0.0, 1.0),
    };
    for (i, panel) in PANELS.iter().enumerate() {
        let top = MARGIN_T + i as f64 * (PANEL_H + MARGIN_T + MARGIN_B);
        draw_panel(&mut svg, trace, panel, top, (k_lo, k_hi));
    }
    svg.push_str("</svg>\n");
    svg
}

fn draw_panel(svg: &mut String, trace: &SimTrace<f64>, panel: &Panel, top: f64, (k_lo, k_hi): (f64, f64)) {
    let channels = trace.rows.first().map_or(0, |r| (panel.pick)(r).len());
    let values = trace.rows.iter().flat_map(|r| (panel.pick)(r).iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo, hi) = (lo - pad, hi + pad);
    let sx = |k: f64| MARGIN_L + (k - k_lo) / (k_hi - k_lo) * PANEL_W;
    let sy = |v: f64| top + (hi - v) / (hi - lo) * PANEL_H;

    let (left, right, bottom) = (MARGIN_L, MARGIN_L + PANEL_W, top + PANEL_H);
    writeln!(svg, r#"<text x="{left}" y="{}" font-size="13">{}</text>"#, top - 8.0, panel.title).unwrap();
    writeln!(svg, r##"<rect x="{left}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##)
        .unwrap();
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let y = sy(v);
        writeln!(svg, r##"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="#444"/>"##, left - 4.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, left - 6.0, y + 4.0).unwrap();
    }
    for t in 0..=5 {
        let k = k_lo + (k_hi - k_lo) * t as f64 / 5.0;
        let x = sx(k);
        writeln!(svg, r##"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="#444"/>"##, bottom + 4.0)
            .unwrap();
        writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{k:.0}</text>"#, bottom + 16.0).unwrap();
    }
    if k_lo <= 0.0 && 0.0 <= k_hi {
        let x = sx(0.0);
        writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{bottom}" stroke="#bbb" stroke-dasharray="3,3"/>"##
        )
        .unwrap();
    }
    for ch in 0..channels {
        let color = PALETTE[ch % PALETTE.len()];
        let points: Vec<String> = trace
            .rows
            .iter()
            .filter_map(|r| {
                let v = (panel.pick)(r)[ch];
                v.is_finite().then(|| format!("{:.2},{:.2}", sx(r.k as f64), sy(v)))
            })
            .collect();
        writeln!(
            svg,
            r#"<polyline class="channel" data-channel="{}{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            panel.prefix,
            ch + 1,
            points.join(" ")
        )
        .unwrap();
        let ly = top + 14.0 + 16.0 * ch as f64;
        writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            right + 10.0,
            right + 30.0
        )
        .unwrap();
        writeln!(svg, r#"<text x="{}" y="{}">{}{}</text>"#, right + 36.0, ly + 4.0, panel.prefix, ch + 1).unwrap();
    }
}
