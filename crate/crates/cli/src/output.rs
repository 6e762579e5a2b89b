//! Metrics CSV and a minimal line-chart SVG.

use std::fmt::Write as _;

use fal_core::data::format_f64;
use fal_core::federation::RoundRecord;

const BASE_COLUMNS: &str = "round,adv_loss,clean_loss,train_acc,test_acc,dist_init_2inf,delta_u_fro";
const AUDIT_COLUMNS: &str = ",fl_gap_21,coupling_gap_21,flip_count";

/// One row per round; audit columns appear when `audits` is set and are
/// blank on rounds without an audit.
pub fn metrics_csv(records: &[RoundRecord], audits: bool) -> String {
    let mut out = String::from(BASE_COLUMNS);
    if audits {
        out.push_str(AUDIT_COLUMNS);
    }
    out.push('\n');
    for r in records {
        let test = r.test_acc.map(format_f64).unwrap_or_default();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            format_f64(r.adv_loss),
            format_f64(r.clean_loss),
            format_f64(r.train_acc),
            test,
            format_f64(r.dist_init_2inf),
            format_f64(r.delta_u_fro)
        );
        if audits {
            match &r.grad {
                Some(g) => {
                    let _ = write!(
                        out,
                        ",{},{},{}",
                        format_f64(g.fl_gap_21),
                        format_f64(g.coupling_gap_21),
                        g.flip_count
                    );
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    dashed: bool,
    values: Vec<f64>,
}

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;

fn nice_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn panel(out: &mut String, title: &str, top: f64, rounds: usize, series: &[Series]) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let (lo, hi) = nice_range(series.iter().flat_map(|s| s.values.iter().copied()));
    let x_max = rounds.saturating_sub(1).max(1) as f64;
    let px = |t: f64| MARGIN_LEFT + plot_w * t / x_max;
    let py = |v: f64| top + MARGIN_TOP + plot_h * (1.0 - (v - lo) / (hi - lo));

    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{title}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        top + 18.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        MARGIN_LEFT,
        top + MARGIN_TOP,
        plot_w,
        plot_h
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.3}</text>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    for k in 0..=4 {
        let t = x_max * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{:.0}</text>"#,
            px(t),
            top + MARGIN_TOP + plot_h + 16.0,
            t
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">round</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        top + PANEL_HEIGHT - 6.0
    );

    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(t, v)| format!("{:.2},{:.2}", px(t as f64), py(*v)))
            .collect();
        if !pts.is_empty() {
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                s.color,
                pts.join(" ")
            );
        }
        let ly = top + MARGIN_TOP + 14.0 + 18.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w + 10.0;
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 24.0,
            s.color,
            lx + 30.0,
            ly + 4.0,
            s.label
        );
    }
}

/// Loss and accuracy curves against the round index. The output depends
/// only on `records`.
pub fn curves_svg(records: &[RoundRecord]) -> String {
    let col = |f: fn(&RoundRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{:.0}" viewBox="0 0 {WIDTH:.0} {:.0}" font-family="sans-serif">"#,
        2.0 * PANEL_HEIGHT,
        2.0 * PANEL_HEIGHT
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    panel(
        &mut out,
        "loss",
        0.0,
        records.len(),
        &[
            Series {
                label: "adversarial",
                color: "#1f77b4",
                dashed: false,
                values: col(|r| r.adv_loss),
            },
            Series {
                label: "clean",
                color: "#d62728",
                dashed: true,
                values: col(|r| r.clean_loss),
            },
        ],
    );
    panel(
        &mut out,
        "accuracy",
        PANEL_HEIGHT,
        records.len(),
        &[
            Series {
                label: "train",
                color: "#2ca02c",
                dashed: false,
                values: col(|r| r.train_acc),
            },
            Series {
                label: "test",
                color: "#9467bd",
                dashed: true,
                values: col(|r| r.test_acc.unwrap_or(f64::NAN)),
            },
        ],
    );
    out.push_str("</svg>\n");
    out
}
