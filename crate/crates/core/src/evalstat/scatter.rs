use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{r2_fitted, r2_identity, EvalSeries};
use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterData {
    pub model: String,
    /// (truth, predicted)
    pub points: Vec<(f64, f64)>,
    /// Endpoints of the `predicted = truth` line across the data range.
    pub identity: [(f64, f64); 2],
    pub r2: f64,
    pub r2_fitted: f64,
}

pub fn scatter_data(series: &EvalSeries) -> Result<ScatterData, StatsError> {
    if series.pairs.is_empty() {
        return Err(StatsError::EmptySeries(series.model.clone()));
    }
    let truths = series.truths();
    let preds = series.predictions();
    let points: Vec<(f64, f64)> = truths.iter().copied().zip(preds.iter().copied()).collect();
    let lo = points.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
    Ok(ScatterData {
        model: series.model.clone(),
        points,
        identity: [(lo, lo), (hi, hi)],
        r2: r2_identity(&truths, &preds),
        r2_fitted: r2_fitted(&truths, &preds),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A self-contained SVG: truth on x, predicted on y, dashed identity line.
pub fn render_scatter_svg(data: &ScatterData) -> String {
    const W: f64 = 480.0;
    const H: f64 = 480.0;
    const M: f64 = 56.0;
    let lo = data.identity[0].0.min(0.0);
    let mut hi = data.identity[1].0;
    if hi <= lo {
        hi = lo + 1.0;
    }
    let span = hi - lo;
    let sx = |v: f64| M + (v - lo) / span * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - lo) / span * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, "<!-- larvacount {} -->", crate::VERSION);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.2} {:.2} H{:.2} M{:.2} {:.2} V{:.2}" stroke="black" fill="none"/>"#,
        M,
        H - M,
        W - M,
        M,
        H - M,
        M
    );
    for i in 0..=4 {
        let v = lo + span * f64::from(i) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{:.0}</text>"#,
            sx(v),
            H - M + 16.0,
            v
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{:.0}</text>"#,
            M - 6.0,
            sy(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        sx(lo),
        sy(lo),
        sx(hi),
        sy(hi)
    );
    for &(t, p) in &data.points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" fill-opacity="0.7"/>"#,
            sx(t),
            sy(p)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">truth</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {:.2})">predicted</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" font-size="14" text-anchor="middle">{} (R² = {:.3})</text>"#,
        W / 2.0,
        escape(&data.model),
        data.r2
    );
    s.push_str("</svg>\n");
    s
}
