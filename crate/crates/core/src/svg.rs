//! Standalone SVG renderings of PR curves and confusion matrices.

use std::fmt::Write as _;

use crate::eval::{ApResult, ConfusionMatrix};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Precision against recall on a unit square with 10% gridlines.
pub fn pr_curve_svg(result: &ApResult) -> String {
    const SIZE: f64 = 320.0;
    const PAD: f64 = 40.0;
    let total = SIZE + 2.0 * PAD;
    let px = |r: f64| PAD + r * SIZE;
    let py = |p: f64| PAD + (1.0 - p) * SIZE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            px(t), py(0.0), px(t), py(1.0)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            px(0.0), py(t), px(1.0), py(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let mut pts = vec![format!("{:.2},{:.2}", px(0.0), py(1.0))];
    pts.extend(result.points.iter().map(|p| format!("{:.2},{:.2}", px(p.recall), py(p.precision))));
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{} AP={:.3}</text>"#,
        total / 2.0,
        PAD * 0.6,
        escape(&result.class),
        result.ap
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">recall</text>"#,
        total / 2.0,
        total - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">precision</text>"#,
        total / 2.0,
        total / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Column-normalized heat map; x is ground truth, y is prediction.
pub fn confusion_svg(matrix: &ConfusionMatrix, classes: &[String], title: &str) -> String {
    let n = matrix.size();
    let cell = 28.0;
    let label = 90.0;
    let top = 30.0;
    let width = label + n as f64 * cell + 10.0;
    let height = top + n as f64 * cell + label;
    let norm = matrix.normalized();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for (pred, row) in norm.iter().enumerate() {
        for (gt, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="white"><title>{:.3}</title></rect>"#,
                label + gt as f64 * cell,
                top + pred as f64 * cell,
                v
            );
        }
    }
    for (i, name) in classes.iter().enumerate().take(n) {
        let name = escape(name);
        let c = i as f64 * cell + cell / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end" dominant-baseline="middle">{name}</text>"#,
            label - 4.0,
            top + c
        );
        let (x, y) = (label + c, top + n as f64 * cell + 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="10" text-anchor="end" transform="rotate(-60 {x:.1} {y:.1})">{name}</text>"#
        );
    }
    s.push_str("</svg>\n");
    s
}
