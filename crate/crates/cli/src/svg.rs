//! Minimal stepped-line rendering of Kaplan–Meier curves.

use std::fmt::Write;

use dcsm::metrics::KMCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn km_plot(curves: &[(usize, KMCurve)]) -> String {
    let tmax = curves
        .iter()
        .flat_map(|(_, c)| c.event_times.last().copied())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |t: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * t / tmax;
    let y = |s: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * s;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{:.2},{:.2} V{:.2} H{:.2}" stroke="black" fill="none"/>"#,
        x(0.0),
        y(1.0),
        y(0.0),
        x(tmax)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">time</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">survival</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, (k, c)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = format!("M{:.2},{:.2}", x(0.0), y(1.0));
        for (t, s) in c.event_times.iter().zip(&c.survival) {
            let _ = write!(d, " H{:.2} V{:.2}", x(*t), y(*s));
        }
        let _ = writeln!(
            out,
            r#"<path d="{d}" stroke="{color}" stroke-width="1.5" fill="none"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{color}">cluster {k}</text>"#,
            WIDTH - MARGIN - 70.0,
            MARGIN + 16.0 * i as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_path_per_curve() {
        let c = dcsm::metrics::kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        let doc = km_plot(&[(0, c.clone()), (2, c)]);
        assert!(doc.starts_with("<svg"));
        assert!(doc.trim_end().ends_with("</svg>"));
        assert_eq!(doc.matches("stroke-width").count(), 2);
        assert!(doc.contains("cluster 2"));
    }
}
