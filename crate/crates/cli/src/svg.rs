//! Box plot of per-subject transfer accuracies, one box per variant.
//! Boxes span the quartiles, the solid line marks the median, the diamond
//! marks the mean and dashed whiskers reach the extreme samples.

use std::fmt::Write as _;

use acvae_core::evaluation::BoxPlot;

const BOX_W: f64 = 60.0;
const SLOT_W: f64 = 130.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 50.0;
const PLOT_H: f64 = 300.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn box_plot_svg(boxes: &[BoxPlot], warning: Option<&str>) -> String {
    let banner = if warning.is_some() { 30.0 } else { 0.0 };
    let top = TOP + banner;
    let width = LEFT + SLOT_W * boxes.len().max(1) as f64 + 30.0;
    let height = top + PLOT_H + 60.0;
    // Accuracy axis from 0.3 to 1.0 unless the data reach lower.
    let lo = boxes.iter().map(|b| b.summary.min).fold(0.3f64, f64::min).max(0.0);
    let y = |v: f64| top + PLOT_H * (1.0 - (v - lo) / (1.0 - lo));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">Held-out subject transfer accuracy</text>"#, width / 2.0);
    if let Some(w) = warning {
        let _ = writeln!(s, r##"<text x="{LEFT}" y="{:.1}" fill="#b00000">WARNING: {}</text>"##, TOP + 5.0, escape(w));
    }
    let mut tick = (lo * 10.0).ceil() / 10.0;
    while tick <= 1.0 + 1e-9 {
        let ty = y(tick);
        let _ = writeln!(s, r##"<line x1="{LEFT}" x2="{:.1}" y1="{ty:.1}" y2="{ty:.1}" stroke="#dddddd"/>"##, width - 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}%</text>"#, LEFT - 6.0, ty + 4.0, tick * 100.0);
        tick += 0.1;
    }
    if lo < 0.5 {
        let cy = y(0.5);
        let _ = writeln!(s, r##"<line x1="{LEFT}" x2="{:.1}" y1="{cy:.1}" y2="{cy:.1}" stroke="#888888" stroke-dasharray="2,3"/>"##, width - 20.0);
    }
    for (i, b) in boxes.iter().enumerate() {
        let cx = LEFT + SLOT_W * (i as f64 + 0.5);
        let (x0, x1) = (cx - BOX_W / 2.0, cx + BOX_W / 2.0);
        let q = &b.summary;
        let _ = writeln!(s, r#"<g class="box" data-variant="{}">"#, b.variant);
        for (from, to) in [(q.q3, q.max), (q.q1, q.min)] {
            let _ = writeln!(s, r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black" stroke-dasharray="4,3"/>"#, y(from), y(to));
            let _ = writeln!(s, r#"<line x1="{:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#, cx - 12.0, cx + 12.0, y(to), y(to));
        }
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.1}" y="{:.1}" width="{BOX_W}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            y(q.q3),
            (y(q.q1) - y(q.q3)).max(0.5)
        );
        let _ = writeln!(s, r#"<line x1="{x0:.1}" x2="{x1:.1}" y1="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#, y(q.median), y(q.median));
        let my = y(q.mean);
        let _ = writeln!(s, r#"<path d="M{cx:.1},{:.1} l5,5 l-5,5 l-5,-5 z" fill="black"/>"#, my - 5.0);
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">({}) {}</text>"#, top + PLOT_H + 22.0, i + 1, b.variant);
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">mean {:.1}%</text>"#, top + PLOT_H + 40.0, q.mean * 100.0);
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use acvae_core::evaluation::Summary;
    use acvae_core::models::Variant;

    #[test]
    fn one_group_per_box() {
        let values = vec![0.5, 0.6, 0.7];
        let b = BoxPlot { variant: Variant::Acvae, runs: 1, summary: Summary::from_values(&values).unwrap(), values };
        let svg = box_plot_svg(&[b.clone(), BoxPlot { variant: Variant::Cnn, ..b }], Some("a < b"));
        assert_eq!(svg.matches(r#"class="box""#).count(), 2);
        assert!(svg.contains("WARNING: a &lt; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
