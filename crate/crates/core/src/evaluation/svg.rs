//! Self-contained SVG rendering of a DET curve with log-scaled axes.
//! Presentational only; the CSV export is the contract.

use super::metrics::DetCurve;

const FLOOR: f64 = 1e-4;
const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn to_px(rate: f64) -> f64 {
    // log10 scale over [1e-4, 1] -> [0, 1]
    let r = rate.clamp(FLOOR, 1.0);
    (r.log10() + 4.0) / 4.0
}

pub fn det_svg(curve: &DetCurve) -> String {
    let plot = SIZE - 2.0 * MARGIN;
    let x_of = |apcer: f64| MARGIN + to_px(apcer) * plot;
    let y_of = |bpcer: f64| SIZE - MARGIN - to_px(bpcer) * plot;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{plot}\" height=\"{plot}\" \
         fill=\"white\" stroke=\"#333\"/>\n"
    ));
    // decade gridlines and tick labels
    for exp in -4..=0 {
        let rate = 10f64.powi(exp);
        let label = format!("{}%", 100.0 * rate);
        let x = x_of(rate);
        let y = y_of(rate);
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{MARGIN}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            SIZE - MARGIN
        ));
        s.push_str(&format!(
            "<line x1=\"{MARGIN}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            SIZE - MARGIN
        ));
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            SIZE - MARGIN + 16.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>\n",
            MARGIN - 6.0,
            y + 4.0
        ));
    }
    // the curve
    let pts: Vec<String> = curve
        .points()
        .iter()
        .map(|p| format!("{:.2},{:.2}", x_of(p.apcer), y_of(p.bpcer)))
        .collect();
    s.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.8\"/>\n",
        pts.join(" ")
    ));
    // axis titles
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"13\">APCER</text>\n",
        SIZE / 2.0,
        SIZE - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 14 {:.1})\">BPCER</text>\n",
        SIZE / 2.0,
        SIZE / 2.0
    ));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{det_curve, set_from};

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let set = set_from(&[0.1, 0.3, 0.2], &[0.7, 0.9, 0.4]);
        let curve = det_curve(&set).unwrap();
        let a = det_svg(&curve);
        let b = det_svg(&curve);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("<polyline"));
    }
}
