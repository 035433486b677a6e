//! Minimal scatter-plot SVG writer for the probability-probability
//! comparisons: log-log axes, one marker per function, the x = y guide, the
//! 90% probability boundary, and an error-count colour scale.

/// One plotted function.
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    /// Errors against the truth, if known; drives the colour.
    pub errors: Option<u32>,
}

pub struct ScatterPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<ScatterPoint>,
    /// log10 of the 90% boundary of the x-side table, if known.
    pub boundary_x: Option<f64>,
}

const W: f64 = 640.0;
const H: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_B: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_R: f64 = 30.0;

fn colour(errors: Option<u32>, max_errors: u32) -> String {
    match errors {
        None => "#888888".to_string(),
        Some(e) => {
            let t = if max_errors == 0 {
                0.0
            } else {
                e as f64 / max_errors as f64
            };
            let r = (40.0 + 215.0 * t) as u8;
            let g = (60.0 + 40.0 * (1.0 - t)) as u8;
            let b = (220.0 * (1.0 - t) + 30.0) as u8;
            format!("#{r:02x}{g:02x}{b:02x}")
        }
    }
}

impl ScatterPlot {
    pub fn render(&self) -> String {
        let xs: Vec<f64> = self.points.iter().map(|p| p.x.log10()).collect();
        let ys: Vec<f64> = self.points.iter().map(|p| p.y.log10()).collect();
        let lo = xs
            .iter()
            .chain(&ys)
            .cloned()
            .fold(-1.0f64, f64::min)
            .floor();
        let hi = 0.0f64;
        let span = (hi - lo).max(1.0);
        let px = |v: f64| MARGIN_L + (v - lo) / span * (W - MARGIN_L - MARGIN_R);
        let py = |v: f64| H - MARGIN_B - (v - lo) / span * (H - MARGIN_T - MARGIN_B);
        let max_errors = self
            .points
            .iter()
            .filter_map(|p| p.errors)
            .max()
            .unwrap_or(0);

        let mut s = String::new();
        s.push_str(r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        s.push('\n');
        s.push_str(&format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        ));
        s.push('\n');
        s.push_str(&format!(
            r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
        ));
        s.push('\n');
        s.push_str(&format!(
            r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        ));
        s.push('\n');

        // Axes box and decade ticks.
        s.push_str(&format!(
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            W - MARGIN_L - MARGIN_R,
            H - MARGIN_T - MARGIN_B
        ));
        s.push('\n');
        let mut tick = lo;
        while tick <= hi + 1e-9 {
            let x = px(tick);
            let y = py(tick);
            s.push_str(&format!(
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
                H - MARGIN_B,
                H - MARGIN_B + 6.0
            ));
            s.push_str(&format!(
                r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">1e{tick:.0}</text>"#,
                H - MARGIN_B + 20.0
            ));
            s.push_str(&format!(
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{MARGIN_L}" y2="{y:.1}" stroke="black"/>"#,
                MARGIN_L - 6.0
            ));
            s.push_str(&format!(
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end" font-family="sans-serif">1e{tick:.0}</text>"#,
                MARGIN_L - 9.0,
                y + 4.0
            ));
            s.push('\n');
            tick += 1.0;
        }
        s.push_str(&format!(
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            (MARGIN_L + W - MARGIN_R) / 2.0,
            H - 14.0,
            escape(&self.x_label)
        ));
        s.push('\n');
        s.push_str(&format!(
            r#"<text x="18" y="{:.1}" font-size="13" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (MARGIN_T + H - MARGIN_B) / 2.0,
            (MARGIN_T + H - MARGIN_B) / 2.0,
            escape(&self.y_label)
        ));
        s.push('\n');

        // x = y guide.
        s.push_str(&format!(
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999999" stroke-dasharray="6 4"/>"##,
            px(lo),
            py(lo),
            px(hi),
            py(hi)
        ));
        s.push('\n');

        // 90% boundary of the x-side distribution.
        if let Some(b) = self.boundary_x {
            let x = px(b);
            s.push_str(&format!(
                r##"<line x1="{x:.1}" y1="{MARGIN_T}" x2="{x:.1}" y2="{:.1}" stroke="#3366cc" stroke-dasharray="2 4"/>"##,
                H - MARGIN_B
            ));
            s.push('\n');
        }

        for p in &self.points {
            s.push_str(&format!(
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.2" fill="{}" fill-opacity="0.75"/>"#,
                px(p.x.log10()),
                py(p.y.log10()),
                colour(p.errors, max_errors)
            ));
            s.push('\n');
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_marker_per_point() {
        let plot = ScatterPlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            points: vec![
                ScatterPoint { x: 0.5, y: 0.4, errors: Some(1) },
                ScatterPoint { x: 0.01, y: 0.02, errors: Some(3) },
                ScatterPoint { x: 1e-4, y: 1e-3, errors: None },
            ],
            boundary_x: Some(-1.0),
        };
        let svg = plot.render();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
