//! Deterministic scatter-plot SVG for 2D point clouds: fixed viewport,
//! one colored layer per cloud, and a legend. Output bytes depend only on
//! the input points and labels.

use maniflow::RealMatrix;

use crate::artifact::{CliResult, Failure};

/// Square viewport side in pixels.
pub const VIEW: f64 = 800.0;
const MARGIN: f64 = 60.0;
const POINT_RADIUS: f64 = 2.5;
const PALETTE: [&str; 6] = [
    "#4878a8", "#d65f5f", "#59a14f", "#b07aa1", "#e49444", "#76b7b2",
];

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders labeled 2D clouds into an SVG document. Every nonempty cloud
/// must have exactly two columns; empty clouds are legal and contribute
/// only a legend entry.
pub fn render_scatter(layers: &[(String, RealMatrix)]) -> CliResult<String> {
    for (label, cloud) in layers {
        if cloud.rows() > 0 && cloud.cols() != 2 {
            return Err(Failure::Config(format!(
                "svg scatter needs 2D points, cloud {label:?} has {} columns",
                cloud.cols()
            )));
        }
    }

    // Shared bounds over all layers; degenerate spans fall back to a unit
    // half-width so a lone point lands at the viewport center.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (_, cloud) in layers {
        for row in cloud.iter_rows() {
            for k in 0..2 {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
    }
    if lo[0] > hi[0] {
        lo = [-1.0; 2];
        hi = [1.0; 2];
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(2.0 * f64::EPSILON);
    let span = if span < 1e-12 { 2.0 } else { span * 1.05 };
    let scale = (VIEW - 2.0 * MARGIN) / span;
    let map = |x: f64, y: f64| -> (f64, f64) {
        (
            VIEW / 2.0 + (x - center[0]) * scale,
            VIEW / 2.0 - (y - center[1]) * scale,
        )
    };

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{VIEW:.0}\" height=\"{VIEW:.0}\" \
         viewBox=\"0 0 {VIEW:.0} {VIEW:.0}\">\n"
    ));
    out.push_str(&format!(
        "  <rect width=\"{VIEW:.0}\" height=\"{VIEW:.0}\" fill=\"#ffffff\"/>\n"
    ));
    for (i, (_, cloud)) in layers.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        out.push_str(&format!(
            "  <g fill=\"{color}\" fill-opacity=\"0.55\">\n"
        ));
        for row in cloud.iter_rows() {
            let (cx, cy) = map(row[0], row[1]);
            out.push_str(&format!(
                "    <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{POINT_RADIUS}\"/>\n"
            ));
        }
        out.push_str("  </g>\n");
    }
    for (i, (label, _)) in layers.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = 34.0 + 22.0 * i as f64;
        out.push_str(&format!(
            "  <circle cx=\"26\" cy=\"{y:.0}\" r=\"5\" fill=\"{color}\"/>\n"
        ));
        out.push_str(&format!(
            "  <text x=\"38\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"14\" \
             fill=\"#333333\">{}</text>\n",
            y + 5.0,
            escape_xml(label)
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use maniflow::linalg::Matrix;

    #[test]
    fn single_origin_point_maps_to_viewport_center() {
        let cloud = Matrix::from_flat(1, 2, vec![0.0, 0.0]);
        let svg = render_scatter(&[("one".to_string(), cloud)]).unwrap();
        assert!(svg.contains("cx=\"400.00\" cy=\"400.00\""), "{svg}");
    }

    #[test]
    fn empty_input_is_a_valid_document() {
        let svg = render_scatter(&[]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        let empty = Matrix::zeros(0, 0);
        let svg = render_scatter(&[("none".to_string(), empty)]).unwrap();
        assert!(svg.contains("none"));
        assert!(!svg.contains("circle cx=\"4"));
    }

    #[test]
    fn output_is_byte_stable_and_rejects_wrong_dim() {
        let a = Matrix::from_flat(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let layers = vec![("a".to_string(), a)];
        assert_eq!(
            render_scatter(&layers).unwrap(),
            render_scatter(&layers).unwrap()
        );
        let bad = Matrix::from_flat(1, 3, vec![0.0, 0.0, 0.0]);
        assert!(render_scatter(&[("bad".to_string(), bad)]).is_err());
    }

    #[test]
    fn labels_are_escaped_and_layers_colored_distinctly() {
        let a = Matrix::from_flat(1, 2, vec![0.0, 0.0]);
        let b = Matrix::from_flat(1, 2, vec![1.0, 1.0]);
        let svg = render_scatter(&[
            ("a<b&c".to_string(), a),
            ("plain".to_string(), b),
        ])
        .unwrap();
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(svg.contains(PALETTE[0]) && svg.contains(PALETTE[1]));
    }
}
