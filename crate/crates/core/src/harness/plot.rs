//! Static SVG line charts for error and difference profiles.
//!
//! The plotted series live in a group carrying an affine transform from data
//! coordinates to pixels, so CI band vertices are the profile's ci columns
//! verbatim and the byte output is deterministic for fixed inputs.

use crate::error::{CoreError, Result};
use crate::eval::{DifferenceProfile, ErrorProfile};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

struct Series<'a> {
    label: String,
    xs: &'a [usize],
    mean: &'a [f64],
    lo: &'a [f64],
    hi: &'a [f64],
}

/// Render one or more error profiles (shared context lengths) as mean lines
/// with shaded 99% CI bands.
pub fn render_profiles_svg(profiles: &[&ErrorProfile]) -> Result<String> {
    if profiles.is_empty() {
        return Err(CoreError::InvalidArgument("no profiles to plot".into()));
    }
    let first = &profiles[0].context_indices;
    for p in profiles {
        if &p.context_indices != first {
            return Err(CoreError::Eval(
                "profiles measure different context lengths".into(),
            ));
        }
    }
    let series: Vec<Series> = profiles
        .iter()
        .map(|p| Series {
            label: p.predictor.clone(),
            xs: &p.context_indices,
            mean: &p.mean_sq_err,
            lo: &p.ci_low,
            hi: &p.ci_high,
        })
        .collect();
    Ok(render(&series, "context length", "mean squared error"))
}

pub fn render_difference_svg(d: &DifferenceProfile) -> String {
    let series = [Series {
        label: format!("{} minus {}", d.predictor_a, d.predictor_b),
        xs: &d.context_indices,
        mean: &d.mean_diff,
        lo: &d.ci_low,
        hi: &d.ci_high,
    }];
    render(&series, "context length", "squared-error difference")
}

fn render(series: &[Series], x_label: &str, y_label: &str) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &x in s.xs {
            x_min = x_min.min(x as f64);
            x_max = x_max.max(x as f64);
        }
        for (&lo, &hi) in s.lo.iter().zip(s.hi) {
            y_min = y_min.min(lo);
            y_max = y_max.max(hi);
        }
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    if y_max <= y_min {
        // Flat profile: a horizontal band one unit tall.
        y_max = y_min + 0.5;
        y_min -= 0.5;
    }

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = plot_w / (x_max - x_min);
    let sy = plot_h / (y_max - y_min);
    // Data -> pixels: translate then scale with a y flip.
    let tx = MARGIN_L - x_min * sx;
    let ty = MARGIN_T + y_max * sy;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333333\"/>\n"
    ));

    // Axis ticks and labels (pixel space).
    for t in 0..=4 {
        let fx = t as f64 / 4.0;
        let x_data = x_min + fx * (x_max - x_min);
        let px = MARGIN_L + fx * plot_w;
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#333333\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            trim_float(x_data)
        ));
        let y_data = y_min + fx * (y_max - y_min);
        let py = HEIGHT - MARGIN_B - fx * plot_h;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{MARGIN_L}\" y2=\"{py}\" stroke=\"#333333\"/>\n",
            MARGIN_L - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            py + 4.0,
            trim_float(y_data)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    // Data-space group; band/line vertices are raw profile values.
    svg.push_str(&format!(
        "<g transform=\"translate({tx} {ty}) scale({sx} -{sy})\">\n"
    ));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band = String::new();
        for (&x, &lo) in s.xs.iter().zip(s.lo) {
            band.push_str(&format!("{x},{lo} "));
        }
        for (&x, &hi) in s.xs.iter().zip(s.hi).rev() {
            band.push_str(&format!("{x},{hi} "));
        }
        svg.push_str(&format!(
            "<polygon class=\"ci-band\" points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
            band.trim_end()
        ));
        let mut line = String::new();
        for (&x, &m) in s.xs.iter().zip(s.mean) {
            line.push_str(&format!("{x},{m} "));
        }
        svg.push_str(&format!(
            "<polyline class=\"mean-line\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" vector-effect=\"non-scaling-stroke\"/>\n",
            line.trim_end()
        ));
    }
    svg.push_str("</g>\n");

    // Legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_T + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            MARGIN_L + 8.0,
            y - 9.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" font-size=\"12\">{}</text>\n",
            MARGIN_L + 22.0,
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn trim_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v:.4}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_profile() -> ErrorProfile {
        ErrorProfile {
            task: "linear".to_string(),
            predictor: "zero".to_string(),
            checkpoint_step: None,
            context_indices: (0..5).collect(),
            mean_sq_err: vec![2.0; 5],
            ci_low: vec![1.75; 5],
            ci_high: vec![2.25; 5],
            n_prompts: 100,
        }
    }

    #[test]
    fn flat_profile_renders_a_horizontal_band() {
        let svg = render_profiles_svg(&[&flat_profile()]).unwrap();
        assert!(svg.contains("polygon"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("0,2 1,2 2,2 3,2 4,2"));
    }

    #[test]
    fn identical_inputs_render_identical_bytes() {
        let p = flat_profile();
        let a = render_profiles_svg(&[&p]).unwrap();
        let b = render_profiles_svg(&[&p]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ci_band_vertices_are_the_ci_columns_verbatim() {
        let mut p = flat_profile();
        p.ci_low = vec![0.125, 0.25, 0.375, 0.5, 0.625];
        p.ci_high = vec![3.5, 3.25, 3.0, 2.75, 2.5];
        let svg = render_profiles_svg(&[&p]).unwrap();
        let mut expected = String::new();
        for (x, lo) in p.context_indices.iter().zip(&p.ci_low) {
            expected.push_str(&format!("{x},{lo} "));
        }
        for (x, hi) in p.context_indices.iter().zip(&p.ci_high).rev() {
            expected.push_str(&format!("{x},{hi} "));
        }
        assert!(
            svg.contains(expected.trim_end()),
            "band vertices must pass the ci columns through unchanged"
        );
    }

    #[test]
    fn mismatched_context_lengths_are_rejected() {
        let a = flat_profile();
        let mut b = flat_profile();
        b.context_indices = (0..4).collect();
        b.mean_sq_err.truncate(4);
        b.ci_low.truncate(4);
        b.ci_high.truncate(4);
        assert!(render_profiles_svg(&[&a, &b]).is_err());
    }
}
