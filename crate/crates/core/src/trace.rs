//! SVG line chart of option probabilities across elimination passes.

use std::fmt::Write as _;

use crate::elimination::EliminationTrace;
use crate::error::{Error, Result};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// The incorrect option with the highest probability before elimination.
pub fn top_incorrect(trace: &EliminationTrace, correct: usize) -> Option<usize> {
    let first = trace.passes.first()?;
    (0..first.probabilities.len())
        .filter(|&i| i != correct)
        .max_by(|&a, &b| first.probabilities[a].total_cmp(&first.probabilities[b]).then(b.cmp(&a)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Plots the correct option against the top incorrect option, one point per
/// pass. The y axis is probability in [0, 1].
pub fn trace_svg(trace: &EliminationTrace, correct: usize, title: &str) -> Result<String> {
    let n_options = trace.passes.first().map_or(0, |p| p.probabilities.len());
    if correct >= n_options {
        return Err(Error::OutOfRange(format!("correct option {correct} with {n_options} options")));
    }
    let wrong = top_incorrect(trace, correct)
        .ok_or_else(|| Error::InvalidArgument("trace needs at least two options".into()))?;
    let passes = trace.passes.len();
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |m: usize| MARGIN + if passes > 1 { plot_w * m as f64 / (passes - 1) as f64 } else { plot_w / 2.0 };
    let y = |p: f64| MARGIN + plot_h * (1.0 - p);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, y(0.0), y(1.0));
    let _ = writeln!(s, r#"<g id="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#, x0 - 6.0, y(tick) + 4.0);
    }
    for m in 0..passes {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{m}</text>"#, x(m), y0 + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">pass</text>"#, WIDTH / 2.0, HEIGHT - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">probability</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(s, "</g>");

    for (id, option, colour, label) in
        [("correct", correct, "#1b7837", "correct"), ("top-incorrect", wrong, "#b2182b", "top incorrect")]
    {
        let points: Vec<String> = trace
            .passes
            .iter()
            .enumerate()
            .map(|(m, p)| format!("{:.2},{:.2}", x(m), y(p.probabilities[option])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline id="{id}" data-option="{option}" fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = if id == "correct" { MARGIN - 12.0 } else { MARGIN - 0.0 };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{colour}">{label} (option {option})</text>"#,
            x1 - 110.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elimination::PassTrace;

    fn trace(rows: &[[f64; 4]]) -> EliminationTrace {
        EliminationTrace {
            passes: rows
                .iter()
                .enumerate()
                .map(|(pass, p)| PassTrace { pass, probabilities: p.to_vec(), mean_e: None, mean_s: None, beta: None })
                .collect(),
        }
    }

    #[test]
    fn picks_top_incorrect_at_pass_zero() {
        let t = trace(&[[0.3, 0.4, 0.2, 0.1], [0.5, 0.1, 0.3, 0.1]]);
        assert_eq!(top_incorrect(&t, 0), Some(1));
        assert_eq!(top_incorrect(&t, 1), Some(0));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let t = trace(&[[0.25; 4]]);
        assert_eq!(top_incorrect(&t, 0), Some(1));
    }

    #[test]
    fn two_polylines_with_one_point_per_pass() {
        let t = trace(&[[0.3, 0.4, 0.2, 0.1], [0.4, 0.3, 0.2, 0.1], [0.6, 0.2, 0.1, 0.1]]);
        let svg = trace_svg(&t, 0, "q <1>").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 3);
        assert!(svg.contains("q &lt;1&gt;"));
        assert!(trace_svg(&t, 4, "").is_err());
    }
}
