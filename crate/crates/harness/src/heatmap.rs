//! Self-contained HTML rendering of a saliency vector over its tokens.

use std::fmt::Write as _;

use mase_core::{Saliency64, TokenSequence};

/// Background colour for a score, scaled by `max |γ|`: red for positive,
/// blue for negative, white for zero.
fn colour(value: f64, scale: f64) -> String {
    let t = if scale > 0.0 {
        (value / scale).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("rgb(255,{fade},{fade})")
    } else {
        format!("rgb({fade},{fade},255)")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A `<div>` with one span per token; `words` overrides the displayed text
/// of each token (ids are shown otherwise).
pub fn heatmap_html(tokens: &TokenSequence, saliency: &Saliency64, words: Option<&[String]>) -> String {
    let scale = saliency.scores.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut s = format!(
        "<div class=\"saliency\" data-method=\"{}\" style=\"font-family:monospace;line-height:2\">\n",
        escape(&saliency.method)
    );
    for (i, (tok, g)) in tokens.tokens().iter().zip(saliency.scores.iter()).enumerate() {
        let text = words
            .and_then(|w| w.get(i))
            .map_or_else(|| tok.to_string(), |w| escape(w));
        writeln!(
            s,
            "  <span title=\"{g:.6e}\" style=\"background:{};padding:2px 4px;margin:1px\">{text}</span>",
            colour(*g, scale)
        )
        .unwrap();
    }
    s.push_str("</div>\n");
    s
}
