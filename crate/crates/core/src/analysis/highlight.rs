use serde::Serialize;

use crate::encoder::{PrfInput, Vocabulary};

/// One real input token with its normalized attention weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HighlightToken {
    pub token: String,
    pub raw: f64,
    /// `raw` divided by the largest non-special weight.
    pub weight: f64,
    /// `special`, `query`, or `doc{rank}`.
    pub role: String,
}

fn role(pos: usize, input: &PrfInput) -> String {
    if input.query_span.contains(&pos) {
        return "query".into();
    }
    match input.doc_spans.iter().position(|s| s.contains(&pos)) {
        Some(i) => format!("doc{}", i + 1),
        None => "special".into(),
    }
}

pub fn highlight_terms(input: &PrfInput, attn: &[f64], vocab: &Vocabulary) -> Vec<HighlightToken> {
    let real = input.seq.real_len().min(attn.len());
    let roles: Vec<String> = (0..real).map(|p| role(p, input)).collect();
    let max = (0..real).filter(|&p| roles[p] != "special").map(|p| attn[p]).fold(0.0, f64::max);
    (0..real)
        .map(|p| HighlightToken {
            token: vocab.token(input.seq.ids[p]).unwrap_or("[UNK]").to_string(),
            raw: attn[p],
            weight: if max > 0.0 { attn[p] / max } else { 0.0 },
            role: roles[p].clone(),
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static page with each token on a red background whose opacity is its weight.
pub fn highlight_html(items: &[(String, Vec<HighlightToken>)]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>feedback attention</title>\n<style>\n\
         body{font-family:monospace;max-width:60em;margin:2em auto}\n\
         span.t{padding:1px 2px;margin:1px;display:inline-block}\n\
         span.special{color:#888}\n\
         div.q{margin-bottom:1.5em}\n\
         </style></head><body>\n",
    );
    for (qid, tokens) in items {
        out.push_str(&format!("<div class=\"q\"><h3>{}</h3>\n", escape(qid)));
        let mut last_role = "";
        for t in tokens {
            if t.role != last_role && t.role.starts_with("doc") {
                out.push_str(&format!("<br><b>{}:</b> ", t.role));
            }
            last_role = &t.role;
            let alpha = if t.role == "special" { 0.0 } else { t.weight.clamp(0.0, 1.0) };
            out.push_str(&format!(
                "<span class=\"t {}\" style=\"background:rgba(220,0,0,{alpha:.3})\" title=\"{:.4}\">{}</span>",
                if t.role == "special" { "special" } else { "w" },
                t.raw,
                escape(&t.token)
            ));
        }
        out.push_str("\n</div>\n");
    }
    out.push_str("</body></html>\n");
    out
}
