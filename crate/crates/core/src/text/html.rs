//! Lenient HTML to plain text.

/// Tags whose boundaries separate words.
const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "br", "dd", "div", "dl", "dt", "figcaption",
    "figure", "footer", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "img", "li", "ol",
    "p", "pre", "section", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul",
];

/// Strip tags, decode entities and collapse whitespace.
///
/// Block-level tags become a single space; inline tags vanish so that
/// `foo<em>bar</em>` stays one word. `<code>` contents are kept as text.
/// A `<` that never closes is kept literally.
pub fn strip_html(body: &str) -> String {
    let mut raw = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('<') {
        raw.push_str(&rest[..open]);
        let after = &rest[open..];
        if let Some(stripped) = after.strip_prefix("<!--") {
            match stripped.find("-->") {
                Some(end) => {
                    raw.push(' ');
                    rest = &stripped[end + 3..];
                }
                None => rest = "",
            }
            continue;
        }
        match after.find('>') {
            Some(close) => {
                if is_block_tag(&after[1..close]) {
                    raw.push(' ');
                }
                rest = &after[close + 1..];
            }
            None => {
                raw.push_str(after);
                rest = "";
            }
        }
    }
    raw.push_str(rest);

    let decoded = html_escape::decode_html_entities(&raw);
    let mut out = String::with_capacity(decoded.len());
    for word in decoded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn is_block_tag(inner: &str) -> bool {
    let name: String = inner
        .trim_start_matches('/')
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    BLOCK_TAGS.contains(&name.as_str())
}
