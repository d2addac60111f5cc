//! Minimal wikitext to plain text conversion.
//!
//! Templates, tables, references, files and categories are dropped; links
//! collapse to their anchor text; headings and list items are removed and
//! leave a paragraph break behind. No template expansion is attempted.

use crate::text::normalize_text;

const DROPPED_TAG_BLOCKS: &[&str] = &["ref", "gallery", "math", "timeline", "score", "references"];
const DROPPED_LINK_NAMESPACES: &[&str] = &["file", "image", "category", "media"];

pub fn strip_wikitext(src: &str) -> String {
    let text = remove_delimited(src, "<!--", "-->");
    let text = remove_tag_blocks(&text);
    let text = drop_nested(&text, "{{", "}}");
    let text = drop_nested(&text, "{|", "|}");
    let text = rewrite_links(&text);
    let text = rewrite_external_links(&text);
    let text = strip_tags(&text);
    let text = text.replace("'''", "").replace("''", "");
    let text = decode_entities(&text);

    let kept: Vec<&str> = text
        .lines()
        .map(|line| {
            let trimmed = line.trim();
            if is_heading(trimmed) || is_list_item(trimmed) || is_magic_word(trimmed) {
                ""
            } else {
                line
            }
        })
        .collect();
    normalize_text(&kept.join("\n"))
}

fn is_heading(line: &str) -> bool {
    line.len() >= 2 && line.starts_with('=') && line.ends_with('=')
}

fn is_list_item(line: &str) -> bool {
    line.starts_with(['*', '#', ';', ':'])
}

fn is_magic_word(line: &str) -> bool {
    line.starts_with("__") && line.ends_with("__") && line.len() > 4
}

fn remove_delimited(src: &str, open: &str, close: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(start) = rest.find(open) {
        out.push_str(&rest[..start]);
        match rest[start + open.len()..].find(close) {
            Some(end) => rest = &rest[start + open.len() + end + close.len()..],
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn remove_tag_blocks(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    'scan: while let Some(lt) = rest.find('<') {
        out.push_str(&rest[..lt]);
        let after = &rest[lt + 1..];
        for tag in DROPPED_TAG_BLOCKS {
            if !starts_with_tag(after, tag) {
                continue;
            }
            let Some(gt) = after.find('>') else { break };
            if after[..gt].ends_with('/') {
                rest = &after[gt + 1..];
                continue 'scan;
            }
            let body = &after[gt + 1..];
            let closing = format!("</{tag}");
            let lower = body.to_ascii_lowercase();
            rest = match lower.find(&closing) {
                Some(end) => match body[end..].find('>') {
                    Some(close_gt) => &body[end + close_gt + 1..],
                    None => "",
                },
                None => "",
            };
            continue 'scan;
        }
        out.push('<');
        rest = after;
    }
    out.push_str(rest);
    out
}

fn starts_with_tag(after_lt: &str, tag: &str) -> bool {
    let n = tag.len();
    after_lt.len() > n
        && after_lt.as_bytes()[..n].eq_ignore_ascii_case(tag.as_bytes())
        && matches!(after_lt.as_bytes()[n], b' ' | b'>' | b'/' | b'\t' | b'\n')
}

/// Drops balanced `open ... close` regions, including nested ones.
fn drop_nested(src: &str, open: &str, close: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut depth = 0usize;
    let mut i = 0;
    let bytes = src.as_bytes();
    let mut copy_from = 0;
    while i < bytes.len() {
        if src[i..].starts_with(open) {
            if depth == 0 {
                out.push_str(&src[copy_from..i]);
            }
            depth += 1;
            i += open.len();
        } else if depth > 0 && src[i..].starts_with(close) {
            depth -= 1;
            i += close.len();
            if depth == 0 {
                copy_from = i;
            }
        } else {
            i += 1;
            while i < bytes.len() && !src.is_char_boundary(i) {
                i += 1;
            }
        }
    }
    if depth == 0 {
        out.push_str(&src[copy_from..]);
    }
    out
}

fn rewrite_links(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(start) = rest.find("[[") {
        out.push_str(&rest[..start]);
        let body_start = start + 2;
        match matching_close(&rest[body_start..]) {
            Some(len) => {
                let inner = &rest[body_start..body_start + len];
                out.push_str(&link_text(inner));
                rest = &rest[body_start + len + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Length of the link body up to its matching `]]`, honoring nested links.
fn matching_close(body: &str) -> Option<usize> {
    let mut depth = 1usize;
    let mut i = 0;
    while i < body.len() {
        if body[i..].starts_with("[[") {
            depth += 1;
            i += 2;
        } else if body[i..].starts_with("]]") {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
            i += 2;
        } else {
            i += body[i..].chars().next().map_or(1, char::len_utf8);
        }
    }
    None
}

fn link_text(inner: &str) -> String {
    let target = inner.split('|').next().unwrap_or("").trim_start_matches(':');
    if let Some((ns, _)) = target.split_once(':') {
        let ns = ns.trim();
        if DROPPED_LINK_NAMESPACES.contains(&ns.to_ascii_lowercase().as_str()) {
            return String::new();
        }
        // Interlanguage links such as [[fr:Paris]].
        if !inner.contains('|')
            && (2..=3).contains(&ns.len())
            && ns.bytes().all(|b| b.is_ascii_lowercase())
        {
            return String::new();
        }
    }
    let anchor = match inner.rfind('|') {
        Some(pipe) => &inner[pipe + 1..],
        None => inner,
    };
    rewrite_links(anchor.trim_start_matches(':'))
}

fn rewrite_external_links(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(start) = rest.find('[') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let is_url = ["http://", "https://", "//", "ftp://"]
            .iter()
            .any(|p| after.starts_with(p));
        match (is_url, after.find(']')) {
            (true, Some(end)) => {
                if let Some((_, label)) = after[..end].split_once(' ') {
                    out.push_str(label.trim());
                }
                rest = &after[end + 1..];
            }
            _ => {
                out.push('[');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn strip_tags(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(lt) = rest.find('<') {
        out.push_str(&rest[..lt]);
        let after = &rest[lt + 1..];
        let looks_like_tag = after
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '/' || c == '!');
        match (looks_like_tag, after.find('>')) {
            (true, Some(gt)) if !after[..gt].contains('\n') || after.starts_with('!') => {
                rest = &after[gt + 1..];
            }
            _ => {
                out.push('<');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entities(src: &str) -> String {
    const ENTITIES: &[(&str, &str)] = &[
        ("&nbsp;", " "),
        ("&ndash;", "\u{2013}"),
        ("&mdash;", "\u{2014}"),
        ("&quot;", "\""),
        ("&apos;", "'"),
        ("&lt;", "<"),
        ("&gt;", ">"),
        ("&amp;", "&"),
    ];
    if !src.contains('&') {
        return src.to_string();
    }
    ENTITIES
        .iter()
        .fold(src.to_string(), |acc, (entity, plain)| acc.replace(entity, plain))
}
