//! Small helpers shared by the XML document readers and writers.

use roxmltree::Node;

/// Escapes text content and attribute values.
pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Hand-written query documents commonly repeat the opening tag where the
/// closing tag belongs (`<WindowSize>10<WindowSize>`) and use a bare `<` in
/// filter conditions. Both are rewritten for the listed leaf elements.
pub(crate) fn repair_leaf_elements(doc: &str, leaves: &[&str]) -> String {
    let mut out = doc.to_string();
    for leaf in leaves {
        let open = format!("<{leaf}>");
        let close = format!("</{leaf}>");
        let mut from = 0;
        while let Some(at) = out[from..].find(&open) {
            let body_start = from + at + open.len();
            let mut cursor = body_start;
            loop {
                let Some(rel) = out[cursor..].find('<') else {
                    break;
                };
                let lt = cursor + rel;
                let rest = &out[lt..];
                if rest.starts_with(&close) {
                    cursor = lt + close.len();
                    break;
                }
                if rest.starts_with(&open) {
                    out.replace_range(lt..lt + open.len(), &close);
                    cursor = lt + close.len();
                    break;
                }
                // A `<` that does not start a tag is a comparison operator.
                let starts_tag = rest[1..]
                    .starts_with(|c: char| c.is_ascii_alphabetic() || c == '/' || c == '!');
                if starts_tag {
                    cursor = lt;
                    break;
                }
                out.replace_range(lt..lt + 1, "&lt;");
                cursor = lt + 4;
            }
            from = cursor.max(body_start);
        }
    }
    out
}

pub(crate) fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
}

pub(crate) fn children<'a, 'i: 'a>(
    node: Node<'a, 'i>,
    name: &'a str,
) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    node.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == name)
}

/// Concatenated, trimmed text content of an element.
pub(crate) fn text(node: Node) -> String {
    let mut s = String::new();
    for d in node.descendants().filter(|d| d.is_text()) {
        s.push_str(d.text().unwrap_or_default());
    }
    s.trim().to_string()
}
