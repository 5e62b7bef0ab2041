//! Shared helpers for the integration tests: the finite-difference
//! tolerance, elementwise comparisons, and a small XML well-formedness
//! checker for the SVG artifacts.

/// True when `a` and `b` agree within relative error 1e-3, with an absolute
/// floor of 1e-6 for near-zero values.
pub fn fd_close(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= 1e-6 || diff <= 1e-3 * a.abs().max(b.abs())
}

/// Largest elementwise absolute difference between two equally long slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Asserts the document is well-formed XML: every open tag is closed in
/// order, attribute quotes are balanced, and the declaration leads.
pub fn assert_well_formed(svg: &str) {
    assert!(svg.starts_with("<?xml"), "missing XML declaration");
    let mut stack: Vec<String> = Vec::new();
    let bytes = svg.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let end = svg[i..].find('>').map(|o| i + o).unwrap_or_else(|| {
            panic!("unterminated tag at byte {i}");
        });
        let tag = &svg[i + 1..end];
        assert_eq!(
            tag.bytes().filter(|&b| b == b'"').count() % 2,
            0,
            "unbalanced quotes in <{tag}>"
        );
        if tag.starts_with('?') || tag.starts_with('!') {
            // declaration or comment
        } else if let Some(name) = tag.strip_prefix('/') {
            let open = stack.pop().unwrap_or_else(|| panic!("stray </{name}>"));
            assert_eq!(open, name, "mismatched close tag");
        } else if !tag.ends_with('/') {
            let name: String =
                tag.chars().take_while(|c| !c.is_whitespace()).collect();
            stack.push(name);
        }
        i = end + 1;
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
}
