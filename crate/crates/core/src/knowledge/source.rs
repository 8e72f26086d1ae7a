//! Function definition lookup in C-like and Rust sources.

use regex::Regex;

/// Returns the text of `name`'s definition (signature through the matching
/// closing brace), or `None` if no definition is found. Declarations ending
/// in `;` are skipped.
pub fn extract_definition(source: &str, name: &str) -> Option<String> {
    let sig = Regex::new(&format!(
        r"(?m)^(?:[A-Za-z_][^;{{}}()\n]*?[\s*])?{}\s*\(",
        regex::escape(name)
    ))
    .ok()?;
    for m in sig.find_iter(source) {
        let start = m.start();
        let rest = &source[start..];
        let brace = match rest.find(['{', ';']) {
            Some(i) if rest.as_bytes()[i] == b'{' => i,
            _ => continue,
        };
        let mut depth = 0usize;
        for (i, c) in rest[brace..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(rest[..brace + i + 1].to_string());
                    }
                }
                _ => {}
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const C_SRC: &str = "\
static int helper(int x);

METHODDEF(JDIMENSION)
get_rgb_row(j_compress_ptr cinfo, cjpeg_source_ptr sinfo)
{
  if (x) { y(); }
  return 1;
}

int main(void) {
  get_rgb_row(0, 0);
}
";

    #[test]
    fn c_definition_not_call_site() {
        let d = extract_definition(C_SRC, "get_rgb_row").unwrap();
        assert!(d.starts_with("get_rgb_row(j_compress_ptr"));
        assert!(d.ends_with("return 1;\n}"));
    }

    #[test]
    fn skips_prototype() {
        assert!(extract_definition(C_SRC, "helper").is_none());
    }

    #[test]
    fn rust_fn() {
        let src = "fn a() {}\n\npub fn parse_dims(input: &[u8]) -> Option<u32> {\n    if input.is_empty() { return None; }\n    Some(1)\n}\n";
        let d = extract_definition(src, "parse_dims").unwrap();
        assert!(d.starts_with("pub fn parse_dims"));
        assert!(d.ends_with("Some(1)\n}"));
    }

    #[test]
    fn missing_function() {
        assert!(extract_definition(C_SRC, "nope").is_none());
    }
}
