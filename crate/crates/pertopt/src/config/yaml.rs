//! The pinned YAML dialect for config nodes.
//!
//! The format is fixed byte-for-byte so reproducibility checks can compare
//! serialized configs directly:
//!
//! * `_target_:` first, then `_partial_: true` when set, then fields in
//!   declaration order;
//! * MISSING renders exactly as `???`;
//! * lists render as block sequences with `- ` at the key's indent;
//! * nested nodes indent by two spaces;
//! * booleans are lowercase; floats print positionally for exponents in
//!   [-4, 15] and as `m.me±XX` scientific otherwise (`1e-8` → `1.0e-08`);
//! * strings that could be mistaken for other scalars are single-quoted.
//!
//! `parse` is the exact inverse on this dialect and reports the line number
//! of anything it refuses.

use crate::config::{ConfigNode, ConfigValue, Registry};
use crate::error::{Error, Result};

pub fn to_yaml(node: &ConfigNode) -> String {
    let mut out = String::new();
    render_node(node, 0, &mut out);
    out
}

fn indent_str(indent: usize) -> String {
    " ".repeat(indent)
}

fn render_node(node: &ConfigNode, indent: usize, out: &mut String) {
    let pad = indent_str(indent);
    out.push_str(&format!("{pad}_target_: {}\n", quote_if_needed(node.target())));
    if node.partial() {
        out.push_str(&format!("{pad}_partial_: true\n"));
    }
    for (name, value) in node.fields() {
        render_field(name, value, indent, out);
    }
}

fn render_field(name: &str, value: &ConfigValue, indent: usize, out: &mut String) {
    let pad = indent_str(indent);
    match value {
        ConfigValue::Node(n) => {
            out.push_str(&format!("{pad}{name}:\n"));
            render_node(n, indent + 2, out);
        }
        ConfigValue::List(items) => {
            if items.is_empty() {
                out.push_str(&format!("{pad}{name}: []\n"));
            } else {
                out.push_str(&format!("{pad}{name}:\n"));
                for item in items {
                    match item {
                        ConfigValue::Node(_) | ConfigValue::List(_) => {
                            // The dialect keeps sequences scalar-only; nested
                            // structures belong in named fields.
                            out.push_str(&format!("{pad}- {}\n", "null"));
                        }
                        scalar => out.push_str(&format!("{pad}- {}\n", format_scalar(scalar))),
                    }
                }
            }
        }
        scalar => out.push_str(&format!("{pad}{name}: {}\n", format_scalar(scalar))),
    }
}

/// Scalar rendering shared by the emitter and the override formatter.
pub fn format_scalar(value: &ConfigValue) -> String {
    match value {
        ConfigValue::Missing => "???".to_string(),
        ConfigValue::Bool(true) => "true".to_string(),
        ConfigValue::Bool(false) => "false".to_string(),
        ConfigValue::Int(v) => v.to_string(),
        ConfigValue::Float(v) => format_float(*v),
        ConfigValue::Str(s) => quote_if_needed(s),
        ConfigValue::List(_) | ConfigValue::Node(_) => "null".to_string(),
    }
}

/// Positional for exponents in [-4, 15], `1.0e-08`-style scientific outside.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return ".nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { ".inf" } else { "-.inf" }.to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0" } else { "0.0" }.to_string();
    }
    let sci = format!("{x:e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("valid exponent");
    if (-4..16).contains(&exp) {
        let s = format!("{x}");
        if s.contains('.') {
            s
        } else {
            format!("{s}.0")
        }
    } else {
        let mantissa = if mantissa.contains('.') {
            mantissa.to_string()
        } else {
            format!("{mantissa}.0")
        };
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn quote_if_needed(s: &str) -> String {
    if needs_quoting(s) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

fn needs_quoting(s: &str) -> bool {
    if s.is_empty() {
        return true;
    }
    if s != s.trim() {
        return true;
    }
    if s.contains(':') || s.contains('#') || s.contains('\n') || s.starts_with("- ") || s == "-" {
        return true;
    }
    // Anything the scalar parser would read back as a non-string.
    !matches!(parse_scalar_literal(s), ConfigValue::Str(_))
}

/// Literal scalar inspection: `???`, booleans, integers, floats, strings.
/// Quoted forms always come back as strings.
pub fn parse_scalar_literal(s: &str) -> ConfigValue {
    if s == "???" {
        return ConfigValue::Missing;
    }
    if s == "true" {
        return ConfigValue::Bool(true);
    }
    if s == "false" {
        return ConfigValue::Bool(false);
    }
    if s == "[]" {
        return ConfigValue::List(Vec::new());
    }
    if (s.starts_with('\'') && s.ends_with('\'') && s.len() >= 2)
        || (s.starts_with('"') && s.ends_with('"') && s.len() >= 2)
    {
        let inner = &s[1..s.len() - 1];
        let unescaped = if s.starts_with('\'') {
            inner.replace("''", "'")
        } else {
            inner.to_string()
        };
        return ConfigValue::Str(unescaped);
    }
    if s == ".nan" {
        return ConfigValue::Float(f64::NAN);
    }
    if s == ".inf" {
        return ConfigValue::Float(f64::INFINITY);
    }
    if s == "-.inf" {
        return ConfigValue::Float(f64::NEG_INFINITY);
    }
    let looks_int = {
        let body = s.strip_prefix('-').unwrap_or(s);
        !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit())
    };
    if looks_int {
        if let Ok(v) = s.parse::<i64>() {
            return ConfigValue::Int(v);
        }
    }
    let looks_numeric = s
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'))
        && s.bytes().any(|b| b.is_ascii_digit());
    if looks_numeric {
        if let Ok(v) = s.parse::<f64>() {
            return ConfigValue::Float(v);
        }
    }
    ConfigValue::Str(s.to_string())
}

struct Line<'a> {
    number: usize,
    indent: usize,
    content: &'a str,
}

pub(crate) fn parse(registry: &Registry, text: &str) -> Result<ConfigNode> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let indent = raw.len() - raw.trim_start_matches(' ').len();
        lines.push(Line {
            number: i + 1,
            indent,
            content: raw[indent..].trim_end(),
        });
    }
    if lines.is_empty() {
        return Err(Error::YamlParse {
            line: 1,
            msg: "empty document".into(),
        });
    }
    let mut pos = 0;
    let node = parse_node(registry, &lines, &mut pos, 0)?;
    if pos != lines.len() {
        return Err(Error::YamlParse {
            line: lines[pos].number,
            msg: "trailing content after the root node".into(),
        });
    }
    Ok(node)
}

fn parse_node(
    registry: &Registry,
    lines: &[Line<'_>],
    pos: &mut usize,
    indent: usize,
) -> Result<ConfigNode> {
    let first = &lines[*pos];
    let (key, rest) = split_key(first)?;
    if key != "_target_" {
        return Err(Error::YamlParse {
            line: first.number,
            msg: format!("expected `_target_`, found `{key}`"),
        });
    }
    let target = match parse_scalar_literal(rest) {
        ConfigValue::Str(s) => s,
        _ => {
            return Err(Error::YamlParse {
                line: first.number,
                msg: format!("`_target_` must be a string, got `{rest}`"),
            })
        }
    };
    if registry.component(&target).is_none() {
        return Err(Error::YamlParse {
            line: first.number,
            msg: format!("unknown `_target_` `{target}`"),
        });
    }
    *pos += 1;

    let mut partial = false;
    if *pos < lines.len() && lines[*pos].indent == indent {
        if let Ok(("_partial_", rest)) = split_key(&lines[*pos]) {
            partial = match parse_scalar_literal(rest) {
                ConfigValue::Bool(b) => b,
                _ => {
                    return Err(Error::YamlParse {
                        line: lines[*pos].number,
                        msg: format!("`_partial_` must be a boolean, got `{rest}`"),
                    })
                }
            };
            *pos += 1;
        }
    }

    let mut fields = Vec::new();
    while *pos < lines.len() {
        let line = &lines[*pos];
        if line.indent < indent || line.content.starts_with("- ") {
            break;
        }
        if line.indent > indent {
            return Err(Error::YamlParse {
                line: line.number,
                msg: format!("unexpected indent of {} (expected {})", line.indent, indent),
            });
        }
        let (key, rest) = split_key(line)?;
        let key = key.to_string();
        *pos += 1;
        let value = if rest.is_empty() {
            parse_block_value(registry, lines, pos, indent, line.number)?
        } else {
            parse_scalar_literal(rest)
        };
        fields.push((key, value));
    }
    Ok(ConfigNode::from_parts(target, partial, fields))
}

/// A `key:` with nothing after it introduces either a nested node (indented
/// two extra spaces) or a block sequence (`- ` items at the key's indent).
fn parse_block_value(
    registry: &Registry,
    lines: &[Line<'_>],
    pos: &mut usize,
    indent: usize,
    key_line: usize,
) -> Result<ConfigValue> {
    if *pos >= lines.len() {
        return Err(Error::YamlParse {
            line: key_line,
            msg: "expected a nested node or sequence after `key:`".into(),
        });
    }
    let next = &lines[*pos];
    if next.indent == indent && next.content.starts_with("- ") {
        let mut items = Vec::new();
        while *pos < lines.len() {
            let line = &lines[*pos];
            if line.indent != indent || !line.content.starts_with("- ") {
                break;
            }
            items.push(parse_scalar_literal(line.content[2..].trim()));
            *pos += 1;
        }
        Ok(ConfigValue::List(items))
    } else if next.indent == indent + 2 {
        Ok(ConfigValue::Node(parse_node(registry, lines, pos, indent + 2)?))
    } else {
        Err(Error::YamlParse {
            line: next.number,
            msg: "expected a nested node or sequence after `key:`".into(),
        })
    }
}

fn split_key<'a>(line: &'a Line<'_>) -> Result<(&'a str, &'a str)> {
    match line.content.split_once(':') {
        Some((key, rest)) => {
            let key = key.trim();
            if key.is_empty() || key.contains(' ') {
                return Err(Error::YamlParse {
                    line: line.number,
                    msg: format!("malformed key in `{}`", line.content),
                });
            }
            Ok((key, rest.trim()))
        }
        None => Err(Error::YamlParse {
            line: line.number,
            msg: format!("expected `key: value`, found `{}`", line.content),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FieldSpec;

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register_component(
            "pertopt.optim.Adam",
            vec![
                FieldSpec::required("params"),
                FieldSpec::with_default("lr", 0.001),
                FieldSpec::with_default("betas", vec![0.9, 0.999]),
                FieldSpec::with_default("eps", 1.0e-08),
                FieldSpec::with_default("weight_decay", 0i64),
                FieldSpec::with_default("amsgrad", false),
            ],
            |_, _| Ok(Box::new(())),
        )
        .unwrap();
        r.register_component("pertopt.Empty", vec![], |_, _| Ok(Box::new(())))
            .unwrap();
        r
    }

    #[test]
    fn adam_config_renders_the_reference_block() {
        let r = registry();
        let node = r.builds("pertopt.optim.Adam", &[], false).unwrap();
        let yaml = to_yaml(&node);
        assert_eq!(
            yaml,
            "_target_: pertopt.optim.Adam\n\
             params: ???\n\
             lr: 0.001\n\
             betas:\n\
             - 0.9\n\
             - 0.999\n\
             eps: 1.0e-08\n\
             weight_decay: 0\n\
             amsgrad: false\n"
        );
    }

    #[test]
    fn empty_node_is_target_line_only() {
        let r = registry();
        let node = r.builds("pertopt.Empty", &[], false).unwrap();
        assert_eq!(to_yaml(&node), "_target_: pertopt.Empty\n");
    }

    #[test]
    fn round_trip_is_bitwise_on_generated_configs() {
        let r = registry();
        let node = r.builds("pertopt.optim.Adam", &[], false).unwrap();
        let once = to_yaml(&node);
        let reparsed = r.from_yaml(&once).unwrap();
        assert_eq!(reparsed, node);
        assert_eq!(to_yaml(&reparsed), once);
    }

    #[test]
    fn question_marks_parse_to_missing() {
        let r = registry();
        let node = r
            .from_yaml("_target_: pertopt.optim.Adam\nparams: ???\n")
            .unwrap();
        assert_eq!(node.get("params"), Some(&ConfigValue::Missing));
    }

    #[test]
    fn scientific_notation_parses_exactly() {
        let r = registry();
        let node = r
            .from_yaml("_target_: pertopt.optim.Adam\neps: 1.0e-08\n")
            .unwrap();
        assert_eq!(node.get("eps"), Some(&ConfigValue::Float(1.0e-8)));
        assert_eq!(node.get_f64("eps").unwrap().to_bits(), (1.0e-8f64).to_bits());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let r = registry();
        let err = r
            .from_yaml("_target_: pertopt.optim.Adam\nlr 0.001\n")
            .unwrap_err();
        match err {
            Error::YamlParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_target_is_rejected() {
        let r = registry();
        let err = r.from_yaml("_target_: no.Such\n").unwrap_err().to_string();
        assert!(err.contains("no.Such"), "{err}");
    }

    #[test]
    fn partial_flag_round_trips() {
        let r = registry();
        let node = r.builds("pertopt.optim.Adam", &[], true).unwrap();
        let yaml = to_yaml(&node);
        assert!(yaml.contains("_partial_: true\n"), "{yaml}");
        let reparsed = r.from_yaml(&yaml).unwrap();
        assert!(reparsed.partial());
        assert_eq!(to_yaml(&reparsed), yaml);
    }

    #[test]
    fn float_formatting_matches_the_pinned_rules() {
        assert_eq!(format_float(0.001), "0.001");
        assert_eq!(format_float(1.0e-8), "1.0e-08");
        assert_eq!(format_float(0.9), "0.9");
        assert_eq!(format_float(2.0), "2.0");
        assert_eq!(format_float(0.0001), "0.0001");
        assert_eq!(format_float(9.9e-5), "9.9e-05");
        assert_eq!(format_float(1.0e16), "1.0e+16");
        assert_eq!(format_float(1.0e15), "1000000000000000.0");
        assert_eq!(format_float(-0.25), "-0.25");
        assert_eq!(format_float(-1.5e-9), "-1.5e-09");
        assert_eq!(format_float(0.0), "0.0");
    }

    #[test]
    fn ambiguous_strings_are_quoted_and_recovered() {
        for s in ["???", "true", "17", "0.5", "1e5", "", "a: b", "- x", ".nan"] {
            let v = ConfigValue::Str(s.to_string());
            let rendered = format_scalar(&v);
            assert_eq!(parse_scalar_literal(&rendered), v, "for {s:?}");
        }
        // plain identifiers stay bare
        assert_eq!(format_scalar(&ConfigValue::Str("l2".into())), "l2");
        assert_eq!(
            format_scalar(&ConfigValue::Str("pertopt.optim.Adam".into())),
            "pertopt.optim.Adam"
        );
    }
}
