//! Dotted-path override grammar: `path=value` or `path=v1,v2,...` for
//! sweeps. Values are parsed by literal inspection (number, boolean,
//! string, `???`); a bare name assigned to a registered config group swaps
//! in that group option's node.

use crate::config::{yaml, ConfigNode, ConfigValue, Registry};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OverrideSpec {
    pub path: Vec<String>,
    pub values: Vec<ConfigValue>,
    /// Source text of each value, kept verbatim for run records.
    pub raw_values: Vec<String>,
    pub token: String,
}

impl OverrideSpec {
    pub fn path_string(&self) -> String {
        self.path.join(".")
    }

    /// The single-value token for one sweep cell, e.g. `optim.epsilon=0.5`.
    pub fn token_for(&self, index: usize) -> String {
        format!("{}={}", self.path_string(), self.raw_values[index])
    }
}

fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

pub fn parse_overrides(tokens: &[String]) -> Result<Vec<OverrideSpec>> {
    tokens.iter().map(|t| parse_override(t)).collect()
}

fn parse_override(token: &str) -> Result<OverrideSpec> {
    let err = |msg: &str| Error::InvalidOverride {
        token: token.to_string(),
        msg: msg.to_string(),
    };
    let (path_text, values_text) = token.split_once('=').ok_or_else(|| err("expected `path=value`"))?;
    let path: Vec<String> = path_text.split('.').map(str::to_string).collect();
    if path.iter().any(|seg| !is_identifier(seg)) {
        return Err(err("path segments must be identifiers separated by dots"));
    }
    if values_text.is_empty() {
        return Err(err("expected at least one value after `=`"));
    }
    let mut values = Vec::new();
    let mut raw_values = Vec::new();
    for raw in values_text.split(',') {
        if raw.is_empty() {
            return Err(err("empty value in comma list"));
        }
        values.push(yaml::parse_scalar_literal(raw));
        raw_values.push(raw.to_string());
    }
    Ok(OverrideSpec {
        path,
        values,
        raw_values,
        token: token.to_string(),
    })
}

/// Apply one value at a dotted path. Existing fields only: overrides mutate
/// configuration, they never extend it. A string assigned to a path with
/// registered group options selects that option's node.
pub fn apply_override(
    registry: &Registry,
    root: &mut ConfigNode,
    spec: &OverrideSpec,
    value_index: usize,
) -> Result<()> {
    let token = spec.token.clone();
    let err = |msg: String| Error::InvalidOverride { token: token.clone(), msg };

    let value = &spec.values[value_index];
    let group_key = spec.path_string();

    // Walk to the parent node.
    let mut node = &mut *root;
    for seg in &spec.path[..spec.path.len() - 1] {
        match node.get_mut(seg) {
            Some(ConfigValue::Node(n)) => node = n,
            Some(other) => {
                return Err(err(format!(
                    "`{seg}` is a {} field, not a nested component",
                    other.type_name()
                )))
            }
            None => return Err(err(format!("unknown path segment `{seg}`"))),
        }
    }

    let last = spec.path.last().expect("non-empty path");
    let slot = node
        .get_mut(last)
        .ok_or_else(|| err(format!("unknown field `{last}`")))?;

    if let Some(options) = registry.group_options(&group_key) {
        let name = match value {
            ConfigValue::Str(s) => s.as_str(),
            other => {
                return Err(err(format!(
                    "group `{group_key}` takes an option name, got {}",
                    other.type_name()
                )))
            }
        };
        match registry.group_option(&group_key, name) {
            Some(option) => {
                *slot = ConfigValue::Node(option.clone());
                return Ok(());
            }
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| n.as_str()).collect();
                return Err(err(format!(
                    "unknown option `{name}` for group `{group_key}`; choices: {}",
                    names.join(", ")
                )));
            }
        }
    }

    if matches!(slot, ConfigValue::Node(_)) {
        return Err(err(format!(
            "`{group_key}` is a nested component; register group options to swap it"
        )));
    }
    *slot = value.clone();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FieldSpec;

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register_component(
            "t.Optim",
            vec![
                FieldSpec::with_default("epsilon", 0.0),
                FieldSpec::with_default("steps", 20i64),
            ],
            |_, _| Ok(Box::new(())),
        )
        .unwrap();
        r.register_component(
            "t.Model",
            vec![FieldSpec::with_default("name", "standard")],
            |_, _| Ok(Box::new(())),
        )
        .unwrap();
        r.register_component(
            "t.Root",
            vec![
                FieldSpec::required("model"),
                FieldSpec::required("optim"),
                FieldSpec::with_default("flag", false),
            ],
            |_, _| Ok(Box::new(())),
        )
        .unwrap();
        let standard = r.builds("t.Model", &[], false).unwrap();
        let robust = r.builds("t.Model", &[("name", "robust".into())], false).unwrap();
        r.register_group_option("model", "standard", standard).unwrap();
        r.register_group_option("model", "robust", robust).unwrap();
        r
    }

    fn root(r: &Registry) -> ConfigNode {
        let optim = r.builds("t.Optim", &[], false).unwrap();
        let model = r.group_option("model", "standard").unwrap().clone();
        r.builds(
            "t.Root",
            &[("model", model.into()), ("optim", optim.into())],
            false,
        )
        .unwrap()
    }

    #[test]
    fn epsilon_sweep_parses_to_five_numbers() {
        let specs =
            parse_overrides(&["optim.epsilon=0.0,0.25,0.5,1.0,2.0".to_string()]).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].path, vec!["optim", "epsilon"]);
        assert_eq!(specs[0].values.len(), 5);
        assert!(specs[0]
            .values
            .iter()
            .all(|v| matches!(v, ConfigValue::Float(_))));
        assert_eq!(specs[0].token_for(1), "optim.epsilon=0.25");
    }

    #[test]
    fn group_override_parses_to_two_names() {
        let specs = parse_overrides(&["model=standard,robust".to_string()]).unwrap();
        assert_eq!(specs[0].values.len(), 2);
        assert_eq!(specs[0].values[0], ConfigValue::Str("standard".into()));
    }

    #[test]
    fn boolean_literals_parse() {
        let specs = parse_overrides(&["a.b=true".to_string()]).unwrap();
        assert_eq!(specs[0].values[0], ConfigValue::Bool(true));
    }

    #[test]
    fn malformed_tokens_are_quoted_in_errors() {
        for bad in ["nonsense", "a..b=1", "x=", "x=1,,2", "2x=1"] {
            let err = parse_overrides(&[bad.to_string()]).unwrap_err().to_string();
            assert!(err.contains(bad), "{err}");
        }
    }

    #[test]
    fn applying_mutates_existing_scalar_paths() {
        let r = registry();
        let mut cfg = root(&r);
        let specs = parse_overrides(&["optim.epsilon=0.5".to_string(), "flag=true".to_string()])
            .unwrap();
        for s in &specs {
            apply_override(&r, &mut cfg, s, 0).unwrap();
        }
        assert_eq!(cfg.get_node("optim").unwrap().get_f64("epsilon").unwrap(), 0.5);
        assert!(cfg.get_bool("flag").unwrap());
    }

    #[test]
    fn group_selection_swaps_the_node() {
        let r = registry();
        let mut cfg = root(&r);
        let specs = parse_overrides(&["model=robust".to_string()]).unwrap();
        apply_override(&r, &mut cfg, &specs[0], 0).unwrap();
        assert_eq!(
            cfg.get_node("model").unwrap().get_str("name").unwrap(),
            "robust"
        );
    }

    #[test]
    fn unknown_paths_and_options_are_rejected() {
        let r = registry();
        let mut cfg = root(&r);
        let bad_path = parse_overrides(&["optim.nope=1".to_string()]).unwrap();
        assert!(apply_override(&r, &mut cfg, &bad_path[0], 0).is_err());
        let bad_option = parse_overrides(&["model=giant".to_string()]).unwrap();
        let err = apply_override(&r, &mut cfg, &bad_option[0], 0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("standard") && err.contains("robust"), "{err}");
    }

    #[test]
    fn overrides_never_create_fields() {
        let r = registry();
        let mut cfg = root(&r);
        let field_count =
            |n: &ConfigNode| n.fields().len() + n.get_node("optim").map_or(0, |o| o.fields().len());
        let before = field_count(&cfg);
        let specs = parse_overrides(&["optim.steps=10".to_string()]).unwrap();
        apply_override(&r, &mut cfg, &specs[0], 0).unwrap();
        assert_eq!(field_count(&cfg), before);
    }
}
