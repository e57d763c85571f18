//! Hierarchical component configuration.
//!
//! Components register themselves once with an id, an ordered field list
//! with defaults, and a constructor. [`Registry::builds`] then generates a
//! [`ConfigNode`] for any registered component: defaults filled in, fields
//! without defaults marked [`ConfigValue::Missing`] (rendered `???`), and
//! unknown field names rejected at creation time. Nodes serialize to a
//! pinned YAML format ([`yaml`]), accept dotted-path overrides
//! ([`overrides`]), and instantiate back into live components, depth first.
//!
//! The registry is frozen after setup and can be shared across the launcher
//! threads; each job owns its resolved config.

pub mod launch;
pub mod overrides;
pub mod yaml;

pub use launch::{launch, LaunchOptions, LaunchReport, Metrics, RunRecord};
pub use overrides::{parse_overrides, OverrideSpec};
pub use yaml::to_yaml;

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One configuration value: a scalar, a list, a nested component node, or
/// the MISSING sentinel that must be supplied before instantiation.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Missing,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ConfigValue>),
    Node(ConfigNode),
}

impl ConfigValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            ConfigValue::Missing => "missing",
            ConfigValue::Bool(_) => "bool",
            ConfigValue::Int(_) => "int",
            ConfigValue::Float(_) => "float",
            ConfigValue::Str(_) => "str",
            ConfigValue::List(_) => "list",
            ConfigValue::Node(_) => "node",
        }
    }
}

impl From<bool> for ConfigValue {
    fn from(v: bool) -> Self {
        ConfigValue::Bool(v)
    }
}
impl From<i64> for ConfigValue {
    fn from(v: i64) -> Self {
        ConfigValue::Int(v)
    }
}
impl From<usize> for ConfigValue {
    fn from(v: usize) -> Self {
        ConfigValue::Int(v as i64)
    }
}
impl From<f64> for ConfigValue {
    fn from(v: f64) -> Self {
        ConfigValue::Float(v)
    }
}
impl From<&str> for ConfigValue {
    fn from(v: &str) -> Self {
        ConfigValue::Str(v.to_string())
    }
}
impl From<String> for ConfigValue {
    fn from(v: String) -> Self {
        ConfigValue::Str(v)
    }
}
impl From<ConfigNode> for ConfigValue {
    fn from(v: ConfigNode) -> Self {
        ConfigValue::Node(v)
    }
}
impl From<Vec<f64>> for ConfigValue {
    fn from(v: Vec<f64>) -> Self {
        ConfigValue::List(v.into_iter().map(ConfigValue::Float).collect())
    }
}
impl From<Vec<i64>> for ConfigValue {
    fn from(v: Vec<i64>) -> Self {
        ConfigValue::List(v.into_iter().map(ConfigValue::Int).collect())
    }
}
impl From<Vec<usize>> for ConfigValue {
    fn from(v: Vec<usize>) -> Self {
        ConfigValue::List(v.into_iter().map(|x| ConfigValue::Int(x as i64)).collect())
    }
}

/// A component description: target id plus ordered field values. `partial`
/// nodes instantiate to a factory that waits for the remaining arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigNode {
    target: String,
    partial: bool,
    fields: Vec<(String, ConfigValue)>,
}

impl ConfigNode {
    pub(crate) fn from_parts(
        target: String,
        partial: bool,
        fields: Vec<(String, ConfigValue)>,
    ) -> Self {
        ConfigNode {
            target,
            partial,
            fields,
        }
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn partial(&self) -> bool {
        self.partial
    }

    pub fn fields(&self) -> &[(String, ConfigValue)] {
        &self.fields
    }

    pub fn get(&self, name: &str) -> Option<&ConfigValue> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ConfigValue> {
        self.fields
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    /// Assign an existing field; unknown names are rejected, so overrides
    /// can never invent configuration.
    pub fn set(&mut self, name: &str, value: ConfigValue) -> Result<()> {
        match self.get_mut(name) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::ConfigType {
                path: name.to_string(),
                msg: format!("no such field on `{}`", self.target),
            }),
        }
    }

    fn typed<T>(&self, name: &str, what: &str, f: impl FnOnce(&ConfigValue) -> Option<T>) -> Result<T> {
        let value = self.get(name).ok_or_else(|| Error::ConfigType {
            path: name.to_string(),
            msg: format!("no such field on `{}`", self.target),
        })?;
        f(value).ok_or_else(|| Error::ConfigType {
            path: name.to_string(),
            msg: format!("expected {what}, got {}", value.type_name()),
        })
    }

    pub fn get_f64(&self, name: &str) -> Result<f64> {
        self.typed(name, "a number", |v| match v {
            ConfigValue::Float(x) => Some(*x),
            ConfigValue::Int(x) => Some(*x as f64),
            _ => None,
        })
    }

    pub fn get_i64(&self, name: &str) -> Result<i64> {
        self.typed(name, "an integer", |v| match v {
            ConfigValue::Int(x) => Some(*x),
            _ => None,
        })
    }

    pub fn get_usize(&self, name: &str) -> Result<usize> {
        let v = self.get_i64(name)?;
        usize::try_from(v).map_err(|_| Error::ConfigType {
            path: name.to_string(),
            msg: format!("expected a non-negative integer, got {v}"),
        })
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        let v = self.get_i64(name)?;
        u64::try_from(v).map_err(|_| Error::ConfigType {
            path: name.to_string(),
            msg: format!("expected a non-negative integer, got {v}"),
        })
    }

    pub fn get_bool(&self, name: &str) -> Result<bool> {
        self.typed(name, "a boolean", |v| match v {
            ConfigValue::Bool(x) => Some(*x),
            _ => None,
        })
    }

    pub fn get_str(&self, name: &str) -> Result<&str> {
        let value = self.get(name).ok_or_else(|| Error::ConfigType {
            path: name.to_string(),
            msg: format!("no such field on `{}`", self.target),
        })?;
        match value {
            ConfigValue::Str(s) => Ok(s),
            ConfigValue::Missing => Err(Error::MissingField {
                path: name.to_string(),
            }),
            other => Err(Error::ConfigType {
                path: name.to_string(),
                msg: format!("expected a string, got {}", other.type_name()),
            }),
        }
    }

    pub fn get_node(&self, name: &str) -> Result<&ConfigNode> {
        let value = self.get(name).ok_or_else(|| Error::ConfigType {
            path: name.to_string(),
            msg: format!("no such field on `{}`", self.target),
        })?;
        match value {
            ConfigValue::Node(n) => Ok(n),
            other => Err(Error::ConfigType {
                path: name.to_string(),
                msg: format!("expected a nested component, got {}", other.type_name()),
            }),
        }
    }

    pub fn get_usize_list(&self, name: &str) -> Result<Vec<usize>> {
        self.typed(name, "a list of non-negative integers", |v| match v {
            ConfigValue::List(items) => items
                .iter()
                .map(|i| match i {
                    ConfigValue::Int(x) if *x >= 0 => Some(*x as usize),
                    _ => None,
                })
                .collect(),
            _ => None,
        })
    }

    pub fn get_f64_list(&self, name: &str) -> Result<Vec<f64>> {
        self.typed(name, "a list of numbers", |v| match v {
            ConfigValue::List(items) => items
                .iter()
                .map(|i| match i {
                    ConfigValue::Float(x) => Some(*x),
                    ConfigValue::Int(x) => Some(*x as f64),
                    _ => None,
                })
                .collect(),
            _ => None,
        })
    }
}

/// Declared field of a registered component.
#[derive(Clone)]
pub struct FieldSpec {
    pub name: String,
    /// `None` marks a mandatory field: generated configs carry MISSING.
    pub default: Option<ConfigValue>,
    /// Raw fields are handed to the constructor as un-instantiated config,
    /// letting wrapper components inspect configuration before building it.
    pub raw: bool,
}

impl FieldSpec {
    pub fn required(name: &str) -> Self {
        FieldSpec {
            name: name.to_string(),
            default: None,
            raw: false,
        }
    }

    pub fn with_default(name: &str, value: impl Into<ConfigValue>) -> Self {
        FieldSpec {
            name: name.to_string(),
            default: Some(value.into()),
            raw: false,
        }
    }

    pub fn raw_required(name: &str) -> Self {
        FieldSpec {
            name: name.to_string(),
            default: None,
            raw: true,
        }
    }
}

/// Resolved constructor argument. Nested nodes arrive already instantiated
/// (or as factories when they were partial); raw fields arrive as config.
pub enum ArgValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ArgValue>),
    Component(Box<dyn Any>),
    Factory(PartialComponent),
    Raw(ConfigValue),
}

impl fmt::Debug for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Bool(v) => write!(f, "Bool({v})"),
            ArgValue::Int(v) => write!(f, "Int({v})"),
            ArgValue::Float(v) => write!(f, "Float({v})"),
            ArgValue::Str(v) => write!(f, "Str({v:?})"),
            ArgValue::List(v) => write!(f, "List({v:?})"),
            ArgValue::Component(_) => write!(f, "Component(..)"),
            ArgValue::Factory(p) => write!(f, "Factory({})", p.id()),
            ArgValue::Raw(v) => write!(f, "Raw({v:?})"),
        }
    }
}

impl ArgValue {
    pub fn component<T: 'static>(value: T) -> Self {
        ArgValue::Component(Box::new(value))
    }
}

/// Named arguments handed to a constructor.
pub struct ArgMap {
    component: String,
    entries: Vec<(String, ArgValue)>,
}

impl ArgMap {
    fn err(&self, name: &str, msg: String) -> Error {
        Error::ConfigType {
            path: format!("{}.{}", self.component, name),
            msg,
        }
    }

    pub fn take(&mut self, name: &str) -> Result<ArgValue> {
        match self.entries.iter().position(|(n, _)| n == name) {
            Some(i) => Ok(self.entries.remove(i).1),
            None => Err(self.err(name, "argument not supplied".into())),
        }
    }

    pub fn take_f64(&mut self, name: &str) -> Result<f64> {
        match self.take(name)? {
            ArgValue::Float(v) => Ok(v),
            ArgValue::Int(v) => Ok(v as f64),
            other => Err(self.err(name, format!("expected a number, got {other:?}"))),
        }
    }

    pub fn take_i64(&mut self, name: &str) -> Result<i64> {
        match self.take(name)? {
            ArgValue::Int(v) => Ok(v),
            other => Err(self.err(name, format!("expected an integer, got {other:?}"))),
        }
    }

    pub fn take_usize(&mut self, name: &str) -> Result<usize> {
        let v = self.take_i64(name)?;
        usize::try_from(v).map_err(|_| self.err(name, format!("expected non-negative, got {v}")))
    }

    pub fn take_u64(&mut self, name: &str) -> Result<u64> {
        let v = self.take_i64(name)?;
        u64::try_from(v).map_err(|_| self.err(name, format!("expected non-negative, got {v}")))
    }

    pub fn take_bool(&mut self, name: &str) -> Result<bool> {
        match self.take(name)? {
            ArgValue::Bool(v) => Ok(v),
            other => Err(self.err(name, format!("expected a boolean, got {other:?}"))),
        }
    }

    pub fn take_str(&mut self, name: &str) -> Result<String> {
        match self.take(name)? {
            ArgValue::Str(v) => Ok(v),
            other => Err(self.err(name, format!("expected a string, got {other:?}"))),
        }
    }

    pub fn take_f64_list(&mut self, name: &str) -> Result<Vec<f64>> {
        match self.take(name)? {
            ArgValue::List(items) => items
                .into_iter()
                .map(|i| match i {
                    ArgValue::Float(v) => Ok(v),
                    ArgValue::Int(v) => Ok(v as f64),
                    other => Err(self.err(name, format!("expected numbers, got {other:?}"))),
                })
                .collect(),
            other => Err(self.err(name, format!("expected a list, got {other:?}"))),
        }
    }

    pub fn take_usize_list(&mut self, name: &str) -> Result<Vec<usize>> {
        match self.take(name)? {
            ArgValue::List(items) => items
                .into_iter()
                .map(|i| match i {
                    ArgValue::Int(v) if v >= 0 => Ok(v as usize),
                    other => Err(self.err(name, format!("expected non-negative integers, got {other:?}"))),
                })
                .collect(),
            other => Err(self.err(name, format!("expected a list, got {other:?}"))),
        }
    }

    pub fn take_component<T: 'static>(&mut self, name: &str) -> Result<T> {
        match self.take(name)? {
            ArgValue::Component(b) => b.downcast::<T>().map(|b| *b).map_err(|_| {
                self.err(
                    name,
                    format!("component is not a {}", std::any::type_name::<T>()),
                )
            }),
            other => Err(self.err(name, format!("expected a component, got {other:?}"))),
        }
    }

    pub fn take_factory(&mut self, name: &str) -> Result<PartialComponent> {
        match self.take(name)? {
            ArgValue::Factory(p) => Ok(p),
            other => Err(self.err(name, format!("expected a factory, got {other:?}"))),
        }
    }

    pub fn take_raw(&mut self, name: &str) -> Result<ConfigValue> {
        match self.take(name)? {
            ArgValue::Raw(v) => Ok(v),
            other => Err(self.err(name, format!("expected raw config, got {other:?}"))),
        }
    }
}

type ConstructorFn = Arc<dyn Fn(&Registry, &mut ArgMap) -> Result<Box<dyn Any>> + Send + Sync>;

pub struct ComponentEntry {
    id: String,
    fields: Vec<FieldSpec>,
    ctor: ConstructorFn,
}

impl ComponentEntry {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }
}

/// Result of instantiating a node.
pub enum Instantiated {
    Component(Box<dyn Any>),
    Factory(PartialComponent),
}

impl fmt::Debug for Instantiated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instantiated::Component(_) => write!(f, "Instantiated::Component(..)"),
            Instantiated::Factory(p) => write!(f, "Instantiated::Factory({})", p.id()),
        }
    }
}

impl Instantiated {
    pub fn into_component<T: 'static>(self) -> Result<T> {
        match self {
            Instantiated::Component(b) => b.downcast::<T>().map(|b| *b).map_err(|_| {
                Error::ConfigType {
                    path: String::new(),
                    msg: format!("component is not a {}", std::any::type_name::<T>()),
                }
            }),
            Instantiated::Factory(p) => Err(Error::ConfigType {
                path: p.id,
                msg: "node is partial; complete the factory instead".into(),
            }),
        }
    }

    pub fn into_factory(self) -> Result<PartialComponent> {
        match self {
            Instantiated::Factory(p) => Ok(p),
            Instantiated::Component(_) => Err(Error::ConfigType {
                path: String::new(),
                msg: "node is not partial".into(),
            }),
        }
    }
}

/// A partially configured component awaiting its remaining arguments.
pub struct PartialComponent {
    id: String,
    args: Vec<(String, Option<ArgValue>)>,
    ctor: ConstructorFn,
}

impl PartialComponent {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Fill the remaining (or override existing) arguments and construct.
    pub fn complete(
        mut self,
        registry: &Registry,
        extra: Vec<(String, ArgValue)>,
    ) -> Result<Box<dyn Any>> {
        for (name, value) in extra {
            match self.args.iter_mut().find(|(n, _)| *n == name) {
                Some(slot) => slot.1 = Some(value),
                None => {
                    return Err(Error::ConfigType {
                        path: format!("{}.{}", self.id, name),
                        msg: "no such field".into(),
                    })
                }
            }
        }
        let mut entries = Vec::with_capacity(self.args.len());
        for (name, value) in self.args {
            match value {
                Some(v) => entries.push((name, v)),
                None => {
                    return Err(Error::MissingField {
                        path: format!("{}.{}", self.id, name),
                    })
                }
            }
        }
        let mut map = ArgMap {
            component: self.id.clone(),
            entries,
        };
        (self.ctor)(registry, &mut map)
    }

    pub fn complete_as<T: 'static>(
        self,
        registry: &Registry,
        extra: Vec<(String, ArgValue)>,
    ) -> Result<T> {
        let id = self.id.clone();
        self.complete(registry, extra)?
            .downcast::<T>()
            .map(|b| *b)
            .map_err(|_| Error::ConfigType {
                path: id,
                msg: format!("component is not a {}", std::any::type_name::<T>()),
            })
    }
}

/// Component and config-group registry.
#[derive(Default)]
pub struct Registry {
    components: Vec<ComponentEntry>,
    groups: Vec<(String, Vec<(String, ConfigNode)>)>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register_component<F>(&mut self, id: &str, fields: Vec<FieldSpec>, ctor: F) -> Result<()>
    where
        F: Fn(&Registry, &mut ArgMap) -> Result<Box<dyn Any>> + Send + Sync + 'static,
    {
        if self.component(id).is_some() {
            return Err(Error::DuplicateComponent(id.to_string()));
        }
        let mut seen: Vec<&str> = Vec::new();
        for f in &fields {
            if seen.contains(&f.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "component `{id}` declares field `{}` twice",
                    f.name
                )));
            }
            seen.push(&f.name);
        }
        self.components.push(ComponentEntry {
            id: id.to_string(),
            fields,
            ctor: Arc::new(ctor),
        });
        Ok(())
    }

    /// Register a named alternative for a config group. The group key is the
    /// dotted path of the field the group swaps (e.g. `model`).
    pub fn register_group_option(&mut self, group: &str, name: &str, node: ConfigNode) -> Result<()> {
        let options = match self.groups.iter_mut().find(|(g, _)| g == group) {
            Some((_, options)) => options,
            None => {
                self.groups.push((group.to_string(), Vec::new()));
                &mut self.groups.last_mut().expect("just pushed").1
            }
        };
        if options.iter().any(|(n, _)| n == name) {
            return Err(Error::DuplicateGroupOption {
                group: group.to_string(),
                name: name.to_string(),
            });
        }
        options.push((name.to_string(), node));
        Ok(())
    }

    pub fn component(&self, id: &str) -> Option<&ComponentEntry> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn group_options(&self, group: &str) -> Option<&[(String, ConfigNode)]> {
        self.groups
            .iter()
            .find(|(g, _)| g == group)
            .map(|(_, o)| o.as_slice())
    }

    pub fn group_option(&self, group: &str, name: &str) -> Option<&ConfigNode> {
        self.group_options(group)?
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, node)| node)
    }

    /// Generate a config for a registered component: defaults first, then
    /// the given overrides; fields without defaults become MISSING.
    pub fn builds(
        &self,
        id: &str,
        overrides: &[(&str, ConfigValue)],
        partial: bool,
    ) -> Result<ConfigNode> {
        let entry = self
            .component(id)
            .ok_or_else(|| Error::UnknownComponent(id.to_string()))?;
        let mut fields: Vec<(String, ConfigValue)> = entry
            .fields
            .iter()
            .map(|f| {
                (
                    f.name.clone(),
                    f.default.clone().unwrap_or(ConfigValue::Missing),
                )
            })
            .collect();
        for (name, value) in overrides {
            match fields.iter_mut().find(|(n, _)| n == name) {
                Some(slot) => slot.1 = value.clone(),
                None => {
                    return Err(Error::UnknownField {
                        id: id.to_string(),
                        field: name.to_string(),
                        valid: entry.field_names().join(", "),
                    })
                }
            }
        }
        Ok(ConfigNode {
            target: id.to_string(),
            partial,
            fields,
        })
    }

    pub fn instantiate(&self, node: &ConfigNode) -> Result<Instantiated> {
        self.instantiate_with(node, Vec::new())
    }

    /// Instantiate, supplying values for MISSING fields (or overriding
    /// existing ones) by name.
    pub fn instantiate_with(
        &self,
        node: &ConfigNode,
        extra: Vec<(String, ArgValue)>,
    ) -> Result<Instantiated> {
        self.instantiate_inner(node, extra, "")
    }

    fn instantiate_inner(
        &self,
        node: &ConfigNode,
        mut extra: Vec<(String, ArgValue)>,
        prefix: &str,
    ) -> Result<Instantiated> {
        let entry = self
            .component(&node.target)
            .ok_or_else(|| Error::UnknownComponent(node.target.clone()))?;
        let mut args: Vec<(String, Option<ArgValue>)> = Vec::with_capacity(node.fields.len());
        for (name, value) in &node.fields {
            let spec = entry.fields.iter().find(|f| &f.name == name).ok_or_else(|| {
                Error::UnknownField {
                    id: node.target.clone(),
                    field: name.clone(),
                    valid: entry.field_names().join(", "),
                }
            })?;
            let path = if prefix.is_empty() {
                name.clone()
            } else {
                format!("{prefix}.{name}")
            };
            let supplied = extra
                .iter()
                .position(|(n, _)| n == name)
                .map(|i| extra.remove(i).1);
            let arg = if let Some(v) = supplied {
                Some(v)
            } else if spec.raw {
                Some(ArgValue::Raw(value.clone()))
            } else {
                self.resolve_value(value, &path)?
            };
            args.push((name.clone(), arg));
        }
        if node.partial {
            return Ok(Instantiated::Factory(PartialComponent {
                id: node.target.clone(),
                args,
                ctor: Arc::clone(&entry.ctor),
            }));
        }
        let mut entries = Vec::with_capacity(args.len());
        for (name, value) in args {
            match value {
                Some(v) => entries.push((name, v)),
                None => {
                    let path = if prefix.is_empty() {
                        name
                    } else {
                        format!("{prefix}.{name}")
                    };
                    return Err(Error::MissingField { path });
                }
            }
        }
        let mut map = ArgMap {
            component: node.target.clone(),
            entries,
        };
        (entry.ctor)(self, &mut map).map(Instantiated::Component)
    }

    /// None means "still missing" (legal only for partial nodes).
    fn resolve_value(&self, value: &ConfigValue, path: &str) -> Result<Option<ArgValue>> {
        Ok(Some(match value {
            ConfigValue::Missing => return Ok(None),
            ConfigValue::Bool(v) => ArgValue::Bool(*v),
            ConfigValue::Int(v) => ArgValue::Int(*v),
            ConfigValue::Float(v) => ArgValue::Float(*v),
            ConfigValue::Str(v) => ArgValue::Str(v.clone()),
            ConfigValue::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match self.resolve_value(item, &format!("{path}[{i}]"))? {
                        Some(v) => out.push(v),
                        None => {
                            return Err(Error::MissingField {
                                path: format!("{path}[{i}]"),
                            })
                        }
                    }
                }
                ArgValue::List(out)
            }
            ConfigValue::Node(n) => match self.instantiate_inner(n, Vec::new(), path)? {
                Instantiated::Component(b) => ArgValue::Component(b),
                Instantiated::Factory(p) => ArgValue::Factory(p),
            },
        }))
    }

    /// Parse the pinned YAML format, validating `_target_` ids as it goes.
    pub fn from_yaml(&self, text: &str) -> Result<ConfigNode> {
        yaml::parse(self, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq)]
    struct Blob {
        lr: f64,
        name: String,
        flags: Vec<usize>,
    }

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register_component(
            "test.Blob",
            vec![
                FieldSpec::with_default("lr", 0.001),
                FieldSpec::with_default("name", "blob"),
                FieldSpec::with_default("flags", vec![1usize, 2]),
            ],
            |_, args| {
                Ok(Box::new(Blob {
                    lr: args.take_f64("lr")?,
                    name: args.take_str("name")?,
                    flags: args.take_usize_list("flags")?,
                }))
            },
        )
        .unwrap();
        r
    }

    #[test]
    fn builds_fills_defaults_and_applies_overrides() {
        let r = registry();
        let node = r.builds("test.Blob", &[("lr", 0.1.into())], false).unwrap();
        assert_eq!(node.get_f64("lr").unwrap(), 0.1);
        assert_eq!(node.get_str("name").unwrap(), "blob");
    }

    #[test]
    fn builds_rejects_unknown_fields_naming_choices() {
        let r = registry();
        let err = r
            .builds("test.Blob", &[("typo_field", 1i64.into())], false)
            .unwrap_err()
            .to_string();
        assert!(err.contains("typo_field"), "{err}");
        assert!(err.contains("lr") && err.contains("flags"), "{err}");
    }

    #[test]
    fn builds_rejects_unregistered_ids() {
        let r = registry();
        assert!(matches!(
            r.builds("test.Nope", &[], false),
            Err(Error::UnknownComponent(_))
        ));
    }

    #[test]
    fn duplicate_registration_is_an_error() {
        let mut r = registry();
        let result = r.register_component("test.Blob", vec![], |_, _| Ok(Box::new(())));
        assert!(matches!(result, Err(Error::DuplicateComponent(_))));
    }

    #[test]
    fn mandatory_fields_become_missing_and_block_instantiation() {
        let mut r = Registry::new();
        r.register_component(
            "test.NeedsParams",
            vec![FieldSpec::required("params"), FieldSpec::with_default("lr", 1.0)],
            |_, args| {
                let params: Vec<f64> = args.take_component("params")?;
                let lr = args.take_f64("lr")?;
                Ok(Box::new((params, lr)))
            },
        )
        .unwrap();
        let node = r.builds("test.NeedsParams", &[], false).unwrap();
        assert_eq!(node.get("params"), Some(&ConfigValue::Missing));
        assert!(matches!(
            r.instantiate(&node),
            Err(Error::MissingField { .. })
        ));

        // Supplying the missing argument at instantiation time works.
        let got: (Vec<f64>, f64) = r
            .instantiate_with(
                &node,
                vec![("params".into(), ArgValue::component(vec![3.0]))],
            )
            .unwrap()
            .into_component()
            .unwrap();
        assert_eq!(got, (vec![3.0], 1.0));
    }

    #[test]
    fn instantiate_matches_direct_construction() {
        let r = registry();
        let node = r.builds("test.Blob", &[("lr", 0.5.into())], false).unwrap();
        let built: Blob = r.instantiate(&node).unwrap().into_component().unwrap();
        assert_eq!(
            built,
            Blob {
                lr: 0.5,
                name: "blob".into(),
                flags: vec![1, 2]
            }
        );
    }

    #[test]
    fn nested_nodes_instantiate_depth_first() {
        let mut r = registry();
        r.register_component(
            "test.Wrapper",
            vec![FieldSpec::required("inner"), FieldSpec::with_default("scale", 2.0)],
            |_, args| {
                let inner: Blob = args.take_component("inner")?;
                let scale = args.take_f64("scale")?;
                Ok(Box::new(Blob {
                    lr: inner.lr * scale,
                    ..inner
                }))
            },
        )
        .unwrap();
        let inner = r.builds("test.Blob", &[("lr", 0.25.into())], false).unwrap();
        let node = r
            .builds("test.Wrapper", &[("inner", inner.into())], false)
            .unwrap();
        let built: Blob = r.instantiate(&node).unwrap().into_component().unwrap();
        assert_eq!(built.lr, 0.5);
    }

    #[test]
    fn partial_nodes_return_factories() {
        let mut r = Registry::new();
        r.register_component(
            "test.Opt",
            vec![FieldSpec::required("params"), FieldSpec::with_default("lr", 0.001)],
            |_, args| {
                let params: Vec<f64> = args.take_component("params")?;
                let lr = args.take_f64("lr")?;
                Ok(Box::new((params, lr)))
            },
        )
        .unwrap();
        let node = r.builds("test.Opt", &[], true).unwrap();
        let factory = r.instantiate(&node).unwrap().into_factory().unwrap();
        let (params, lr): (Vec<f64>, f64) = factory
            .complete_as(&r, vec![("params".into(), ArgValue::component(vec![1.0, 2.0]))])
            .unwrap();
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(lr, 0.001);
    }

    #[test]
    fn missing_field_error_names_the_path() {
        let mut r = Registry::new();
        r.register_component(
            "test.Opt",
            vec![FieldSpec::required("params")],
            |_, args| {
                let params: Vec<f64> = args.take_component("params")?;
                Ok(Box::new(params))
            },
        )
        .unwrap();
        let node = r.builds("test.Opt", &[], false).unwrap();
        match r.instantiate(&node) {
            Err(Error::MissingField { path }) => assert_eq!(path, "params"),
            other => panic!("expected missing-field error, got {other:?}"),
        }
    }

    #[test]
    fn group_options_register_and_resolve() {
        let mut r = registry();
        let a = r.builds("test.Blob", &[("name", "a".into())], false).unwrap();
        let b = r.builds("test.Blob", &[("name", "b".into())], false).unwrap();
        r.register_group_option("model", "a", a).unwrap();
        r.register_group_option("model", "b", b.clone()).unwrap();
        assert!(r.register_group_option("model", "b", b).is_err());
        assert_eq!(r.group_options("model").unwrap().len(), 2);
        assert_eq!(
            r.group_option("model", "a").unwrap().get_str("name").unwrap(),
            "a"
        );
    }
}
