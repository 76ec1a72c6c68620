use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use slidenet::{Error, Result};

/// Flag overrides as `(dotted key, value)`; `None` flags are skipped.
#[derive(Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn set(&mut self, key: &'static str, value: Option<impl Into<Value>>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, v.into()));
        }
        self
    }
}

fn read_config(path: &Path) -> Result<Map<String, Value>> {
    let raw = fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    // a provenance file replays the configuration it recorded
    let value = match value {
        Value::Object(mut m) if m.contains_key("config_hash") && m.contains_key("config") => {
            m.remove("config").unwrap()
        }
        v => v,
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Config(format!("{} must hold a JSON object", path.display()))),
    }
}

fn insert(map: &mut Map<String, Value>, key: &str, value: Value, only_if_absent: bool) {
    let mut parts = key.split('.').peekable();
    let mut cur = map;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            if !(only_if_absent && cur.contains_key(part)) {
                cur.insert(part.to_string(), value);
            }
            return;
        }
        let next = cur.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if !next.is_object() {
            *next = Value::Object(Map::new());
        }
        cur = next.as_object_mut().unwrap();
    }
}

/// Config file (if any), then defaults for absent keys, then flags.
/// Unknown keys are rejected by the target type.
pub fn resolve<C: DeserializeOwned>(
    file: Option<&Path>,
    defaults: &[(&str, Value)],
    overrides: &Overrides,
) -> Result<(C, Value)> {
    let mut map = match file {
        Some(p) => read_config(p)?,
        None => Map::new(),
    };
    for (k, v) in defaults {
        insert(&mut map, k, v.clone(), true);
    }
    for (k, v) in &overrides.0 {
        insert(&mut map, k, v.clone(), false);
    }
    let value = Value::Object(map);
    let typed = serde_json::from_value(value.clone()).map_err(|e| Error::Config(e.to_string()))?;
    Ok((typed, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        a: u32,
        #[serde(default)]
        b: u32,
    }

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Outer {
        inner: Inner,
        name: String,
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        fs::write(&f, r#"{"inner": {"a": 1, "b": 2}, "name": "file"}"#).unwrap();
        let mut o = Overrides::default();
        o.set("inner.a", Some(7)).set("name", None::<String>);
        let (c, _): (Outer, _) = resolve(Some(&f), &[("name", "default".into())], &o).unwrap();
        assert_eq!(c, Outer { inner: Inner { a: 7, b: 2 }, name: "file".into() });
        let (c, _): (Outer, _) = resolve(None, &[("name", "default".into()), ("inner.a", 3.into())], &o).unwrap();
        assert_eq!(c.name, "default");
        assert_eq!(c.inner.a, 7);
    }

    #[test]
    fn unknown_keys_and_bad_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        fs::write(&f, r#"{"inner": {"a": 1, "typo": 2}, "name": "x"}"#).unwrap();
        let r: Result<(Outer, _)> = resolve(Some(&f), &[], &Overrides::default());
        assert!(matches!(r, Err(Error::Config(m)) if m.contains("typo")));
        fs::write(&f, "[1, 2]").unwrap();
        assert!(matches!(resolve::<Outer>(Some(&f), &[], &Overrides::default()), Err(Error::Config(_))));
        assert!(matches!(
            resolve::<Outer>(Some(&dir.path().join("none.json")), &[], &Overrides::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn provenance_files_replay_their_config() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("provenance.json");
        fs::write(&f, r#"{"config_hash": "ab", "seeds": {}, "config": {"inner": {"a": 4}, "name": "p"}}"#).unwrap();
        let (c, _): (Outer, _) = resolve(Some(&f), &[], &Overrides::default()).unwrap();
        assert_eq!(c.inner.a, 4);
    }
}
