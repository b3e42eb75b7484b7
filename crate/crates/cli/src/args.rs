//! Tiny flag parser: `--key value`, `--key=value`, bare `--switch`, and
//! positional arguments. Unknown flags are usage errors so typos fail fast.

use std::collections::{BTreeMap, BTreeSet};

use aq_core::{Error, Result};

pub struct Args {
    pub positional: Vec<String>,
    values: BTreeMap<String, String>,
    switches: BTreeSet<String>,
}

impl Args {
    /// `value_keys` take an argument; `switch_keys` do not.
    pub fn parse(
        raw: &[String],
        value_keys: &[&str],
        switch_keys: &[&str],
    ) -> Result<Args> {
        let mut positional = Vec::new();
        let mut values = BTreeMap::new();
        let mut switches = BTreeSet::new();
        let mut it = raw.iter().peekable();
        while let Some(arg) = it.next() {
            if let Some(stripped) = arg.strip_prefix("--") {
                let (key, inline) = match stripped.split_once('=') {
                    Some((k, v)) => (k.to_string(), Some(v.to_string())),
                    None => (stripped.to_string(), None),
                };
                if switch_keys.contains(&key.as_str()) {
                    if inline.is_some() {
                        return Err(Error::Config(format!("--{key} takes no value")));
                    }
                    switches.insert(key);
                } else if value_keys.contains(&key.as_str()) {
                    let value = match inline {
                        Some(v) => v,
                        None => it
                            .next()
                            .cloned()
                            .ok_or_else(|| Error::Config(format!("--{key} needs a value")))?,
                    };
                    values.insert(key, value);
                } else {
                    return Err(Error::Config(format!("unknown flag --{key}")));
                }
            } else {
                positional.push(arg.clone());
            }
        }
        Ok(Args { positional, values, switches })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required flag --{key}")))
    }

    pub fn switch(&self, key: &str) -> bool {
        self.switches.contains(key)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("--{key} value '{raw}' is not valid"))),
        }
    }
}
