//! Plain-text `key = value` files. `#` starts a comment; keys are unique.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    origin: String,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                bail!("{origin}:{}: empty key", n + 1);
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("{origin}:{}: duplicate key '{key}'", n + 1);
            }
        }
        Ok(KeyValues {
            entries,
            origin: origin.to_string(),
        })
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| anyhow!("{}: missing required key '{key}'", self.origin))
    }

    /// Comma-separated list; empty entries are dropped.
    pub fn take_list(&mut self, key: &str) -> Vec<String> {
        self.take(key).map(|v| split_list(&v)).unwrap_or_default()
    }

    pub fn take_parsed<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("{}: bad value for '{key}': {e}", self.origin)),
        }
    }

    /// Errors if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(k) = self.entries.keys().next() {
            bail!("{}: unknown key '{k}'", self.origin);
        }
        Ok(())
    }
}

pub fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// `a..b` (inclusive) or a comma list of seeds.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim().parse().context("seed range end")?;
        if b < a {
            bail!("empty seed range {v}");
        }
        return Ok((a..=b).collect());
    }
    let seeds = split_list(v)
        .iter()
        .map(|s| s.parse::<u64>().with_context(|| format!("bad seed '{s}'")))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_rejects_leftovers() {
        let mut kv = KeyValues::parse("# header\na = 1 # note\nb= x, y ,\n\n", "t").unwrap();
        assert_eq!(kv.take_parsed::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.take_list("b"), vec!["x", "y"]);
        kv.finish().unwrap();
        let mut kv = KeyValues::parse("c = 2", "t").unwrap();
        assert!(kv.require("a").is_err());
        assert!(kv.finish().is_err());
        assert!(KeyValues::parse("a=1\na=2", "t").is_err());
        assert!(KeyValues::parse("novalue", "t").is_err());
    }

    #[test]
    fn seeds() {
        assert_eq!(parse_seeds("5..8").unwrap(), vec![5, 6, 7, 8]);
        assert_eq!(parse_seeds("3, 1").unwrap(), vec![3, 1]);
        assert!(parse_seeds("4..2").is_err());
        assert!(parse_seeds("").is_err());
    }
}
