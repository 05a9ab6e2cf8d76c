//! Named parameter storage with the shared/rate-specific partition.
//!
//! Every parameter name starts with `theta.` (shared across rate points) or
//! `phi<i>.` (owned by rate point i, 1-based). The prefix is the tag; a name
//! that fits neither is rejected at insertion, so the partition is total and
//! the phi groups are disjoint by construction.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradcore::{checkpoint, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamTag {
    Shared,
    Specific(usize),
}

pub fn parse_tag(name: &str) -> Result<ParamTag> {
    if let Some(rest) = name.strip_prefix("theta.") {
        if rest.is_empty() {
            return Err(Error::invalid("param_tag", format!("bare prefix {name}")));
        }
        return Ok(ParamTag::Shared);
    }
    if let Some(rest) = name.strip_prefix("phi") {
        if let Some(dot) = rest.find('.') {
            let idx: usize = rest[..dot]
                .parse()
                .map_err(|_| Error::invalid("param_tag", format!("bad rate index in {name}")))?;
            if idx == 0 || rest[dot + 1..].is_empty() {
                return Err(Error::invalid("param_tag", format!("bad name {name}")));
            }
            return Ok(ParamTag::Specific(idx));
        }
    }
    Err(Error::invalid(
        "param_tag",
        format!("{name} is neither theta.* nor phi<i>.*"),
    ))
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        parse_tag(name)?;
        if self.index.contains_key(name) {
            return Err(Error::invalid("param_store", format!("duplicate {name}")));
        }
        value.validate_finite(name)?;
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable: true,
        });
        Ok(())
    }

    fn pos(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("param_store", format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entries[self.pos(name)?].value)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.pos(name)?;
        if self.entries[i].value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param_store_set",
                lhs: self.entries[i].value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        value.validate_finite(name)?;
        self.entries[i].value = value;
        Ok(())
    }

    pub fn tag(&self, name: &str) -> Result<ParamTag> {
        self.pos(name)?;
        parse_tag(name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_trainable(&self, name: &str) -> Result<bool> {
        Ok(self.entries[self.pos(name)?].trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = self.pos(name)?;
        self.entries[i].trainable = trainable;
        Ok(())
    }

    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) {
        for e in &mut self.entries {
            if pred(&e.name) {
                e.trainable = trainable;
            }
        }
    }

    /// Every name parses and no specific tag exceeds the rate count.
    pub fn validate_partition(&self, num_rates: usize) -> Result<()> {
        for e in &self.entries {
            if let ParamTag::Specific(i) = parse_tag(&e.name)? {
                if i > num_rates {
                    return Err(Error::invalid(
                        "param_store",
                        format!("{} tagged for rate {i} of {num_rates}", e.name),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Trainable shared parameters in insertion order; the flattening order
    /// for joint-descent gradient vectors.
    pub fn trainable_shared(&self) -> Vec<&ParamEntry> {
        self.entries
            .iter()
            .filter(|e| e.trainable && matches!(parse_tag(&e.name), Ok(ParamTag::Shared)))
            .collect()
    }

    pub fn trainable_specific(&self, rate: usize) -> Vec<&ParamEntry> {
        self.entries
            .iter()
            .filter(|e| e.trainable && parse_tag(&e.name) == Ok(ParamTag::Specific(rate)))
            .collect()
    }

    pub fn shared_grad_len(&self) -> usize {
        self.trainable_shared().iter().map(|e| e.value.numel()).sum()
    }

    /// Total scalar count under a name prefix.
    pub fn param_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Apply `update` to the named parameter's values in place.
    pub fn update_values(&mut self, name: &str, update: impl Fn(usize, f64) -> f64) -> Result<()> {
        let i = self.pos(name)?;
        let data = self.entries[i].value.data_mut();
        for (k, v) in data.iter_mut().enumerate() {
            *v = update(k, *v);
        }
        self.entries[i].value.validate_finite(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            path,
            self.entries.iter().map(|e| (e.name.as_str(), &e.value)),
        )
    }

    /// Load values by name from a checkpoint. Names in the file but not in
    /// the store are an error; store parameters absent from the file keep
    /// their values when `allow_missing`, otherwise the load fails. Returns
    /// the number of parameters updated.
    pub fn load_into(&mut self, path: &Path, allow_missing: bool) -> Result<usize> {
        let loaded = checkpoint::load(path)?;
        let mut seen = vec![false; self.entries.len()];
        let mut matched = 0;
        for (name, value) in loaded {
            let i = self.pos(&name).map_err(|_| {
                Error::format(
                    "checkpoint",
                    format!("file contains unknown parameter {name}"),
                )
            })?;
            if self.entries[i].value.shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint_load",
                    lhs: self.entries[i].value.shape().to_vec(),
                    rhs: value.shape().to_vec(),
                });
            }
            self.entries[i].value = value;
            seen[i] = true;
            matched += 1;
        }
        if !allow_missing {
            if let Some(miss) = seen.iter().position(|&s| !s) {
                return Err(Error::format(
                    "checkpoint",
                    format!("file lacks parameter {}", self.entries[miss].name),
                ));
            }
        }
        Ok(matched)
    }

    /// Register every parameter as a graph leaf; trainability becomes
    /// requires_grad.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            let v = g.leaf(e.value.clone(), e.trainable)?;
            vars.insert(e.name.clone(), v);
        }
        Ok(Bound { vars })
    }
}

/// Name-to-leaf map for one training graph.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("bound", format!("unbound parameter {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn tags_parse_from_prefixes() {
        assert_eq!(parse_tag("theta.ga.w").unwrap(), ParamTag::Shared);
        assert_eq!(parse_tag("phi3.delta").unwrap(), ParamTag::Specific(3));
        assert!(parse_tag("phi0.delta").is_err());
        assert!(parse_tag("gamma.w").is_err());
        assert!(parse_tag("theta.").is_err());
        assert!(parse_tag("phix.w").is_err());
        assert!(parse_tag("phi2").is_err());
    }

    #[test]
    fn insertion_enforces_tags_and_uniqueness() {
        let mut s = ParamStore::new();
        s.insert("theta.w", t(&[1.0, 2.0])).unwrap();
        assert!(s.insert("theta.w", t(&[3.0])).is_err());
        assert!(s.insert("untagged", t(&[1.0])).is_err());
        assert!(s.insert("theta.nan", t(&[f64::NAN])).is_err());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn partition_validation_bounds_rate_indices() {
        let mut s = ParamStore::new();
        s.insert("theta.w", t(&[1.0])).unwrap();
        s.insert("phi1.delta", t(&[1.0])).unwrap();
        s.insert("phi2.delta", t(&[2.0])).unwrap();
        assert!(s.validate_partition(2).is_ok());
        assert!(s.validate_partition(1).is_err());
    }

    #[test]
    fn trainable_filters_follow_tags_and_flags() {
        let mut s = ParamStore::new();
        s.insert("theta.a", t(&[1.0, 2.0])).unwrap();
        s.insert("theta.b", t(&[3.0])).unwrap();
        s.insert("phi1.delta", t(&[1.0])).unwrap();
        s.insert("phi2.delta", t(&[2.0])).unwrap();
        assert_eq!(s.shared_grad_len(), 3);
        s.set_trainable("theta.b", false).unwrap();
        assert_eq!(s.shared_grad_len(), 2);
        assert_eq!(s.trainable_specific(2).len(), 1);
        s.set_trainable_where(|n| n.starts_with("phi"), false);
        assert!(s.trainable_specific(2).is_empty());
        assert_eq!(s.param_count("theta."), 3);
    }

    #[test]
    fn set_value_keeps_shape_fixed() {
        let mut s = ParamStore::new();
        s.insert("theta.w", t(&[1.0, 2.0])).unwrap();
        assert!(s.set_value("theta.w", t(&[5.0, 6.0])).is_ok());
        assert!(s.set_value("theta.w", t(&[5.0])).is_err());
        assert!(s.set_value("theta.missing", t(&[5.0])).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_partial_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut s = ParamStore::new();
        s.insert("theta.w", t(&[1.5, -2.5])).unwrap();
        s.insert("phi1.delta", Tensor::scalar(3.0)).unwrap();
        s.save(&path).unwrap();

        let mut s2 = ParamStore::new();
        s2.insert("theta.w", t(&[0.0, 0.0])).unwrap();
        s2.insert("phi1.delta", Tensor::scalar(0.0)).unwrap();
        assert_eq!(s2.load_into(&path, false).unwrap(), 2);
        assert_eq!(s2.get("theta.w").unwrap().data(), &[1.5, -2.5]);

        // a store with extra parameters only loads with allow_missing
        let mut s3 = ParamStore::new();
        s3.insert("theta.w", t(&[0.0, 0.0])).unwrap();
        s3.insert("phi1.delta", Tensor::scalar(0.0)).unwrap();
        s3.insert("phi2.delta", Tensor::scalar(9.0)).unwrap();
        assert!(s3.load_into(&path, false).is_err());
        assert_eq!(s3.load_into(&path, true).unwrap(), 2);
        assert_eq!(s3.get("phi2.delta").unwrap().data(), &[9.0]);

        // unknown name in the file is always an error
        let mut s4 = ParamStore::new();
        s4.insert("theta.other", t(&[0.0])).unwrap();
        assert!(s4.load_into(&path, true).is_err());
    }

    #[test]
    fn bind_respects_trainability() {
        let mut s = ParamStore::new();
        s.insert("theta.w", t(&[2.0])).unwrap();
        s.insert("phi1.delta", Tensor::scalar(1.0)).unwrap();
        s.set_trainable("phi1.delta", false).unwrap();
        let mut g = Graph::new();
        let b = s.bind(&mut g).unwrap();
        let w = b.var("theta.w").unwrap();
        let d = b.var("phi1.delta").unwrap();
        let wd = g.mul(w, d).unwrap();
        let loss = g.reduce_sum(wd).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().unwrap(), &[1.0]);
        assert!(g.grad(d).unwrap().is_none());
        assert!(b.var("theta.nope").is_err());
    }
}
