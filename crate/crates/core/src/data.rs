//! Signal space, signal vectors, instances and the line-delimited dataset format.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dgp::normalize_signal_name;
use crate::error::{Error, Result};

/// One basic signal: a canonical lowercase underscore-separated name plus a description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// Ordered list of the `M` basic signals. Index `j` in a [`SignalVector`] refers to `signals[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<SignalDef>", into = "Vec<SignalDef>")]
pub struct SignalSpace {
    signals: Vec<SignalDef>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl SignalSpace {
    pub fn new(signals: Vec<SignalDef>) -> Result<Self> {
        let mut index = HashMap::with_capacity(signals.len());
        for (j, s) in signals.iter().enumerate() {
            match normalize_signal_name(&s.name) {
                Some(canon) if canon == s.name => {}
                _ => {
                    return Err(Error::contract(format!(
                        "signal name {:?} is not in canonical form",
                        s.name
                    )))
                }
            }
            if index.insert(s.name.clone(), j).is_some() {
                return Err(Error::contract(format!("duplicate signal name {:?}", s.name)));
            }
        }
        Ok(Self { signals, index })
    }

    /// Builds a space from canonical names, using the spaced-out name as description.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            names
                .into_iter()
                .map(|n| {
                    let name = n.into();
                    let description = name.replace('_', " ");
                    SignalDef { name, description }
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn signals(&self) -> &[SignalDef] {
        &self.signals
    }

    pub fn name(&self, j: usize) -> &str {
        &self.signals[j].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.signals.iter().map(|s| s.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Maps names (normalized first) to a vector. Unknown names are returned as the error.
    pub fn vector_from_names<S: AsRef<str>>(
        &self,
        names: &[S],
    ) -> std::result::Result<SignalVector, Vec<String>> {
        let mut v = SignalVector::zeros(self.len());
        let mut unknown = Vec::new();
        for raw in names {
            let found = normalize_signal_name(raw.as_ref()).and_then(|n| self.index_of(&n));
            match found {
                Some(j) => v.set(j, true),
                None => unknown.push(raw.as_ref().to_string()),
            }
        }
        if unknown.is_empty() {
            Ok(v)
        } else {
            Err(unknown)
        }
    }

    /// Names of the set bits, in signal-index order.
    pub fn names_of(&self, v: &SignalVector) -> Vec<String> {
        v.ones().map(|j| self.signals[j].name.clone()).collect()
    }
}

impl TryFrom<Vec<SignalDef>> for SignalSpace {
    type Error = Error;

    fn try_from(signals: Vec<SignalDef>) -> Result<Self> {
        Self::new(signals)
    }
}

impl From<SignalSpace> for Vec<SignalDef> {
    fn from(space: SignalSpace) -> Self {
        space.signals
    }
}

/// Presence/absence of each basic signal, index-aligned to a [`SignalSpace`].
///
/// Serialized as a list of `0`/`1` integers.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct SignalVector(Vec<bool>);

impl SignalVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn from_indices(m: usize, ones: &[usize]) -> Self {
        let mut v = Self::zeros(m);
        for &j in ones {
            v.set(j, true);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, value: bool) {
        self.0[j] = value;
    }

    /// Copy of `self` with bit `j` set.
    pub fn with(&self, j: usize) -> Self {
        let mut v = self.clone();
        v.set(j, true);
        v
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// True when at least one signal is present.
    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    /// Every set bit of `self` is also set in `other`. Lengths must match.
    pub fn is_subset_of(&self, other: &SignalVector) -> Result<bool> {
        if self.len() != other.len() {
            return Err(Error::contract(format!(
                "signal vector lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b))
    }
}

impl fmt::Debug for SignalVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SignalVector(")?;
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

impl Serialize for SignalVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter().map(|&b| b as u8))
    }
}

impl<'de> Deserialize<'de> for SignalVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(deserializer)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "signal bit must be 0 or 1, got {other}"
                ))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(SignalVector)
    }
}

/// A state label. Accepts JSON numbers or strings; numeric labels are written back as numbers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateLabel(String);

impl StateLabel {
    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Numeric value of the label, if it is one.
    pub fn as_f64(&self) -> Option<f64> {
        self.0.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateLabel {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for StateLabel {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl Serialize for StateLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if let Ok(i) = self.0.parse::<i64>() {
            if i.to_string() == self.0 {
                return serializer.serialize_i64(i);
            }
        }
        if let Ok(x) = self.0.parse::<f64>() {
            if x.is_finite() && serde_json::Number::from_f64(x).map(|n| n.to_string()) == Some(self.0.clone()) {
                return serializer.serialize_f64(x);
            }
        }
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for StateLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::String(s) => Ok(StateLabel(s)),
            serde_json::Value::Number(n) => Ok(StateLabel(n.to_string())),
            serde_json::Value::Bool(b) => Ok(StateLabel(if b { "1" } else { "0" }.into())),
            other => Err(serde::de::Error::custom(format!(
                "state must be a number or string, got {other}"
            ))),
        }
    }
}

/// One `(t, z, y)` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    /// The supervisor's unstructured information.
    pub text: String,
    /// The upstream agent's recommendation, in `[0, 1]`.
    pub recommendation: f64,
    pub state: StateLabel,
    /// Provenance only; no computation reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream_features: Option<serde_json::Value>,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, recommendation: f64, state: impl Into<StateLabel>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            recommendation,
            state: state.into(),
            upstream_features: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.recommendation) {
            return Err(Error::contract(format!(
                "instance {}: recommendation {} outside [0, 1]",
                self.id, self.recommendation
            )));
        }
        Ok(())
    }
}

/// A corpus of instances over a signal space, with optional occurrence rows `s⁽⁰⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub space: SignalSpace,
    pub occurrences: Option<Vec<SignalVector>>,
}

impl Dataset {
    pub fn new(
        instances: Vec<Instance>,
        space: SignalSpace,
        occurrences: Option<Vec<SignalVector>>,
    ) -> Result<Self> {
        for inst in &instances {
            inst.validate()?;
        }
        if let Some(rows) = &occurrences {
            check_rows(rows, instances.len(), space.len())?;
        }
        Ok(Self {
            instances,
            space,
            occurrences,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn occurrences(&self) -> Result<&[SignalVector]> {
        self.occurrences
            .as_deref()
            .ok_or_else(|| Error::contract("dataset has no occurrence matrix"))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }
}

/// Checks that `rows` has `n` rows of length `m`.
pub fn check_rows(rows: &[SignalVector], n: usize, m: usize) -> Result<()> {
    if rows.len() != n {
        return Err(Error::contract(format!(
            "{} signal rows for {} instances",
            rows.len(),
            n
        )));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(Error::contract(format!(
            "row {i} has length {}, expected {m}",
            r.len()
        )));
    }
    Ok(())
}

/// Reads line-delimited JSON records. Blank lines are skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    let instances: Vec<Instance> = read_jsonl(path)?;
    for inst in &instances {
        inst.validate()?;
    }
    Ok(instances)
}
