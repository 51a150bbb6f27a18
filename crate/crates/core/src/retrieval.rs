//! Descriptor archive with exhaustive chi-square top-k search, and the
//! DESC v1 text format.
//!
//! ```text
//! DESC v1
//! count gamma C
//! <id> <C label bits> <gamma floats>      (one line per image)
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::labelmap::MultiLabelVector;

pub const DESC_MAGIC: &str = "DESC v1";

/// Guard added to each denominator of the chi-square sum.
pub const CHI_SQUARE_EPS: f64 = 1e-12;

/// `0.5 * sum_i (u_i - v_i)^2 / (u_i + v_i + eps)`.
pub fn chi_square(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    if u.iter().chain(v).any(|&x| !(x >= 0.0)) {
        return Err(Error::invalid("chi-square needs non-negative vectors"));
    }
    Ok(chi_square_unchecked(u, v))
}

fn chi_square_unchecked(u: &[f64], v: &[f64]) -> f64 {
    0.5 * u
        .iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d / (a + b + CHI_SQUARE_EPS)
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub descriptor: Vec<f64>,
    pub labels: MultiLabelVector,
}

/// Archive descriptors keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorStore {
    gamma: usize,
    num_classes: usize,
    entries: BTreeMap<String, StoreEntry>,
}

pub enum Query<'a> {
    Descriptor(&'a [f64]),
    /// A stored image; it is excluded from its own ranking.
    Id(&'a str),
}

/// Nearest entries in ascending `(distance, id)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult(pub Vec<(String, f64)>);

impl RankedResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl DescriptorStore {
    pub fn new(gamma: usize, num_classes: usize) -> Self {
        Self {
            gamma,
            num_classes,
            entries: BTreeMap::new(),
        }
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&StoreEntry> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoreEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, id: String, descriptor: Vec<f64>, labels: MultiLabelVector) -> Result<()> {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("image id {id:?} must be a non-empty token")));
        }
        if descriptor.len() != self.gamma {
            return Err(Error::Shape(format!(
                "descriptor for {id} has length {}, store expects {}",
                descriptor.len(),
                self.gamma
            )));
        }
        if labels.len() != self.num_classes {
            return Err(Error::Shape(format!(
                "labels for {id} have length {}, store expects {}",
                labels.len(),
                self.num_classes
            )));
        }
        if descriptor.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!("descriptor for {id} has a negative or non-finite value")));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate image id {id}")));
        }
        self.entries.insert(id, StoreEntry { descriptor, labels });
        Ok(())
    }

    /// Exhaustive top-`k` scan; ties broken by ascending id.
    pub fn query(&self, q: Query<'_>, k: usize) -> Result<RankedResult> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let (qvec, skip) = match q {
            Query::Descriptor(d) => (d, None),
            Query::Id(id) => {
                let e = self
                    .entries
                    .get(id)
                    .ok_or_else(|| Error::invalid(format!("unknown query id {id}")))?;
                (e.descriptor.as_slice(), Some(id))
            }
        };
        if qvec.len() != self.gamma {
            return Err(Error::Shape(format!(
                "query has length {}, store expects {}",
                qvec.len(),
                self.gamma
            )));
        }
        if qvec.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::invalid("query descriptor must be non-negative"));
        }
        let mut ranked: Vec<(String, f64)> = self
            .entries
            .iter()
            .filter(|(id, _)| Some(id.as_str()) != skip)
            .map(|(id, e)| (id.clone(), chi_square_unchecked(qvec, &e.descriptor)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(RankedResult(ranked))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((n, Err(e))) => Err(Error::format(n, e.to_string())),
                None => Err(Error::format(0, format!("unexpected end of input, expected {what}"))),
            }
        };
        let (n, magic) = next("header")?;
        if magic.trim_end_matches('\r') != DESC_MAGIC {
            return Err(Error::format(n, "malformed header: expected `DESC v1`"));
        }
        let (n, dims) = next("dimensions")?;
        let fields: Vec<&str> = dims.split_whitespace().collect();
        let [count, gamma, c] = fields[..] else {
            return Err(Error::format(n, "malformed header: expected `count gamma C`"));
        };
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(n, format!("malformed header: bad number `{s}`")))
        };
        let (count, gamma, num_classes) = (parse_dim(count)?, parse_dim(gamma)?, parse_dim(c)?);
        if gamma == 0 || num_classes == 0 {
            return Err(Error::format(n, "gamma and C must be at least 1"));
        }

        let mut store = Self::new(gamma, num_classes);
        for _ in 0..count {
            let (n, line) = next("descriptor line")?;
            let mut toks = line.split_whitespace();
            let id = toks.next().ok_or_else(|| Error::format(n, "missing image id"))?;
            let mut bits = Vec::with_capacity(num_classes.min(4096));
            for _ in 0..num_classes {
                match toks.next() {
                    Some("0") => bits.push(false),
                    Some("1") => bits.push(true),
                    Some(t) => return Err(Error::format(n, format!("bad label bit `{t}`"))),
                    None => return Err(Error::format(n, "too few fields")),
                }
            }
            let mut descriptor = Vec::with_capacity(gamma.min(4096));
            for _ in 0..gamma {
                let t = toks.next().ok_or_else(|| Error::format(n, "too few fields"))?;
                let v: f64 = t
                    .parse()
                    .map_err(|_| Error::format(n, format!("bad descriptor value `{t}`")))?;
                descriptor.push(v);
            }
            if toks.next().is_some() {
                return Err(Error::format(n, "too many fields"));
            }
            store
                .insert(id.to_string(), descriptor, MultiLabelVector::new(bits))
                .map_err(|e| Error::format(n, e.to_string()))?;
        }
        for (n, line) in lines {
            let line = line.map_err(|e| Error::format(n, e.to_string()))?;
            if !line.trim().is_empty() {
                return Err(Error::format(n, "trailing data after last entry"));
            }
        }
        Ok(store)
    }
}

impl FromStr for DescriptorStore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::read(s.as_bytes())
    }
}

impl fmt::Display for DescriptorStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{DESC_MAGIC}")?;
        writeln!(f, "{} {} {}", self.len(), self.gamma, self.num_classes)?;
        let mut line = String::new();
        for (id, e) in &self.entries {
            line.clear();
            line.push_str(id);
            for &b in e.labels.bits() {
                line.push_str(if b { " 1" } else { " 0" });
            }
            for v in &e.descriptor {
                write!(line, " {v}")?;
            }
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}
