//! Pixel-level land-cover maps and the per-class region statistics derived
//! from them.
//!
//! A class's region is the union of all pixels carrying that class id, so it
//! may be spatially disconnected. Pixel `(r, c)` sits at coordinate `(r, c)`,
//! origin top-left.

use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const LMAP_MAGIC: &str = "LMAP v1";

/// Hard cap on `H * W` accepted by the parser.
pub const MAX_PIXELS: usize = 1 << 26;

/// The label set `{l_0, .., l_{C-1}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    num_classes: usize,
    names: Option<Vec<String>>,
}

impl LabelSet {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("label set needs at least one class"));
        }
        Ok(Self {
            num_classes,
            names: None,
        })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut set = Self::new(names.len())?;
        set.names = Some(names);
        Ok(set)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.as_ref()?.get(id).map(String::as_str)
    }
}

/// Binary presence vector `y`; bit `n` is set iff class `n` occupies a pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiLabelVector {
    bits: Vec<bool>,
}

impl MultiLabelVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_ids(num_classes: usize, ids: &[usize]) -> Result<Self> {
        let mut bits = vec![false; num_classes];
        for &id in ids {
            *bits.get_mut(id).ok_or(Error::ClassOutOfRange { id, num_classes })? = true;
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, n: usize) -> bool {
        self.bits.get(n).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of classes set in both vectors.
    pub fn shared(&self, other: &MultiLabelVector) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "label vectors of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count())
    }
}

/// Per-class sizes and centroids of one map.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    sizes: Vec<u64>,
    centroids: Vec<Option<(f64, f64)>>,
}

impl RegionStats {
    pub fn size(&self, class: usize) -> u64 {
        self.sizes.get(class).copied().unwrap_or(0)
    }

    pub fn centroid(&self, class: usize) -> Option<(f64, f64)> {
        self.centroids.get(class).copied().flatten()
    }

    pub fn num_classes(&self) -> usize {
        self.sizes.len()
    }

    /// Present classes in ascending id order.
    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        self.sizes
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0)
            .map(|(n, _)| n)
    }

    /// Euclidean distance between two present classes' centroids.
    pub fn distance(&self, p: usize, q: usize) -> Result<f64> {
        let a = self.centroid(p).ok_or(Error::NoRegion(p))?;
        let b = self.centroid(q).ok_or(Error::NoRegion(q))?;
        Ok((a.0 - b.0).hypot(a.1 - b.1))
    }
}

/// Row-major grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    pixels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, pixels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("empty map"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("label set needs at least one class"));
        }
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} map",
                pixels.len()
            )));
        }
        if let Some(&id) = pixels.iter().find(|&&id| id as usize >= num_classes) {
            return Err(Error::ClassOutOfRange {
                id: id as usize,
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            pixels,
        })
    }

    /// Builds a map from a closure over `(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        num_classes: usize,
        mut f: impl FnMut(usize, usize) -> u32,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, num_classes, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.pixels[row * self.width + col]
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                id: class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Sizes and centroids of every class in one pass.
    pub fn region_stats(&self) -> RegionStats {
        let mut sizes = vec![0u64; self.num_classes];
        let mut sums = vec![(0u64, 0u64); self.num_classes];
        for (i, &id) in self.pixels.iter().enumerate() {
            let id = id as usize;
            sizes[id] += 1;
            sums[id].0 += (i / self.width) as u64;
            sums[id].1 += (i % self.width) as u64;
        }
        let centroids = sizes
            .iter()
            .zip(&sums)
            .map(|(&n, &(sr, sc))| (n > 0).then(|| (sr as f64 / n as f64, sc as f64 / n as f64)))
            .collect();
        RegionStats { sizes, centroids }
    }

    pub fn labels_present(&self) -> MultiLabelVector {
        let mut bits = vec![false; self.num_classes];
        for &id in &self.pixels {
            bits[id as usize] = true;
        }
        MultiLabelVector { bits }
    }

    /// Pixel count of `class` (0 when absent).
    pub fn region_size(&self, class: usize) -> Result<u64> {
        self.check_class(class)?;
        Ok(self.pixels.iter().filter(|&&id| id as usize == class).count() as u64)
    }

    /// Mean `(row, col)` over all pixels of `class`.
    pub fn region_centroid(&self, class: usize) -> Result<(f64, f64)> {
        self.check_class(class)?;
        self.region_stats().centroid(class).ok_or(Error::NoRegion(class))
    }

    pub fn region_distance(&self, p: usize, q: usize) -> Result<f64> {
        self.check_class(p)?;
        self.check_class(q)?;
        self.region_stats().distance(p, q)
    }

    pub fn to_lmap_string(&self) -> String {
        self.to_string()
    }

    /// Parses an LMAP v1 stream.
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
        if magic.trim_end_matches('\r') != LMAP_MAGIC {
            return Err(Error::format(n, "malformed header: expected `LMAP v1`"));
        }
        let (n, dims) = next("dimensions")?;
        let fields: Vec<&str> = dims.split_whitespace().collect();
        let [h, w, c] = fields[..] else {
            return Err(Error::format(n, "malformed header: expected `H W C`"));
        };
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(n, format!("malformed header: bad number `{s}`")))
        };
        let (height, width, num_classes) = (parse_dim(h)?, parse_dim(w)?, parse_dim(c)?);
        if height == 0 || width == 0 {
            return Err(Error::format(n, "empty map"));
        }
        if num_classes == 0 || num_classes > u32::MAX as usize {
            return Err(Error::format(n, "malformed header: C must be in [1, 2^32)"));
        }
        if height.checked_mul(width).is_none_or(|p| p > MAX_PIXELS) {
            return Err(Error::format(n, "map too large"));
        }

        let mut pixels = Vec::new();
        for _ in 0..height {
            let (n, row) = next("pixel row")?;
            let start = pixels.len();
            for tok in row.split_whitespace() {
                let id: u64 = tok
                    .parse()
                    .map_err(|_| Error::format(n, format!("bad class id `{tok}`")))?;
                if id >= num_classes as u64 {
                    return Err(Error::format(n, format!("class id out of range: {id}")));
                }
                if pixels.len() - start == width {
                    return Err(Error::format(n, "row length mismatch"));
                }
                pixels.push(id as u32);
            }
            if pixels.len() - start != width {
                return Err(Error::format(n, "row length mismatch"));
            }
        }
        for (n, line) in lines {
            let line = line.map_err(|e| Error::format(n, e.to_string()))?;
            if !line.trim().is_empty() {
                return Err(Error::format(n, "trailing data after last row"));
            }
        }
        Self::new(height, width, num_classes, pixels)
    }
}

impl FromStr for LabelMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::read(s.as_bytes())
    }
}

impl fmt::Display for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{LMAP_MAGIC}")?;
        writeln!(f, "{} {} {}", self.height, self.width, self.num_classes)?;
        let mut line = String::new();
        for row in self.pixels.chunks(self.width) {
            line.clear();
            for (i, id) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                write!(line, "{id}")?;
            }
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// `labels_present` against an explicit label set.
pub fn labels_present(map: &LabelMap, labels: &LabelSet) -> Result<MultiLabelVector> {
    if labels.num_classes() != map.num_classes() {
        return Err(Error::Shape(format!(
            "label set has {} classes, map has {}",
            labels.num_classes(),
            map.num_classes()
        )));
    }
    Ok(map.labels_present())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half_split() -> LabelMap {
        LabelMap::from_fn(4, 4, 2, |_, c| (c >= 2) as u32).unwrap()
    }

    fn corner() -> LabelMap {
        LabelMap::from_fn(4, 4, 2, |r, c| (r + c > 0) as u32).unwrap()
    }

    #[test]
    fn load_minimal() {
        let m: LabelMap = "LMAP v1\n2 2 2\n0 1\n1 0\n".parse().unwrap();
        assert_eq!((m.height(), m.width()), (2, 2));
        assert_eq!(m.pixels(), &[0, 1, 1, 0]);
    }

    #[test]
    fn load_rejects_short_row() {
        let err = "LMAP v1\n2 2 2\n0\n1 0\n".parse::<LabelMap>().unwrap_err();
        assert!(err.to_string().contains("row length mismatch"), "{err}");
        let err = "LMAP v1\n2 2 2\n0 1 1\n1 0\n".parse::<LabelMap>().unwrap_err();
        assert!(err.to_string().contains("row length mismatch"), "{err}");
    }

    #[test]
    fn load_rejects_out_of_range() {
        let err = "LMAP v1\n2 2 2\n0 2\n1 0\n".parse::<LabelMap>().unwrap_err();
        assert!(err.to_string().contains("class id out of range"), "{err}");
        assert!(err.to_string().starts_with("line 3"), "{err}");
    }

    #[test]
    fn load_rejects_bad_headers() {
        for text in [
            "",
            "LMAP v2\n1 1 1\n0\n",
            "LMAP v1\n1 1\n0\n",
            "LMAP v1\n0 2 1\n",
            "LMAP v1\n1 1 0\n0\n",
            "LMAP v1\n2 1 1\n0\n",
            "LMAP v1\n1 1 1\n0\n0\n",
        ] {
            assert!(text.parse::<LabelMap>().is_err(), "{text:?}");
        }
    }

    #[test]
    fn labels_present_scan() {
        let m = LabelMap::from_fn(4, 4, 4, |r, _| if r < 2 { 0 } else { 2 }).unwrap();
        let y = labels_present(&m, &LabelSet::new(4).unwrap()).unwrap();
        assert_eq!(y.bits(), &[true, false, true, false]);
        let solid = LabelMap::from_fn(3, 3, 5, |_, _| 3).unwrap();
        assert_eq!(solid.labels_present().count(), 1);
        assert!(labels_present(&m, &LabelSet::new(3).unwrap()).is_err());
    }

    #[test]
    fn sizes_and_centroids() {
        let m = half_split();
        assert_eq!(m.region_size(0).unwrap(), 8);
        assert_eq!(m.region_size(1).unwrap(), 8);
        assert_eq!(m.region_centroid(0).unwrap(), (1.5, 0.5));
        assert_eq!(m.region_distance(0, 1).unwrap(), 2.0);
        assert_eq!(m.region_distance(1, 1).unwrap(), 0.0);

        let c = corner();
        assert_eq!(c.region_centroid(0).unwrap(), (0.0, 0.0));
        assert!((c.region_centroid(1).unwrap().0 - 1.6).abs() < 1e-15);
        assert!((c.region_distance(0, 1).unwrap() - 2.262742).abs() < 1e-6);

        let full = LabelMap::from_fn(4, 4, 3, |_, _| 1).unwrap();
        assert_eq!(full.region_centroid(1).unwrap(), (1.5, 1.5));
        assert_eq!(full.region_size(0).unwrap(), 0);
        assert!(matches!(full.region_centroid(0), Err(Error::NoRegion(0))));
        assert!(matches!(full.region_distance(0, 1), Err(Error::NoRegion(0))));
        assert!(matches!(full.region_size(3), Err(Error::ClassOutOfRange { .. })));
    }

    fn arb_map() -> impl Strategy<Value = LabelMap> {
        (1usize..10, 1usize..10, 1usize..6).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(0..c as u32, h * w)
                .prop_map(move |px| LabelMap::new(h, w, c, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn sizes_partition_the_map(m in arb_map()) {
            let total: u64 = (0..m.num_classes()).map(|n| m.region_size(n).unwrap()).sum();
            prop_assert_eq!(total, (m.height() * m.width()) as u64);
            let y = m.labels_present();
            for n in 0..m.num_classes() {
                prop_assert_eq!(y.get(n), m.region_size(n).unwrap() > 0);
            }
            prop_assert!(y.count() >= 1);
        }

        #[test]
        fn distance_is_a_bounded_symmetric_metric(m in arb_map()) {
            let stats = m.region_stats();
            let bound = (((m.height() - 1).pow(2) + (m.width() - 1).pow(2)) as f64).sqrt();
            let present: Vec<_> = stats.present().collect();
            for &p in &present {
                let (r, c) = stats.centroid(p).unwrap();
                prop_assert!(r >= 0.0 && r <= (m.height() - 1) as f64);
                prop_assert!(c >= 0.0 && c <= (m.width() - 1) as f64);
                prop_assert_eq!(stats.distance(p, p).unwrap(), 0.0);
                for &q in &present {
                    let d = stats.distance(p, q).unwrap();
                    prop_assert!(d >= 0.0 && d <= bound + 1e-12);
                    prop_assert_eq!(d, stats.distance(q, p).unwrap());
                }
            }
        }

        #[test]
        fn lmap_round_trip(m in arb_map()) {
            let back: LabelMap = m.to_lmap_string().parse().unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
