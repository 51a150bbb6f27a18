//! Region co-occurrence graphs and their adjacency matrices.
//!
//! Nodes are the classes present in a label map; every unordered pair of
//! present classes (self-pairs included by default) is an edge. Edge weights
//! follow one of three modes:
//!
//! * `Binary`: 1 for every edge.
//! * `Literal`: `s(p) s(q) / n_s * (1 - d(p, q) / n_d)` where `s` is region
//!   size and `d` the distance between region centroids.
//! * `Scaled`: `target_scale` times the literal weight. With the default
//!   `target_scale = 4 / (H W)`, off-diagonal weights lie in `[0, 1]` and a
//!   self-edge lies in `[0, 4]` (it reaches 1 at half coverage).
//!
//! `n_s` and `n_d` default to the largest values attainable on an `H x W`
//! grid: `H W` and `sqrt(H^2 + W^2)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{LabelMap, RegionStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Binary,
    Literal,
    Scaled,
}

/// How a size or distance normalizer is chosen for one map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalizer {
    /// Largest value attainable on the map's grid.
    Attainable,
    /// Largest value observed among the map's present classes. Falls back to
    /// `Attainable` when that maximum is zero (single-class distances).
    PerImageMax,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub mode: WeightMode,
    pub n_s: Normalizer,
    pub n_d: Normalizer,
    /// `None` means `4 / (H W)`. Only used in `Scaled` mode.
    pub target_scale: Option<f64>,
    pub self_edges: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            mode: WeightMode::Scaled,
            n_s: Normalizer::Attainable,
            n_d: Normalizer::Attainable,
            target_scale: None,
            self_edges: true,
        }
    }
}

impl WeightConfig {
    pub fn with_mode(mode: WeightMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// Normalizers resolved against a particular map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedWeights {
    pub n_s: f64,
    pub n_d: f64,
    pub scale: f64,
}

impl WeightConfig {
    pub fn resolve(&self, map: &LabelMap, stats: &RegionStats) -> Result<ResolvedWeights> {
        let (h, w) = (map.height() as f64, map.width() as f64);
        let attainable_s = h * w;
        let attainable_d = h.hypot(w);
        let n_s = match self.n_s {
            Normalizer::Attainable => attainable_s,
            Normalizer::PerImageMax => stats.present().map(|n| stats.size(n)).max().unwrap_or(0) as f64,
            Normalizer::Fixed(v) => v,
        };
        let n_d = match self.n_d {
            Normalizer::Attainable => attainable_d,
            Normalizer::PerImageMax => {
                let present: Vec<usize> = stats.present().collect();
                let mut max = 0.0f64;
                for (i, &p) in present.iter().enumerate() {
                    for &q in &present[i + 1..] {
                        max = max.max(stats.distance(p, q)?);
                    }
                }
                if max > 0.0 {
                    max
                } else {
                    attainable_d
                }
            }
            Normalizer::Fixed(v) => v,
        };
        let scale = match self.mode {
            WeightMode::Scaled => self.target_scale.unwrap_or(4.0 / attainable_s),
            _ => 1.0,
        };
        for (name, v) in [("n_s", n_s), ("n_d", n_d), ("target_scale", scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(ResolvedWeights { n_s, n_d, scale })
    }
}

fn weight_from_stats(
    stats: &RegionStats,
    p: usize,
    q: usize,
    mode: WeightMode,
    norm: &ResolvedWeights,
) -> Result<f64> {
    let (sp, sq) = (stats.size(p), stats.size(q));
    if sp == 0 || sq == 0 {
        return Ok(0.0);
    }
    if mode == WeightMode::Binary {
        return Ok(1.0);
    }
    let d = if p == q { 0.0 } else { stats.distance(p, q)? };
    let literal = (sp as f64 * sq as f64 / norm.n_s) * (1.0 - d / norm.n_d);
    Ok(norm.scale * literal)
}

/// Weight of edge `(p, q)`; zero when either class is absent.
pub fn edge_weight(map: &LabelMap, p: usize, q: usize, cfg: &WeightConfig) -> Result<f64> {
    for id in [p, q] {
        if id >= map.num_classes() {
            return Err(Error::ClassOutOfRange {
                id,
                num_classes: map.num_classes(),
            });
        }
    }
    if p == q && !cfg.self_edges {
        return Ok(0.0);
    }
    let stats = map.region_stats();
    let norm = cfg.resolve(map, &stats)?;
    weight_from_stats(&stats, p, q, cfg.mode, &norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub p: usize,
    pub q: usize,
    pub weight: f64,
}

/// `G = (E, V, W)` for one map. Edges are stored once with `p <= q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    nodes: Vec<usize>,
    edges: Vec<Edge>,
}

impl RegionGraph {
    pub fn new(nodes: Vec<usize>, edges: Vec<Edge>) -> Self {
        Self { nodes, edges }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weight(&self, p: usize, q: usize) -> Option<f64> {
        let (p, q) = (p.min(q), p.max(q));
        self.edges
            .iter()
            .find(|e| e.p == p && e.q == q)
            .map(|e| e.weight)
    }
}

pub fn build_graph(map: &LabelMap, cfg: &WeightConfig) -> Result<RegionGraph> {
    let stats = map.region_stats();
    let norm = cfg.resolve(map, &stats)?;
    let nodes: Vec<usize> = stats.present().collect();
    let mut edges = Vec::new();
    for (i, &p) in nodes.iter().enumerate() {
        let start = if cfg.self_edges { i } else { i + 1 };
        for &q in &nodes[start..] {
            let weight = weight_from_stats(&stats, p, q, cfg.mode, &norm)?;
            edges.push(Edge { p, q, weight });
        }
    }
    Ok(RegionGraph { nodes, edges })
}

/// Dense `C x C` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            entries: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.entries[p * self.size + q]
    }

    pub fn set(&mut self, p: usize, q: usize, v: f64) {
        self.entries[p * self.size + q] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Row-major vectorization.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.clone()
    }

    pub fn unflatten(values: &[f64]) -> Result<Self> {
        let size = (values.len() as f64).sqrt().round() as usize;
        if size * size != values.len() {
            return Err(Error::Shape(format!(
                "{} values do not form a square matrix",
                values.len()
            )));
        }
        Ok(Self {
            size,
            entries: values.to_vec(),
        })
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.size);
        for p in 0..self.size {
            for q in 0..self.size {
                t.set(q, p, self.get(p, q));
            }
        }
        t
    }
}

pub fn adjacency(graph: &RegionGraph, num_classes: usize) -> Result<AdjacencyMatrix> {
    if let Some(&id) = graph.nodes.iter().find(|&&n| n >= num_classes) {
        return Err(Error::ClassOutOfRange { id, num_classes });
    }
    let mut a = AdjacencyMatrix::zeros(num_classes);
    for e in &graph.edges {
        if e.p >= num_classes || e.q >= num_classes {
            return Err(Error::ClassOutOfRange {
                id: e.p.max(e.q),
                num_classes,
            });
        }
        a.set(e.p, e.q, e.weight);
        a.set(e.q, e.p, e.weight);
    }
    Ok(a)
}

/// Convenience: `adjacency(build_graph(map))` with the map's own class count.
pub fn target_matrix(map: &LabelMap, cfg: &WeightConfig) -> Result<AdjacencyMatrix> {
    adjacency(&build_graph(map, cfg)?, map.num_classes())
}

/// Writes the nonzero `p <= q` entries of each graph as
/// `image_id,p,q,weight` rows, preceded by the header.
pub fn write_edges_csv<'a, W: Write>(
    mut out: W,
    graphs: impl IntoIterator<Item = (&'a str, &'a RegionGraph)>,
) -> Result<()> {
    writeln!(out, "image_id,p,q,weight")?;
    for (id, g) in graphs {
        for e in g.edges.iter().filter(|e| e.weight != 0.0) {
            writeln!(out, "{id},{},{},{}", e.p, e.q, e.weight)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn half_split(c: usize) -> LabelMap {
        LabelMap::from_fn(4, 4, c, |_, col| (col >= 2) as u32).unwrap()
    }

    fn corner() -> LabelMap {
        LabelMap::from_fn(4, 4, 2, |r, c| (r + c > 0) as u32).unwrap()
    }

    fn random_map(rng: &mut SplitMix64, h: usize, w: usize, c: usize) -> LabelMap {
        LabelMap::from_fn(h, w, c, |_, _| rng.below(c as u64) as u32).unwrap()
    }

    #[test]
    fn worked_weights() {
        let cfg = WeightConfig::default();
        let m = half_split(2);
        assert!((edge_weight(&m, 0, 1, &cfg).unwrap() - 0.646447).abs() < 1e-6);
        assert!((edge_weight(&m, 0, 0, &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert!((edge_weight(&corner(), 0, 1, &cfg).unwrap() - 0.140625).abs() < 1e-12);
    }

    #[test]
    fn absent_class_weighs_zero() {
        let m = half_split(3);
        for mode in [WeightMode::Binary, WeightMode::Literal, WeightMode::Scaled] {
            let cfg = WeightConfig::with_mode(mode);
            assert_eq!(edge_weight(&m, 0, 2, &cfg).unwrap(), 0.0);
            assert_eq!(edge_weight(&m, 2, 2, &cfg).unwrap(), 0.0);
        }
        assert!(edge_weight(&m, 0, 3, &WeightConfig::default()).is_err());
    }

    #[test]
    fn literal_is_unscaled() {
        let m = half_split(2);
        let lit = edge_weight(&m, 0, 1, &WeightConfig::with_mode(WeightMode::Literal)).unwrap();
        assert!((lit - 4.0 * (1.0 - 2.0 / 32f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn graph_shapes() {
        let solid = LabelMap::from_fn(3, 3, 4, |_, _| 2).unwrap();
        let g = build_graph(&solid, &WeightConfig::default()).unwrap();
        assert_eq!(g.nodes(), &[2]);
        assert_eq!(g.edges().len(), 1);

        let g = build_graph(&half_split(2), &WeightConfig::default()).unwrap();
        assert_eq!(g.nodes(), &[0, 1]);
        let pairs: Vec<_> = g.edges().iter().map(|e| (e.p, e.q)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 1)]);

        let no_self = WeightConfig {
            self_edges: false,
            ..WeightConfig::default()
        };
        let g = build_graph(&half_split(2), &no_self).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(edge_weight(&half_split(2), 0, 0, &no_self).unwrap(), 0.0);
    }

    #[test]
    fn half_split_adjacency() {
        let g = build_graph(&half_split(3), &WeightConfig::default()).unwrap();
        let a = adjacency(&g, 3).unwrap();
        let w = 1.0 - 2.0 / 32f64.sqrt();
        let expect = [1.0, w, 0.0, w, 1.0, 0.0, 0.0, 0.0, 0.0];
        for (x, e) in a.as_slice().iter().zip(expect) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!(adjacency(&g, 1).is_err());
        assert_eq!(
            adjacency(&RegionGraph::new(vec![], vec![]), 2).unwrap(),
            AdjacencyMatrix::zeros(2)
        );
    }

    #[test]
    fn flatten_round_trip() {
        let a = AdjacencyMatrix::unflatten(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.get(1, 0), 3.0);
        assert_eq!(AdjacencyMatrix::zeros(3).flatten(), vec![0.0; 9]);
        assert!(AdjacencyMatrix::unflatten(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn binary_is_outer_product() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..50 {
            let m = random_map(&mut rng, 5, 6, 6);
            let a = target_matrix(&m, &WeightConfig::with_mode(WeightMode::Binary)).unwrap();
            let y = m.labels_present();
            for p in 0..6 {
                for q in 0..6 {
                    assert_eq!(a.get(p, q), (y.get(p) && y.get(q)) as u8 as f64);
                }
            }
        }
    }

    #[test]
    fn scaled_ranges_and_symmetry() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..200 {
            let h = 1 + rng.below(8) as usize;
            let w = 1 + rng.below(8) as usize;
            let c = 1 + rng.below(5) as usize;
            let m = random_map(&mut rng, h, w, c);
            let a = target_matrix(&m, &WeightConfig::default()).unwrap();
            assert_eq!(a, a.transpose());
            let y = m.labels_present();
            for p in 0..a.size() {
                for q in 0..a.size() {
                    let v = a.get(p, q);
                    assert!(v >= 0.0);
                    if p == q {
                        assert!(v <= 4.0);
                    } else {
                        assert!(v <= 1.0);
                    }
                    if !y.get(p) {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn weight_monotone_in_size_and_distance() {
        // Class 1 is a 1-pixel seed at the far right; growing class 0 leftward
        // to rightward increases its size and moves it closer.
        let cfg = WeightConfig::default();
        let size_of = |n: usize| {
            LabelMap::from_fn(1, 10, 3, |_, c| {
                if c == 9 {
                    1
                } else if c < n {
                    0
                } else {
                    2
                }
            })
            .unwrap()
        };
        let mut prev = 0.0;
        for n in 1..9 {
            let w = edge_weight(&size_of(n), 0, 1, &cfg).unwrap();
            assert!(w >= prev);
            prev = w;
        }
        // Same sizes, increasing separation.
        let at = |pos: usize| {
            LabelMap::from_fn(1, 12, 3, |_, c| {
                if c == 0 {
                    0
                } else if c == pos {
                    1
                } else {
                    2
                }
            })
            .unwrap()
        };
        let mut prev = f64::INFINITY;
        for pos in 1..12 {
            let w = edge_weight(&at(pos), 0, 1, &cfg).unwrap();
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn per_image_normalizers() {
        let cfg = WeightConfig {
            mode: WeightMode::Literal,
            n_s: Normalizer::PerImageMax,
            n_d: Normalizer::PerImageMax,
            ..WeightConfig::default()
        };
        // Farthest pair gets weight exactly zero under per-image maxima.
        let m = half_split(2);
        assert_eq!(edge_weight(&m, 0, 1, &cfg).unwrap(), 0.0);
        assert_eq!(edge_weight(&m, 0, 0, &cfg).unwrap(), 8.0);
        let solid = LabelMap::from_fn(2, 2, 1, |_, _| 0).unwrap();
        assert_eq!(edge_weight(&solid, 0, 0, &cfg).unwrap(), 4.0);
        let bad = WeightConfig {
            n_s: Normalizer::Fixed(0.0),
            ..WeightConfig::default()
        };
        assert!(edge_weight(&m, 0, 1, &bad).is_err());
    }

    #[test]
    fn csv_skips_zero_weights() {
        let g = RegionGraph::new(
            vec![0, 1],
            vec![
                Edge { p: 0, q: 0, weight: 0.5 },
                Edge { p: 0, q: 1, weight: 0.0 },
            ],
        );
        let mut out = Vec::new();
        write_edges_csv(&mut out, [("00001", &g)]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "image_id,p,q,weight\n00001,0,0,0.5\n");
    }
}
