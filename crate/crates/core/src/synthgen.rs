//! Seeded synthetic archives of paired images and label maps.
//!
//! Each image is a Voronoi partition: `K` sites are drawn uniformly over the
//! pixel grid and each gets a uniformly drawn class; every pixel takes the
//! class of its nearest site (ties go to the lower site index). Pixel values
//! are the class's signature plus uniform noise on `±noise_sigma * sqrt(3)`,
//! clamped to `[0, 1]`.
//!
//! All draws come from [`SplitMix64`]. Image `i` uses the stream
//! `derive_seed(master_seed, i)`; class signatures use
//! `derive_seed(master_seed, u64::MAX)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::labelmap::LabelMap;
use crate::rng::{derive_seed, SplitMix64};

/// Minimum max-norm separation between two class signatures.
pub const SIGNATURE_SEPARATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub sites: usize,
    pub channels: usize,
    pub noise_sigma: f64,
    pub master_seed: u64,
}

impl SynthConfig {
    /// 200 images of 32x32, 8 classes, 6 sites, 3 channels, noise 0.05.
    pub fn standard(master_seed: u64) -> Self {
        Self {
            num_images: 200,
            height: 32,
            width: 32,
            num_classes: 8,
            sites: 6,
            channels: 3,
            noise_sigma: 0.05,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if self.sites == 0 {
            return Err(Error::invalid("need at least one site per image"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be a non-negative number"));
        }
        Ok(())
    }
}

/// Per-class base intensities, one value per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignatures(pub Vec<Vec<f64>>);

impl ClassSignatures {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        const MAX_TRIES: usize = 100_000;
        let mut rng = SplitMix64::new(derive_seed(cfg.master_seed, u64::MAX));
        let mut sigs: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
        let mut tries = 0;
        while sigs.len() < cfg.num_classes {
            tries += 1;
            if tries > MAX_TRIES {
                return Err(Error::invalid(format!(
                    "cannot separate {} class signatures in {} channel(s)",
                    cfg.num_classes, cfg.channels
                )));
            }
            let cand: Vec<f64> = (0..cfg.channels).map(|_| rng.next_f64()).collect();
            let separated = sigs.iter().all(|s| {
                s.iter().zip(&cand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                    >= SIGNATURE_SEPARATION
            });
            if separated {
                sigs.push(cand);
            }
        }
        Ok(Self(sigs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub image: Image,
    pub map: LabelMap,
}

pub fn image_id(index: usize) -> String {
    format!("{index:05}")
}

fn generate_one(cfg: &SynthConfig, sigs: &ClassSignatures, index: usize) -> Result<SynthItem> {
    let mut rng = SplitMix64::new(derive_seed(cfg.master_seed, index as u64));
    let (h, w) = (cfg.height, cfg.width);
    let sites: Vec<(f64, f64, u32)> = (0..cfg.sites)
        .map(|_| {
            let r = rng.uniform(0.0, (h - 1) as f64);
            let c = rng.uniform(0.0, (w - 1) as f64);
            let class = rng.below(cfg.num_classes as u64) as u32;
            (r, c, class)
        })
        .collect();
    let map = LabelMap::from_fn(h, w, cfg.num_classes, |r, c| {
        let mut best = (f64::INFINITY, 0u32);
        for &(sr, sc, class) in &sites {
            let d = (r as f64 - sr).powi(2) + (c as f64 - sc).powi(2);
            if d < best.0 {
                best = (d, class);
            }
        }
        best.1
    })?;

    let half_width = cfg.noise_sigma * 3f64.sqrt();
    let mut image = Image::zeros(cfg.channels, h, w);
    for ch in 0..cfg.channels {
        for r in 0..h {
            for c in 0..w {
                let base = sigs.0[map.get(r, c) as usize][ch];
                let v = if cfg.noise_sigma > 0.0 {
                    (base + rng.uniform(-half_width, half_width)).clamp(0.0, 1.0)
                } else {
                    base
                };
                image.set(ch, r, c, v);
            }
        }
    }
    Ok(SynthItem {
        id: image_id(index),
        image,
        map,
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthItem>> {
    cfg.validate()?;
    let sigs = ClassSignatures::generate(cfg)?;
    (0..cfg.num_images)
        .into_par_iter()
        .map(|i| generate_one(cfg, &sigs, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub query: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffled partition of `ids` into train, query and test sets in the given
/// proportions. Partition sizes are rounded; test takes the remainder. Each
/// partition is returned sorted.
pub fn split(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let n = ids.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_query = (fractions[1] * n as f64).round() as usize;
    let Some(n_test) = n.checked_sub(n_train + n_query) else {
        return Err(Error::invalid("split fractions overshoot the archive"));
    };
    for (name, size, f) in [
        ("train", n_train, fractions[0]),
        ("query", n_query, fractions[1]),
        ("test", n_test, fractions[2]),
    ] {
        if f > 0.0 && size == 0 {
            return Err(Error::invalid(format!("{name} partition is empty")));
        }
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut test = order.split_off(n_train + n_query);
    let mut query = order.split_off(n_train);
    let mut train = order;
    train.sort();
    query.sort();
    test.sort();
    Ok(Split { train, query, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_images: 12,
            height: 10,
            width: 12,
            num_classes: 5,
            sites: 4,
            channels: 2,
            noise_sigma: 0.05,
            master_seed: seed,
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn noiseless_pixels_equal_signatures() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..small(1)
        };
        let sigs = ClassSignatures::generate(&cfg).unwrap();
        for item in generate(&cfg).unwrap() {
            for ch in 0..cfg.channels {
                for r in 0..cfg.height {
                    for c in 0..cfg.width {
                        let class = item.map.get(r, c) as usize;
                        assert_eq!(item.image.get(ch, r, c), sigs.0[class][ch]);
                    }
                }
            }
        }
    }

    #[test]
    fn noise_stays_bounded() {
        let cfg = small(2);
        let sigs = ClassSignatures::generate(&cfg).unwrap();
        let half = cfg.noise_sigma * 3f64.sqrt();
        for item in generate(&cfg).unwrap() {
            for ch in 0..cfg.channels {
                for r in 0..cfg.height {
                    for c in 0..cfg.width {
                        let v = item.image.get(ch, r, c);
                        let base = sigs.0[item.map.get(r, c) as usize][ch];
                        assert!((0.0..=1.0).contains(&v));
                        assert!((v - base).abs() <= half + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn label_counts_within_pigeonhole_bound() {
        let cfg = SynthConfig::standard(9);
        for item in generate(&cfg).unwrap() {
            let n = item.map.labels_present().count();
            assert!((1..=cfg.sites.min(cfg.num_classes)).contains(&n));
        }
    }

    #[test]
    fn signatures_are_separated() {
        let sigs = ClassSignatures::generate(&SynthConfig::standard(0)).unwrap();
        for (i, a) in sigs.0.iter().enumerate() {
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            for b in &sigs.0[i + 1..] {
                let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(d >= SIGNATURE_SEPARATION);
            }
        }
        let crowded = SynthConfig {
            num_classes: 40,
            channels: 1,
            ..small(0)
        };
        assert!(ClassSignatures::generate(&crowded).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(generate(&SynthConfig { sites: 0, ..small(0) }).is_err());
        assert!(generate(&SynthConfig { num_classes: 1, ..small(0) }).is_err());
        assert!(generate(&SynthConfig { noise_sigma: -0.1, ..small(0) }).is_err());
    }

    #[test]
    fn split_eighty_twenty() {
        let ids: Vec<String> = (0..100).map(image_id).collect();
        let s = split(&ids, [0.8, 0.0, 0.2], 5).unwrap();
        assert_eq!((s.train.len(), s.query.len(), s.test.len()), (80, 0, 20));
        let all: HashSet<&String> = s.train.iter().chain(&s.query).chain(&s.test).collect();
        assert_eq!(all.len(), 100);
        assert_eq!(s, split(&ids, [0.8, 0.0, 0.2], 5).unwrap());
        assert_ne!(s, split(&ids, [0.8, 0.0, 0.2], 6).unwrap());
    }

    #[test]
    fn split_errors() {
        let ids: Vec<String> = (0..3).map(image_id).collect();
        assert!(split(&ids, [0.5, 0.4, 0.2], 0).is_err());
        assert!(split(&ids, [1.2, -0.2, 0.0], 0).is_err());
        assert!(split(&ids, [0.9, 0.0, 0.1], 0).is_err());
    }
}
