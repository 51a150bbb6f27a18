//! On-disk archives: a directory of LMAP/IMG pairs indexed by `manifest.tsv`.
//!
//! Each manifest line is `id<TAB>lmap_path<TAB>img_path`; relative paths are
//! resolved against the manifest's directory. Id lists (`train_ids.txt` and
//! friends) hold one id per line.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::labelmap::LabelMap;
use crate::synthgen::SynthItem;

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub lmap_path: PathBuf,
    pub img_path: PathBuf,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, lmap, img] = fields[..] else {
            return Err(Error::format(i + 1, "expected `id<TAB>lmap_path<TAB>img_path`"));
        };
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::format(i + 1, format!("bad image id {id:?}")));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::format(i + 1, format!("duplicate image id {id}")));
        }
        entries.push(ManifestEntry {
            id: id.to_string(),
            lmap_path: lmap.into(),
            img_path: img.into(),
        });
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}\t{}\t{}\n", e.id, e.lmap_path.display(), e.img_path.display()))
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::from(e).at(&path))?;
    parse_manifest(&text).map_err(|e| e.at(&path))
}

#[derive(Debug, Clone)]
pub struct ArchiveItem {
    pub id: String,
    pub image: Image,
    pub map: LabelMap,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).at(path))
}

/// Loads the items listed in `ids` (or all manifest items), in the order
/// given.
pub fn load_archive(dir: &Path, ids: Option<&[String]>) -> Result<Vec<ArchiveItem>> {
    let manifest = read_manifest(dir)?;
    let selected: Vec<&ManifestEntry> = match ids {
        None => manifest.iter().collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                manifest
                    .iter()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| Error::invalid(format!("id {id} not in manifest")).at(dir.join(MANIFEST)))
            })
            .collect::<Result<_>>()?,
    };
    selected
        .par_iter()
        .map(|e| {
            let lmap_path = dir.join(&e.lmap_path);
            let img_path = dir.join(&e.img_path);
            let map: LabelMap = read_text(&lmap_path)?.parse().map_err(|err: Error| err.at(&lmap_path))?;
            let image: Image = read_text(&img_path)?.parse().map_err(|err: Error| err.at(&img_path))?;
            if (image.height(), image.width()) != (map.height(), map.width()) {
                return Err(Error::Shape(format!(
                    "image is {}x{} but its label map is {}x{}",
                    image.height(),
                    image.width(),
                    map.height(),
                    map.width()
                ))
                .at(&img_path));
            }
            Ok(ArchiveItem {
                id: e.id.clone(),
                image,
                map,
            })
        })
        .collect()
}

/// Writes `NNNNN.lmap`, `NNNNN.img` and `manifest.tsv` into `dir`.
pub fn write_archive(dir: &Path, items: &[SynthItem]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))?;
    items.par_iter().try_for_each(|item| {
        let lmap = dir.join(format!("{}.lmap", item.id));
        fs::write(&lmap, item.map.to_string()).map_err(|e| Error::from(e).at(&lmap))?;
        let img = dir.join(format!("{}.img", item.id));
        fs::write(&img, item.image.to_string()).map_err(|e| Error::from(e).at(&img))
    })?;
    let entries: Vec<ManifestEntry> = items
        .iter()
        .map(|it| ManifestEntry {
            id: it.id.clone(),
            lmap_path: format!("{}.lmap", it.id).into(),
            img_path: format!("{}.img", it.id).into(),
        })
        .collect();
    let path = dir.join(MANIFEST);
    fs::write(&path, format_manifest(&entries)).map_err(|e| Error::from(e).at(&path))
}

pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    fs::write(path, text).map_err(|e| Error::from(e).at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, SynthConfig};

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("a\ta.lmap\ta.img\n\nb\tsub/b.lmap\tb.img\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].lmap_path, PathBuf::from("sub/b.lmap"));
        assert_eq!(parse_manifest(&format_manifest(&m)).unwrap(), m);
        assert!(parse_manifest("a\ta.lmap\n").is_err());
        assert!(parse_manifest("a\tx\ty\na\tx\ty\n").is_err());
    }

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            num_images: 4,
            height: 6,
            width: 6,
            num_classes: 3,
            sites: 3,
            channels: 2,
            noise_sigma: 0.05,
            master_seed: 1,
        };
        let items = generate(&cfg).unwrap();
        write_archive(dir.path(), &items).unwrap();
        let loaded = load_archive(dir.path(), None).unwrap();
        for (a, b) in items.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.image, b.image);
            assert_eq!(a.map, b.map);
        }
        let some = load_archive(dir.path(), Some(&["00002".to_string()])).unwrap();
        assert_eq!(some.len(), 1);
        assert!(load_archive(dir.path(), Some(&["nope".to_string()])).is_err());

        let bad = dir.path().join("00001.lmap");
        fs::write(&bad, "LMAP v1\n6 6 3\n0 0\n").unwrap();
        let err = load_archive(dir.path(), None).unwrap_err().to_string();
        assert!(err.contains("00001.lmap") && err.contains("line 3"), "{err}");
    }
}
