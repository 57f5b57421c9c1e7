//! Dataset manifests: one JSON record per line, one line per scene.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SceneParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    /// Wire-free rendering, when the generator produced one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<PathBuf>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SceneParams>,
}

impl SceneRecord {
    /// Resolves relative paths against the manifest's directory.
    pub fn resolve(&self, base: &Path) -> SceneRecord {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        SceneRecord {
            image: join(&self.image),
            mask: join(&self.mask),
            clean: self.clean.as_deref().map(join),
            ..self.clone()
        }
    }
}

pub fn write_manifest(mut out: impl Write, records: &[SceneRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(input: impl Read) -> Result<Vec<SceneRecord>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

/// Per-item seed so that parallel generation never changes outputs.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_scene;

    #[test]
    fn round_trip() {
        let s = synth_scene(64, 64, 1, (1.0, 2.0), 4).unwrap();
        let recs = vec![
            SceneRecord {
                image: "a/img.png".into(),
                mask: "a/mask.png".into(),
                clean: Some("a/clean.png".into()),
                seed: 4,
                params: Some(s.params),
            },
            SceneRecord {
                image: "/abs/img.png".into(),
                mask: "m.png".into(),
                clean: None,
                seed: 5,
                params: None,
            },
        ];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &recs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), recs);
        let r = recs[1].resolve(Path::new("/data"));
        assert_eq!(r.image, PathBuf::from("/abs/img.png"));
        assert_eq!(r.mask, PathBuf::from("/data/m.png"));
        assert!(read_manifest(&b"{not json}\n"[..]).is_err());
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
