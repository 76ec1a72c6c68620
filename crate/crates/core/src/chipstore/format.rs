//! On-disk chip layout.
//!
//! Each chip is a pair of files: `<chip_id>.json` (header) and
//! `<chip_id>.bin` (payload). The payload is little-endian float32, row-major,
//! in the order pre VV, pre VH, post VV, post VH, mask (0.0 / 1.0).
//! A chip directory additionally carries `index.json` listing chip ids in order.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::chip::{AmplitudeImage, Chip, ChipSet, CHANNEL_NAMES, N_CHANNELS, PIXEL_SPACING_M};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "float32-le";
const PAYLOAD_ORDER: [&str; 5] = ["pre.VV", "pre.VH", "post.VV", "post.VH", "mask"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChipHeader {
    pub format_version: u32,
    pub chip_id: String,
    pub shape: [usize; 3],
    pub channels: Vec<String>,
    pub has_landslide: bool,
    pub provenance: String,
    pub dtype: String,
    pub payload_order: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChipIndex {
    pub format_version: u32,
    pub provenance: String,
    pub pixel_spacing_m: f64,
    pub chip_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

pub(crate) fn create_new(path: &Path) -> Result<File> {
    OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = create_new(path)?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn encode_payload(chip: &Chip) -> Vec<u8> {
    let n = chip.size() * chip.size();
    let mut out = Vec::with_capacity((4 * N_CHANNELS + 1) * n);
    for img in [chip.pre(), chip.post()] {
        for v in img.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &m in chip.mask() {
        out.extend_from_slice(&f32::from(m).to_le_bytes());
    }
    out
}

fn write_chip_inner(chip: &Chip, directory: &Path, provenance: &str) -> Result<PathBuf> {
    let header = ChipHeader {
        format_version: FORMAT_VERSION,
        chip_id: chip.chip_id().to_string(),
        shape: [N_CHANNELS, chip.size(), chip.size()],
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        has_landslide: chip.has_landslide(),
        provenance: provenance.to_string(),
        dtype: DTYPE.into(),
        payload_order: PAYLOAD_ORDER.iter().map(|s| s.to_string()).collect(),
    };
    let json_path = directory.join(format!("{}.json", chip.chip_id()));
    let bin_path = directory.join(format!("{}.bin", chip.chip_id()));
    write_new(&bin_path, &encode_payload(chip))?;
    write_new(&json_path, &serde_json::to_vec_pretty(&header)?)?;
    Ok(json_path)
}

/// Write a chip's header and payload into `directory`; returns the header path.
pub fn write_chip(chip: &Chip, directory: &Path) -> Result<PathBuf> {
    write_chip_inner(chip, directory, "")
}

fn header_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        path.with_extension("json")
    }
}

/// Read a chip from its header path (or the payload path / extensionless stem).
pub fn read_chip(path: &Path) -> Result<Chip> {
    read_chip_with_header(path).map(|(c, _)| c)
}

pub fn read_chip_with_header(path: &Path) -> Result<(Chip, ChipHeader)> {
    let json_path = header_path(path);
    let bin_path = json_path.with_extension("bin");
    let raw = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: ChipHeader = serde_json::from_slice(&raw).map_err(|e| Error::format("header", e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format("format_version", format!("unsupported version {}", header.format_version)));
    }
    if header.dtype != DTYPE {
        return Err(Error::format("dtype", format!("expected {DTYPE}, got {}", header.dtype)));
    }
    if header.channels != CHANNEL_NAMES {
        return Err(Error::format("channels", format!("expected {CHANNEL_NAMES:?}, got {:?}", header.channels)));
    }
    if header.payload_order != PAYLOAD_ORDER {
        return Err(Error::format("payload_order", format!("{:?}", header.payload_order)));
    }
    let [c, h, w] = header.shape;
    if c != N_CHANNELS || h != w || h == 0 {
        return Err(Error::format("shape", format!("expected [{N_CHANNELS}, S, S], got {:?}", header.shape)));
    }
    let payload = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let n = h * w;
    let expected = (2 * c * n + n) * 4;
    if payload.len() < expected {
        return Err(Error::format("payload", "unexpected end of payload"));
    }
    if payload.len() > expected {
        return Err(Error::format("payload", format!("{} trailing bytes", payload.len() - expected)));
    }
    let floats: Vec<f32> = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let (pre, rest) = floats.split_at(c * n);
    let (post, mask_f) = rest.split_at(c * n);
    let pre = AmplitudeImage::new(c, h, w, pre.to_vec()).map_err(|e| Error::format("pre", e.to_string()))?;
    let post = AmplitudeImage::new(c, h, w, post.to_vec()).map_err(|e| Error::format("post", e.to_string()))?;
    let mut mask = Vec::with_capacity(n);
    for &m in mask_f {
        if m == 0.0 {
            mask.push(0u8);
        } else if m == 1.0 {
            mask.push(1u8);
        } else {
            return Err(Error::format("mask", "mask not binary"));
        }
    }
    let mask_positive = mask.contains(&1);
    let chip = if mask_positive {
        if !header.has_landslide {
            return Err(Error::format("has_landslide", "flag false but mask has landslide pixels"));
        }
        Chip::new(header.chip_id.clone(), pre, post, mask)?
    } else {
        Chip::with_flag(header.chip_id.clone(), pre, post, header.has_landslide)?
    };
    Ok((chip, header))
}

/// Write every chip plus `index.json`. The directory is created if missing;
/// existing chip files are never overwritten.
pub fn write_chipset(set: &ChipSet, directory: &Path, generator: Option<serde_json::Value>) -> Result<()> {
    fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
    for chip in set.chips() {
        write_chip_inner(chip, directory, &set.provenance)?;
    }
    let index = ChipIndex {
        format_version: FORMAT_VERSION,
        provenance: set.provenance.clone(),
        pixel_spacing_m: PIXEL_SPACING_M,
        chip_ids: set.chips().iter().map(|c| c.chip_id().to_string()).collect(),
        generator,
    };
    write_new(&directory.join("index.json"), &serde_json::to_vec_pretty(&index)?)
}

pub fn read_chip_index(directory: &Path) -> Result<ChipIndex> {
    let path = directory.join("index.json");
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&raw).map_err(|e| Error::format("index.json", e.to_string()))
}

/// Read a chip directory in index order.
pub fn read_chipset(directory: &Path) -> Result<ChipSet> {
    let index = read_chip_index(directory)?;
    let chips =
        index.chip_ids.iter().map(|id| read_chip(&directory.join(format!("{id}.json")))).collect::<Result<Vec<_>>>()?;
    ChipSet::new(chips, index.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chip(id: &str, size: usize, seed: u32) -> Chip {
        let n = size * size;
        let val = |i: usize| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32 / 7.0;
        let pre = AmplitudeImage::new(2, size, size, (0..2 * n).map(val).collect()).unwrap();
        let post = AmplitudeImage::new(2, size, size, (0..2 * n).map(|i| val(i + 3)).collect()).unwrap();
        let mask = (0..n).map(|i| (i as u32 + seed).is_multiple_of(5) as u8).collect();
        Chip::new(id, pre, post, mask).unwrap()
    }

    #[test]
    fn roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let c = chip("c0", 8, 1);
        let p = write_chip(&c, dir.path()).unwrap();
        assert_eq!(read_chip(&p).unwrap(), c);
        // cannot overwrite
        assert!(write_chip(&c, dir.path()).is_err());
    }

    #[test]
    fn point_label_flag_survives() {
        let dir = tempfile::tempdir().unwrap();
        let c = chip("pt", 4, 1);
        let c = Chip::with_flag("pt", c.pre().clone(), c.post().clone(), true).unwrap();
        let p = write_chip(&c, dir.path()).unwrap();
        let back = read_chip(&p).unwrap();
        assert!(back.has_landslide());
        assert_eq!(back.positive_pixels(), 0);
    }

    #[test]
    fn nonbinary_mask_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = chip("bad", 4, 2);
        let p = write_chip(&c, dir.path()).unwrap();
        let bin = p.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        let off = bytes.len() - 4;
        bytes[off..].copy_from_slice(&2.0f32.to_le_bytes());
        fs::write(&bin, bytes).unwrap();
        let err = read_chip(&p).unwrap_err();
        assert!(err.to_string().contains("mask not binary"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_chip(&chip("t", 4, 3), dir.path()).unwrap();
        let bin = p.with_extension("bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_chip(&p).unwrap_err();
        assert!(err.to_string().contains("unexpected end of payload"), "{err}");
    }

    #[test]
    fn bad_shape_header_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_chip(&chip("s", 4, 3), dir.path()).unwrap();
        let mut h: ChipHeader = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        h.shape = [3, 4, 4];
        fs::write(&p, serde_json::to_vec(&h).unwrap()).unwrap();
        match read_chip(&p).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "shape"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn chipset_roundtrip_keeps_order() {
        let dir = tempfile::tempdir().unwrap();
        let set = ChipSet::new(vec![chip("z", 4, 1), chip("a", 4, 2), chip("m", 4, 3)], "unit").unwrap();
        write_chipset(&set, dir.path(), None).unwrap();
        assert_eq!(read_chipset(dir.path()).unwrap(), set);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn random_chips_roundtrip(
            size in 1usize..6,
            values in proptest::collection::vec(0.0f32..1e6, 4 * 25),
            mask_bits in proptest::collection::vec(0u8..2, 25),
        ) {
            let n = size * size;
            let pre = AmplitudeImage::new(2, size, size, values[..2 * n].to_vec()).unwrap();
            let post = AmplitudeImage::new(2, size, size, values[2 * n..4 * n].to_vec()).unwrap();
            let c = Chip::new("p", pre, post, mask_bits[..n].to_vec()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = write_chip(&c, dir.path()).unwrap();
            let back = read_chip(&p).unwrap();
            let bits = |img: &AmplitudeImage| img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.pre()), bits(c.pre()));
            prop_assert_eq!(bits(back.post()), bits(c.post()));
            prop_assert_eq!(back, c);
        }
    }
}
