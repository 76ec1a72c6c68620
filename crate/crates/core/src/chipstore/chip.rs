use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of a chip in pixels.
pub const CHIP_SIZE: usize = 128;
/// Ground sampling distance of every chip.
pub const PIXEL_SPACING_M: f64 = 10.0;
/// Polarimetric channels carried by each image.
pub const CHANNEL_NAMES: [&str; 2] = ["VV", "VH"];
pub const N_CHANNELS: usize = CHANNEL_NAMES.len();

/// Channel-major amplitude image `channels x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeImage {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl AmplitudeImage {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data(format!("amplitude {v} is not a finite nonnegative value")));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Copy out the window `[top, top+size) x [left, left+size)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> AmplitudeImage {
        let mut data = Vec::with_capacity(self.channels * size * size);
        for c in 0..self.channels {
            for y in top..top + size {
                let start = (c * self.height + y) * self.width + left;
                data.extend_from_slice(&self.data[start..start + size]);
            }
        }
        AmplitudeImage { channels: self.channels, height: size, width: size, data }
    }
}

/// One training/evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    chip_id: String,
    pre: AmplitudeImage,
    post: AmplitudeImage,
    mask: Vec<u8>,
    has_landslide: bool,
}

impl Chip {
    /// Builds a chip, deriving `has_landslide` from the mask.
    pub fn new(chip_id: impl Into<String>, pre: AmplitudeImage, post: AmplitudeImage, mask: Vec<u8>) -> Result<Self> {
        let chip_id = chip_id.into();
        if chip_id.is_empty() || chip_id.contains(['/', '\\', ',']) {
            return Err(Error::Data(format!("invalid chip_id {chip_id:?}")));
        }
        if pre.shape() != post.shape() {
            return Err(Error::Shape(format!("pre {:?} vs post {:?}", pre.shape(), post.shape())));
        }
        if pre.channels != N_CHANNELS || pre.height != pre.width {
            return Err(Error::Shape(format!("chip images must be {N_CHANNELS} x S x S, got {:?}", pre.shape())));
        }
        if mask.len() != pre.height * pre.width {
            return Err(Error::Shape(format!("mask has {} pixels, expected {}", mask.len(), pre.height * pre.width)));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::format("mask", "mask not binary"));
        }
        let has_landslide = mask.contains(&1);
        Ok(Self { chip_id, pre, post, mask, has_landslide })
    }

    /// Chip whose only label is a chip-level flag (point-label datasets);
    /// the mask is left empty.
    pub fn with_flag(
        chip_id: impl Into<String>,
        pre: AmplitudeImage,
        post: AmplitudeImage,
        flag: bool,
    ) -> Result<Self> {
        let size = pre.height;
        let mut chip = Self::new(chip_id, pre, post, vec![0; size * size])?;
        chip.has_landslide = flag;
        Ok(chip)
    }

    pub fn chip_id(&self) -> &str {
        &self.chip_id
    }

    pub fn size(&self) -> usize {
        self.pre.height
    }

    pub fn pre(&self) -> &AmplitudeImage {
        &self.pre
    }

    pub fn post(&self) -> &AmplitudeImage {
        &self.post
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn has_landslide(&self) -> bool {
        self.has_landslide
    }

    pub fn positive_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Mask consistent with the chip-level flag.
    pub fn has_pixel_labels(&self) -> bool {
        self.has_landslide == (self.positive_pixels() > 0)
    }
}

/// Ordered collection of chips from one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipSet {
    chips: Vec<Chip>,
    pub provenance: String,
}

impl ChipSet {
    pub fn new(chips: Vec<Chip>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &chips {
            if !seen.insert(c.chip_id.as_str()) {
                return Err(Error::Data(format!("duplicate chip_id {}", c.chip_id)));
            }
        }
        Ok(Self { chips, provenance: provenance.into() })
    }

    pub fn chips(&self) -> &[Chip] {
        &self.chips
    }

    pub fn into_chips(self) -> Vec<Chip> {
        self.chips
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn pixel_spacing_m(&self) -> f64 {
        PIXEL_SPACING_M
    }

    pub fn positives(&self) -> usize {
        self.chips.iter().filter(|c| c.has_landslide).count()
    }

    pub fn get(&self, chip_id: &str) -> Option<&Chip> {
        self.chips.iter().find(|c| c.chip_id == chip_id)
    }

    /// Subset in original order, selected by chip id.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<ChipSet> {
        let wanted: std::collections::HashSet<&str> = ids.into_iter().collect();
        let chips: Vec<Chip> = self.chips.iter().filter(|c| wanted.contains(c.chip_id())).cloned().collect();
        if chips.len() != wanted.len() {
            return Err(Error::Data("selection names chips not present in the set".into()));
        }
        ChipSet::new(chips, self.provenance.clone())
    }
}

/// Chip bounds in raster pixel coordinates, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Window {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.size && col >= self.col && col < self.col + self.size
    }
}
