use super::chip::{AmplitudeImage, Chip, ChipSet, Window, N_CHANNELS};
use crate::error::{Error, Result};

/// Binary label raster `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelRaster {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("label raster {height}x{width} with {} values", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Data("label raster is not binary".into()));
        }
        Ok(Self { height, width, data })
    }

    fn crop(&self, w: Window) -> Vec<u8> {
        let mut out = Vec::with_capacity(w.size * w.size);
        for y in w.row..w.row + w.size {
            out.extend_from_slice(&self.data[y * self.width + w.col..y * self.width + w.col + w.size]);
        }
        out
    }
}

/// Window origins along one axis: `0, stride, ...` while the window fits.
fn origins(extent: usize, chip_size: usize, stride: usize) -> impl Iterator<Item = usize> {
    let last = extent.checked_sub(chip_size);
    (0..).map(move |i| i * stride).take_while(move |&o| last.is_some_and(|l| o <= l))
}

/// All in-bounds chip windows of a `height x width` raster, row-major.
pub fn chip_windows(height: usize, width: usize, chip_size: usize, stride: usize) -> Result<Vec<Window>> {
    if stride == 0 || chip_size == 0 {
        return Err(Error::Config("stride and chip_size must be >= 1".into()));
    }
    Ok(origins(height, chip_size, stride)
        .flat_map(|row| origins(width, chip_size, stride).map(move |col| Window { row, col, size: chip_size }))
        .collect())
}

/// Cut co-registered pre/post/label rasters into chips. Windows that would
/// cross the raster edge are dropped. Chip ids are `<prefix>_r<row>_c<col>`.
pub fn extract_chips_from_raster(
    pre: &AmplitudeImage,
    post: &AmplitudeImage,
    labels: &LabelRaster,
    chip_size: usize,
    stride: usize,
    prefix: &str,
) -> Result<(ChipSet, Vec<Window>)> {
    if pre.shape() != post.shape() {
        return Err(Error::Shape(format!("pre raster {:?} vs post raster {:?}", pre.shape(), post.shape())));
    }
    if pre.channels() != N_CHANNELS {
        return Err(Error::Shape(format!("rasters need {N_CHANNELS} channels, got {}", pre.channels())));
    }
    if (labels.height, labels.width) != (pre.height(), pre.width()) {
        return Err(Error::Shape(format!(
            "label raster {}x{} vs image raster {}x{}",
            labels.height,
            labels.width,
            pre.height(),
            pre.width()
        )));
    }
    let windows = chip_windows(pre.height(), pre.width(), chip_size, stride)?;
    let chips = windows
        .iter()
        .map(|w| {
            Chip::new(
                format!("{prefix}_r{}_c{}", w.row, w.col),
                pre.crop(w.row, w.col, w.size),
                post.crop(w.row, w.col, w.size),
                labels.crop(*w),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ChipSet::new(chips, format!("raster:{prefix}"))?, windows))
}

/// Chip-level flags from point annotations: true iff a point lies in the window.
pub fn flags_from_point_labels(points: &[(usize, usize)], windows: &[Window]) -> Vec<bool> {
    windows.iter().map(|w| points.iter().any(|&(r, c)| w.contains(r, c))).collect()
}

/// Rejects points outside a `height x width` raster.
pub fn validate_points(points: &[(usize, usize)], height: usize, width: usize) -> Result<()> {
    match points.iter().find(|&&(r, c)| r >= height || c >= width) {
        Some(p) => Err(Error::Data(format!("point {p:?} outside {height}x{width} raster"))),
        None => Ok(()),
    }
}
