//! Chip data model, file format, extraction, balancing, splitting and the
//! synthetic data generator.

mod chip;
mod format;
mod normalize;
mod raster;
mod split;
mod synth;

pub use chip::{AmplitudeImage, Chip, ChipSet, Window, CHANNEL_NAMES, CHIP_SIZE, N_CHANNELS, PIXEL_SPACING_M};
pub(crate) use format::write_new;
pub use format::{
    read_chip, read_chip_index, read_chip_with_header, read_chipset, write_chip, write_chipset, ChipHeader, ChipIndex,
    FORMAT_VERSION,
};
pub use normalize::{channel_moments, normalize_chipset, to_db, NormStats, NormalizedChip, AMPLITUDE_FLOOR};
pub use raster::{chip_windows, extract_chips_from_raster, flags_from_point_labels, validate_points, LabelRaster};
pub use split::{balance_chipset, footer_path, largest_remainder, split_chipset, split_counts, Role, SplitManifest};
pub use synth::{average_revisits, generate_synthetic_chipset, Speckle, SyntheticConfig};
