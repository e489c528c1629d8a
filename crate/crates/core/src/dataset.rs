//! Labelled image collections: the procedural toy dataset and on-disk image directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, DrrError, Result};
use crate::image::ImageTensor;

/// Images grouped by class id.
pub type ClassImages = BTreeMap<u32, Vec<ImageTensor>>;

/// Settings of the procedural dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Image side length; images are square with three channels.
    pub size: usize,
    /// Standard deviation of per-pixel Gaussian-like noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { classes: 8, train_per_class: 30, test_per_class: 20, size: 16, noise: 0.08, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub train: ClassImages,
    pub test: ClassImages,
}

const PATTERNS: usize = 4;
const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.7, 0.25],
    [0.2, 0.3, 0.85],
    [0.9, 0.8, 0.2],
    [0.7, 0.25, 0.75],
    [0.2, 0.75, 0.8],
    [0.95, 0.55, 0.15],
    [0.45, 0.45, 0.45],
];
const MAX_CLASSES: usize = 3 * PALETTE.len();

/// Colored stripe and checker patterns. Class `c` draws pattern `c % 4` in color
/// `c % 8` over a background color that also depends on `c / 8`. Samples vary in
/// phase, period, color, and pixel noise.
pub fn toy_dataset(cfg: &ToyConfig) -> Result<ToyDataset> {
    if cfg.classes == 0 || cfg.classes > MAX_CLASSES {
        return invalid(format!("toy dataset supports 1..={MAX_CLASSES} classes"));
    }
    if cfg.size < 2 || !(0.0..=1.0).contains(&cfg.noise) {
        return invalid("toy images need size >= 2 and noise in [0, 1]");
    }
    let split = |split: u64, n: usize| -> ClassImages {
        (0..cfg.classes as u32).map(|c| (c, (0..n).map(|i| toy_image(cfg, c, split, i as u64)).collect())).collect()
    };
    Ok(ToyDataset { train: split(0, cfg.train_per_class), test: split(1, cfg.test_per_class) })
}

fn toy_image(cfg: &ToyConfig, class: u32, split: u64, index: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((split << 62) | (u64::from(class) << 32)) ^ index);
    let c = class as usize;
    let pattern = c % PATTERNS;
    let fg = PALETTE[c % PALETTE.len()];
    let bg = PALETTE[(c + 1 + 2 * (c / PALETTE.len())) % PALETTE.len()];
    let jitter = |c: [f64; 3], rng: &mut ChaCha8Rng| c.map(|v| v + rng.gen_range(-0.1..0.1));
    let (fg, bg) = (jitter(fg, &mut rng), jitter(bg, &mut rng));
    let period = rng.gen_range(2..=4usize);
    let phase = rng.gen_range(0..period);
    let n = cfg.size;
    let mut values = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let on = match pattern {
                0 => (y + phase) % period < period.div_ceil(2),
                1 => (x + phase) % period < period.div_ceil(2),
                2 => (x + y + phase) % period < period.div_ceil(2),
                _ => ((x + phase) / period + y / period) % 2 == 0,
            };
            let color = if on { fg } else { bg };
            for v in color {
                let noise = (rng.gen::<f64>() + rng.gen::<f64>() + rng.gen::<f64>() - 1.5) * 2.0 * cfg.noise;
                values.push(v + noise);
            }
        }
    }
    ImageTensor::from_clamped(n, n, 3, values).expect("shape is consistent")
}

/// Reads every `<class>_<index>.raw` file of a directory, ordered by class then index.
pub fn read_image_dir(dir: &Path) -> Result<ClassImages> {
    let mut found: BTreeMap<(u32, u64), std::path::PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("raw") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let key =
            stem.split_once('_').and_then(|(c, i)| Some((c.parse().ok()?, i.parse().ok()?))).ok_or_else(|| {
                DrrError::InvalidInput(format!("image file {} is not named <class>_<index>.raw", path.display()))
            })?;
        found.insert(key, path);
    }
    let mut out = ClassImages::new();
    for ((class, _), path) in found {
        out.entry(class).or_default().push(ImageTensor::load(&path)?);
    }
    Ok(out)
}

/// Writes images as `<class>_<index>.raw`, creating the directory if needed.
pub fn write_image_dir(dir: &Path, images: &ClassImages) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (class, list) in images {
        for (i, img) in list.iter().enumerate() {
            img.save(&dir.join(format!("{class}_{i}.raw")))?;
        }
    }
    Ok(())
}

/// All images in class order, for codec and model pretraining.
pub fn flatten(images: &ClassImages) -> Vec<ImageTensor> {
    images.values().flatten().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_dataset_is_deterministic_and_shaped() {
        let cfg = ToyConfig { classes: 5, train_per_class: 3, test_per_class: 2, ..ToyConfig::default() };
        let a = toy_dataset(&cfg).unwrap();
        assert_eq!(a, toy_dataset(&cfg).unwrap());
        assert_eq!(a.train.len(), 5);
        assert_eq!(a.test[&4].len(), 2);
        assert_eq!(a.train[&0][0].shape(), (16, 16, 3));
        assert_ne!(a.train[&0][0], a.test[&0][0]);
        // Growing the split keeps existing samples.
        let more = toy_dataset(&ToyConfig { train_per_class: 4, ..cfg }).unwrap();
        assert_eq!(more.train[&2][..3], a.train[&2][..]);
        assert!(toy_dataset(&ToyConfig { classes: 0, ..cfg }).is_err());
    }

    #[test]
    fn image_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data =
            toy_dataset(&ToyConfig { classes: 2, train_per_class: 11, test_per_class: 0, ..ToyConfig::default() })
                .unwrap()
                .train;
        write_image_dir(dir.path(), &data).unwrap();
        let back = read_image_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (c, imgs) in &data {
            // Files hold 8-bit values, so compare after the same quantization.
            let expected: Vec<_> =
                imgs.iter().map(|i| ImageTensor::from_bytes(16, 16, 3, &i.to_bytes()).unwrap()).collect();
            assert_eq!(back[c], expected);
        }
        fs::write(dir.path().join("bad.raw"), b"").unwrap();
        assert!(read_image_dir(dir.path()).is_err());
    }
}
