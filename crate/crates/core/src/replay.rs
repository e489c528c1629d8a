//! Replay buffer of compressed exemplar codes, the capped raw-exemplar store, and
//! memory accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bits_back::{CodeModel, CompressedStream, FitConfig, StreamCodec};
use crate::dataset::ClassImages;
use crate::error::{corrupted, invalid, DrrError, Result};
use crate::image::ImageTensor;
use crate::vq::{CodeGrid, CodecParams, UNCOMPRESSED_CODE_BYTES};

pub const DEFAULT_RAW_PER_CLASS: usize = 20;
pub const MIB: f64 = (1u64 << 20) as f64;

const INDEX_FILE: &str = "index.txt";
const MODEL_FILE: &str = "model.drrm";
const INDEX_HEADER: &str = "drr-index 1";

/// One compressed exemplar and the metadata needed to decode it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredImage {
    pub stream: CompressedStream,
    pub top_shape: (usize, usize),
    pub bottom_shape: (usize, usize),
    /// Shape of the source image, `(height, width, channels)`.
    pub image_shape: (usize, usize, usize),
}

impl StoredImage {
    fn level_lens(&self) -> [usize; 2] {
        [self.top_shape.0 * self.top_shape.1, self.bottom_shape.0 * self.bottom_shape.1]
    }

    fn raw_bytes(&self) -> u64 {
        let (h, w, c) = self.image_shape;
        (h * w * c) as u64
    }
}

/// Compressed code streams of every exemplar seen so far, one stream per image.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    classes: BTreeMap<u32, Vec<StoredImage>>,
    model: Option<CodeModel>,
    phase: usize,
}

impl ReplayBuffer {
    /// Empty buffer without a latent model.
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty buffer whose first ingest fine-tunes `model`.
    pub fn with_model(model: CodeModel) -> Self {
        Self { model: Some(model), ..Self::default() }
    }

    pub fn model(&self) -> Option<&CodeModel> {
        self.model.as_ref()
    }

    pub fn model_version(&self) -> Option<u32> {
        self.model.as_ref().map(CodeModel::version)
    }

    /// Number of completed ingests.
    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.keys().copied()
    }

    pub fn entries(&self) -> &BTreeMap<u32, Vec<StoredImage>> {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn require_model(&self) -> Result<&CodeModel> {
        self.model.as_ref().ok_or_else(|| DrrError::State("replay buffer has no latent model".into()))
    }

    fn stream_codec(&self) -> Result<StreamCodec> {
        StreamCodec::for_model(self.require_model()?)
    }

    fn check_new_classes(&self, classes: &ClassImages, codec: &CodecParams) -> Result<()> {
        if !codec.is_frozen() {
            return Err(DrrError::State("codec must be frozen before ingesting".into()));
        }
        if let Some(c) = classes.keys().find(|c| self.classes.contains_key(c)) {
            return invalid(format!("class {c} was already ingested"));
        }
        Ok(())
    }

    /// Encodes images and stores them under the current model, without refitting.
    pub fn add_images(&mut self, classes: &ClassImages, codec: &CodecParams) -> Result<()> {
        self.check_new_classes(classes, codec)?;
        let sc = self.stream_codec()?;
        let mut added = BTreeMap::new();
        for (&class, images) in classes {
            let mut list = Vec::with_capacity(images.len());
            for img in images {
                let grid = codec.encode_image(img)?;
                list.push(store(&sc, &grid, img.shape())?);
            }
            added.insert(class, list);
        }
        self.classes.extend(added);
        self.phase += 1;
        Ok(())
    }

    /// Adds one phase of new classes.
    ///
    /// Encodes the new images, decodes the buffered ones with the current model,
    /// fine-tunes the model on both, and re-encodes everything under the new version.
    /// Raw exemplars of the new classes go into `raw` when given.
    pub fn ingest_phase(
        &mut self,
        classes: &ClassImages,
        codec: &CodecParams,
        fit: &FitConfig,
        raw: Option<&mut RawExemplarStore>,
    ) -> Result<()> {
        self.check_new_classes(classes, codec)?;
        let model = self.require_model()?;
        let mut new: Vec<(u32, CodeGrid, (usize, usize, usize))> = Vec::new();
        for (&class, images) in classes {
            for img in images {
                new.push((class, codec.encode_image(img)?, img.shape()));
            }
        }
        let old = self.decode_all()?;
        let old_grids: Vec<CodeGrid> = old.values().flatten().map(|(g, _)| g.clone()).collect();
        let new_grids: Vec<CodeGrid> = new.iter().map(|(_, g, _)| g.clone()).collect();
        let tuned = model.finetune(&new_grids, &old_grids, fit)?;
        let sc = StreamCodec::for_model(&tuned)?;

        let mut rebuilt: BTreeMap<u32, Vec<StoredImage>> = BTreeMap::new();
        for (class, list) in &old {
            let stored = list.iter().map(|(g, s)| store(&sc, g, s.image_shape)).collect::<Result<_>>()?;
            rebuilt.insert(*class, stored);
        }
        for (class, grid, shape) in &new {
            rebuilt.entry(*class).or_default().push(store(&sc, grid, *shape)?);
        }
        if let Some(raw) = raw {
            raw.select(classes)?;
        }
        self.classes = rebuilt;
        self.model = Some(tuned);
        self.phase += 1;
        Ok(())
    }

    /// Stores an already-encoded stream, e.g. when accounting for synthetic buffers.
    pub fn insert_stream(&mut self, class: u32, image: StoredImage) {
        self.classes.entry(class).or_default().push(image);
    }

    fn decode_all(&self) -> Result<BTreeMap<u32, Vec<(CodeGrid, StoredImage)>>> {
        if self.classes.is_empty() {
            return Ok(BTreeMap::new());
        }
        let sc = self.stream_codec()?;
        let mut out = BTreeMap::new();
        for (&class, list) in &self.classes {
            let mut grids = Vec::with_capacity(list.len());
            for s in list {
                let (grid, _) = sc.decode_grid(&s.stream, s.top_shape, s.bottom_shape).map_err(|e| match e {
                    DrrError::State(m) => DrrError::Corrupted(m),
                    e => e,
                })?;
                grids.push((grid, s.clone()));
            }
            out.insert(class, grids);
        }
        Ok(out)
    }

    /// Decompresses every stream to its code grid.
    pub fn decode_grids(&self) -> Result<BTreeMap<u32, Vec<CodeGrid>>> {
        Ok(self.decode_all()?.into_iter().map(|(c, l)| (c, l.into_iter().map(|(g, _)| g).collect())).collect())
    }

    /// Reconstructs every stored exemplar in the image domain.
    pub fn reconstruct_all(&self, codec: &CodecParams) -> Result<ClassImages> {
        self.decode_grids()?
            .into_iter()
            .map(|(c, grids)| Ok((c, grids.iter().map(|g| codec.decode_codes(g)).collect::<Result<Vec<_>>>()?)))
            .collect()
    }

    /// Writes the model, one `DRRS` file per image, and a line-oriented index.
    ///
    /// Index lines after the header read
    /// `class file top_rows top_cols bottom_rows bottom_cols model_version height width channels`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        let model = self.require_model()?;
        fs::create_dir_all(dir)?;
        model.save(&dir.join(MODEL_FILE))?;
        let mut index = format!("{INDEX_HEADER} phase {}\n", self.phase);
        for (class, list) in &self.classes {
            for (i, s) in list.iter().enumerate() {
                let name = format!("{class}_{i}.drrs");
                s.stream.save(&dir.join(&name))?;
                let (h, w, c) = s.image_shape;
                writeln!(
                    index,
                    "{class} {name} {} {} {} {} {} {h} {w} {c}",
                    s.top_shape.0,
                    s.top_shape.1,
                    s.bottom_shape.0,
                    s.bottom_shape.1,
                    s.stream.model_version()
                )
                .expect("writing to a String cannot fail");
            }
        }
        fs::write(dir.join(INDEX_FILE), index)?;
        Ok(())
    }

    /// Loads a directory written by [`save_dir`](Self::save_dir) and recomputes each
    /// stream's accounting by decoding it.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load_dir_with_model(dir, CodeModel::load(&dir.join(MODEL_FILE))?)
    }

    /// Like [`load_dir`](Self::load_dir) but decodes against `model` instead of the
    /// stored snapshot; streams of another version are reported as corrupted.
    pub fn load_dir_with_model(dir: &Path, model: CodeModel) -> Result<Self> {
        let index = fs::read_to_string(dir.join(INDEX_FILE))?;
        let mut lines = index.lines();
        let phase = lines
            .next()
            .and_then(|h| h.strip_prefix(INDEX_HEADER))
            .and_then(|rest| rest.trim().strip_prefix("phase "))
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| DrrError::Corrupted("bad index header".into()))?;
        let sc = StreamCodec::for_model(&model)?;
        let mut buffer = Self { classes: BTreeMap::new(), model: Some(model), phase };
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 10 || f[1].contains(['/', '\\']) {
                return corrupted(format!("bad index line: {line}"));
            }
            let n =
                |i: usize| f[i].parse::<usize>().map_err(|_| DrrError::Corrupted(format!("bad index line: {line}")));
            let class = f[0].parse::<u32>().map_err(|_| DrrError::Corrupted(format!("bad class in: {line}")))?;
            let mut stream = CompressedStream::load(&dir.join(f[1]))?;
            if stream.model_version() as usize != n(6)? {
                return corrupted(format!("index and stream disagree on the model version for {}", f[1]));
            }
            let image = StoredImage {
                top_shape: (n(2)?, n(3)?),
                bottom_shape: (n(4)?, n(5)?),
                image_shape: (n(7)?, n(8)?, n(9)?),
                stream: stream.clone(),
            };
            sc.restore(&mut stream, &image.level_lens()).map_err(|e| match e {
                DrrError::State(m) | DrrError::InvalidInput(m) => DrrError::Corrupted(m),
                e => e,
            })?;
            buffer.insert_stream(class, StoredImage { stream, ..image });
        }
        Ok(buffer)
    }
}

fn store(sc: &StreamCodec, grid: &CodeGrid, image_shape: (usize, usize, usize)) -> Result<StoredImage> {
    Ok(StoredImage {
        stream: sc.encode_grid(grid)?,
        top_shape: grid.top.shape(),
        bottom_shape: grid.bottom.shape(),
        image_shape,
    })
}

/// Up to `m` raw exemplars per class, chosen uniformly at random with a fixed seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExemplarStore {
    per_class: usize,
    seed: u64,
    classes: ClassImages,
}

impl RawExemplarStore {
    pub fn new(per_class: usize, seed: u64) -> Self {
        Self { per_class, seed, classes: ClassImages::new() }
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn images(&self) -> &ClassImages {
        &self.classes
    }

    /// Samples exemplars of classes not yet in the store, keeping the source order.
    pub fn select(&mut self, classes: &ClassImages) -> Result<()> {
        if let Some(c) = classes.keys().find(|c| self.classes.contains_key(c)) {
            return invalid(format!("raw exemplars of class {c} were already selected"));
        }
        for (&class, images) in classes {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(u64::from(class));
            let mut picked = sample(&mut rng, images.len(), self.per_class.min(images.len())).into_vec();
            picked.sort_unstable();
            let chosen: Vec<ImageTensor> = picked.into_iter().map(|i| images[i].clone()).collect();
            if !chosen.is_empty() {
                self.classes.insert(class, chosen);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Storage at one byte per channel value.
    pub fn bytes(&self) -> u64 {
        self.classes.values().flatten().map(|i| i.len() as u64).sum()
    }
}

/// Exemplar and assistant-model memory, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemoryReport {
    pub exemplars: u64,
    /// Exemplars stored as 8-bit raw images.
    pub raw_equivalent_bytes: u64,
    /// Codes stored at 16 bits each.
    pub uncompressed_code_bytes: u64,
    /// Sum of the serialized stream sizes.
    pub compressed_bytes: u64,
    pub raw_store_bytes: u64,
    pub codec_bytes: u64,
    pub model_bytes: u64,
    pub codes: u64,
}

impl MemoryReport {
    pub fn assistant_bytes(&self) -> u64 {
        self.codec_bytes + self.model_bytes
    }

    /// Compressed exemplars plus raw store.
    pub fn exemplar_bytes(&self) -> u64 {
        self.compressed_bytes + self.raw_store_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.exemplar_bytes() + self.assistant_bytes()
    }

    pub fn bits_per_code(&self) -> f64 {
        if self.codes == 0 {
            0.0
        } else {
            self.compressed_bytes as f64 * 8.0 / self.codes as f64
        }
    }

    const FIELDS: [&'static str; 8] = [
        "exemplars",
        "raw_equivalent_bytes",
        "uncompressed_code_bytes",
        "compressed_bytes",
        "raw_store_bytes",
        "codec_bytes",
        "model_bytes",
        "codes",
    ];

    fn values(&self) -> [u64; 8] {
        [
            self.exemplars,
            self.raw_equivalent_bytes,
            self.uncompressed_code_bytes,
            self.compressed_bytes,
            self.raw_store_bytes,
            self.codec_bytes,
            self.model_bytes,
            self.codes,
        ]
    }

    /// `key=value` pairs, one per line, with derived totals at the end.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::FIELDS.iter().zip(self.values()) {
            writeln!(out, "{k}={v}").expect("writing to a String cannot fail");
        }
        writeln!(out, "assistant_bytes={}", self.assistant_bytes()).expect("infallible");
        writeln!(out, "total_bytes={}", self.total_bytes()).expect("infallible");
        out
    }

    /// Parses the base fields written by [`to_key_values`](Self::to_key_values).
    pub fn from_key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut v = [None; 8];
        for (k, val) in pairs {
            if let Some(i) = Self::FIELDS.iter().position(|f| *f == k) {
                v[i] =
                    Some(val.parse::<u64>().map_err(|_| DrrError::InvalidInput(format!("bad value for {k}: {val}")))?);
            }
        }
        let get = |i: usize| v[i].ok_or_else(|| DrrError::InvalidInput(format!("missing {}", Self::FIELDS[i])));
        Ok(Self {
            exemplars: get(0)?,
            raw_equivalent_bytes: get(1)?,
            uncompressed_code_bytes: get(2)?,
            compressed_bytes: get(3)?,
            raw_store_bytes: get(4)?,
            codec_bytes: get(5)?,
            model_bytes: get(6)?,
            codes: get(7)?,
        })
    }

    /// Table of the exemplar and assistant-model costs in bytes and MB (2^20 bytes).
    pub fn to_table(&self) -> String {
        let rows = [
            ("exemplars (raw, 8-bit)", self.raw_equivalent_bytes),
            ("codes (16 bits/code)", self.uncompressed_code_bytes),
            ("codes (compressed)", self.compressed_bytes),
            ("raw exemplar store", self.raw_store_bytes),
            ("codec", self.codec_bytes),
            ("latent model", self.model_bytes),
            ("total stored", self.total_bytes()),
        ];
        let mut out = format!("{:<24} {:>14} {:>10}\n", "item", "bytes", "MB");
        for (name, b) in rows {
            writeln!(out, "{name:<24} {b:>14} {:>10.2}", b as f64 / MIB).expect("infallible");
        }
        writeln!(out, "{} exemplars, {} codes, {:.3} bits/code", self.exemplars, self.codes, self.bits_per_code())
            .expect("infallible");
        out
    }
}

/// Byte-exact memory report of a buffer, an optional raw store, and the codec.
pub fn account(buffer: &ReplayBuffer, raw: Option<&RawExemplarStore>, codec: Option<&CodecParams>) -> MemoryReport {
    let mut r = MemoryReport::default();
    for s in buffer.classes.values().flatten() {
        r.exemplars += 1;
        r.raw_equivalent_bytes += s.raw_bytes();
        let codes = s.level_lens().iter().sum::<usize>() as u64;
        r.codes += codes;
        r.uncompressed_code_bytes += codes * UNCOMPRESSED_CODE_BYTES as u64;
        r.compressed_bytes += s.stream.encoded_len() as u64;
    }
    r.raw_store_bytes = raw.map_or(0, RawExemplarStore::bytes);
    r.codec_bytes = codec.map_or(0, |c| c.to_bytes().len() as u64);
    r.model_bytes = buffer.model.as_ref().map_or(0, |m| m.to_bytes().len() as u64);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits_back::ChainShape;
    use crate::dataset::{toy_dataset, ToyConfig};
    use crate::vq::CodecGeometry;

    fn setup() -> (CodecParams, CodeModel, ClassImages) {
        let g = CodecGeometry { channels: 3, patch: 2, pool: 2, codebook_size: 16, dim: 4 };
        let codec = CodecParams::init(g, 0.25, 1).unwrap().freeze();
        let model = CodeModel::random(&ChainShape::uniform(16, 2, 3, 16), 4).unwrap();
        let data =
            toy_dataset(&ToyConfig { classes: 4, train_per_class: 5, test_per_class: 0, ..ToyConfig::default() })
                .unwrap()
                .train;
        (codec, model, data)
    }

    fn subset(data: &ClassImages, classes: &[u32]) -> ClassImages {
        classes.iter().map(|c| (*c, data[c].clone())).collect()
    }

    #[test]
    fn ingest_reconstruct_and_reencode() {
        let (codec, model, data) = setup();
        let mut buffer = ReplayBuffer::with_model(model);
        let fit = FitConfig { iterations: 2, ..FitConfig::default() };
        let mut raw = RawExemplarStore::new(2, 9);
        buffer.ingest_phase(&subset(&data, &[0, 1]), &codec, &fit, Some(&mut raw)).unwrap();
        assert_eq!(buffer.len(), 10);
        assert_eq!(buffer.model_version(), Some(1));
        buffer.ingest_phase(&subset(&data, &[2]), &codec, &fit, Some(&mut raw)).unwrap();
        buffer.ingest_phase(&subset(&data, &[3]), &codec, &fit, None).unwrap();
        assert_eq!(buffer.phase(), 3);
        assert_eq!(buffer.classes().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let rec = buffer.reconstruct_all(&codec).unwrap();
        for (c, imgs) in &data {
            let direct: Vec<_> = imgs.iter().map(|i| codec.roundtrip(i).unwrap()).collect();
            assert_eq!(rec[c], direct);
        }
        assert_eq!(raw.len(), 6);
        assert!(matches!(
            buffer.ingest_phase(&subset(&data, &[1]), &codec, &fit, None),
            Err(DrrError::InvalidInput(_))
        ));
        let unfrozen = CodecParams::init(*codec.geometry(), 0.25, 1).unwrap();
        assert!(matches!(buffer.ingest_phase(&ClassImages::new(), &unfrozen, &fit, None), Err(DrrError::State(_))));
    }

    #[test]
    fn raw_selection_is_seeded_and_capped() {
        let (_, _, data) = setup();
        let mut a = RawExemplarStore::new(3, 5);
        let mut b = RawExemplarStore::new(3, 5);
        a.select(&data).unwrap();
        b.select(&data).unwrap();
        assert_eq!(a, b);
        assert!(a.images().values().all(|v| v.len() == 3));
        assert_eq!(a.bytes(), 12 * 16 * 16 * 3);
        let mut none = RawExemplarStore::new(0, 5);
        none.select(&data).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn persistence_round_trip_and_accounting() {
        let (codec, model, data) = setup();
        let mut buffer = ReplayBuffer::with_model(model);
        buffer.ingest_phase(&subset(&data, &[0, 3]), &codec, &FitConfig::default(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        buffer.save_dir(dir.path()).unwrap();
        let loaded = ReplayBuffer::load_dir(dir.path()).unwrap();
        for (a, b) in loaded.entries().values().flatten().zip(buffer.entries().values().flatten()) {
            assert_eq!(a.stream.to_bytes(), b.stream.to_bytes());
            assert_eq!((a.top_shape, a.bottom_shape, a.image_shape), (b.top_shape, b.bottom_shape, b.image_shape));
            assert!((a.stream.net_bits() - b.stream.net_bits()).abs() < 1e-6);
        }
        assert_eq!(loaded.len(), buffer.len());
        assert_eq!(loaded.reconstruct_all(&codec).unwrap(), buffer.reconstruct_all(&codec).unwrap());

        let report = account(&buffer, None, Some(&codec));
        let on_disk: u64 = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "drrs"))
            .map(|p| fs::metadata(p).unwrap().len())
            .sum();
        assert_eq!(report.compressed_bytes, on_disk);
        assert_eq!(report.raw_equivalent_bytes, 10 * 768);
        assert_eq!(report.codes, 10 * (16 + 64));
        assert_eq!(report.uncompressed_code_bytes, report.codes * 2);
        assert_eq!(
            MemoryReport::from_key_values(report.to_key_values().lines().filter_map(|l| l.split_once('='))).unwrap(),
            report
        );
        assert_eq!(account(&ReplayBuffer::new(), None, None), MemoryReport::default());
    }
}
