//! Phased class-incremental experiments on the toy dataset, their key-value config
//! files, and result records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{train_phase, Classifier, ClassifierParams, Mode, PhaseData, PhaseResults, TrainConfig};
use crate::bits_back::{ChainShape, CodeModel, FitConfig};
use crate::dataset::{flatten, toy_dataset, ClassImages, ToyConfig};
use crate::error::{invalid, DrrError, Result};
use crate::image::ImageTensor;
use crate::replay::{account, MemoryReport, RawExemplarStore, ReplayBuffer};
use crate::vq::{train_codec, CodecConfig, CodecGeometry};

/// Split of the classes into an initial phase and `phases` equal incremental phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseSchedule {
    pub total_classes: usize,
    pub initial_classes: usize,
    pub phases: usize,
    pub seed: u64,
}

impl PhaseSchedule {
    pub fn per_phase(&self) -> usize {
        self.total_classes.saturating_sub(self.initial_classes).checked_div(self.phases).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_classes >= 1
            && self.initial_classes <= self.total_classes
            && if self.phases == 0 {
                self.initial_classes == self.total_classes
            } else {
                let rest = self.total_classes - self.initial_classes;
                rest >= self.phases && rest.is_multiple_of(self.phases)
            };
        if !ok {
            return invalid(format!(
                "{} initial classes plus {} equal phases cannot cover {} classes",
                self.initial_classes, self.phases, self.total_classes
            ));
        }
        Ok(())
    }

    /// Seeded class permutation; it depends on the seed and class count only, so every
    /// partition of the same classes assigns the same labels.
    pub fn class_order(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.total_classes as u32).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        order
    }

    /// Classes introduced in phase `i`, as a range of [`class_order`](Self::class_order).
    pub fn phase_range(&self, i: usize) -> std::ops::Range<usize> {
        if i == 0 {
            0..self.initial_classes
        } else {
            let start = self.initial_classes + (i - 1) * self.per_phase();
            start..start + self.per_phase()
        }
    }
}

/// Everything an experiment run needs, read from a `key = value` text file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub classes: usize,
    pub initial_classes: usize,
    pub phases: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub codebook_size: usize,
    pub dim: usize,
    pub patch: usize,
    pub pool: usize,
    pub codec_epochs: usize,
    pub codec_lr: f64,
    pub beta: f64,
    pub depth: usize,
    pub latent_alphabet: usize,
    pub block_len: usize,
    pub fit_iterations: usize,
    pub raw_per_class: usize,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            initial_classes: 4,
            phases: 2,
            train_per_class: 30,
            test_per_class: 20,
            image_size: 16,
            noise: 0.08,
            data_seed: 0,
            codebook_size: 32,
            dim: 8,
            patch: 2,
            pool: 2,
            codec_epochs: 100,
            codec_lr: 0.003,
            beta: 0.25,
            depth: 2,
            latent_alphabet: 8,
            block_len: 16,
            fit_iterations: 5,
            raw_per_class: 20,
            train: TrainConfig::default(),
            seeds: vec![0],
        }
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are rejected and
    /// missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| DrrError::InvalidInput(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v).map_err(|e| DrrError::InvalidInput(format!("line {}: {e}", n + 1)))?;
        }
        cfg.schedule(0).validate()?;
        cfg.train.validate()?;
        if cfg.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| DrrError::InvalidInput(format!("bad value {v:?} for {key}")))
        }
        match key {
            "classes" => self.classes = num(key, value)?,
            "initial_classes" => self.initial_classes = num(key, value)?,
            "phases" => self.phases = num(key, value)?,
            "train_per_class" => self.train_per_class = num(key, value)?,
            "test_per_class" => self.test_per_class = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "codebook_size" => self.codebook_size = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "pool" => self.pool = num(key, value)?,
            "codec_epochs" => self.codec_epochs = num(key, value)?,
            "codec_lr" => self.codec_lr = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "latent_alphabet" => self.latent_alphabet = num(key, value)?,
            "block_len" => self.block_len = num(key, value)?,
            "fit_iterations" => self.fit_iterations = num(key, value)?,
            "raw_per_class" => self.raw_per_class = num(key, value)?,
            "mode" => self.train.mode = Mode::parse(value)?,
            "lambda" => self.train.lambda = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "hidden" => self.train.hidden = num(key, value)?,
            "seeds" => {
                self.seeds = value.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
            }
            _ => return invalid(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// The configuration as text accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "classes = {}\ninitial_classes = {}\nphases = {}\ntrain_per_class = {}\ntest_per_class = {}\n\
             image_size = {}\nnoise = {}\ndata_seed = {}\ncodebook_size = {}\ndim = {}\npatch = {}\npool = {}\n\
             codec_epochs = {}\ncodec_lr = {}\nbeta = {}\ndepth = {}\nlatent_alphabet = {}\nblock_len = {}\n\
             fit_iterations = {}\nraw_per_class = {}\nmode = {}\nlambda = {}\nepochs = {}\nlr = {}\nbatch_size = {}\n\
             hidden = {}\nseeds = {}\n",
            self.classes,
            self.initial_classes,
            self.phases,
            self.train_per_class,
            self.test_per_class,
            self.image_size,
            self.noise,
            self.data_seed,
            self.codebook_size,
            self.dim,
            self.patch,
            self.pool,
            self.codec_epochs,
            self.codec_lr,
            self.beta,
            self.depth,
            self.latent_alphabet,
            self.block_len,
            self.fit_iterations,
            self.raw_per_class,
            t.mode.name(),
            t.lambda,
            t.epochs,
            t.lr,
            t.batch_size,
            t.hidden,
            seeds.join(","),
        )
    }

    pub fn schedule(&self, seed: u64) -> PhaseSchedule {
        PhaseSchedule { total_classes: self.classes, initial_classes: self.initial_classes, phases: self.phases, seed }
    }

    pub fn toy(&self) -> ToyConfig {
        ToyConfig {
            classes: self.classes,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            size: self.image_size,
            noise: self.noise,
            seed: self.data_seed,
        }
    }

    pub fn geometry(&self) -> CodecGeometry {
        CodecGeometry {
            channels: 3,
            patch: self.patch,
            pool: self.pool,
            codebook_size: self.codebook_size,
            dim: self.dim,
        }
    }

    pub fn chain_shape(&self) -> ChainShape {
        ChainShape::uniform(self.codebook_size, self.depth, self.latent_alphabet, self.block_len)
    }
}

/// Outcome of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub phase: usize,
    pub classes_seen: usize,
    pub correct: usize,
    pub tested: usize,
    pub memory: MemoryReport,
}

impl PhaseRecord {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.tested as f64
    }
}

/// One seeded run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub seed: u64,
    pub mode: Mode,
    pub records: Vec<PhaseRecord>,
    /// Classifier trained in the last phase.
    pub final_params: ClassifierParams,
}

impl ExperimentResults {
    pub fn phase_results(&self) -> PhaseResults {
        PhaseResults { accuracies: self.records.iter().map(PhaseRecord::accuracy).collect() }
    }
}

/// Runs the full protocol for one seed.
///
/// Phase 0 trains and freezes the codec on the initial classes, then fits the latent
/// model while ingesting them. Every phase ingests its new classes, reconstructs the
/// whole buffer, trains a classifier from scratch, and tests it on raw images of all
/// classes seen so far.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentResults> {
    let schedule = cfg.schedule(seed);
    schedule.validate()?;
    let data = toy_dataset(&cfg.toy())?;
    let order = schedule.class_order();
    let pick = |images: &ClassImages, range: std::ops::Range<usize>| -> ClassImages {
        order[range].iter().map(|c| (*c, images[c].clone())).collect()
    };

    let initial = pick(&data.train, schedule.phase_range(0));
    let codec_cfg =
        CodecConfig { geometry: cfg.geometry(), lr: cfg.codec_lr, epochs: cfg.codec_epochs, beta: cfg.beta, seed };
    let codec = train_codec(&flatten(&initial), &codec_cfg)?.freeze();
    let mut buffer = ReplayBuffer::with_model(CodeModel::random(&cfg.chain_shape(), seed)?);
    let fit = FitConfig { iterations: cfg.fit_iterations, ..FitConfig::default() };
    let mode = cfg.train.mode;
    let mut raw = RawExemplarStore::new(if mode == Mode::IbDrr { cfg.raw_per_class } else { 0 }, seed);
    let train_cfg = TrainConfig { seed, ..cfg.train };

    let mut records = Vec::new();
    let mut final_params = None;
    for phase in 0..=schedule.phases {
        let range = schedule.phase_range(phase);
        let new = pick(&data.train, range.clone());
        buffer.ingest_phase(&new, &codec, &fit, Some(&mut raw))?;
        let recon = buffer.reconstruct_all(&codec)?;
        let seen = &order[..range.end];

        let mut phase_data = PhaseData::default();
        for (label, class) in seen.iter().enumerate() {
            for img in &recon[class] {
                phase_data.samples.push((img.clone(), label));
            }
        }
        if mode != Mode::Drr {
            for class in &order[range.clone()] {
                for (raw_img, rec) in data.train[class].iter().zip(&recon[class]) {
                    phase_data.pairs.push((raw_img.clone(), rec.clone()));
                }
            }
            if mode == Mode::IbDrr {
                for class in &order[..range.start] {
                    for raw_img in raw.images().get(class).into_iter().flatten() {
                        phase_data.pairs.push((raw_img.clone(), codec.roundtrip(raw_img)?));
                    }
                }
            }
        }
        let params = train_phase(&phase_data, seen.len(), &train_cfg)?;

        let test: Vec<(&ImageTensor, usize)> =
            seen.iter().enumerate().flat_map(|(l, c)| data.test[c].iter().map(move |i| (i, l))).collect();
        if test.is_empty() {
            return invalid("test set is empty");
        }
        let correct = test.iter().filter(|(img, l)| params.predict(img) == *l).count();
        records.push(PhaseRecord {
            phase,
            classes_seen: seen.len(),
            correct,
            tested: test.len(),
            memory: account(&buffer, Some(&raw), Some(&codec)),
        });
        final_params = Some(params);
    }
    Ok(ExperimentResults { seed, mode, records, final_params: final_params.expect("at least one phase runs") })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:.6}"))
}

/// One `phase` line per phase and one `summary` line per run, as space-separated
/// `key=value` fields.
pub fn write_results(runs: &[ExperimentResults]) -> String {
    let mut out = String::new();
    for run in runs {
        for r in &run.records {
            let mem: Vec<String> = r.memory.to_key_values().lines().map(str::to_string).collect();
            writeln!(
                out,
                "phase seed={} mode={} index={} classes={} correct={} tested={} accuracy={:.6} {}",
                run.seed,
                run.mode.name(),
                r.phase,
                r.classes_seen,
                r.correct,
                r.tested,
                r.accuracy(),
                mem.join(" ")
            )
            .expect("infallible");
        }
        let res = run.phase_results();
        writeln!(
            out,
            "summary seed={} mode={} phases={} average={} last={}",
            run.seed,
            run.mode.name(),
            run.records.len() - 1,
            fmt_opt(res.average()),
            fmt_opt(res.last())
        )
        .expect("infallible");
    }
    out
}

/// A run read back from a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRun {
    pub seed: u64,
    pub mode: Mode,
    pub records: Vec<PhaseRecord>,
    pub average: Option<f64>,
    pub last: Option<f64>,
}

impl ParsedRun {
    pub fn phase_results(&self) -> PhaseResults {
        PhaseResults { accuracies: self.records.iter().map(PhaseRecord::accuracy).collect() }
    }
}

/// Parses [`write_results`] output and checks each summary against its phase records.
pub fn parse_results(text: &str) -> Result<Vec<ParsedRun>> {
    let mut runs = Vec::new();
    let mut pending: BTreeMap<u64, Vec<PhaseRecord>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| DrrError::InvalidInput(format!("results line {}: {what}", n + 1));
        let mut words = line.split_whitespace();
        let kind = words.next().unwrap_or_default();
        let fields: BTreeMap<&str, &str> =
            words.map(|w| w.split_once('=').ok_or_else(|| bad("expected key=value"))).collect::<Result<_>>()?;
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
        let int = |k: &str| get(k)?.parse::<u64>().map_err(|_| bad(&format!("bad {k}")));
        let seed = int("seed")?;
        match kind {
            "phase" => {
                let memory = MemoryReport::from_key_values(fields.iter().map(|(k, v)| (*k, *v)))?;
                let tested = int("tested")? as usize;
                if tested == 0 {
                    return Err(bad("zero tested images"));
                }
                let list = pending.entry(seed).or_default();
                let index = int("index")? as usize;
                if index != list.len() {
                    return Err(bad("phase records out of order"));
                }
                list.push(PhaseRecord {
                    phase: index,
                    classes_seen: int("classes")? as usize,
                    correct: int("correct")? as usize,
                    tested,
                    memory,
                });
            }
            "summary" => {
                let records = pending.remove(&seed).ok_or_else(|| bad("summary without phase records"))?;
                let opt = |k: &str| -> Result<Option<f64>> {
                    match get(k)? {
                        "none" => Ok(None),
                        v => v.parse().map(Some).map_err(|_| bad(&format!("bad {k}"))),
                    }
                };
                let run = ParsedRun {
                    seed,
                    mode: Mode::parse(get("mode")?)?,
                    records,
                    average: opt("average")?,
                    last: opt("last")?,
                };
                let res = run.phase_results();
                let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                    (None, None) => true,
                    (Some(a), Some(b)) => (a - b).abs() <= 5e-7,
                    _ => false,
                };
                if !close(res.average(), run.average) || !close(res.last(), run.last) {
                    return Err(bad("summary disagrees with its phase records"));
                }
                runs.push(run);
            }
            _ => return Err(bad("expected a phase or summary record")),
        }
    }
    if !pending.is_empty() {
        return invalid("phase records without a summary");
    }
    if runs.is_empty() {
        return invalid("results file holds no runs");
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_ranges_and_validation() {
        let s = PhaseSchedule { total_classes: 8, initial_classes: 4, phases: 2, seed: 3 };
        s.validate().unwrap();
        assert_eq!(s.phase_range(0), 0..4);
        assert_eq!(s.phase_range(2), 6..8);
        let mut o = s.class_order();
        assert_eq!(o, PhaseSchedule { phases: 4, ..s }.class_order());
        o.sort();
        assert_eq!(o, (0..8).collect::<Vec<_>>());
        assert!(PhaseSchedule { phases: 3, ..s }.validate().is_err());
        assert!(PhaseSchedule { phases: 0, ..s }.validate().is_err());
        PhaseSchedule { phases: 0, initial_classes: 8, ..s }.validate().unwrap();
    }

    #[test]
    fn config_text_round_trip_and_errors() {
        let cfg = ExperimentConfig { seeds: vec![1, 2, 3], ..ExperimentConfig::default() };
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("phases = x").is_err());
        assert!(ExperimentConfig::parse("phases = 3").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        let c = ExperimentConfig::parse("# comment\nmode = drr # trailing\nlambda = 0.5\n").unwrap();
        assert_eq!((c.train.mode, c.train.lambda), (Mode::Drr, 0.5));
    }

    #[test]
    fn results_round_trip_and_consistency() {
        let rec = |phase, correct| PhaseRecord {
            phase,
            classes_seen: 2 + phase,
            correct,
            tested: 40,
            memory: MemoryReport::default(),
        };
        let run = ExperimentResults {
            seed: 7,
            mode: Mode::IbDrr,
            records: vec![rec(0, 36), rec(1, 20), rec(2, 28)],
            final_params: ClassifierParams::init(3, 2, 4, 0).unwrap(),
        };
        let text = write_results(std::slice::from_ref(&run));
        let parsed = parse_results(&text).unwrap();
        assert_eq!(parsed[0].records, run.records);
        assert_eq!(parsed[0].average, Some(0.6));
        assert!(parse_results("").is_err());
        let tampered = text.replace("last=0.700000", "last=0.800000");
        assert!(parse_results(&tampered).is_err());
    }
}
