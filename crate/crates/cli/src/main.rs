use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use drr_core::bits_back::{
    ChainShape, CodeModel, CompressedStream, FitConfig, DEFAULT_BLOCK_LEN, DEFAULT_DEPTH, DEFAULT_LATENT_ALPHABET,
};
use drr_core::dataset::{flatten, read_image_dir, write_image_dir};
use drr_core::learner::{parse_results, run_experiment, write_results, ExperimentConfig, ExperimentResults, ParsedRun};
use drr_core::replay::{account, MemoryReport, ReplayBuffer, MIB};
use drr_core::vq::{
    train_codec, CodecConfig, CodecGeometry, CodecParams, DEFAULT_BETA, DEFAULT_CODEBOOK_SIZE, DEFAULT_DIM, DEFAULT_LR,
};
use drr_core::{AnsCoder, DrrError, ImageTensor, LatentChainModel};

/// Exemplar compression for replay-based incremental learning.
#[derive(Parser)]
#[command(name = "drr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codec on a directory of raw images and write it frozen.
    PretrainCodec(PretrainArgs),
    /// Encode images to codes and store them as compressed streams.
    Compress(CompressArgs),
    /// Decode stored streams back to reconstructed images.
    Decompress(DecompressArgs),
    /// Run the phased incremental-learning experiment from a config file.
    RunPhases(RunArgs),
    /// Summarize a results file.
    Report(ReportArgs),
    /// Describe a codec, model, stream, bitstream, or raw image file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct PretrainArgs {
    /// Directory of `<class>_<index>.raw` images.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CODEBOOK_SIZE)]
    codebook_size: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    patch: usize,
    #[arg(long, default_value_t = 2)]
    pool: usize,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    codec: PathBuf,
    /// Latent model file; written instead of read when `--fit` is given.
    #[arg(long)]
    model: PathBuf,
    /// Directory of `<class>_<index>.raw` images.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for streams and the index.
    #[arg(long)]
    out: PathBuf,
    /// Fit a fresh model on the input codes with this many iterations.
    #[arg(long)]
    fit: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = DEFAULT_LATENT_ALPHABET)]
    latent_alphabet: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_LEN)]
    block_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Directory written by `compress`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for reconstructed `.raw` images.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results file to write.
    #[arg(long)]
    out: PathBuf,
    /// Number of seeds to run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    file: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DrrError>() {
            return match e {
                DrrError::Io(_) => 2,
                DrrError::Corrupted(_) | DrrError::ExhaustedStream => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::PretrainCodec(a) => pretrain(a),
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::RunPhases(a) => run_phases(a),
        Command::Report(a) => report(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_images(dir: &Path) -> Result<drr_core::dataset::ClassImages> {
    let images = read_image_dir(dir).with_context(|| format!("reading images from {}", dir.display()))?;
    if images.is_empty() {
        return Err(DrrError::InvalidInput(format!("no .raw images in {}", dir.display())).into());
    }
    Ok(images)
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let images = flatten(&load_images(&a.data)?);
    let geometry = CodecGeometry {
        channels: images[0].channels(),
        patch: a.patch,
        pool: a.pool,
        codebook_size: a.codebook_size,
        dim: a.dim,
    };
    let cfg = CodecConfig { geometry, lr: a.lr, epochs: a.epochs, beta: a.beta, seed: a.seed };
    let codec = train_codec(&images, &cfg)?.freeze();
    codec.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("reconstruction_mse={:.6}", codec.reconstruction_mse(&images)?);
    Ok(())
}

fn print_memory(report: &MemoryReport) {
    print!("{}", report.to_table());
}

fn compress(a: CompressArgs) -> Result<()> {
    let codec = CodecParams::load(&a.codec).with_context(|| format!("reading codec {}", a.codec.display()))?;
    let images = load_images(&a.input)?;
    let model = match a.fit {
        Some(iterations) => {
            let shape = ChainShape::uniform(codec.geometry().codebook_size, a.depth, a.latent_alphabet, a.block_len);
            let grids =
                images.values().flatten().map(|i| codec.encode_image(i)).collect::<drr_core::Result<Vec<_>>>()?;
            let fit = FitConfig { iterations, ..FitConfig::default() };
            let model = CodeModel::random(&shape, a.seed)?.fit(&grids, &fit)?;
            model.save(&a.model).with_context(|| format!("writing model {}", a.model.display()))?;
            model
        }
        None => CodeModel::load(&a.model).with_context(|| format!("reading model {}", a.model.display()))?,
    };
    let mut buffer = ReplayBuffer::with_model(model);
    buffer.add_images(&images, &codec)?;
    buffer.save_dir(&a.out).with_context(|| format!("writing streams to {}", a.out.display()))?;
    let net: f64 = buffer.entries().values().flatten().map(|s| s.stream.net_bits()).sum();
    let report = account(&buffer, None, Some(&codec));
    println!("net_bits_per_code={:.4}", net / report.codes.max(1) as f64);
    print_memory(&report);
    Ok(())
}

fn decompress(a: DecompressArgs) -> Result<()> {
    let codec = CodecParams::load(&a.codec).with_context(|| format!("reading codec {}", a.codec.display()))?;
    let model = CodeModel::load(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let buffer = ReplayBuffer::load_dir_with_model(&a.input, model)
        .with_context(|| format!("reading streams from {}", a.input.display()))?;
    let images = buffer.reconstruct_all(&codec)?;
    write_image_dir(&a.out, &images).with_context(|| format!("writing images to {}", a.out.display()))?;
    print_memory(&account(&buffer, None, Some(&codec)));
    Ok(())
}

fn run_phases(a: RunArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading config {}", a.config.display()))?;
    let cfg = ExperimentConfig::parse(&text).context("parsing config")?;
    let jobs = a.jobs.max(1);
    let mut runs: Vec<Option<drr_core::Result<ExperimentResults>>> = (0..cfg.seeds.len()).map(|_| None).collect();
    for chunk in (0..cfg.seeds.len()).collect::<Vec<_>>().chunks(jobs) {
        let done: Vec<(usize, drr_core::Result<ExperimentResults>)> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let cfg = &cfg;
                    (i, s.spawn(move || run_experiment(cfg, cfg.seeds[i])))
                })
                .collect();
            handles.into_iter().map(|(i, h)| (i, h.join().expect("experiment thread panicked"))).collect()
        });
        for (i, r) in done {
            runs[i] = Some(r);
        }
    }
    let runs = runs.into_iter().map(|r| r.expect("every seed ran")).collect::<drr_core::Result<Vec<_>>>()?;
    fs::write(&a.out, write_results(&runs)).with_context(|| format!("writing {}", a.out.display()))?;
    for run in &runs {
        let res = run.phase_results();
        println!(
            "seed={} average={} last={:.4}",
            run.seed,
            res.average().map_or("none".into(), |v| format!("{v:.4}")),
            res.last().unwrap_or(0.0)
        );
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn render_run(run: &ParsedRun) {
    println!("seed {} ({})", run.seed, run.mode.name());
    println!(
        "  {:>5} {:>7} {:>9} {:>12} {:>12} {:>10}",
        "phase", "classes", "accuracy", "raw MB", "stored MB", "bits/code"
    );
    for r in &run.records {
        let m = &r.memory;
        println!(
            "  {:>5} {:>7} {:>9.4} {:>12.4} {:>12.4} {:>10.3}",
            r.phase,
            r.classes_seen,
            r.accuracy(),
            m.raw_equivalent_bytes as f64 / MIB,
            m.exemplar_bytes() as f64 / MIB,
            m.bits_per_code()
        );
    }
    let res = run.phase_results();
    let avg = res.average().map_or("none".to_string(), |v| format!("{v:.4}"));
    println!("  average={avg} last={:.4}", res.last().unwrap_or(0.0));
    if let Some(last) = run.records.last() {
        for line in last.memory.to_table().lines() {
            println!("  {line}");
        }
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.results).with_context(|| format!("reading {}", a.results.display()))?;
    let runs = parse_results(&text)?;
    for run in &runs {
        render_run(run);
    }
    let lasts: Vec<f64> = runs.iter().filter_map(|r| r.phase_results().last()).collect();
    let avgs: Vec<f64> = runs.iter().filter_map(|r| r.phase_results().average()).collect();
    let fmt = |v: Option<f64>| v.map_or("none".to_string(), |v| format!("{v:.4}"));
    println!("runs={} median_average={} median_last={}", runs.len(), fmt(median(avgs)), fmt(median(lasts)));
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let mut r = bytes.as_slice();
    match bytes.get(..4) {
        Some(b"DRRC") => {
            let c = CodecParams::read_from(&mut r)?;
            let g = c.geometry();
            println!(
                "codec channels={} patch={} pool={} codebook_size={} dim={} beta={} frozen={} bytes={}",
                g.channels,
                g.patch,
                g.pool,
                g.codebook_size,
                g.dim,
                c.beta(),
                c.is_frozen(),
                bytes.len()
            );
        }
        Some(b"DRRM") => {
            let mut n = 0;
            while !r.is_empty() {
                let m = LatentChainModel::read_from(&mut r)?;
                println!(
                    "model[{n}] version={} depth={} observation_alphabet={} latent_alphabets={:?} block_len={}",
                    m.version(),
                    m.depth(),
                    m.observation_alphabet(),
                    m.latent_alphabets(),
                    m.block_len()
                );
                n += 1;
            }
        }
        Some(b"DRRS") => {
            let s = CompressedStream::load(&a.file)?;
            let per_symbol =
                if s.symbol_count() == 0 { 0.0 } else { s.encoded_len() as f64 * 8.0 / s.symbol_count() as f64 };
            println!(
                "stream model_version={} symbols={} payload_bytes={} bytes={} stored_bits_per_symbol={per_symbol:.4}",
                s.model_version(),
                s.symbol_count(),
                s.payload().stack().len(),
                s.encoded_len(),
            );
        }
        Some(b"DRRB") => {
            let c = AnsCoder::read_from(&mut r)?;
            println!(
                "bitstream state={:#x} stack_bytes={} bits_written={}",
                c.state(),
                c.stack().len(),
                c.bits_written()
            );
        }
        _ => {
            let (h, w, c) = ImageTensor::read_raw(&mut r)?.shape();
            println!("image height={h} width={w} channels={c}");
        }
    }
    Ok(())
}
