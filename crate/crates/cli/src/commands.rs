use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use bigcodec::adversary::DiscConfig;
use bigcodec::bitstream::{pack, theoretical_bitrate, unpack, EncodedStream};
use bigcodec::dsp::mcd;
use bigcodec::gradsuite::{run_suite, Suite};
use bigcodec::model::{GeneratorModel, ModelConfig};
use bigcodec::quantizer::{approx_bitrate, entropy_bits, utilization};
use bigcodec::trainer::{synthetic_dataset, TrainConfig, Trainer};

use crate::wav::{read_wav, write_wav};
use crate::{AnalyzeArgs, DecodeArgs, EncodeArgs, GradcheckArgs, Module, TrainArgs};

fn load_model(path: &Path) -> Result<GeneratorModel> {
    GeneratorModel::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn read_stream(path: &Path) -> Result<EncodedStream> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    unpack(&bytes).with_context(|| format!("{}: not a valid .bgc stream", path.display()))
}

/// Sorted `.wav` files of `dir`, all at `rate`.
fn wav_corpus(dir: &Path, rate: u32) -> Result<Vec<Vec<f64>>> {
    ensure!(dir.is_dir(), "data directory {} does not exist", dir.display());
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "data directory {} contains no .wav files", dir.display());
    paths
        .iter()
        .map(|p| {
            let a = read_wav(p)?;
            a.require_rate(rate, p)?;
            Ok(a.samples)
        })
        .collect()
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut model = ModelConfig::by_name(&a.preset)?;
    if a.full_width {
        model = model.full_width();
    }
    let disc = if a.preset == "toy" { DiscConfig::toy() } else { DiscConfig::default() };
    let mut cfg = TrainConfig::new(a.steps, model.sample_rate);
    cfg.seed = a.seed;
    cfg.batch_size = a.batch_size;
    cfg.segment_seconds = a.segment_seconds;
    cfg.log_interval = a.log_interval;
    let data = match (&a.data, a.synthetic) {
        (Some(dir), _) => wav_corpus(dir, model.sample_rate)?,
        (None, Some(n)) => synthetic_dataset(n, model.sample_rate, a.seed),
        (None, None) => bail!("either --data or --synthetic is required"),
    };
    let mut trainer = Trainer::new(model, disc, cfg)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics");
        p.into()
    });
    let file = fs::File::create(&metrics).with_context(|| format!("cannot create {}", metrics.display()))?;
    let mut log = BufWriter::new(file);
    let history = trainer.fit(&data, Some(&mut log))?;
    drop(log);
    trainer.save(&a.out).with_context(|| format!("cannot write checkpoint {}", a.out.display()))?;
    if let Some(last) = history.last() {
        println!("{}", last.log_line());
    }
    println!("checkpoint={} metrics={}", a.out.display(), metrics.display());
    Ok(())
}

fn report_time(label: &str, seconds: f64, audio_seconds: f64) {
    let rtf = if audio_seconds > 0.0 { seconds / audio_seconds } else { 0.0 };
    println!("{label}_seconds={seconds:.6} rtf={rtf:.6}");
}

pub fn encode(a: &EncodeArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let audio = read_wav(&a.input)?;
    let cfg = &model.config;
    audio.require_rate(cfg.sample_rate, &a.input)?;
    let start = Instant::now();
    let stream = model.encode_stream(&audio.samples)?;
    let bytes = pack(&stream.indices, &stream.header)?;
    let elapsed = start.elapsed().as_secs_f64();
    fs::write(&a.out, &bytes).with_context(|| format!("cannot write {}", a.out.display()))?;
    println!("frames={} bytes={} samples={}", stream.header.n_frames, bytes.len(), audio.samples.len());
    if a.time {
        report_time("encode", elapsed, audio.duration());
    }
    Ok(())
}

fn decode_stream(model: &GeneratorModel, s: &EncodedStream, path: &Path) -> Result<Vec<f64>> {
    model.decode_stream(s).with_context(|| format!("cannot decode {}", path.display()))
}

pub fn decode(a: &DecodeArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let stream = read_stream(&a.input)?;
    let start = Instant::now();
    let y = decode_stream(&model, &stream, &a.input)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_wav(&a.out, model.config.sample_rate, &y)?;
    println!("samples={}", y.len());
    if a.time {
        report_time("decode", elapsed, y.len() as f64 / model.config.sample_rate as f64);
    }
    Ok(())
}

/// `key=value` lines describing the pooled code histogram of `streams`.
pub fn analysis_report(streams: &[EncodedStream]) -> Result<String> {
    let first = streams.first().context("no streams to analyze")?.header;
    for s in streams {
        let h = s.header;
        ensure!(
            (h.sample_rate, h.downsample, h.log2_k) == (first.sample_rate, first.downsample, first.log2_k),
            "streams disagree on sample rate, frame size or codebook size"
        );
    }
    let pooled: Vec<usize> = streams.iter().flat_map(|s| s.indices.iter().copied()).collect();
    ensure!(!pooled.is_empty(), "streams contain no frames");
    let k = first.codebook_size();
    let frame_rate = first.sample_rate as f64 / first.downsample as f64;
    let mut out = String::new();
    writeln!(out, "streams={}", streams.len())?;
    writeln!(out, "frames={}", pooled.len())?;
    writeln!(out, "codebook_size={k}")?;
    writeln!(out, "utilization={}", utilization(&pooled, k))?;
    writeln!(out, "entropy_bits={}", entropy_bits(&pooled))?;
    writeln!(out, "approx_bitrate_kbps={}", approx_bitrate(&pooled, frame_rate)?)?;
    writeln!(out, "theoretical_bitrate_kbps={}", theoretical_bitrate(first.sample_rate, first.downsample as usize, k))?;
    Ok(out)
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let streams = a.inputs.iter().map(|p| read_stream(p)).collect::<Result<Vec<_>>>()?;
    let mut report = analysis_report(&streams)?;
    if !a.refs.is_empty() {
        ensure!(a.refs.len() == streams.len(), "{} reference WAVs for {} streams", a.refs.len(), streams.len());
        let model = load_model(a.ckpt.as_deref().context("--ref needs --ckpt")?)?;
        let mut total = 0.0;
        for ((path, s), r) in a.inputs.iter().zip(&streams).zip(&a.refs) {
            let reference = read_wav(r)?;
            reference.require_rate(model.config.sample_rate, r)?;
            let y = decode_stream(&model, s, path)?;
            total += mcd(&reference.samples, &y).with_context(|| format!("MCD of {} against {}", path.display(), r.display()))?;
        }
        writeln!(report, "mcd_db={}", total / streams.len() as f64)?;
    }
    print!("{report}");
    if let Some(p) = &a.report {
        fs::write(p, &report).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn suites(m: Module) -> Vec<Suite> {
    match m {
        Module::All => Suite::ALL.to_vec(),
        Module::NdCore => vec![Suite::NdCore],
        Module::Quantizer => vec![Suite::Quantizer],
        Module::Dsp => vec![Suite::Dsp],
        Module::Model => vec![Suite::Model],
        Module::Adversary => vec![Suite::Adversary],
    }
}

/// Prints the worst relative error of every check over all seeds; returns
/// whether all of them are within tolerance.
pub fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    ensure!(a.seeds > 0, "--seeds must be positive");
    let mut failing = Vec::new();
    for suite in suites(a.module) {
        let mut worst: Vec<(&'static str, f64)> = Vec::new();
        for seed in 0..a.seeds {
            for (i, r) in run_suite(suite, seed, a.tol)?.into_iter().enumerate() {
                if seed == 0 {
                    worst.push((r.name, 0.0));
                }
                let err = r.report.max_rel_err;
                worst[i].1 = worst[i].1.max(if err.is_nan() { f64::INFINITY } else { err });
            }
        }
        for (name, err) in worst {
            let ok = err <= a.tol;
            println!("{suite}/{name} max_rel_err={err:.3e} {}", if ok { "pass" } else { "FAIL" });
            if !ok {
                failing.push(format!("{suite}/{name}"));
            }
        }
    }
    if failing.is_empty() {
        println!("all gradient checks passed (tol {:e}, {} seeds)", a.tol, a.seeds);
        Ok(true)
    } else {
        eprintln!("failing: {}", failing.join(", "));
        Ok(false)
    }
}
