//! Held-out evaluation: per-frame metric reports with mean ± std summaries,
//! SSIM component distributions, worst-case mining, difference images,
//! graymap export, and inference benchmarking.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{oracle_postprocess, pad_to_multiple, write_atomic, Cineloop, Corpus, SplitManifest};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{mae, mse, psnr_from_mse, ssim, SsimParams};
use crate::models::{estimate_flops, ModelSummary, Network};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Intensity ceiling used for PSNR on normalized images.
pub const PSNR_MAX_INTENSITY: f64 = 1.0;
pub const HISTOGRAM_BINS: usize = 50;
pub const KDE_POINTS: usize = 101;
pub const WARMUP_PASSES: usize = 3;
pub const MIN_REPETITIONS: usize = 10;

/// One held-out frame with its ground truth, both normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalFrame<T> {
    pub loop_id: String,
    pub index: usize,
    pub input: Image<T>,
    pub truth: Image<T>,
}

impl<T> EvalFrame<T> {
    pub fn frame_id(&self) -> String {
        frame_id(&self.loop_id, self.index)
    }
}

pub fn frame_id(loop_id: &str, index: usize) -> String {
    format!("{loop_id}#{index:04}")
}

/// Test-set frames of `loops` with the reference post-processor as ground truth,
/// ordered by loop id then frame index.
pub fn oracle_test_frames<T: Scalar>(loops: &[Cineloop], manifest: &SplitManifest) -> Result<Vec<EvalFrame<T>>> {
    let mut test: Vec<&Cineloop> = loops.iter().filter(|l| manifest.is_test(&l.id)).collect();
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::new();
    for l in test {
        for (index, f) in l.frames.iter().enumerate() {
            out.push(EvalFrame {
                loop_id: l.id.clone(),
                index,
                input: f.normalized().cast(),
                truth: oracle_postprocess(f)?.image.cast(),
            });
        }
    }
    Ok(out)
}

/// Test-set frames of a stored corpus with its own ground truth, ordered
/// by loop id then frame index.
pub fn corpus_test_frames<T: Scalar>(corpus: &Corpus, manifest: &SplitManifest) -> Result<Vec<EvalFrame<T>>> {
    let mut ids: Vec<&String> = corpus.raw.iter().map(|l| &l.id).filter(|id| manifest.is_test(id)).collect();
    ids.sort();
    let mut out = Vec::new();
    for id in ids {
        let (inputs, truths) = corpus.loop_pairs::<T>(id)?;
        for (index, (input, truth)) in inputs.into_iter().zip(truths).enumerate() {
            out.push(EvalFrame {
                loop_id: id.clone(),
                index,
                input,
                truth,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub loop_id: String,
    pub index: usize,
    pub mse: f64,
    pub mae: f64,
    /// Infinite for a perfect reconstruction.
    pub psnr: f64,
    pub ssim: f64,
    pub l: f64,
    pub cs: f64,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// Sequential sum in record order; `None` for an empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Aggregate { mean, std: var.sqrt() })
    }

    fn scaled(self, factor: f64) -> String {
        format!("{:.3} ± {:.3}", self.mean * factor, self.std * factor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub count: usize,
    pub mse: Aggregate,
    pub mae: Aggregate,
    /// Over frames with finite PSNR; `None` when every frame is exact.
    pub psnr: Option<Aggregate>,
    pub infinite_psnr_frames: usize,
    pub ssim: Aggregate,
    pub l: Aggregate,
    pub cs: Aggregate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<FrameRecord>,
    pub summary: ReportSummary,
}

fn column(records: &[FrameRecord], f: impl Fn(&FrameRecord) -> f64) -> Vec<f64> {
    records.iter().map(f).collect()
}

impl MetricsReport {
    pub fn from_records(records: Vec<FrameRecord>) -> Result<Self> {
        let agg = |f: fn(&FrameRecord) -> f64| {
            Aggregate::of(&column(&records, f)).ok_or_else(|| Error::InvalidArgument("report has no frames".into()))
        };
        let finite: Vec<f64> = records.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let summary = ReportSummary {
            count: records.len(),
            mse: agg(|r| r.mse)?,
            mae: agg(|r| r.mae)?,
            psnr: Aggregate::of(&finite),
            infinite_psnr_frames: records.len() - finite.len(),
            ssim: agg(|r| r.ssim)?,
            l: agg(|r| r.l)?,
            cs: agg(|r| r.cs)?,
        };
        Ok(MetricsReport { records, summary })
    }

    /// Column headers and one row in the table layout: MSE ×10³, MAE ×10², PSNR, SSIM.
    pub fn table_row(&self) -> [(String, String); 4] {
        let s = &self.summary;
        let psnr = match s.psnr {
            Some(p) => p.scaled(1.0),
            None => "inf".to_string(),
        };
        [
            ("MSE 10^-3".into(), s.mse.scaled(1e3)),
            ("MAE 10^-2".into(), s.mae.scaled(1e2)),
            ("PSNR".into(), psnr),
            ("SSIM".into(), s.ssim.scaled(1.0)),
        ]
    }

    /// Luminance and contrast-structure summaries in `cs ± std, l ± std` form.
    pub fn component_summary(&self) -> String {
        let s = &self.summary;
        format!("cs {:.3} ± {:.3}, l {:.3} ± {:.3}", s.cs.mean, s.cs.std, s.l.mean, s.l.std)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.summary)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn read_csv(path: &Path) -> Result<Vec<FrameRecord>> {
        let bytes = fs::read(path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    pub fn read_json(path: &Path) -> Result<ReportSummary> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Pads to the model's divisor, runs inference, crops back and clamps to `[0, 1]`.
pub fn infer_frame<T: Scalar, N: Network<T>>(model: &N, input: &Image<T>) -> Result<Image<T>> {
    let (padded, back) = pad_to_multiple(input, model.divisor());
    let out = model.forward(&Tensor::from_image(&padded))?;
    let cropped = back.restore(&out.image(0, 0))?;
    Ok(cropped.map(|v| v.max(T::zero()).min(T::one())))
}

pub fn frame_record<T: Scalar>(loop_id: &str, index: usize, output: &Image<T>, truth: &Image<T>) -> Result<FrameRecord> {
    let (o, t) = (output.cast::<f64>(), truth.cast::<f64>());
    let e = mse(&o, &t)?;
    let s = ssim(&o, &t, &SsimParams::new(PSNR_MAX_INTENSITY))?;
    Ok(FrameRecord {
        frame_id: frame_id(loop_id, index),
        loop_id: loop_id.to_string(),
        index,
        mse: e,
        mae: mae(&o, &t)?,
        psnr: psnr_from_mse(e, PSNR_MAX_INTENSITY)?.db(),
        ssim: s.mean_ssim,
        l: s.mean_l,
        cs: s.mean_cs,
    })
}

/// Scores every frame once at its original extent. Refuses frames whose loop
/// is not held out by `manifest`.
pub fn evaluate_testset<T: Scalar, N: Network<T>>(
    model: &N,
    frames: &[EvalFrame<T>],
    manifest: &SplitManifest,
) -> Result<MetricsReport> {
    manifest.validate()?;
    if let Some(f) = frames.iter().find(|f| !manifest.is_test(&f.loop_id) || manifest.is_train(&f.loop_id)) {
        return Err(Error::Leakage(format!("frame {} belongs to a loop outside the test split", f.frame_id())));
    }
    let mut records = Vec::with_capacity(frames.len());
    for f in frames {
        let out = infer_frame(model, &f.input)?;
        records.push(frame_record(&f.loop_id, f.index, &out, &f.truth)?);
    }
    MetricsReport::from_records(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentHistogram {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    /// `HISTOGRAM_BINS + 1` uniform edges over `[min, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Scott bandwidth; zero when all values coincide.
    pub bandwidth: f64,
    /// `(x, density)` on a uniform grid; empty when the bandwidth is zero.
    pub density: Vec<(f64, f64)>,
}

impl ComponentHistogram {
    pub fn of(values: &[f64]) -> Result<Self> {
        let agg = Aggregate::of(values).ok_or_else(|| Error::InvalidArgument("no values to bin".into()))?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (max - min) / HISTOGRAM_BINS as f64;
        let edges = (0..=HISTOGRAM_BINS).map(|i| min + width * i as f64).collect();
        let mut counts = vec![0; HISTOGRAM_BINS];
        for &v in values {
            let bin = if width > 0.0 { ((v - min) / width) as usize } else { 0 };
            counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
        }
        let n = values.len() as f64;
        let bandwidth = agg.std * n.powf(-0.2);
        let density = if bandwidth > 0.0 {
            let (lo, hi) = (min - 3.0 * bandwidth, max + 3.0 * bandwidth);
            let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
            (0..KDE_POINTS)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / (KDE_POINTS - 1) as f64;
                    let d: f64 = values.iter().map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp()).sum();
                    (x, d * norm)
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(ComponentHistogram {
            min,
            max,
            mean: agg.mean,
            std: agg.std,
            edges,
            counts,
            bandwidth,
            density,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDistribution {
    pub l: ComponentHistogram,
    pub cs: ComponentHistogram,
}

pub fn component_distribution(report: &MetricsReport) -> Result<ComponentDistribution> {
    Ok(ComponentDistribution {
        l: ComponentHistogram::of(&column(&report.records, |r| r.l))?,
        cs: ComponentHistogram::of(&column(&report.records, |r| r.cs))?,
    })
}

/// The `k` lowest-SSIM frames, ties broken by frame id.
pub fn worst_cases(report: &MetricsReport, k: usize) -> Result<Vec<FrameRecord>> {
    if k > report.records.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {k} worst cases from {} frames",
            report.records.len()
        )));
    }
    let mut sorted = report.records.clone();
    sorted.sort_by(|a, b| a.ssim.total_cmp(&b.ssim).then_with(|| a.frame_id.cmp(&b.frame_id)));
    sorted.truncate(k);
    Ok(sorted)
}

/// `|a - b|` rescaled so its minimum maps to 0 and its maximum to 1.
pub fn difference_image<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<Image<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(&a.shape(), &b.shape()));
    }
    let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).collect();
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scaled = d.into_iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect();
    Image::new(a.height(), a.width(), scaled)
}

/// Binary 8-bit graymap of an image in `[0, 1]`; values outside are clamped.
pub fn pgm_bytes<T: Scalar>(image: &Image<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm<T: Scalar>(path: &Path, image: &Image<T>) -> Result<()> {
    write_atomic(path, &pgm_bytes(image))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub extent: [usize; 2],
    pub repetitions: usize,
    pub median_seconds: f64,
    pub fps: f64,
    pub summary: ModelSummary,
}

/// Median single-frame inference time after warm-up passes.
pub fn benchmark_inference<T: Scalar, N: Network<T>>(
    model: &N,
    extent: (usize, usize),
    repetitions: usize,
) -> Result<BenchmarkReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    let (h, w) = extent;
    let input = Image::from_fn(h, w, |r, c| T::of(((r * 31 + c * 17) % 97) as f64 / 96.0));
    for _ in 0..WARMUP_PASSES {
        infer_frame(model, &input)?;
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        infer_frame(model, &input)?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    let median = median.max(f64::MIN_POSITIVE);
    let (ph, pw) = (h.div_ceil(model.divisor()) * model.divisor(), w.div_ceil(model.divisor()) * model.divisor());
    Ok(BenchmarkReport {
        extent: [h, w],
        repetitions,
        median_seconds: median,
        fps: 1.0 / median,
        summary: estimate_flops(model, (ph, pw)),
    })
}
