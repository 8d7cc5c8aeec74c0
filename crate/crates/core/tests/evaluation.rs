mod support;

use mimic_core::data::{split_by_cineloop, synth_cineloop, PhantomSpec};
use mimic_core::evaluation::*;
use mimic_core::metrics::{ssim_components, SsimParams};
use mimic_core::models::*;
use mimic_core::{Error, Image};
use support::*;

fn identity() -> LinearConvModel<f64> {
    let mut m = LinearConvModel::<f64>::new(1, 1, &mut rng(0));
    for p in m.params_mut().iter_mut() {
        let v = if p.name.ends_with("bias") { 0.0 } else { 1.0 };
        p.value.iter_mut().for_each(|x| *x = v);
    }
    m
}

fn corpus() -> (Vec<mimic_core::data::Cineloop>, mimic_core::data::SplitManifest) {
    let loops: Vec<_> = (0..5)
        .map(|i| synth_cineloop(&PhantomSpec::random((40, 36), 3, 70 + i), &format!("L{i}")).unwrap())
        .collect();
    let ids: Vec<String> = loops.iter().map(|l| l.id.clone()).collect();
    let m = split_by_cineloop(&ids, 0.4, 2).unwrap();
    (loops, m)
}

fn self_paired(frames: &[EvalFrame<f64>]) -> Vec<EvalFrame<f64>> {
    frames.iter().map(|f| EvalFrame { truth: f.input.clone(), ..f.clone() }).collect()
}

fn record(id: &str, ssim: f64) -> FrameRecord {
    FrameRecord {
        frame_id: id.into(),
        loop_id: "x".into(),
        index: 0,
        mse: 0.01,
        mae: 0.05,
        psnr: 20.0,
        ssim,
        l: 1.0,
        cs: ssim,
    }
}

#[test]
fn identity_model_is_perfect() {
    let (loops, m) = corpus();
    let frames = self_paired(&oracle_test_frames::<f64>(&loops, &m).unwrap());
    assert_eq!(frames.len(), 3 * m.test.len());
    let model = identity();
    let before = model.params().fingerprint();
    let r = evaluate_testset(&model, &frames, &m).unwrap();
    assert_eq!(model.params().fingerprint(), before);
    assert_eq!(r.summary.count, frames.len());
    assert!((r.summary.ssim.mean - 1.0).abs() < 1e-12 && r.summary.ssim.std < 1e-12);
    assert_eq!(r.summary.mse.mean, 0.0);
    assert_eq!(r.summary.psnr, None);
    assert_eq!(r.summary.infinite_psnr_frames, frames.len());
    let headers: Vec<_> = r.table_row().iter().map(|(h, _)| h.clone()).collect();
    assert_eq!(headers, ["MSE 10^-3", "MAE 10^-2", "PSNR", "SSIM"]);
}

#[test]
fn evaluation_refuses_training_loops() {
    let (loops, m) = corpus();
    let mut frames = oracle_test_frames::<f64>(&loops, &m).unwrap();
    let train = loops.iter().find(|l| m.is_train(&l.id)).unwrap();
    frames.push(EvalFrame {
        loop_id: train.id.clone(),
        index: 0,
        input: train.frames[0].normalized().cast(),
        truth: train.frames[0].normalized().cast(),
    });
    assert!(matches!(evaluate_testset(&identity(), &frames, &m), Err(Error::Leakage(_))));
}

#[test]
fn frames_are_scored_at_original_extent() {
    let (loops, m) = corpus();
    let frames = oracle_test_frames::<f32>(&loops, &m).unwrap();
    let g = Generator::<f32>::new(GeneratorConfig::small(), 1).unwrap();
    let out = infer_frame(&g, &frames[0].input).unwrap();
    assert_eq!(out.shape(), [40, 36]);
    assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let r = evaluate_testset(&g, &frames, &m).unwrap();
    assert_eq!(r.records.len(), frames.len());
    let ids: Vec<_> = r.records.iter().map(|x| x.frame_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(ids, sorted);
}

#[test]
fn csv_reaggregation_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (loops, m) = corpus();
    let frames = oracle_test_frames::<f32>(&loops, &m).unwrap();
    let g = Generator::<f32>::new(GeneratorConfig::small(), 3).unwrap();
    let r = evaluate_testset(&g, &frames, &m).unwrap();
    let (csv, json) = (dir.path().join("r.csv"), dir.path().join("r.json"));
    r.write_csv(&csv).unwrap();
    r.write_json(&json).unwrap();

    // Plain parse of the file without the library's record type.
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let stats = |name: &str| {
        let v: Vec<f64> = rows.iter().map(|row| row[col(name)].parse().unwrap()).collect();
        let n = v.len() as f64;
        let mut sum = 0.0;
        for x in &v {
            sum += x;
        }
        let mean = sum / n;
        let mut ss = 0.0;
        for x in &v {
            ss += (x - mean) * (x - mean);
        }
        (mean, (ss / n).sqrt())
    };
    let s = MetricsReport::read_json(&json).unwrap();
    assert_eq!(s, r.summary);
    assert_eq!(rows.len(), s.count);
    for (name, agg) in [("mse", s.mse), ("mae", s.mae), ("ssim", s.ssim), ("l", s.l), ("cs", s.cs)] {
        assert_eq!(stats(name), (agg.mean, agg.std), "{name}");
    }
    assert_eq!(stats("psnr"), (s.psnr.unwrap().mean, s.psnr.unwrap().std));
    assert_eq!(MetricsReport::from_records(MetricsReport::read_csv(&csv).unwrap()).unwrap().summary, r.summary);
    let text = r.component_summary();
    assert_eq!(text, format!("cs {:.3} ± {:.3}, l {:.3} ± {:.3}", s.cs.mean, s.cs.std, s.l.mean, s.l.std));
}

#[test]
fn psnr_aggregate_skips_exact_frames() {
    let mut exact = record("b", 1.0);
    exact.psnr = f64::INFINITY;
    let r = MetricsReport::from_records(vec![record("a", 0.5), exact, record("c", 0.7)]).unwrap();
    assert_eq!(r.summary.infinite_psnr_frames, 1);
    assert_eq!(r.summary.psnr, Some(Aggregate { mean: 20.0, std: 0.0 }));
    assert!(MetricsReport::from_records(Vec::new()).is_err());
}

#[test]
fn component_histograms() {
    let same = MetricsReport::from_records(vec![record("a", 1.0), record("b", 1.0), record("c", 1.0)]).unwrap();
    let d = component_distribution(&same).unwrap();
    assert_eq!(d.cs.counts.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(d.cs.counts[0], 3);
    assert!(d.cs.edges.iter().all(|&e| e == 1.0));
    assert!(d.cs.density.is_empty());

    let values: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let h = ComponentHistogram::of(&values).unwrap();
    assert_eq!(h.counts.len(), HISTOGRAM_BINS);
    assert_eq!(h.edges.len(), HISTOGRAM_BINS + 1);
    assert_eq!(h.counts.iter().sum::<usize>(), 200);
    assert_eq!((h.min, h.max), (0.0, 1.0));
    assert!(h.bandwidth > 0.0 && h.density.len() == KDE_POINTS);
    let step = h.density[1].0 - h.density[0].0;
    let area: f64 = h.density.iter().map(|(_, d)| d * step).sum();
    assert!((area - 1.0).abs() < 0.02, "density integrates to {area}");
}

#[test]
fn worst_case_ordering() {
    let recs = vec![record("d", 0.9), record("b", 0.4), record("a", 0.6), record("c", 0.4)];
    let r = MetricsReport::from_records(recs).unwrap();
    let ids = |v: Vec<FrameRecord>| v.into_iter().map(|x| x.frame_id).collect::<Vec<_>>();
    assert_eq!(ids(worst_cases(&r, 2).unwrap()), ["b", "c"]);
    assert_eq!(ids(worst_cases(&r, 4).unwrap()), ["b", "c", "a", "d"]);
    assert!(worst_cases(&r, 5).is_err());
}

#[test]
fn worst_cases_keep_component_consistency() {
    let (loops, m) = corpus();
    let frames = oracle_test_frames::<f64>(&loops, &m).unwrap();
    let g = Generator::<f64>::new(GeneratorConfig::small(), 5).unwrap();
    let r = evaluate_testset(&g, &frames, &m).unwrap();
    let worst = worst_cases(&r, 3).unwrap();
    assert!(worst.windows(2).all(|w| w[0].ssim <= w[1].ssim));
    for w in worst {
        let f = frames.iter().find(|f| f.frame_id() == w.frame_id).unwrap();
        let out = infer_frame(&g, &f.input).unwrap();
        let (l, cs) = ssim_components(&out, &f.truth, &SsimParams::new(1.0)).unwrap();
        assert!((l - w.l).abs() < 1e-12 && (cs - w.cs).abs() < 1e-12);
    }
}

#[test]
fn difference_images() {
    let a = Image::<f64>::filled(3, 3, 0.2);
    assert!(difference_image(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
    let b = Image::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
    let z = Image::zeros(1, 3);
    assert_eq!(difference_image(&b, &z).unwrap().data(), &[0.0, 0.5, 1.0]);
    assert!(difference_image(&a, &Image::filled(3, 3, 0.7)).unwrap().data().iter().all(|&v| v == 0.0));
    let mut r = rng(3);
    for _ in 0..10 {
        let (x, y) = (random_image(9, 7, &mut r), random_image(9, 7, &mut r));
        let d = difference_image(&x, &y).unwrap();
        let lo = d.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }
    assert!(difference_image(&a, &Image::zeros(3, 2)).is_err());
}

#[test]
fn graymap_encoding() {
    let img = Image::new(2, 3, vec![0.0, 0.5, 1.0, -1.0, 2.0, 0.25]).unwrap();
    let bytes = pgm_bytes(&img);
    let header = b"P5\n3 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[0, 128, 255, 0, 255, 64]);
}

#[test]
fn benchmark_sanity() {
    let g = Generator::<f32>::new(GeneratorConfig::small(), 0).unwrap();
    assert!(benchmark_inference(&g, (32, 32), 9).is_err());
    let mut last: Option<BenchmarkReport> = None;
    for extent in [(32, 32), (64, 64), (128, 128)] {
        let b = benchmark_inference(&g, extent, 10).unwrap();
        assert!(b.fps.is_finite() && b.fps > 0.0);
        assert_eq!(b.summary, estimate_flops(&g, extent));
        if let Some(prev) = last {
            assert!(b.summary.flops > prev.summary.flops);
            assert!(b.fps <= prev.fps, "{} fps at {extent:?} vs {}", b.fps, prev.fps);
        }
        last = Some(b);
    }
}
