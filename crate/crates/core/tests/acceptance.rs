//! End-to-end acceptance checks. Everything runs inside a single test so the
//! timed criteria never compete with each other for cores.
//!
//! `cargo test --test acceptance -- --nocapture` shows one line per criterion.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dgaug::analysis::{histogram_of, range_overlap, ChannelHistogram, DEFAULT_BINS};
use dgaug::colorlab::{
    channel_stats, derive_seed, lab8_to_srgb, rica_augment, rica_step1, rica_step2, srgb_to_lab8, Channel,
    ChannelParams, Interval, LabImage, RgbImage, RicaMode, RicaParams, RicaRanges,
};
use dgaug::featuregan::{
    train_featuregan, Discriminator, DiscriminatorConfig, FeatureGanConfig, Generator, GeneratorConfig,
};
use dgaug::harness::{run_pipeline, Mode, PipelineConfig, PipelineReport};
use dgaug::losses::{kl_cycle_loss, lsgan_d_loss, lsgan_g_loss};
use dgaug::nn::Module;
use dgaug::segtoy::{gen_toy_dataset, gen_toy_dataset_sized, Domain, GenPosition, Segmenter, SegmenterConfig};
use dgaug::tensor::{conv2d, conv_transpose2d, gradcheck, ConvSpec, Tensor};

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: Instant, limit: Duration) -> std::result::Result<f64, String> {
    let s = t.elapsed().as_secs_f64();
    ensure(t.elapsed() < limit, format!("took {s:.1}s, limit {}s", limit.as_secs()))?;
    Ok(s)
}

fn lab_triplet(rgb: [u8; 3]) -> [f32; 3] {
    let lab = srgb_to_lab8(&RgbImage::from_raw(1, 1, rgb.to_vec()).unwrap());
    [lab.data()[0], lab.data()[1], lab.data()[2]]
}

fn colorimetry() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let side = 1000;
    let data: Vec<u8> = (0..side * side * 3).map(|_| rng.gen()).collect();
    let img = RgbImage::from_raw(side, side, data).unwrap();
    let back = lab8_to_srgb(&srgb_to_lab8(&img));
    let worst = img
        .data()
        .iter()
        .zip(back.data())
        .map(|(&a, &b)| (a as i32 - b as i32).abs())
        .max()
        .unwrap();
    ensure(worst <= 2, format!("round-trip error {worst}"))?;

    // red: independent double-precision sRGB -> XYZ -> Lab evaluation
    let anchors = [
        ([255, 255, 255], [255.0, 128.0, 128.0]),
        ([0, 0, 0], [0.0, 128.0, 128.0]),
        ([255, 0, 0], [135.764_03, 208.092_46, 195.203_20]),
    ];
    for (rgb, want) in anchors {
        let got = lab_triplet(rgb);
        let off = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f32::max);
        ensure(off < 0.05, format!("anchor {rgb:?} -> {got:?}, off by {off}"))?;
    }
    let s = within(t, Duration::from_secs(10))?;
    Ok(format!("max round-trip error {worst} over 1e6 px, anchors ok ({s:.1}s)"))
}

fn one_channel(values: &[f32]) -> LabImage {
    let data = values.iter().flat_map(|&v| [v, v, v]).collect();
    LabImage::from_raw(values.len(), 1, data).unwrap()
}

fn same_params(mean: f64, std: f64, span: f64, start: f64) -> RicaParams {
    RicaParams {
        channels: [ChannelParams {
            target_mean: mean,
            target_std: std,
            span,
            start,
        }; 3],
    }
}

fn rica_contracts() -> Outcome {
    let values = [12.0, 40.5, 99.0, 200.25, 31.0, 180.0];
    let img = one_channel(&values);
    let s = channel_stats(&values).unwrap();
    let out = rica_step1(&img, &same_params(s.mean, s.std, 100.0, 0.0));
    let drift = out.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    ensure(drift < 1e-4, format!("identity statistics drifted by {drift}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let raw: Vec<f32> = (0..40).map(|_| rng.gen_range(0.0..255.0)).collect();
        let span = rng.gen_range(30.0..255.0);
        let start = rng.gen_range(0.0..=255.0 - span);
        let out = rica_step2(&one_channel(&raw), &same_params(0.0, 0.0, span, start));
        let st = channel_stats(&out.channel(Channel::B)).unwrap();
        ensure(
            (st.min - start).abs() < 1e-4 && (st.max - start - span).abs() < 1e-4,
            format!("step 2 spans [{}, {}], wanted [{start}, {}]", st.min, st.max, start + span),
        )?;
    }

    let out = rica_step2(&one_channel(&[38.68, 100.16, 161.16]), &same_params(0.0, 0.0, 100.0, 50.0));
    let got = out.channel(Channel::L);
    for (g, w) in got.iter().zip([50.0, 100.19, 150.0]) {
        ensure((g - w).abs() < 1e-2, format!("worked example gave {got:?}"))?;
    }

    let d = RicaRanges::default();
    for c in Channel::ALL {
        ensure(d.channel(c).mean == Interval::new(0.0, 255.0), "mean range")?;
    }
    ensure(d.l.std == Interval::new(0.0, 100.0) && d.l.span == Interval::new(30.0, 255.0), "L ranges")?;
    for r in [d.a, d.b] {
        ensure(r.std == Interval::new(0.0, 15.0) && r.span == Interval::new(30.0, 220.0), "A/B ranges")?;
    }
    ensure(d.mode == RicaMode::Both, "default mode")?;
    Ok("identity, [T, T+S] span, worked example and default ranges ok".into())
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn autodiff() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let cases = gradcheck::registry();
    for case in &cases {
        let errs = case.run(7).map_err(|e| format!("{}: {e}", case.name))?;
        ensure(errs.len() >= 3, format!("{} tried only {} shapes", case.name, errs.len()))?;
        let m = errs.iter().cloned().fold(0.0, f64::max);
        ensure(m < gradcheck::DEFAULT_TOLERANCE, format!("{} relative error {m:e}", case.name))?;
        worst = worst.max(m);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (h, w, op) in [(7, 9, 0), (8, 6, 1)] {
        let x = Tensor::uniform(&[2, 3, h, w], -1.0, 1.0, &mut rng);
        let k = Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
        let y = conv2d(&x, &k, None, ConvSpec::new(2, 1)).unwrap();
        let u = Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng);
        let spec = ConvSpec {
            output_padding: op,
            ..ConvSpec::new(2, 1)
        };
        let back = conv_transpose2d(&u, &k, None, spec).unwrap();
        ensure(back.shape() == x.shape(), format!("adjoint shape {:?}", back.shape()))?;
        let (l, r) = (dot(&y, &u), dot(&x, &back));
        let rel = (l - r).abs() / l.abs().max(r.abs()).max(1e-12);
        ensure(rel < 1e-4, format!("adjoint mismatch {l} vs {r}"))?;
    }
    let s = within(t, Duration::from_secs(60))?;
    Ok(format!("{} ops, worst relative error {worst:.1e}, adjoint ok ({s:.1}s)", cases.len()))
}

fn losses() -> Outcome {
    let x = Tensor::new(&[2, 3, 2, 2], (0..24).map(|i| (i as f32 * 0.37).sin() * 2.0).collect()).unwrap();
    let c = x.to_param();
    let l = kl_cycle_loss(&c, &x).unwrap();
    ensure(l.value().abs() <= 1e-7, format!("KL(x, x) = {}", l.value()))?;
    l.backward().unwrap();
    let g = c.grad().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    ensure(g < 1e-6, format!("KL(x, x) gradient {g}"))?;

    let p = Tensor::new(&[1, 2, 1, 1], vec![0.5f32.ln(), 0.5f32.ln()]).unwrap();
    let q = Tensor::new(&[1, 2, 1, 1], vec![0.25f32.ln(), 0.75f32.ln()]).unwrap();
    let v = kl_cycle_loss(&q, &p).unwrap().value();
    ensure((v - 0.1438).abs() <= 1e-4, format!("worked KL {v}"))?;

    let full = |v: f32| Tensor::full(&[1, 1, 3, 3], v);
    let cases = [
        (lsgan_d_loss(&full(1.0), &full(0.0)).value(), 0.0),
        (lsgan_d_loss(&full(0.0), &full(1.0)).value(), 1.0),
        (lsgan_d_loss(&full(0.5), &full(0.5)).value(), 0.25),
        (lsgan_g_loss(&full(1.0)).value(), 0.0),
        (lsgan_g_loss(&full(0.0)).value(), 1.0),
        (lsgan_g_loss(&full(0.5)).value(), 0.25),
    ];
    for (got, want) in cases {
        ensure((got - want).abs() < 1e-7, format!("LSGAN {got} vs {want}"))?;
    }
    Ok(format!("KL(x,x)=0, worked KL {v:.4}, LSGAN closed forms ok"))
}

fn architecture() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Generator::new(GeneratorConfig::full(), &mut rng).unwrap().count_params();
    let d = Discriminator::new(DiscriminatorConfig::full(), &mut rng).unwrap().count_params();
    let rel = |n: usize, r: f64| (n as f64 - r).abs() / r;
    ensure(rel(g, 11.364e6) <= 0.01, format!("generator {g}"))?;
    ensure(rel(d, 2.828e6) <= 0.01, format!("discriminator {d}"))?;
    Ok(format!(
        "generator {g} ({:+.2}%), discriminator {d} ({:+.2}%)",
        (g as f64 / 11.364e6 - 1.0) * 100.0,
        (d as f64 / 2.828e6 - 1.0) * 100.0
    ))
}

fn gan_run(extractor: &Segmenter, images: &[RgbImage], cfg: &FeatureGanConfig) -> (Vec<u8>, Vec<f32>) {
    let extract = |x: &Tensor| extractor.extract(x, GenPosition::AfterConv1);
    let (bundle, log) = train_featuregan(&extract, images, &RicaRanges::default(), cfg, 17).unwrap();
    let bytes = bundle.to_checkpoint(0).unwrap().to_bytes().unwrap();
    (bytes, log.iter().map(|r| r.loss_cyc).collect())
}

fn featuregan_sanity() -> Outcome {
    let t = Instant::now();
    let data = gen_toy_dataset_sized(40, 9, Domain::Source, 5, 32).unwrap();
    let seg_cfg = SegmenterConfig::default();
    let extractor = Segmenter::new(seg_cfg.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap().frozen();
    let before = extractor.to_checkpoint(0, 0, 0).unwrap().to_bytes().unwrap();
    let channels = seg_cfg.channels_at(GenPosition::AfterConv1).unwrap();
    let cfg = FeatureGanConfig {
        epochs: 20,
        max_steps: Some(200),
        ..FeatureGanConfig::tiny(channels)
    };

    let (first, cyc) = gan_run(&extractor, &data.images, &cfg);
    ensure(cyc.len() == 200, format!("ran {} steps", cyc.len()))?;
    let head = cyc[..10].iter().sum::<f32>() / 10.0;
    let tail = cyc[cyc.len() - 10..].iter().sum::<f32>() / 10.0;
    let drop = 1.0 - tail / head;
    let after = extractor.to_checkpoint(0, 0, 0).unwrap().to_bytes().unwrap();
    let (second, _) = gan_run(&extractor, &data.images, &cfg);
    let s = t.elapsed().as_secs_f64();
    let checks = [
        (drop >= 0.5, format!("cycle loss {head:.4} -> {tail:.4} (-{:.0}%, need 50%)", drop * 100.0)),
        (before == after, format!("F untouched: {}", before == after)),
        (first == second, format!("checkpoints identical: {}", first == second)),
        (s < 600.0, format!("{s:.0}s")),
    ];
    let detail = checks.iter().map(|(_, d)| d.as_str()).collect::<Vec<_>>().join(", ");
    ensure(checks.iter().all(|(ok, _)| *ok), detail.clone())?;
    Ok(detail)
}

fn only_row(r: &PipelineReport) -> (f64, f64) {
    (r.rows[0].source_miou, r.rows[0].target_miou)
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

fn dg_ordering(root: &Path) -> Outcome {
    let t = Instant::now();
    let arm = |mode: Mode| PipelineConfig {
        mode,
        ..PipelineConfig::default()
    };
    let (b_src, b_tgt) = only_row(&run_pipeline(&arm(Mode::Baseline), &root.join("baseline")).unwrap());
    let (r_src, r_tgt) = only_row(&run_pipeline(&arm(Mode::RicaOnly), &root.join("rica")).unwrap());
    // full mode starts from the same RICA-trained step 1 model
    copy_dir(&root.join("rica/step1"), &root.join("full/step1"));
    let (f_src, f_tgt) = only_row(&run_pipeline(&arm(Mode::Full), &root.join("full")).unwrap());
    let summary = format!(
        "target {b_tgt:.3} / {r_tgt:.3} / {f_tgt:.3}, source {b_src:.3} / {r_src:.3} / {f_src:.3} (baseline / rica / full)"
    );
    ensure(r_tgt >= b_tgt + 0.05, format!("rica-only not ahead of baseline: {summary}"))?;
    ensure(f_tgt >= r_tgt, format!("full behind rica-only: {summary}"))?;
    ensure(
        [b_src, r_src, f_src].iter().all(|&m| m >= 0.85),
        format!("source below 0.85: {summary}"),
    )?;
    let s = within(t, Duration::from_secs(1800))?;
    Ok(format!("{summary} ({s:.0}s)"))
}

fn images_of(ds: &dgaug::segtoy::ToyDataset) -> &[RgbImage] {
    &ds.images
}

fn distribution() -> Outcome {
    let src = gen_toy_dataset(100, 2, Domain::Source, 5).unwrap();
    let tgt = gen_toy_dataset(100, 3, Domain::Target, 5).unwrap();
    let ranges = RicaRanges::default();
    let aug: Vec<RgbImage> = src
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(77, i as u64));
            rica_augment(img, &mut rng, &ranges).unwrap().0
        })
        .collect();
    let mut parts = Vec::new();
    for c in Channel::ALL {
        let h_t = histogram_of(images_of(&tgt), c, DEFAULT_BINS).unwrap();
        let raw = range_overlap(&histogram_of(images_of(&src), c, DEFAULT_BINS).unwrap(), &h_t).unwrap();
        let rica = range_overlap(&histogram_of(&aug, c, DEFAULT_BINS).unwrap(), &h_t).unwrap();
        ensure(raw < rica, format!("{}: raw {raw:.3} >= rica {rica:.3}", c.name()))?;
        parts.push(format!("{} {raw:.3}->{rica:.3}", c.name()));
    }

    let gray = RgbImage::filled(8, 8, [90, 90, 90]);
    let h = histogram_of(&[gray.clone(), gray], Channel::L, DEFAULT_BINS).unwrap();
    let same = range_overlap(&h, &h).unwrap();
    ensure(same == 1.0, format!("constant image overlap {same}"))?;
    let mut lo = ChannelHistogram::empty(Channel::A, DEFAULT_BINS);
    let mut hi = ChannelHistogram::empty(Channel::A, DEFAULT_BINS);
    (0..50).for_each(|i| lo.add_value(i as f64));
    (0..50).for_each(|i| hi.add_value(200.0 + i as f64));
    let none = range_overlap(&lo, &hi).unwrap();
    ensure(none == 0.0, format!("disjoint overlap {none}"))?;
    Ok(format!("overlap raw->rica {}; constant 1, disjoint 0", parts.join(", ")))
}

/// A few-minute pipeline: small images, few epochs, short GAN runs.
fn small_config(mode: Mode, positions: Vec<GenPosition>) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        mode,
        positions,
        ..PipelineConfig::default()
    };
    cfg.data.image_size = 32;
    cfg.data.train.n = 24;
    cfg.data.source_test.n = 8;
    cfg.data.target_test.n = 8;
    for step in [&mut cfg.step1, &mut cfg.step3] {
        step.train.epochs = 1;
        step.train.batch_size = 4;
    }
    cfg.step2.max_steps = Some(3);
    cfg
}

fn position_ablation(root: &Path) -> Outcome {
    let cfg = small_config(Mode::Full, GenPosition::PLUGGABLE.to_vec());
    let report = run_pipeline(&cfg, &root.join("positions")).map_err(|e| e.to_string())?;
    ensure(report.rows.len() == 3, format!("{} rows", report.rows.len()))?;
    for pos in GenPosition::PLUGGABLE {
        ensure(report.row(pos).is_some(), format!("no row for {}", pos.name()))?;
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let lines = String::from_utf8(csv).unwrap().lines().count();
    ensure(lines == 4, format!("report has {lines} lines"))?;
    Ok("after_conv1, after_stage1, after_stage2 each produced a report row".into())
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|s| s.to_str()), Some("ckpt" | "csv")) {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(root: &Path) -> Outcome {
    let cfg = small_config(Mode::Full, vec![GenPosition::AfterConv1]);
    let cfg_path = root.join("repro.json");
    fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let mut trees = Vec::new();
    for name in ["repro_a", "repro_b"] {
        let out = root.join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_dgaug"))
            .args(["run-pipeline", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), format!("run-pipeline exited with {status}"))?;
        trees.push(tree_bytes(&out));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.iter().any(|(n, _)| n.ends_with(".ckpt")), "no checkpoints written")?;
    ensure(a.iter().any(|(n, _)| n.starts_with("reports")), "no evaluation CSVs written")?;
    ensure(
        a.iter().map(|(n, _)| n).eq(b.iter().map(|(n, _)| n)),
        "runs wrote different files",
    )?;
    for ((name, x), (_, y)) in a.iter().zip(b) {
        ensure(x == y, format!("{name} differs between runs"))?;
    }
    Ok(format!("{} checkpoint and CSV files bit-identical across two runs", a.len()))
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("colorimetry", Box::new(colorimetry)),
        ("rica contracts", Box::new(rica_contracts)),
        ("autodiff", Box::new(autodiff)),
        ("losses", Box::new(losses)),
        ("architecture constants", Box::new(architecture)),
        ("featuregan training", Box::new(featuregan_sanity)),
        ("domain generalization ordering", Box::new(|| dg_ordering(root))),
        ("distribution analysis", Box::new(distribution)),
        ("position ablation", Box::new(|| position_ablation(root))),
        ("reproducibility", Box::new(|| reproducibility(root))),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("[{n:2}] PASS {name}: {detail}"),
            Err(why) => {
                println!("[{n:2}] FAIL {name}: {why}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
