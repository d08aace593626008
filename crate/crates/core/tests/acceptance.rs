//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 3 4`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use sll_core::attack::{median_bandwidth, mmd2, KernelSet};
use sll_core::data::{gen_synthetic, load_cifar10, SyntheticSpec, CIFAR_RECORD_LEN};
use sll_core::defense::{distance_correlation, DefenseConfig};
use sll_core::detection::GsConfig;
use sll_core::experiment::{build_datasets, run_experiment, ExitStatus, ExperimentConfig, ExperimentOutcome, RunOptions};
use sll_core::metrics::{encode_grid_ppm, psnr, read_ppm, ssim, to_byte};
use sll_core::models;
use sll_core::nn::{grad_report, LayerSpec, LossKind, Network, Precision, Tensor};
use sll_core::protocol::{monolithic_reference, run_session, run_training, SessionConfig, SplitModel, Topology, TransportKind};
use sll_core::rng::Rng;

const GRAD_TOL: f64 = 1e-4;
const MAX_DRAWS: usize = 5;
const FORA_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DEFENSE_SEEDS: [u64; 3] = [1, 2, 3];
const GS_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn preset(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(presets_dir().join(format!("{name}.toml"))).expect("shipped preset parses")
}

fn run_in(cfg: &ExperimentConfig, dir: &Path) -> ExperimentOutcome {
    let opts = RunOptions { output_dir: Some(dir.to_path_buf()), threads: 1 };
    let out = run_experiment(cfg, &opts).expect("experiment runs");
    assert_ne!(out.status, ExitStatus::Error, "run failed: {:?}", out.report.error);
    out
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

// 1 -------------------------------------------------------------------------

fn gradient_cases() -> Vec<(&'static str, Vec<LayerSpec>, Vec<usize>)> {
    let smashed = vec![16, 8, 8];
    let image = vec![3, 16, 16];
    vec![
        ("conv2d", vec![LayerSpec::conv(2, 3, 3, 1, 1)], vec![2, 5, 5]),
        ("conv2d/stride2", vec![LayerSpec::conv(2, 3, 3, 2, 1)], vec![2, 6, 6]),
        ("conv_transpose2d", vec![LayerSpec::conv_t(2, 3, 2, 2, 0)], vec![2, 3, 3]),
        ("conv_transpose2d/pad", vec![LayerSpec::conv_t(2, 2, 3, 1, 1)], vec![2, 4, 4]),
        ("linear", vec![LayerSpec::Linear { in_features: 18, out_features: 4 }], vec![2, 3, 3]),
        ("relu", vec![LayerSpec::conv(2, 2, 3, 1, 1), LayerSpec::Relu], vec![2, 4, 4]),
        ("tanh", vec![LayerSpec::conv(2, 2, 3, 1, 1), LayerSpec::Tanh], vec![2, 4, 4]),
        ("maxpool2d", vec![LayerSpec::conv(2, 2, 3, 1, 1), LayerSpec::MaxPool2d { window: 2, stride: 2 }], vec![2, 4, 4]),
        ("batchnorm2d", vec![LayerSpec::BatchNorm2d { channels: 3 }], vec![3, 4, 4]),
        ("resblock", vec![LayerSpec::ResBlock { channels: 2 }], vec![2, 4, 4]),
        ("denseblock", vec![LayerSpec::DenseBlock { in_ch: 2, growth: 3 }], vec![2, 4, 4]),
        ("discriminator", models::discriminator_specs(&smashed).unwrap(), smashed.clone()),
        ("inverse", models::inverse_specs(&smashed, &image, 8).unwrap(), smashed.clone()),
    ]
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut worst: (f64, &str, u64) = (0.0, "", 0);
    let mut redraws = 0;
    for (name, specs, input) in gradient_cases() {
        for seed in 0..20u64 {
            let mut rng = Rng::new(seed, 900);
            let mut net = Network::<f64>::new(specs.clone(), &input, &mut rng).unwrap();
            let mut shape = vec![2];
            shape.extend(&input);
            let mut out_shape = vec![2];
            out_shape.extend(net.output_shape());
            let mut report;
            let mut draws = 0;
            loop {
                let x = randn(&shape, &mut rng);
                let kind = LossKind::Projection(randn(&out_shape, &mut rng));
                report = grad_report(&mut net, &x, &kind, GRAD_TOL).unwrap();
                draws += 1;
                if report.kinks == 0 || draws == MAX_DRAWS {
                    break;
                }
            }
            redraws += draws - 1;
            if report.max_rel_err > worst.0 {
                worst = (report.max_rel_err, name, seed);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst.0 < GRAD_TOL && secs < 60.0,
        format!(
            "13 architectures x 20 seeds, worst rel err {:.2e} ({} seed {}), {redraws} input redraws off kinks, {secs:.1}s",
            worst.0, worst.1, worst.2
        ),
    )
}

// 2 -------------------------------------------------------------------------

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let data = Arc::new(gen_synthetic(&SyntheticSpec::default(), 128, &mut Rng::new(7, 20)).unwrap());
    let mut worst: f64 = 0.0;
    for topology in [Topology::LabelShare, Topology::LabelProtected] {
        for transport in [TransportKind::InProcess, TransportKind::Framed] {
            let cfg = SessionConfig { topology, transport, max_iterations: Some(100), seed: 11, ..SessionConfig::new(2, 8, 100) };
            let model = SplitModel::<f64>::reference(&cfg, data.image_shape(), data.num_classes()).unwrap();
            let mono = monolithic_reference(&cfg, &model, &data).unwrap();
            let out = run_session(&cfg, model, data.clone(), &mut [], None).unwrap();
            assert_eq!(out.iterations(), 100);
            let d = mono.flat_params().iter().zip(out.flat_params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst < 1e-10 && secs < 120.0, format!("2 topologies x 2 transports, 100 iterations, max |dparam| {worst:.2e}, {secs:.1}s"))
}

// 3 -------------------------------------------------------------------------

fn ladder(a: &Tensor<f64>, b: &Tensor<f64>) -> KernelSet {
    KernelSet::median_ladder(median_bandwidth(a, b).unwrap(), 5).unwrap()
}

fn criterion_3() -> Verdict {
    let mut rng = Rng::new(3, 901);
    let a = randn(&[64, 8], &mut rng);
    let self_zero = mmd2(&a, &a, &ladder(&a, &a)).unwrap() == 0.0;

    let mut separated = 0;
    let mut min_ratio = f64::INFINITY;
    for seed in 0..20u64 {
        let mut r = Rng::new(seed, 902);
        let p = randn(&[256, 8], &mut r);
        let q = randn(&[256, 8], &mut r);
        let shifted = randn(&[256, 8], &mut r).map(|v| v + 3.0);
        let same = mmd2(&p, &q, &ladder(&p, &q)).unwrap();
        let apart = mmd2(&p, &shifted, &ladder(&p, &shifted)).unwrap();
        let ratio = apart / same;
        min_ratio = min_ratio.min(ratio);
        if apart >= 10.0 * same {
            separated += 1;
        }
    }

    let (pa, pb, sigma) = ([0.3, -1.2, 2.0], [1.1, 0.4, -0.5], 1.7);
    let a2 = Tensor::<f64>::from_f64(&[2, 3], &[pa, pa].concat()).unwrap();
    let b2 = Tensor::<f64>::from_f64(&[2, 3], &[pb, pb].concat()).unwrap();
    let d2: f64 = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum();
    let closed = 2.0 - 2.0 * (-d2 / (2.0 * sigma * sigma)).exp();
    let two_point_err = (mmd2(&a2, &b2, &KernelSet::single(sigma).unwrap()).unwrap() - closed).abs();

    verdict(
        self_zero && separated == 20 && two_point_err <= 1e-12,
        format!("mmd2(A,A)==0: {self_zero}; shift separated {separated}/20 (min ratio {min_ratio:.1}); two-point err {two_point_err:.1e}"),
    )
}

// 4 -------------------------------------------------------------------------

fn criterion_4() -> Verdict {
    let mut rng = Rng::new(4, 903);
    let x = randn(&[64, 6], &mut rng);
    let self_err = (distance_correlation(&x, &x).unwrap() - 1.0).abs();
    let constant = distance_correlation(&x, &Tensor::<f64>::full(&[64, 3], 0.7)).unwrap();
    let mut below = 0;
    let mut max_indep: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = Rng::new(seed, 904);
        let a = randn(&[256, 8], &mut r);
        let b = randn(&[256, 8], &mut r);
        let d = distance_correlation(&a, &b).unwrap();
        max_indep = max_indep.max(d);
        if d < 0.15 {
            below += 1;
        }
    }
    verdict(
        self_err <= 1e-10 && constant == 0.0 && below >= 19,
        format!("|dCor(X,X)-1| {self_err:.1e}; dCor(X,const) {constant}; independent < 0.15 in {below}/20 (max {max_indep:.3})"),
    )
}

// 5 -------------------------------------------------------------------------

fn criterion_5(scratch: &Path) -> Verdict {
    let start = Instant::now();
    let base = preset("fora-vs-ablation");
    let mut ordered = 0;
    let mut cosine_ok = 0;
    let mut rows = Vec::new();
    for seed in FORA_SEEDS {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        let out = run_in(&cfg, &scratch.join(format!("fora-{seed}")));
        let r = &out.report;
        let mse = r.reconstruction.expect("reconstruction").mean_mse;
        let cos = r.feature_similarity.expect("features").cosine;
        let e = |k: &str| r.extra[k];
        let (no_mk, no_disc, untrained_cos) = (e("no_mkmmd.mean_mse"), e("no_disc.mean_mse"), e("untrained.feature_cosine"));
        if mse < no_mk && mse < no_disc {
            ordered += 1;
        }
        if cos >= untrained_cos + 0.15 {
            cosine_ok += 1;
        }
        rows.push(format!(
            "seed {seed}: mse {mse:.5} vs no_mkmmd {no_mk:.5} no_disc {no_disc:.5}; cos {cos:.3} vs untrained {untrained_cos:.3}"
        ));
    }
    for r in &rows {
        println!("    {r}");
    }
    verdict(
        ordered >= 4 && cosine_ok == FORA_SEEDS.len(),
        format!(
            "mse below both ablations in {ordered}/5 seeds, cosine >= untrained + 0.15 in {cosine_ok}/5, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn mean_ssim(base: &ExperimentConfig, defense: DefenseConfig, scratch: &Path, tag: &str) -> f64 {
    let mut total = 0.0;
    for seed in DEFENSE_SEEDS {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        cfg.defense = defense;
        let out = run_in(&cfg, &scratch.join(format!("{tag}-{seed}")));
        total += out.report.reconstruction.expect("reconstruction").mean_ssim;
    }
    total / DEFENSE_SEEDS.len() as f64
}

fn criterion_6(scratch: &Path) -> Verdict {
    let start = Instant::now();
    let base = preset("fora-toy");
    let none = mean_ssim(&base, DefenseConfig::Noise { sigma: 0.0 }, scratch, "noise0");
    let noise = mean_ssim(&base, DefenseConfig::Noise { sigma: 5.0 }, scratch, "noise5");
    let dcor0 = mean_ssim(&base, DefenseConfig::Dcor { alpha: 0.0 }, scratch, "dcor0");
    let dcor = mean_ssim(&base, DefenseConfig::Dcor { alpha: 0.8 }, scratch, "dcor8");
    let plain = mean_ssim(&base, DefenseConfig::None, scratch, "none");
    let dp = mean_ssim(&base, DefenseConfig::Dp { clip: 1.0, scale: 0.5 }, scratch, "dp");
    let noise_drop = (none - noise) / none.abs();
    verdict(
        noise_drop >= 0.20 && dcor < dcor0 && dp < plain,
        format!(
            "mean ssim over 3 seeds: noise 0 -> 5: {none:.3} -> {noise:.3} ({:.0}% drop); dcor 0 -> 0.8: {dcor0:.3} -> {dcor:.3}; none -> dp: {plain:.3} -> {dp:.3}; {:.0}s",
            100.0 * noise_drop,
            start.elapsed().as_secs_f64()
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn criterion_7(scratch: &Path) -> Verdict {
    let start = Instant::now();
    let mut honest_ok = 0;
    let mut stub_abort = 0;
    for seed in GS_SEEDS {
        let mut honest = preset("gs-honest");
        honest.run.seed = seed;
        if run_in(&honest, &scratch.join(format!("gs-honest-{seed}"))).status == ExitStatus::Completed {
            honest_ok += 1;
        }
        let mut stub = preset("gs-hijack-stub");
        stub.run.seed = seed;
        if run_in(&stub, &scratch.join(format!("gs-stub-{seed}"))).status == ExitStatus::DetectorAborted {
            stub_abort += 1;
        }
    }

    let mut cfg = preset("gs-honest");
    cfg.run.precision = Precision::Fp64;
    let data = build_datasets(&cfg).unwrap();
    let with = cfg.session();
    assert!(with.monitor.is_some());
    let monitored = with.monitor.map(|m: GsConfig| m.warmup + m.window).unwrap();
    let without = SessionConfig { monitor: None, ..with.clone() };
    let a = run_training::<f64>(&with, data.private.clone(), &mut [], None).unwrap();
    let b = run_training::<f64>(&without, data.private.clone(), &mut [], None).unwrap();
    let identical = a.iterations() == b.iterations() && a.iterations() > monitored && a.flat_params() == b.flat_params();

    verdict(
        honest_ok == 5 && stub_abort == 5 && identical,
        format!(
            "honest completed {honest_ok}/5, stub aborted {stub_abort}/5, fp64 monitored vs unmonitored bitwise identical over {} iterations: {identical}; {:.0}s",
            a.iterations(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn criterion_8(scratch: &Path) -> Verdict {
    let flat = |v: f64| Tensor::<f64>::full(&[3, 16, 16], v);
    let psnr_exact = psnr(&flat(-0.5), &flat(-0.3)).unwrap() == 20.0;

    let mut rng = Rng::new(8, 905);
    let img = Tensor::<f64>::new(&[3, 16, 16], (0..768).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let ssim_one = (ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12;

    let imgs: Vec<Tensor<f64>> = (0..6).map(|_| randn(&[3, 16, 16], &mut rng).map(|v| v.tanh())).collect();
    let bytes = encode_grid_ppm(&imgs, 3).unwrap();
    let (w, h, pixels) = read_ppm(&bytes).unwrap();
    let mut expected = vec![0u8; w * h * 3];
    for (k, im) in imgs.iter().enumerate() {
        let (gx, gy) = ((k % 3) * 16, (k / 3) * 16);
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    expected[((gy + y) * w + gx + x) * 3 + c] = to_byte(im.data()[(c * 16 + y) * 16 + x]);
                }
            }
        }
    }
    let ppm_exact = (w, h) == (48, 32) && pixels == expected;

    let mut record = vec![255u8; CIFAR_RECORD_LEN];
    record[0] = 4;
    let mut dark = vec![0u8; CIFAR_RECORD_LEN];
    dark[0] = 1;
    record.extend(dark);
    let good = scratch.join("good.bin");
    fs::write(&good, &record).unwrap();
    let ds = load_cifar10(&good).unwrap();
    let mapping = ds.images().row(0).iter().all(|&v| v == 1.0) && ds.images().row(1).iter().all(|&v| v == -1.0);
    let bad = scratch.join("truncated.bin");
    fs::write(&bad, &record[..record.len() - 1]).unwrap();
    let truncated_rejected = load_cifar10(&bad).is_err();

    verdict(
        psnr_exact && ssim_one && ppm_exact && mapping && truncated_rejected,
        format!(
            "psnr offset 0.1 == 20 dB: {psnr_exact}; ssim(x,x)=1: {ssim_one}; ppm round trip: {ppm_exact}; cifar 255->1/0->-1: {mapping}; truncated rejected: {truncated_rejected}"
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn criterion_9(scratch: &Path) -> Verdict {
    let start = Instant::now();
    let cfg = preset("fora-toy");
    let a = run_in(&cfg, &scratch.join("det-a"));
    let b = run_in(&cfg, &scratch.join("det-b"));
    let same = |name: &str| fs::read(a.output_dir.join(name)).unwrap() == fs::read(b.output_dir.join(name)).unwrap();
    let files = ["report.json", "per_image.csv", "transcript.jsonl", "recon.ppm"];
    let identical: Vec<&str> = files.iter().copied().filter(|f| same(f)).collect();
    verdict(
        identical.len() == files.len(),
        format!("identical across two runs: {identical:?} of {files:?}; {:.0}s", start.elapsed().as_secs_f64()),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let scratch = tempfile::tempdir().expect("scratch dir");
    let dir = scratch.path();
    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(usize, &str, Check)> = vec![
        (1, "gradient suite", Box::new(criterion_1)),
        (2, "protocol equivalence", Box::new(criterion_2)),
        (3, "mk-mmd sanity", Box::new(criterion_3)),
        (4, "dcor estimator", Box::new(criterion_4)),
        (5, "fora efficacy ordering", Box::new(|| criterion_5(dir))),
        (6, "defense trends", Box::new(|| criterion_6(dir))),
        (7, "detection", Box::new(|| criterion_7(dir))),
        (8, "metric oracles", Box::new(|| criterion_8(dir))),
        (9, "end-to-end determinism", Box::new(|| criterion_9(dir))),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in &criteria {
        if !wanted.is_empty() && !wanted.contains(id) {
            continue;
        }
        let v = check();
        println!("{} criterion {id} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed.push(*id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
