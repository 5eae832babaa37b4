//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! numbers. Failures are reported, not hidden; the process exits 0 so the
//! report is always produced in full.

mod common;

use std::time::Instant;

use curvemark::attacks::{apply, AttackSpec};
use curvemark::bench::{run_bench, BenchConfig};
use curvemark::fdct::default_n_scales;
use curvemark::keyfile::PlanParams;
use curvemark::metrics::{ber, psnr, separation, ssim, BitErrorStats};
use curvemark::prng::KeyedStream;
use curvemark::watermark::{
    detect, detect_magnitude, embed_multibit, embed_zero_bit, estimate_rotation, fake_statistics,
    restore_canvas, threshold_from, Mode, DEFAULT_FAKE_BASE,
};
use curvemark::wedge_pattern::{filter_survival, generate_pattern, white_pattern};
use curvemark::{FdctPlan, Image, Seed, WatermarkKey};

const FAKES: usize = 1000;
const MARGIN: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn seed() -> Seed {
    "6375727665206d61726b206163636570746e636520746573742073656564210a".parse().expect("hex seed")
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn min(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn fdct_correctness() -> Outcome {
    let t = Instant::now();
    let sizes = [(256, 256), (320, 240), (400, 300), (512, 384), (640, 480), (300, 256), (768, 512), (800, 600), (1000, 750), (1024, 768)];
    let mut worst_rel: f64 = 0.0;
    let mut worst_parseval: f64 = 0.0;
    let mut count = 0;
    for (i, &(w, h)) in sizes.iter().enumerate() {
        let plan = FdctPlan::new(w, h, default_n_scales(w, h), 32).expect("plan");
        let mut s = KeyedStream::from_u64("acceptance-random", i as u64);
        let random = Image::from_fn(w, h, |_, _| (s.uniform() * 255.0).round());
        let natural = common::natural_image(w, h, 100 + i as u64);
        for img in [random, natural] {
            let pyr = plan.forward(&img).expect("forward");
            let back = plan.inverse(&pyr).expect("inverse");
            let err: f64 = img.data.iter().zip(&back.data).map(|(a, b)| (a - b).powi(2)).sum();
            worst_rel = worst_rel.max((err / img.energy()).sqrt());
            worst_parseval = worst_parseval.max((pyr.energy() / img.energy() - 1.0).abs());
            count += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: worst_rel < 1e-7 && worst_parseval < 1e-8 && secs < 60.0 && count == 20,
        detail: format!("{count} images, max relRMS {worst_rel:.2e}, max |Parseval-1| {worst_parseval:.2e}, {secs:.1}s"),
    }
}

fn survival() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (w, h) in [(256, 256), (512, 384), (511, 383), (1024, 768)] {
        let plan = FdctPlan::new(w, h, 4, 32).expect("plan");
        let key = WatermarkKey::zero_bit(seed(), 0.5);
        let mut wedge_min: f64 = 1.0;
        let mut white_max: f64 = -1.0;
        let mut strict = true;
        for d in [1, 2, 5, 9, 13, 16] {
            let a = filter_survival(&generate_pattern(&key, &plan, d).expect("pattern"), &plan).expect("survival");
            let b = filter_survival(&white_pattern(&key, &plan, d).expect("white"), &plan).expect("survival");
            wedge_min = wedge_min.min(a);
            white_max = white_max.max(b);
            strict &= b < a;
        }
        pass &= wedge_min >= 0.99 && strict;
        lines.push(format!("{w}x{h}: wedge min {wedge_min:.4}, white max {white_max:.4}"));
    }
    Outcome { pass, detail: lines.join("; ") }
}

struct Tuned {
    alpha: f64,
    trial_ratio: f64,
}

/// One-off strength choice: measure the no-attack separation at a trial
/// strength and scale so the ratio lands at 11 (10 plus a margin).
fn tune_alpha(corpus: &[Image], plan: &FdctPlan) -> Tuned {
    let a0 = 0.5;
    let key = WatermarkKey::zero_bit(seed(), a0);
    let mut truth = Vec::new();
    let mut fakes = Vec::new();
    for img in corpus {
        let m = embed_zero_bit(img, &key, plan).expect("embed").image.quantized();
        truth.push(detect(&m, &key, plan, 0.0).expect("detect").normalized_correlation);
        fakes.extend(fake_statistics(&m, &key, plan, Mode::Direct, FAKES, DEFAULT_FAKE_BASE).expect("fakes"));
    }
    let ratio = min(&truth) / max(&fakes);
    let alpha = ((a0 * 11.0 / ratio) * 20.0).ceil() / 20.0;
    Tuned { alpha, trial_ratio: ratio }
}

struct Marked {
    zero: Vec<Image>,
    multi: Vec<Image>,
    bits: Vec<Vec<bool>>,
    t_direct: Vec<f64>,
    t_mag: Vec<f64>,
}

fn bits_for(i: usize) -> Vec<bool> {
    (0..6).map(|b| (i * 37 + 11) >> b & 1 == 1).collect()
}

fn embed_corpus(corpus: &[Image], plan: &FdctPlan, zero: &WatermarkKey, multi: &WatermarkKey) -> (Marked, Outcome) {
    let mut out = Marked { zero: vec![], multi: vec![], bits: vec![], t_direct: vec![], t_mag: vec![] };
    let (mut zp, mut zs, mut mp, mut ms) = (vec![], vec![], vec![], vec![]);
    let mut small_delta = 0;
    let mut deltas = Vec::new();
    for (i, img) in corpus.iter().enumerate() {
        let z = embed_zero_bit(img, zero, plan).expect("embed").image.quantized();
        let bits = bits_for(i);
        let m = embed_multibit(img, multi, &bits, plan).expect("embed").image.quantized();
        zp.push(psnr(img, &z).unwrap());
        zs.push(ssim(img, &z).unwrap());
        mp.push(psnr(img, &m).unwrap());
        ms.push(ssim(img, &m).unwrap());
        let d = img.max_abs_diff(&z);
        deltas.push(d);
        if d <= 3.0 {
            small_delta += 1;
        }
        out.t_direct.push(threshold_from(&fake_statistics(&z, zero, plan, Mode::Direct, FAKES, DEFAULT_FAKE_BASE).unwrap(), MARGIN));
        out.t_mag.push(threshold_from(&fake_statistics(&z, zero, plan, Mode::Magnitude, FAKES, DEFAULT_FAKE_BASE).unwrap(), MARGIN));
        out.zero.push(z);
        out.multi.push(m);
        out.bits.push(bits);
    }
    let n = corpus.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let pass = mean(&zp) >= 54.0
        && mean(&zs) >= 0.997
        && mean(&mp) >= 49.0
        && mean(&ms) >= 0.993
        && small_delta as f64 >= 0.9 * n;
    let fidelity = Outcome {
        pass,
        detail: format!(
            "zero-bit PSNR {:.2} dB (min {:.2}), SSIM {:.5}; multibit PSNR {:.2} dB, SSIM {:.5}; max delta <= 3 on {}/{} images (deltas {:?})",
            mean(&zp), min(&zp), mean(&zs), mean(&mp), mean(&ms), small_delta, corpus.len(), deltas
        ),
    };
    (out, fidelity)
}

fn null_separation(marked: &Marked, plan: &FdctPlan, key: &WatermarkKey) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, attack) in [("no attack", None), ("hist-eq", Some(AttackSpec::HistEq))] {
        let mut truth = Vec::new();
        let mut fakes = Vec::new();
        for m in &marked.zero {
            let z = match &attack {
                Some(a) => apply(m, a).unwrap(),
                None => m.clone(),
            };
            truth.push(detect(&z, key, plan, 0.0).unwrap().normalized_correlation);
            fakes.extend(fake_statistics(&z, key, plan, Mode::Direct, FAKES, DEFAULT_FAKE_BASE).unwrap());
        }
        let s = separation(&truth, &fakes).unwrap();
        pass &= s.ratio >= 10.0;
        parts.push(format!("{label}: min true {:.4} / max fake {:.4} = {:.1}", s.min_true, s.max_fake, s.ratio));
    }
    Outcome { pass, detail: format!("{} images x {FAKES} fakes; {}", marked.zero.len(), parts.join("; ")) }
}

fn signal_attacks(marked: &Marked, plan: &FdctPlan, zero: &WatermarkKey, multi: &WatermarkKey) -> Outcome {
    let mut specs = Vec::new();
    for q in [50, 60, 70, 80, 90] {
        specs.push(AttackSpec::Jpeg { quality: q });
    }
    for s in [1.0, 2.0, 3.0, 4.0, 5.0] {
        specs.push(AttackSpec::GaussianNoise { sigma: s, seed: 11 });
    }
    for d in [0.001, 0.005, 0.01] {
        specs.push(AttackSpec::SaltPepper { density: d, seed: 11 });
    }
    for r in [0.5, 1.0] {
        specs.push(AttackSpec::Lowpass { radius: r });
    }
    specs.push(AttackSpec::HistEq);
    let mut misses = Vec::new();
    let mut worst: Vec<String> = Vec::new();
    for spec in &specs {
        let mut margin = f64::INFINITY;
        for (i, m) in marked.zero.iter().enumerate() {
            let a = apply(m, spec).unwrap();
            let r = detect(&a, zero, plan, marked.t_direct[i]).unwrap();
            margin = margin.min(r.normalized_correlation / r.threshold);
            if !r.decision.is_present() {
                misses.push(format!("{}@img{i}", spec.label()));
            }
        }
        worst.push(format!("{} {:.1}x", spec.label(), margin));
    }
    let mut clean = Vec::new();
    let mut heq = Vec::new();
    for (m, bits) in marked.multi.iter().zip(&marked.bits) {
        let d = detect(m, multi, plan, 0.0).unwrap();
        clean.push(ber(bits, &d.decoded_bits().unwrap()).unwrap());
        let a = apply(m, &AttackSpec::HistEq).unwrap();
        let d = detect(&a, multi, plan, 0.0).unwrap();
        heq.push(ber(bits, &d.decoded_bits().unwrap()).unwrap());
    }
    let clean = BitErrorStats::merge(&clean).unwrap();
    let heq = BitErrorStats::merge(&heq).unwrap();
    Outcome {
        pass: misses.is_empty() && heq.ber <= 0.05 && clean.ber == 0.0,
        detail: format!(
            "{} attacks x {} images, misses {:?}; weakest statistic/threshold per attack: [{}]; multibit BER no attack {} ({}/{}), hist-eq {} ({}/{})",
            specs.len(), marked.zero.len(), misses, worst.join(", "), clean.ber, clean.b_e, clean.b_t, heq.ber, heq.b_e, heq.b_t
        ),
    }
}

fn rotation(marked: &Marked, plan: &FdctPlan, key: &WatermarkKey, images: usize) -> Outcome {
    let n = 32;
    let step = 360.0 / n as f64;
    let (mut exact, mut exact_total, mut span, mut span_total) = (0, 0, 0, 0);
    let mut wrong = Vec::new();
    for (i, m) in marked.zero.iter().take(images).enumerate() {
        for k in 0..n {
            for half in [false, true] {
                let deg = (k as f64 + if half { 0.5 } else { 0.0 }) * step;
                let a = apply(m, &AttackSpec::Rotate { degrees: deg }).unwrap();
                let z = restore_canvas(&a, plan.width, plan.height);
                let got = estimate_rotation(&z, key, plan).ok().map(|e| e.index);
                let ok = if half { got == Some(k) || got == Some((k + 1) % n) } else { got == Some(k) };
                if half {
                    span_total += 1;
                    span += ok as usize;
                } else {
                    exact_total += 1;
                    exact += ok as usize;
                }
                if !ok {
                    wrong.push(format!("img{i} {deg}deg -> {got:?}"));
                }
            }
        }
    }
    let fe = exact as f64 / exact_total as f64;
    let fs = span as f64 / span_total as f64;
    Outcome {
        pass: fe >= 0.95 && fs >= 0.90,
        detail: format!(
            "{images} images; exact multiples {exact}/{exact_total} ({:.1}%), half-step boundaries within pair {span}/{span_total} ({:.1}%); misses {wrong:?}",
            100.0 * fe, 100.0 * fs
        ),
    }
}

fn scaling(marked: &Marked, plan: &FdctPlan, key: &WatermarkKey) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for f in [0.5, 0.75, 1.25, 1.5] {
        let (mut mag, mut dir) = (0, 0);
        let mut lowest = f64::INFINITY;
        for (i, m) in marked.zero.iter().enumerate() {
            let a = apply(m, &AttackSpec::Scale { factor: f }).unwrap();
            let z = restore_canvas(&a, plan.width, plan.height);
            let r = detect_magnitude(&z, key, plan, marked.t_mag[i]).unwrap();
            lowest = lowest.min(r.normalized_correlation / r.threshold);
            mag += r.decision.is_present() as usize;
            dir += detect(&z, key, plan, marked.t_direct[i]).unwrap().decision.is_present() as usize;
        }
        let n = marked.zero.len();
        pass &= mag as f64 >= 0.9 * n as f64;
        parts.push(format!("x{f}: magnitude {mag}/{n} (weakest {lowest:.1}x threshold), direct {dir}/{n}"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn multibit_exhaustive(img: &Image, plan: &FdctPlan, key: &WatermarkKey) -> Outcome {
    let mut errors = 0;
    for v in 0..64usize {
        let bits: Vec<bool> = (0..6).map(|b| v >> b & 1 == 1).collect();
        let m = embed_multibit(img, key, &bits, plan).unwrap().image.quantized();
        let d = detect(&m, key, plan, 0.0).unwrap().decoded_bits().unwrap();
        errors += ber(&bits, &d).unwrap().b_e;
    }
    Outcome { pass: errors == 0, detail: format!("64 payloads, {errors} bit errors") }
}

fn determinism(alpha: f64) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    for i in 0..2u64 {
        common::natural_image(512, 384, 200 + i).write_pgm(dir.path().join(format!("img{i}.pgm"))).unwrap();
    }
    let files = curvemark::bench::corpus_files(dir.path()).unwrap();
    let key = WatermarkKey::multibit(seed(), alpha);
    let config = BenchConfig {
        attacks: vec![
            AttackSpec::Jpeg { quality: 50 },
            AttackSpec::GaussianNoise { sigma: 3.0, seed: 7 },
            AttackSpec::SaltPepper { density: 0.01, seed: 7 },
            AttackSpec::HistEq,
            AttackSpec::Scale { factor: 0.75 },
            AttackSpec::Rotate { degrees: 11.25 },
        ],
        fakes: 100,
        ..BenchConfig::default()
    };
    let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).max(4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let r = run_bench(&files, &key, PlanParams::default(), &config).unwrap();
            (r.to_json(), r.curves_csv())
        })
    };
    let a = run(1);
    let b = run(n);
    let c = run(n);
    Outcome {
        pass: a == b && b == c,
        detail: format!("report {} bytes, csv {} bytes; threads 1 vs {n}: {}; repeat: {}", a.0.len(), a.1.len(), a == b, b == c),
    }
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let log = |name: &'static str, o: Outcome, results: &mut Vec<(&str, Outcome)>| {
        println!("[{}] {name}: {}  ({:.0}s elapsed)", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
        results.push((name, o));
    };

    log("1 transform reconstruction", fdct_correctness(), &mut results);
    log("2 wedge-pattern survival", survival(), &mut results);

    let corpus = common::corpus();
    let plan = FdctPlan::new(common::WIDTH, common::HEIGHT, 4, 32).expect("plan");
    let tuned = tune_alpha(&corpus, &plan);
    println!(
        "       strength tuned once: ratio {:.2} at alpha 0.5 -> alpha {:.2}",
        tuned.trial_ratio, tuned.alpha
    );
    let zero = WatermarkKey::zero_bit(seed(), tuned.alpha);
    let multi = WatermarkKey::multibit(seed(), tuned.alpha);
    let (marked, fidelity) = embed_corpus(&corpus, &plan, &zero, &multi);
    log("3 invisibility", fidelity, &mut results);
    log("4 null separation", null_separation(&marked, &plan, &zero), &mut results);
    log("5 signal-attack robustness", signal_attacks(&marked, &plan, &zero, &multi), &mut results);
    log("6 rotation template", rotation(&marked, &plan, &zero, 3), &mut results);
    log("7 scaling robustness", scaling(&marked, &plan, &zero), &mut results);
    log("8 multibit exhaustive", multibit_exhaustive(&corpus[0], &plan, &multi), &mut results);
    log("9 bench determinism", determinism(tuned.alpha), &mut results);

    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed in {:.0}s", results.len(), start.elapsed().as_secs_f64());
    for (name, o) in &results {
        if !o.pass {
            println!("  failed: {name}");
        }
    }
}
