use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use curvemark::attacks::{apply, AttackSpec};
use curvemark::bench::{corpus_files, run_bench, BenchConfig};
use curvemark::keyfile::{KeyFile, PlanParams};
use curvemark::metrics::{psnr, ssim};
use curvemark::watermark::{
    detect, detect_geometric, detect_magnitude, embed_multibit, embed_zero_bit, fake_statistics,
    restore_canvas, threshold_from, Mode, DEFAULT_FAKE_BASE,
};
use curvemark::{Error, Image, Result, Seed, WatermarkKey};

/// Blind curvelet-domain image watermarking.
#[derive(Parser)]
#[command(name = "curvemark", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a key file.
    Keygen(KeygenArgs),
    /// Embed a watermark into a PGM image.
    Embed(EmbedArgs),
    /// Detect a watermark; exits 0 when present and 4 when absent.
    Detect(DetectArgs),
    /// Apply one attack to a PGM image.
    Attack(AttackArgs),
    /// Run the benchmark over a directory of PGM images.
    Bench(BenchArgs),
    /// Derive detection thresholds from fake keys.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KeyMode {
    Zero,
    Multi,
}

#[derive(Args)]
struct KeygenArgs {
    /// 64 hex digits; random when omitted.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, value_enum, default_value = "zero")]
    mode: KeyMode,
    #[arg(long, default_value_t = 0.65)]
    alpha: f64,
    #[arg(long, default_value_t = 4)]
    n_scales: usize,
    #[arg(long, default_value_t = 32)]
    angles: usize,
    /// Output path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    key: PathBuf,
    #[arg(long, value_enum, default_value = "zero")]
    mode: KeyMode,
    /// Payload as 0/1 characters, one per message direction.
    #[arg(long)]
    bits: Option<String>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectMode {
    Direct,
    Magnitude,
    Geometric,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    key: PathBuf,
    #[arg(long, value_enum, default_value = "direct")]
    mode: DetectMode,
    /// Pre-attack size as WxH; required in geometric mode.
    #[arg(long)]
    nominal_size: Option<String>,
    /// Decision threshold on the normalized statistic. Defaults to the
    /// key's calibration file, else a calibration on the input image.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    fakes: usize,
    #[arg(long, default_value_t = DEFAULT_FAKE_BASE)]
    fake_base: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    #[value(alias = "gaussian_noise")]
    Gaussian,
    #[value(alias = "salt_pepper")]
    SaltPepper,
    Jpeg,
    Lowpass,
    #[value(alias = "hist_eq")]
    HistEq,
    Scale,
    Rotate,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum)]
    kind: AttackKind,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    quality: Option<u32>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long)]
    degrees: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, short)]
    key: PathBuf,
    /// JSON bench configuration; the default grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Curve CSV path; defaults to the report path with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, short)]
    key: PathBuf,
    #[arg(long, default_value_t = 1000)]
    fakes: usize,
    #[arg(long, default_value_t = DEFAULT_FAKE_BASE)]
    fake_base: u64,
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
}

/// Thresholds stored next to a key file by `calibrate`.
#[derive(Debug, Serialize, Deserialize)]
struct Thresholds {
    direct: f64,
    magnitude: f64,
    fakes: usize,
    fake_base: u64,
    margin: f64,
}

fn threshold_path(key: &Path) -> PathBuf {
    let mut s = key.as_os_str().to_owned();
    s.push(".threshold.json");
    PathBuf::from(s)
}

fn load_key(path: &Path) -> Result<(WatermarkKey, PlanParams)> {
    let kf = KeyFile::read(path)?;
    Ok((kf.key()?, kf.plan_params))
}

fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::InvalidArgument(format!("bits must be 0/1, got {c:?}"))),
        })
        .collect()
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("size {s:?} is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn keygen(a: KeygenArgs) -> Result<i32> {
    let seed = match &a.seed {
        Some(s) => s.parse::<Seed>()?,
        None => Seed::random(),
    };
    let key = match a.mode {
        KeyMode::Zero => WatermarkKey::zero_bit(seed, a.alpha),
        KeyMode::Multi => WatermarkKey::multibit(seed, a.alpha),
    };
    if !(a.alpha.is_finite() && a.alpha >= 0.0) {
        return Err(Error::BadKey(format!("alpha {} must be finite and >= 0", a.alpha)));
    }
    let kf = KeyFile::new(&key, PlanParams { n_scales: a.n_scales, angles_at_embed_scale: a.angles });
    match &a.out {
        Some(p) => kf.write(p)?,
        None => print!("{}", kf.to_json()),
    }
    Ok(0)
}

fn embed(a: EmbedArgs) -> Result<i32> {
    let (key, params) = load_key(&a.key)?;
    let image = Image::read_pgm(&a.input)?;
    let plan = params.plan(image.width, image.height)?;
    let result = match a.mode {
        KeyMode::Zero => {
            if a.bits.is_some() {
                return Err(Error::InvalidArgument("--bits needs --mode multi".into()));
            }
            embed_zero_bit(&image, &key, &plan)?
        }
        KeyMode::Multi => {
            let bits = a
                .bits
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("--mode multi needs --bits".into()))?;
            embed_multibit(&image, &key, &parse_bits(bits)?, &plan)?
        }
    };
    let out = result.image.quantized();
    out.write_pgm(&a.output)?;
    let line = json!({
        "psnr": finite_or_str(psnr(&image, &out)?),
        "ssim": ssim(&image, &out)?,
        "psnr_pre_clamp": finite_or_str(result.psnr_vs_original),
        "clamped_fraction": result.clamped_fraction,
        "max_pixel_delta": image.max_abs_diff(&out),
        "wedges_touched": result.wedges_touched,
    });
    println!("{line}");
    Ok(0)
}

fn finite_or_str(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn detect_cmd(a: DetectArgs) -> Result<i32> {
    let (key, params) = load_key(&a.key)?;
    let image = Image::read_pgm(&a.input)?;
    let nominal = match (a.mode, &a.nominal_size) {
        (_, Some(s)) => parse_size(s)?,
        (DetectMode::Geometric, None) => {
            return Err(Error::InvalidArgument("geometric mode needs --nominal-size".into()))
        }
        (_, None) => image.dims(),
    };
    let plan = params.plan(nominal.0, nominal.1)?;
    let z = restore_canvas(&image, nominal.0, nominal.1);
    let stat_mode = match a.mode {
        DetectMode::Direct => Mode::Direct,
        _ => Mode::Magnitude,
    };
    let threshold = match a.threshold {
        Some(t) => t,
        None => {
            let sidecar = threshold_path(&a.key);
            if sidecar.exists() {
                let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
                let t: Thresholds = serde_json::from_str(&text)
                    .map_err(|e| Error::Format(format!("{}: {e}", sidecar.display())))?;
                if stat_mode == Mode::Direct {
                    t.direct
                } else {
                    t.magnitude
                }
            } else {
                let stats = fake_statistics(&z, &key, &plan, stat_mode, a.fakes, a.fake_base)?;
                threshold_from(&stats, 0.5)
            }
        }
    };
    let report = match a.mode {
        DetectMode::Direct => detect(&z, &key, &plan, threshold)?,
        DetectMode::Magnitude => detect_magnitude(&z, &key, &plan, threshold)?,
        DetectMode::Geometric => detect_geometric(&image, &key, &plan, threshold)?,
    };
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(if report.decision.is_present() { 0 } else { 4 })
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::BadSpec(format!("this attack needs --{flag}")))
}

fn attack(a: AttackArgs) -> Result<i32> {
    let spec = match a.kind {
        AttackKind::Gaussian => AttackSpec::GaussianNoise { sigma: need(a.sigma, "sigma")?, seed: a.seed },
        AttackKind::SaltPepper => {
            AttackSpec::SaltPepper { density: need(a.density, "density")?, seed: a.seed }
        }
        AttackKind::Jpeg => AttackSpec::Jpeg { quality: need(a.quality, "quality")? },
        AttackKind::Lowpass => AttackSpec::Lowpass { radius: need(a.radius, "radius")? },
        AttackKind::HistEq => AttackSpec::HistEq,
        AttackKind::Scale => AttackSpec::Scale { factor: need(a.factor, "factor")? },
        AttackKind::Rotate => AttackSpec::Rotate { degrees: need(a.degrees, "degrees")? },
    };
    spec.validate()?;
    let image = Image::read_pgm(&a.input)?;
    apply(&image, &spec)?.write_pgm(&a.output)?;
    Ok(0)
}

fn bench(a: BenchArgs) -> Result<i32> {
    let (key, params) = load_key(&a.key)?;
    let config = match &a.grid {
        Some(p) => BenchConfig::read(p)?,
        None => BenchConfig::default(),
    };
    let files = corpus_files(&a.corpus)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .pgm files in {}", a.corpus.display())));
    }
    let report = run_bench(&files, &key, params, &config)?;
    std::fs::write(&a.out, report.to_json()).map_err(|e| Error::io(&a.out, e))?;
    let csv = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    std::fs::write(&csv, report.curves_csv()).map_err(|e| Error::io(&csv, e))?;
    for f in &report.failures {
        eprintln!("warning: {f}");
    }
    Ok(0)
}

fn calibrate(a: CalibrateArgs) -> Result<i32> {
    if a.fakes < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 fakes, got {}", a.fakes)));
    }
    let (key, params) = load_key(&a.key)?;
    let files = corpus_files(&a.corpus)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .pgm files in {}", a.corpus.display())));
    }
    let mut direct = Vec::new();
    let mut magnitude = Vec::new();
    for f in &files {
        let image = Image::read_pgm(f)?;
        let plan = params.plan(image.width, image.height)?;
        direct.extend(fake_statistics(&image, &key, &plan, Mode::Direct, a.fakes, a.fake_base)?);
        magnitude.extend(fake_statistics(&image, &key, &plan, Mode::Magnitude, a.fakes, a.fake_base)?);
    }
    let t = Thresholds {
        direct: threshold_from(&direct, a.margin),
        magnitude: threshold_from(&magnitude, a.margin),
        fakes: a.fakes,
        fake_base: a.fake_base,
        margin: a.margin,
    };
    let path = threshold_path(&a.key);
    let text = serde_json::to_string_pretty(&t).expect("thresholds serialize") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("{}", t.direct);
    Ok(0)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CURVEMARK_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("CURVEMARK_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 6 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = || -> Result<i32> {
        configure_threads()?;
        match cli.command {
            Command::Keygen(a) => keygen(a),
            Command::Embed(a) => embed(a),
            Command::Detect(a) => detect_cmd(a),
            Command::Attack(a) => attack(a),
            Command::Bench(a) => bench(a),
            Command::Calibrate(a) => calibrate(a),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
