//! Benchmark runner: embed every corpus image, attack it, detect, and
//! summarize. Output is byte-stable for fixed inputs and seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::attacks::{apply, default_grid, AttackSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keyfile::{KeyFile, PlanParams};
use crate::metrics::{ber, psnr, ssim, BitErrorStats};
use crate::watermark::{
    detect, detect_geometric, detect_magnitude, embed_multibit, embed_zero_bit, fake_statistics,
    restore_canvas, threshold_from, DetectionReport, Mode, DEFAULT_FAKE_BASE,
};
use crate::wedge_pattern::WatermarkKey;

pub const REPORT_FORMAT: u32 = 1;

/// Round to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn ser_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(sig6(*v))
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn ser_opt_f64<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => ser_f64(x, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub attacks: Vec<AttackSpec>,
    /// Fake keys per image for the detection thresholds.
    pub fakes: usize,
    pub fake_base: u64,
    pub margin: f64,
    /// Payload for multibit keys.
    pub bits: Vec<bool>,
    /// Wall-clock timings make the report nondeterministic; off by default.
    pub include_wall_time: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            attacks: default_grid(1),
            fakes: 1000,
            fake_base: DEFAULT_FAKE_BASE,
            margin: 0.5,
            bits: vec![true, false, true, true, false, false],
            include_wall_time: false,
        }
    }
}

impl BenchConfig {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| Error::BadSpec(format!("bench config: {e}")))?;
        for a in &config.attacks {
            a.validate()?;
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub width: usize,
    pub height: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub key_fingerprint: String,
    pub fake_base: u64,
    pub software_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fidelity {
    pub image: String,
    #[serde(serialize_with = "ser_f64")]
    pub psnr: f64,
    #[serde(serialize_with = "ser_f64")]
    pub ssim: f64,
    #[serde(serialize_with = "ser_f64")]
    pub max_pixel_delta: f64,
    #[serde(serialize_with = "ser_f64")]
    pub threshold_direct: f64,
    #[serde(serialize_with = "ser_f64")]
    pub threshold_magnitude: f64,
    #[serde(serialize_with = "ser_opt_f64")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub image: String,
    pub attack: String,
    pub spec: Option<AttackSpec>,
    pub mode: Mode,
    #[serde(serialize_with = "ser_f64")]
    pub raw_correlation: f64,
    #[serde(serialize_with = "ser_f64")]
    pub normalized_correlation: f64,
    #[serde(serialize_with = "ser_f64")]
    pub threshold: f64,
    pub present: bool,
    pub bits: Option<Vec<bool>>,
    pub bit_errors: Option<BitErrorStats>,
    pub rotation_index: Option<usize>,
    #[serde(serialize_with = "ser_f64")]
    pub psnr: f64,
    #[serde(serialize_with = "ser_f64")]
    pub ssim: f64,
    pub error: Option<String>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub wall_time_ms: Option<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub attack: String,
    pub kind: String,
    #[serde(serialize_with = "ser_opt_f64")]
    pub parameter: Option<f64>,
    pub mode: Mode,
    pub images: usize,
    #[serde(serialize_with = "ser_f64")]
    pub detection_rate: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean_correlation: f64,
    #[serde(serialize_with = "ser_f64")]
    pub min_correlation: f64,
    #[serde(serialize_with = "ser_opt_f64")]
    pub ber: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelitySummary {
    pub images: usize,
    #[serde(serialize_with = "ser_f64")]
    pub mean_psnr: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean_ssim: f64,
    #[serde(serialize_with = "ser_f64")]
    pub max_pixel_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub format: u32,
    pub provenance: Provenance,
    pub key: KeyFile,
    pub config: BenchConfig,
    pub manifest: Vec<ManifestEntry>,
    pub failures: Vec<String>,
    pub fidelity: Vec<Fidelity>,
    pub records: Vec<Record>,
    pub fidelity_summary: Option<FidelitySummary>,
    pub aggregates: Vec<Aggregate>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Curve data: one row per aggregate.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("attack,kind,parameter,mode,images,detection_rate,mean_correlation,min_correlation,ber\n");
        let f = |x: Option<f64>| x.map(|v| sig6(v).to_string()).unwrap_or_default();
        for a in &self.aggregates {
            let mode = serde_json::to_value(a.mode).expect("mode").as_str().unwrap_or("").to_string();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                a.attack,
                a.kind,
                f(a.parameter),
                mode,
                a.images,
                sig6(a.detection_rate),
                sig6(a.mean_correlation),
                sig6(a.min_correlation),
                f(a.ber)
            ));
        }
        out
    }
}

/// PGM files of a directory, sorted by name.
pub fn corpus_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

/// Hex fingerprint of a key (hash of its canonical key file).
pub fn key_fingerprint(key: &WatermarkKey, params: PlanParams) -> String {
    hex::encode(Sha256::digest(KeyFile::new(key, params).to_json().as_bytes()))
}

fn elapsed_ms(t: Instant, on: bool) -> Option<f64> {
    on.then(|| t.elapsed().as_secs_f64() * 1000.0)
}

fn failed_record(image: &str, attack: &AttackSpec, mode: Mode, err: &Error, prov: &Provenance) -> Record {
    Record {
        image: image.to_string(),
        attack: attack.label(),
        spec: Some(attack.clone()),
        mode,
        raw_correlation: 0.0,
        normalized_correlation: 0.0,
        threshold: 0.0,
        present: false,
        bits: None,
        bit_errors: None,
        rotation_index: None,
        psnr: f64::NAN,
        ssim: f64::NAN,
        error: Some(err.to_string()),
        wall_time_ms: None,
        provenance: prov.clone(),
    }
}

struct ImageRun {
    fidelity: Fidelity,
    records: Vec<Record>,
}

fn run_image(
    name: &str,
    original: &Image,
    key: &WatermarkKey,
    params: PlanParams,
    config: &BenchConfig,
    prov: &Provenance,
) -> Result<ImageRun> {
    let t0 = Instant::now();
    let plan = params.plan(original.width, original.height)?;
    let embedded = if key.is_multibit() {
        embed_multibit(original, key, &config.bits, &plan)?
    } else {
        embed_zero_bit(original, key, &plan)?
    };
    let marked = embedded.image.quantized();
    let sent = key.is_multibit().then(|| config.bits.clone());
    let fakes = |mode| fake_statistics(&marked, key, &plan, mode, config.fakes, config.fake_base);
    let t_direct = threshold_from(&fakes(Mode::Direct)?, config.margin);
    let t_mag = threshold_from(&fakes(Mode::Magnitude)?, config.margin);
    let fidelity = Fidelity {
        image: name.to_string(),
        psnr: psnr(original, &marked)?,
        ssim: ssim(original, &marked)?,
        max_pixel_delta: original.max_abs_diff(&marked),
        threshold_direct: t_direct,
        threshold_magnitude: t_mag,
        wall_time_ms: elapsed_ms(t0, config.include_wall_time),
    };

    let make = |attack: Option<&AttackSpec>, r: &DetectionReport, attacked: &Image, t: Instant| -> Record {
        let bits = r.decoded_bits();
        let bit_errors = match (&sent, &bits) {
            (Some(s), Some(b)) => ber(s, b).ok(),
            _ => None,
        };
        let same = attacked.dims() == original.dims();
        Record {
            image: name.to_string(),
            attack: attack.map(|a| a.label()).unwrap_or_else(|| "none".into()),
            spec: attack.cloned(),
            mode: r.mode,
            raw_correlation: r.raw_correlation,
            normalized_correlation: r.normalized_correlation,
            threshold: r.threshold,
            present: r.decision.is_present(),
            bits,
            bit_errors,
            rotation_index: r.rotation_index,
            psnr: if same { psnr(original, attacked).unwrap_or(f64::NAN) } else { f64::NAN },
            ssim: if same { ssim(original, attacked).unwrap_or(f64::NAN) } else { f64::NAN },
            error: None,
            wall_time_ms: elapsed_ms(t, config.include_wall_time),
            provenance: prov.clone(),
        }
    };

    let mut records = Vec::new();
    let t = Instant::now();
    records.push(make(None, &detect(&marked, key, &plan, t_direct)?, &marked, t));
    let t = Instant::now();
    records.push(make(None, &detect_magnitude(&marked, key, &plan, t_mag)?, &marked, t));

    for spec in &config.attacks {
        let t = Instant::now();
        let attacked = match apply(&marked, spec) {
            Ok(a) => a,
            Err(e) => {
                records.push(failed_record(name, spec, Mode::Direct, &e, prov));
                continue;
            }
        };
        let restored = restore_canvas(&attacked, plan.width, plan.height);
        let mut modes = vec![Mode::Direct];
        match spec {
            AttackSpec::Scale { .. } => modes.push(Mode::Magnitude),
            AttackSpec::Rotate { .. } => modes = vec![Mode::Geometric],
            _ => {}
        }
        for mode in modes {
            let r = match mode {
                Mode::Direct => detect(&restored, key, &plan, t_direct),
                Mode::Magnitude => detect_magnitude(&restored, key, &plan, t_mag),
                Mode::Geometric => detect_geometric(&attacked, key, &plan, t_mag),
            };
            match r {
                Ok(r) => records.push(make(Some(spec), &r, &attacked, t)),
                Err(e) => records.push(failed_record(name, spec, mode, &e, prov)),
            }
        }
    }
    Ok(ImageRun { fidelity, records })
}

fn aggregate(records: &[Record], config: &BenchConfig) -> Vec<Aggregate> {
    let mut order: Vec<(String, Mode)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&Record>> = BTreeMap::new();
    for r in records {
        let mode = serde_json::to_value(r.mode).expect("mode").as_str().unwrap_or("").to_string();
        let k = (r.attack.clone(), mode);
        if !groups.contains_key(&k) {
            order.push((r.attack.clone(), r.mode));
        }
        groups.entry(k).or_default().push(r);
    }
    let spec_of = |label: &str| config.attacks.iter().find(|a| a.label() == label).cloned();
    order
        .into_iter()
        .map(|(attack, mode)| {
            let m = serde_json::to_value(mode).expect("mode").as_str().unwrap_or("").to_string();
            let rs = &groups[&(attack.clone(), m)];
            let n = rs.len();
            let spec = spec_of(&attack);
            let corr: Vec<f64> = rs.iter().map(|r| r.normalized_correlation).collect();
            let parts: Vec<BitErrorStats> = rs.iter().filter_map(|r| r.bit_errors).collect();
            Aggregate {
                kind: spec.as_ref().map(|s| s.kind().to_string()).unwrap_or_else(|| "none".into()),
                parameter: spec.as_ref().and_then(|s| s.parameter()),
                attack,
                mode,
                images: n,
                detection_rate: rs.iter().filter(|r| r.present).count() as f64 / n as f64,
                mean_correlation: corr.iter().sum::<f64>() / n as f64,
                min_correlation: corr.iter().cloned().fold(f64::INFINITY, f64::min),
                ber: BitErrorStats::merge(&parts).map(|b| b.ber),
            }
        })
        .collect()
}

/// Run the benchmark on PGM files. Per-image failures are recorded and the
/// run continues.
pub fn run_bench(
    files: &[PathBuf],
    key: &WatermarkKey,
    params: PlanParams,
    config: &BenchConfig,
) -> Result<BenchReport> {
    let prov = Provenance {
        key_fingerprint: key_fingerprint(key, params),
        fake_base: config.fake_base,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mut files = files.to_vec();
    files.sort();
    let mut manifest = Vec::new();
    let mut failures = Vec::new();
    let mut fidelity = Vec::new();
    let mut records = Vec::new();
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                failures.push(format!("{name}: {}", Error::io(path, e)));
                continue;
            }
        };
        let image = match crate::image::decode_pgm(&bytes) {
            Ok(i) => i,
            Err(e) => {
                failures.push(format!("{name}: {e}"));
                continue;
            }
        };
        manifest.push(ManifestEntry {
            path: name.clone(),
            width: image.width,
            height: image.height,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        match run_image(&name, &image, key, params, config, &prov) {
            Ok(run) => {
                fidelity.push(run.fidelity);
                records.extend(run.records);
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let fidelity_summary = (!fidelity.is_empty()).then(|| {
        let n = fidelity.len() as f64;
        FidelitySummary {
            images: fidelity.len(),
            mean_psnr: fidelity.iter().map(|f| f.psnr).sum::<f64>() / n,
            mean_ssim: fidelity.iter().map(|f| f.ssim).sum::<f64>() / n,
            max_pixel_delta: fidelity.iter().map(|f| f.max_pixel_delta).fold(0.0, f64::max),
        }
    });
    let aggregates = aggregate(&records, config);
    Ok(BenchReport {
        format: REPORT_FORMAT,
        provenance: prov,
        key: KeyFile::new(key, params),
        config: config.clone(),
        manifest,
        failures,
        fidelity,
        records,
        fidelity_summary,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(1.23456789), 1.23457);
        assert_eq!(sig6(-0.000123456789), -0.000123457);
        assert_eq!(sig6(123456789.0), 123457000.0);
        assert!(sig6(f64::INFINITY).is_infinite());
        let v = serde_json::to_string(&FidelitySummary {
            images: 1,
            mean_psnr: f64::INFINITY,
            mean_ssim: 1.0,
            max_pixel_delta: 0.0,
        })
        .unwrap();
        assert!(v.contains("\"inf\""));
    }

    #[test]
    fn config_defaults_fill_in() {
        let c: BenchConfig = serde_json::from_str(r#"{"attacks": [], "fakes": 10}"#).unwrap();
        assert!(c.attacks.is_empty());
        assert_eq!(c.fakes, 10);
        assert_eq!(c.margin, 0.5);
        assert!(serde_json::from_str::<BenchConfig>(r#"{"nope": 1}"#).is_err());
    }
}
