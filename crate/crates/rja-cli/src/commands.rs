//! The six commands: encode, decode, eval, inspect, synth, bench.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rja_core::codec::{deserialize, serialize};
use rja_core::container::{
    count_adapter_payloads, decode_jpeg, encode_jpeg, extract_com, insert_com, scan_markers,
    markers,
};
use rja_core::fitter::{fit, preset, FitConfig, FitTrace, Preset};
use rja_core::image::{
    encode_png16_bytes, load_raw, normalize, save_raw, ImageFormat, NormalizationSpec,
};
use rja_core::metrics::{format_table, MetricsReport};
use rja_core::synth::{synth_raw, SynthProfile};
use rja_core::transform::{post_decode, pre_encode, ColorTransform};
use rja_core::{Image, Params};

use crate::error::CliError;

/// Environment variable capping bench parallelism.
pub const THREADS_ENV: &str = "RJA_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Identity,
    Gamma22,
    Srgb,
}

impl PresetKind {
    fn build(self) -> Result<Params, CliError> {
        let p = match self {
            PresetKind::Identity => preset(Preset::Identity)?,
            PresetKind::Gamma22 => preset(Preset::FixedGamma(2.2))?,
            PresetKind::Srgb => preset(Preset::SrgbBaseline(default_srgb_transform()?))?,
        };
        Ok(p)
    }
}

/// Generic sRGB-style transform for inputs without camera metadata: daylight
/// white-balance gains, a mild cross-talk matrix, display gamma 2.2.
fn default_srgb_transform() -> Result<ColorTransform<f64>, CliError> {
    Ok(ColorTransform::new(
        [2.0, 1.0, 1.6],
        [
            [1.66, -0.49, -0.17],
            [-0.26, 1.44, -0.18],
            [-0.03, -0.57, 1.60],
        ],
        2.2,
    )?)
}

#[derive(Debug, Clone)]
pub enum EncodeMode {
    Fit,
    Preset(PresetKind),
}

#[derive(Debug, Clone)]
pub struct EncodeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub quality: u8,
    pub mode: EncodeMode,
    pub fit: FitConfig,
    pub format: Option<ImageFormat>,
    pub black_level: Option<f64>,
    pub white_level: Option<f64>,
}

#[derive(Debug)]
pub struct EncodeSummary {
    pub file_bytes: usize,
    pub payload_bytes: usize,
    pub trace: Option<FitTrace>,
}

fn load_input(
    path: &Path,
    format: Option<ImageFormat>,
    black: Option<f64>,
    white: Option<f64>,
) -> Result<Image, CliError> {
    let fmt = format.unwrap_or_else(|| ImageFormat::from_path(path));
    let img: Image = load_raw(path, fmt)?;
    match (black, white) {
        (None, None) => Ok(img),
        (Some(b), Some(w)) => Ok(normalize(&img, NormalizationSpec::new(b, w)?)),
        _ => Err(CliError::Validation(
            "--black-level and --white-level must be given together".into(),
        )),
    }
}

pub fn cmd_encode(args: &EncodeArgs) -> Result<EncodeSummary, CliError> {
    let img = load_input(
        &args.input,
        args.format,
        args.black_level,
        args.white_level,
    )?;
    let (params, trace): (Params, Option<FitTrace>) = match &args.mode {
        EncodeMode::Fit => {
            let outcome = fit(&img, &args.fit)?;
            (outcome.params, Some(outcome.trace))
        }
        EncodeMode::Preset(kind) => {
            // Decode-what-you-encode holds for presets too: run the
            // parameters through the payload round trip before applying.
            let payload = serialize(&kind.build()?)?;
            (deserialize(&payload)?.0, None)
        }
    };
    let payload = serialize(&params)?;
    let pre = pre_encode(&img, &params);
    let jpeg = encode_jpeg(&pre, args.quality)?;
    let file = insert_com(&jpeg, &payload)?;
    fs::write(&args.output, &file)?;
    Ok(EncodeSummary {
        file_bytes: file.len(),
        payload_bytes: payload.byte_len(),
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct DecodeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub format: Option<ImageFormat>,
}

#[derive(Debug)]
pub struct DecodeSummary {
    pub had_adapter: bool,
    /// Seconds spent in JPEG decoding.
    pub jpeg_seconds: f64,
    /// Seconds spent inverting the adapter (payload parse included).
    pub adapter_seconds: f64,
}

/// Reconstruct the raw image from a stored JPEG. Files without an adapter
/// payload decode as plain JPEG (a warning goes to the caller via the
/// summary; the binary prints it on stderr). A present-but-corrupt payload
/// is an error, never silently wrong colors.
pub fn decode_to_image(bytes: &[u8]) -> Result<(Image, DecodeSummary), CliError> {
    let payload = extract_com(bytes)?;
    let t0 = Instant::now();
    let decoded: Image = decode_jpeg(bytes)?;
    let jpeg_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (img, had_adapter) = match payload {
        Some(p) => {
            let (params, _) = deserialize(&p)?;
            (post_decode(&decoded, &params), true)
        }
        None => (decoded, false),
    };
    Ok((
        img,
        DecodeSummary {
            had_adapter,
            jpeg_seconds,
            adapter_seconds: t1.elapsed().as_secs_f64(),
        },
    ))
}

pub fn cmd_decode(args: &DecodeArgs) -> Result<DecodeSummary, CliError> {
    let bytes = fs::read(&args.input)?;
    let (img, summary) = decode_to_image(&bytes)?;
    let fmt = args
        .format
        .unwrap_or_else(|| ImageFormat::from_path(&args.output));
    save_raw(&img, &args.output, fmt)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub original: PathBuf,
    pub jpeg: PathBuf,
    pub format: Option<ImageFormat>,
    pub csv: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport, CliError> {
    let original = load_input(&args.original, args.format, None, None)?;
    let bytes = fs::read(&args.jpeg)?;
    let (recon, _) = decode_to_image(&bytes)?;
    let reference_bytes = encode_png16_bytes(&original)?.len();
    let report = MetricsReport::compute(&original, &recon, bytes.len(), reference_bytes)?;
    if let Some(csv_path) = &args.csv {
        append_csv_row(
            csv_path,
            &format!("file,{}", MetricsReport::CSV_HEADER),
            &format!("{},{}", args.jpeg.display(), report.csv_row()),
        )?;
    }
    Ok(report)
}

fn append_csv_row(path: &Path, header: &str, row: &str) -> Result<(), CliError> {
    let need_header = !path.exists() || fs::metadata(path)?.len() == 0;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if need_header {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{row}")?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct InspectArgs {
    pub input: PathBuf,
}

#[derive(Debug)]
pub struct InspectReport {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

fn marker_name(code: u8) -> String {
    match code {
        markers::SOI => "SOI".into(),
        markers::SOS => "SOS".into(),
        markers::COM => "COM".into(),
        0xC0 => "SOF0".into(),
        0xC2 => "SOF2".into(),
        0xC4 => "DHT".into(),
        0xDB => "DQT".into(),
        0xDD => "DRI".into(),
        c if (0xE0..=0xEF).contains(&c) => format!("APP{}", c - 0xE0),
        c => format!("0x{c:02X}"),
    }
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<InspectReport, CliError> {
    let bytes = fs::read(&args.input)?;
    let segments = scan_markers(&bytes)?;
    let mut lines = Vec::new();
    for seg in &segments {
        lines.push(format!(
            "{:>8}  {:<5} length {}",
            seg.offset,
            marker_name(seg.marker),
            seg.length
        ));
    }
    let mut warnings = Vec::new();
    let adapters = count_adapter_payloads(&bytes)?;
    if adapters > 1 {
        warnings.push(format!(
            "{adapters} adapter payloads present; the first one wins on decode"
        ));
    }
    match extract_com(&bytes)? {
        Some(payload) => {
            let (params, info) = deserialize(&payload)?;
            lines.push(format!(
                "RJA1 v{}, dct={}, color={}, payload {} bytes (body {} bytes, deflate {} bytes)",
                info.version,
                if info.has_dct { "yes" } else { "no" },
                if info.has_color { "yes" } else { "no" },
                payload.byte_len(),
                info.body_bytes,
                info.compressed_bytes,
            ));
            let _ = params;
        }
        None => lines.push("no adapter payload".into()),
    }
    Ok(InspectReport { lines, warnings })
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub noise: Option<f64>,
    pub output: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut profile = SynthProfile::default();
    if let Some(n) = args.noise {
        profile.noise_sigma = n;
    }
    let mut written = Vec::new();
    if args.count <= 1 {
        let img: Image = synth_raw(args.seed, args.width, args.height, profile);
        let fmt = ImageFormat::from_path(&args.output);
        save_raw(&img, &args.output, fmt)?;
        written.push(args.output.clone());
    } else {
        fs::create_dir_all(&args.output)?;
        for i in 0..args.count {
            let img: Image = synth_raw(args.seed + i as u64, args.width, args.height, profile);
            let path = args.output.join(format!("synth_{:04}.png", i));
            save_raw(&img, &path, ImageFormat::Png16)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub enum CorpusSpec {
    /// Load every PNG/PFM in a directory.
    Dir(PathBuf),
    /// Generate a seed-fixed synthetic corpus.
    Synth { count: usize, size: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub corpus: CorpusSpec,
    pub qualities: Vec<u8>,
    pub fit: FitConfig,
    pub csv: Option<PathBuf>,
}

/// Mean metrics for one method at one quality.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: &'static str,
    pub quality: u8,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: Option<f64>,
    pub bpp: f64,
    pub wbpp: f64,
    pub cr: f64,
}

const BENCH_METHODS: [&str; 4] = [
    "JPEG",
    "JPEG + fixed gamma",
    "Fitted (w/o DCT)",
    "Fitted (w/ DCT)",
];

fn bench_corpus(spec: &CorpusSpec) -> Result<Vec<(String, Image)>, CliError> {
    match spec {
        CorpusSpec::Dir(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("png") | Some("PNG") | Some("pfm") | Some("PFM")
                    )
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::Validation(format!(
                    "no PNG/PFM images found in {}",
                    dir.display()
                )));
            }
            paths
                .into_iter()
                .map(|p| {
                    let img = load_raw(&p, ImageFormat::from_path(&p))?;
                    Ok((p.display().to_string(), img))
                })
                .collect()
        }
        CorpusSpec::Synth { count, size, seed } => {
            if *count == 0 {
                return Err(CliError::Validation("synthetic corpus is empty".into()));
            }
            Ok((0..*count)
                .map(|i| {
                    (
                        format!("synth:{}", seed + i as u64),
                        synth_raw(seed + i as u64, *size, *size, SynthProfile::default()),
                    )
                })
                .collect())
        }
    }
}

/// Encode with the given parameters, embed the payload, and score the
/// reconstruction against the original.
fn bench_one(
    img: &Image,
    params: Option<&Params>,
    quality: u8,
    reference_bytes: usize,
) -> Result<MetricsReport, CliError> {
    let file = match params {
        Some(p) => {
            let payload = serialize(p)?;
            let pre = pre_encode(img, p);
            insert_com(&encode_jpeg(&pre, quality)?, &payload)?
        }
        None => encode_jpeg(img, quality)?,
    };
    let decoded: Image = decode_jpeg(&file)?;
    let recon = match params {
        Some(p) => post_decode(&decoded, p),
        None => decoded,
    };
    Ok(MetricsReport::compute(
        img,
        &recon,
        file.len(),
        reference_bytes,
    )?)
}

fn quantized(params: Params) -> Result<Params, CliError> {
    Ok(rja_core::codec::quantize(&params)?)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>, CliError> {
    if args.qualities.is_empty() {
        return Err(CliError::Validation("no qualities requested".into()));
    }
    let corpus = bench_corpus(&args.corpus)?;
    let pool = build_pool()?;

    let mut rows = Vec::new();
    let mut csv_lines: Vec<String> = Vec::new();
    for &q in &args.qualities {
        // method index -> per-image reports, corpus order preserved
        let per_image: Vec<Result<[MetricsReport; 4], CliError>> = pool.install(|| {
            use rayon::prelude::*;
            corpus
                .par_iter()
                .map(|(_, img)| {
                    let reference_bytes = encode_png16_bytes(img)?.len();
                    let jpeg = bench_one(img, None, q, reference_bytes)?;
                    let fixed = quantized(preset(Preset::FixedGamma(2.2))?)?;
                    let fixed_report = bench_one(img, Some(&fixed), q, reference_bytes)?;
                    let mut cfg = args.fit.clone();
                    cfg.quality = q;
                    cfg.use_dct = false;
                    let nodct = fit(img, &cfg)?.params;
                    let nodct_report = bench_one(img, Some(&nodct), q, reference_bytes)?;
                    cfg.use_dct = true;
                    let dct = fit(img, &cfg)?.params;
                    let dct_report = bench_one(img, Some(&dct), q, reference_bytes)?;
                    Ok([jpeg, fixed_report, nodct_report, dct_report])
                })
                .collect()
        });
        let per_image: Vec<[MetricsReport; 4]> =
            per_image.into_iter().collect::<Result<_, _>>()?;

        for (m, method) in BENCH_METHODS.iter().enumerate() {
            let n = per_image.len() as f64;
            let mean = |f: &dyn Fn(&MetricsReport) -> f64| {
                per_image.iter().map(|r| f(&r[m])).sum::<f64>() / n
            };
            let ms = if per_image.iter().all(|r| r[m].ms_ssim.is_some()) {
                Some(per_image.iter().map(|r| r[m].ms_ssim.unwrap()).sum::<f64>() / n)
            } else {
                None
            };
            rows.push(BenchRow {
                method,
                quality: q,
                psnr: mean(&|r| r.psnr),
                ssim: mean(&|r| r.ssim),
                ms_ssim: ms,
                bpp: mean(&|r| r.bpp),
                wbpp: mean(&|r| r.wbpp),
                cr: mean(&|r| r.cr),
            });
            for ((name, _), report) in corpus.iter().zip(per_image.iter()) {
                csv_lines.push(format!(
                    "{method},{q},{name},{}",
                    report[m].csv_row()
                ));
            }
        }
    }

    if let Some(csv_path) = &args.csv {
        let mut out = format!("method,quality,image,{}\n", MetricsReport::CSV_HEADER);
        for line in &csv_lines {
            out.push_str(line);
            out.push('\n');
        }
        fs::write(csv_path, out)?;
    }
    Ok(rows)
}

fn build_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Validation(format!("{THREADS_ENV} must be an integer")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| CliError::Validation(e.to_string()))
}

/// Render bench rows per quality with the table-style headers.
pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let mut qualities: Vec<u8> = rows.iter().map(|r| r.quality).collect();
    qualities.dedup();
    for q in qualities {
        out.push_str(&format!("Quality = {q}\n"));
        let mut table = vec![vec![
            "Method".to_string(),
            "PSNR".to_string(),
            "SSIM (x100)".to_string(),
            "MS-SSIM (x100)".to_string(),
            "BPP".to_string(),
            "wBPP".to_string(),
            "CR".to_string(),
        ]];
        for row in rows.iter().filter(|r| r.quality == q) {
            table.push(vec![
                row.method.to_string(),
                format!("{:.2}", row.psnr),
                format!("{:.2}", row.ssim * 100.0),
                row.ms_ssim
                    .map(|v| format!("{:.2}", v * 100.0))
                    .unwrap_or_else(|| "-".to_string()),
                format!("{:.2}", row.bpp),
                format!("{:.3}", row.wbpp),
                format!("{:.2}", row.cr),
            ]);
        }
        out.push_str(&format_table(&table));
        out.push('\n');
    }
    out
}
