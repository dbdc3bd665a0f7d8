//! End-to-end tests of the `rja` binary.

use std::path::Path;
use std::process::{Command, Output};

fn rja(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rja"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rja(args);
    assert!(
        out.status.success(),
        "rja {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, name: &str, side: u32) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap().to_string();
    ok(&[
        "synth",
        &p,
        "--seed",
        "5",
        "--width",
        &side.to_string(),
        "--height",
        &side.to_string(),
    ]);
    p
}

#[test]
fn encode_identity_matches_plain_jpeg_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 64);
    let jpg = dir.path().join("out.jpg").to_str().unwrap().to_string();
    let rec = dir.path().join("rec.png").to_str().unwrap().to_string();
    ok(&[
        "encode", &raw, &jpg, "--quality", "95", "--preset", "identity",
    ]);
    ok(&["decode", &jpg, &rec]);

    // The identity adapter must reproduce the plain JPEG path.
    let orig: rja_core::Image =
        rja_core::load_raw(Path::new(&raw), rja_core::ImageFormat::Png16).unwrap();
    let got: rja_core::Image =
        rja_core::load_raw(Path::new(&rec), rja_core::ImageFormat::Png16).unwrap();
    let plain: rja_core::Image =
        rja_core::decode_jpeg(&rja_core::encode_jpeg(&orig, 95).unwrap()).unwrap();
    // Both paths decode the same entropy stream; differences only come from
    // the png16 write lattice.
    assert!(got.max_abs_diff(&plain) <= 1.0 / 65535.0 + 1e-9);
}

#[test]
fn decode_without_payload_warns_and_passes_through() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 48);
    let orig: rja_core::Image =
        rja_core::load_raw(Path::new(&raw), rja_core::ImageFormat::Png16).unwrap();
    let jpg = dir.path().join("plain.jpg");
    std::fs::write(&jpg, rja_core::encode_jpeg(&orig, 80).unwrap()).unwrap();
    let rec = dir.path().join("rec.png").to_str().unwrap().to_string();
    let out = ok(&["decode", jpg.to_str().unwrap(), &rec]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no adapter payload"), "stderr: {stderr}");
}

#[test]
fn corrupt_payload_is_an_error_not_wrong_colors() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 48);
    let jpg = dir.path().join("out.jpg").to_str().unwrap().to_string();
    ok(&[
        "encode", &raw, &jpg, "--quality", "80", "--preset", "gamma2.2",
    ]);
    // Corrupt one byte inside the Base64 payload body.
    let mut bytes = std::fs::read(&jpg).unwrap();
    let needle = b"RJA:";
    let at = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .unwrap();
    bytes[at + 40] = b'*';
    std::fs::write(&jpg, &bytes).unwrap();
    let rec = dir.path().join("rec.png").to_str().unwrap().to_string();
    let out = rja(&["decode", &jpg, &rec]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(rja_cli::EXIT_PARSE));
    assert!(!Path::new(&rec).exists());
}

#[test]
fn eval_writes_documented_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 64);
    let jpg = dir.path().join("out.jpg").to_str().unwrap().to_string();
    ok(&[
        "encode", &raw, &jpg, "--quality", "85", "--preset", "identity",
    ]);
    let csv = dir.path().join("m.csv").to_str().unwrap().to_string();
    ok(&["eval", &raw, &jpg, "--csv", &csv]);
    ok(&["eval", &raw, &jpg, "--csv", &csv]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "file,psnr,ssim,ms_ssim,bpp,wbpp,cr,unique_triples,file_bytes"
    );
    // Appending twice yields exactly two data rows under one header.
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn eval_identity_file_matches_plain_jpeg_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 64);
    let jpg = dir.path().join("out.jpg").to_str().unwrap().to_string();
    ok(&[
        "encode", &raw, &jpg, "--quality", "75", "--preset", "identity",
    ]);
    let out = ok(&["eval", &raw, &jpg]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let psnr_line = stdout.lines().find(|l| l.starts_with("psnr_db")).unwrap();
    let psnr: f64 = psnr_line.split_whitespace().nth(1).unwrap().parse().unwrap();

    let orig: rja_core::Image =
        rja_core::load_raw(Path::new(&raw), rja_core::ImageFormat::Png16).unwrap();
    let plain: rja_core::Image =
        rja_core::decode_jpeg(&rja_core::encode_jpeg(&orig, 75).unwrap()).unwrap();
    let expect = rja_core::metrics::psnr(&orig, &plain).unwrap();
    assert!((psnr - expect).abs() < 0.05, "{psnr} vs {expect}");
}

#[test]
fn inspect_reports_payload_and_plain_files() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 48);
    let jpg = dir.path().join("out.jpg").to_str().unwrap().to_string();
    ok(&[
        "encode", &raw, &jpg, "--quality", "80", "--preset", "gamma2.2",
    ]);
    let out = ok(&["inspect", &jpg]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("RJA1 v1"), "{stdout}");
    assert!(stdout.contains("dct=no"), "{stdout}");
    assert!(stdout.contains("SOS"), "{stdout}");

    let orig: rja_core::Image =
        rja_core::load_raw(Path::new(&raw), rja_core::ImageFormat::Png16).unwrap();
    let plain_path = dir.path().join("plain.jpg");
    std::fs::write(&plain_path, rja_core::encode_jpeg(&orig, 80).unwrap()).unwrap();
    let out = ok(&["inspect", plain_path.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("no adapter payload"));
}

#[test]
fn exit_codes_are_documented_values() {
    // I/O: missing input file.
    let out = rja(&["inspect", "/nonexistent/file.jpg"]);
    assert_eq!(out.status.code(), Some(rja_cli::EXIT_IO));
    // Validation: quality out of range.
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 32);
    let jpg = dir.path().join("o.jpg").to_str().unwrap().to_string();
    let out = rja(&["encode", &raw, &jpg, "--quality", "0", "--preset", "identity"]);
    assert_eq!(out.status.code(), Some(rja_cli::EXIT_VALIDATION));
    // Parse: not a JPEG.
    let bogus = dir.path().join("bogus.jpg");
    std::fs::write(&bogus, b"not a jpeg").unwrap();
    let out = rja(&["inspect", bogus.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(rja_cli::EXIT_PARSE));
    // Usage conflicts are clap's domain.
    let out = rja(&["encode", &raw, &jpg, "--fit", "--preset", "identity"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fitted_encode_decode_beats_plain_jpeg() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.png", 128);
    let jpg = dir.path().join("out.jpg").to_str().unwrap().to_string();
    let rec = dir.path().join("rec.pfm").to_str().unwrap().to_string();
    ok(&[
        "encode",
        &raw,
        &jpg,
        "--quality",
        "50",
        "--fit",
        "--iterations",
        "60",
        "--thumbnail",
        "64",
    ]);
    ok(&["decode", &jpg, &rec]);

    let orig: rja_core::Image =
        rja_core::load_raw(Path::new(&raw), rja_core::ImageFormat::Png16).unwrap();
    let got: rja_core::Image =
        rja_core::load_raw(Path::new(&rec), rja_core::ImageFormat::Pfm).unwrap();
    let plain: rja_core::Image =
        rja_core::decode_jpeg(&rja_core::encode_jpeg(&orig, 50).unwrap()).unwrap();
    let p_fit = rja_core::metrics::psnr(&orig, &got).unwrap();
    let p_plain = rja_core::metrics::psnr(&orig, &plain).unwrap();
    assert!(p_fit > p_plain, "fitted {p_fit} <= plain {p_plain}");
}

#[test]
fn synth_corpus_and_bench_table() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&[
        "synth",
        corpus.to_str().unwrap(),
        "--count",
        "2",
        "--width",
        "64",
        "--height",
        "64",
        "--seed",
        "3",
    ]);
    assert!(corpus.join("synth_0000.png").exists());
    assert!(corpus.join("synth_0001.png").exists());

    let csv = dir.path().join("bench.csv").to_str().unwrap().to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_rja"))
        .env("RJA_THREADS", "1")
        .args([
            "bench",
            "--corpus",
            corpus.to_str().unwrap(),
            "--qualities",
            "50",
            "--iterations",
            "4",
            "--csv",
            &csv,
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Quality = 50"));
    assert!(stdout.contains("Method"));
    assert!(stdout.contains("JPEG + fixed gamma"));
    assert!(stdout.contains("Fitted (w/ DCT)"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text
        .starts_with("method,quality,image,psnr,ssim,ms_ssim,bpp,wbpp,cr,unique_triples,file_bytes"));
}
