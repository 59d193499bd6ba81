//! End-to-end checks of the `mlcw` binary: file round trips, golden buffer
//! bytes, CSV schemas, manifest handling and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn mlcw(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlcw"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The worked-example weights as f16le bytes.
fn example_f16le() -> Vec<u8> {
    [0x1C53u16, 0x2547, 0x1015]
        .iter()
        .flat_map(|w| w.to_le_bytes())
        .collect()
}

fn write_input(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn encode_produces_the_golden_buffer_bytes() {
    let tmp = TempDir::new().unwrap();
    write_input(tmp.path(), "w.f16le", &example_f16le());
    let out = mlcw(
        &["encode", "w.f16le", "--granularity", "1", "-o", "w.mlcw"],
        tmp.path(),
    );
    assert_ok(&out);
    let bytes = fs::read(tmp.path().join("w.mlcw")).unwrap();
    assert_eq!(
        bytes,
        [
            0x4D, 0x4C, 0x43, 0x57, 0x01, 0x01, 0x03, 0x00, 0x00, 0x00, // header
            0x00, 0x01, 0x02, // metadata: nochange, rotate, round
            0x53, 0x1C, 0xA3, 0x32, 0x13, 0x10, // stored words
        ]
    );
}

#[test]
fn lossless_encode_decode_round_trips_bytes() {
    let tmp = TempDir::new().unwrap();
    // 256 assorted valid weights, including negatives.
    let mut payload = Vec::new();
    for i in 0..256u16 {
        let bits = (i.wrapping_mul(509)) & !0x4000;
        payload.extend(bits.to_le_bytes());
    }
    write_input(tmp.path(), "w.f16le", &payload);
    for g in ["1", "2", "4", "8", "16"] {
        assert_ok(&mlcw(
            &[
                "encode",
                "w.f16le",
                "--granularity",
                g,
                "--schemes",
                "nochange,rotate",
                "-o",
                "w.mlcw",
            ],
            tmp.path(),
        ));
        assert_ok(&mlcw(&["decode", "w.mlcw", "-o", "back.f16le"], tmp.path()));
        assert_eq!(
            fs::read(tmp.path().join("back.f16le")).unwrap(),
            payload,
            "granularity {g}"
        );
    }
}

#[test]
fn f32le_ingestion_matches_f16le() {
    let tmp = TempDir::new().unwrap();
    let f32_payload: Vec<u8> = [0.004222f32, 0.020614, 0.0004982]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    write_input(tmp.path(), "w.f32le", &f32_payload);
    assert_ok(&mlcw(
        &["encode", "w.f32le", "--format", "f32le", "-o", "a.mlcw"],
        tmp.path(),
    ));
    write_input(tmp.path(), "w.f16le", &example_f16le());
    assert_ok(&mlcw(&["encode", "w.f16le", "-o", "b.mlcw"], tmp.path()));
    assert_eq!(
        fs::read(tmp.path().join("a.mlcw")).unwrap(),
        fs::read(tmp.path().join("b.mlcw")).unwrap()
    );
}

#[test]
fn manifest_sidecar_is_honored() {
    let tmp = TempDir::new().unwrap();
    write_input(tmp.path(), "w.f16le", &example_f16le());

    // Valid manifest with an unknown key.
    fs::write(
        tmp.path().join("w.f16le.manifest"),
        "name: conv1\ncount: 3\nshape: 3,1\nfuture_key: whatever\n",
    )
    .unwrap();
    assert_ok(&mlcw(&["encode", "w.f16le", "-o", "w.mlcw"], tmp.path()));

    // Count mismatch is a parse error (exit 3).
    fs::write(tmp.path().join("w.f16le.manifest"), "count: 7\n").unwrap();
    let out = mlcw(&["encode", "w.f16le", "-o", "w.mlcw"], tmp.path());
    assert_eq!(out.status.code(), Some(3));

    // Shape product mismatch too.
    fs::write(tmp.path().join("w.f16le.manifest"), "shape: 2,2\n").unwrap();
    let out = mlcw(&["encode", "w.f16le", "-o", "w.mlcw"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let tmp = TempDir::new().unwrap();

    // Usage error: clap rejects a bad granularity.
    write_input(tmp.path(), "w.f16le", &example_f16le());
    let out = mlcw(
        &["encode", "w.f16le", "--granularity", "3", "-o", "x"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    // Parse error: not an MLCW buffer.
    write_input(tmp.path(), "junk.mlcw", b"not a buffer");
    let out = mlcw(&["decode", "junk.mlcw", "-o", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(3));

    // Parse error: missing input file.
    let out = mlcw(&["decode", "missing.mlcw", "-o", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(3));

    // Parse error: odd byte count for f16le.
    write_input(tmp.path(), "odd.f16le", &[1, 2, 3]);
    let out = mlcw(&["encode", "odd.f16le", "-o", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(3));

    // Domain error: 2.0 is outside the weight range.
    write_input(tmp.path(), "big.f16le", &0x4000u16.to_le_bytes());
    let out = mlcw(&["encode", "big.f16le", "-o", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(4));

    // Domain error: scheme set without nochange.
    write_input(tmp.path(), "w2.f16le", &example_f16le());
    let out = mlcw(
        &["encode", "w2.f16le", "--schemes", "rotate", "-o", "x"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn inject_at_zero_probability_keeps_bytes() {
    let tmp = TempDir::new().unwrap();
    write_input(tmp.path(), "w.f16le", &example_f16le());
    assert_ok(&mlcw(&["encode", "w.f16le", "-o", "w.mlcw"], tmp.path()));
    assert_ok(&mlcw(
        &[
            "inject", "w.mlcw", "--p", "0", "--seed", "9", "-o", "f.mlcw",
        ],
        tmp.path(),
    ));
    assert_eq!(
        fs::read(tmp.path().join("w.mlcw")).unwrap(),
        fs::read(tmp.path().join("f.mlcw")).unwrap()
    );
}

#[test]
fn unprotected_encode_embeds_raw_words() {
    let tmp = TempDir::new().unwrap();
    write_input(tmp.path(), "w.f16le", &example_f16le());
    assert_ok(&mlcw(
        &["encode", "w.f16le", "--schemes", "none", "-o", "w.mlcw"],
        tmp.path(),
    ));
    let bytes = fs::read(tmp.path().join("w.mlcw")).unwrap();
    assert_eq!(&bytes[10..13], &[0xFF, 0xFF, 0xFF]);
    assert_eq!(&bytes[13..], example_f16le().as_slice());
}

#[test]
fn csv_commands_emit_documented_headers() {
    let tmp = TempDir::new().unwrap();
    write_input(tmp.path(), "w.f16le", &example_f16le());

    let out = mlcw(&["stats", "w.f16le", "--granularities", "1,4"], tmp.path());
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("system,p00,p01,p10,p11\n"));
    assert_eq!(text.lines().count(), 4); // header + baseline + two systems

    let out = mlcw(&["energy", "w.f16le"], tmp.path());
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(
        "system,read_nj,write_nj,read_cycles,write_cycles,delta_read_pct,delta_write_pct\n"
    ));

    let out = mlcw(&["sse", "--n", "500", "--seed", "3"], tmp.path());
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("position,mean_sse,overflow_count\n"));
    assert_eq!(text.lines().count(), 17);

    let out = mlcw(
        &["accuracy", "--trials", "2", "--seed", "1", "--p", "0.02"],
        tmp.path(),
    );
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("system,granularity,p,mean_accuracy,stddev,trials\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn energy_respects_a_cost_override_file() {
    let tmp = TempDir::new().unwrap();
    write_input(tmp.path(), "w.f16le", &example_f16le());
    fs::write(
        tmp.path().join("costs.txt"),
        "write_energy_intermediate = 3.737\n",
    )
    .unwrap();
    let default_run = mlcw(&["energy", "w.f16le", "--granularities", "1"], tmp.path());
    let override_run = mlcw(
        &[
            "energy",
            "w.f16le",
            "--granularities",
            "1",
            "--costs",
            "costs.txt",
        ],
        tmp.path(),
    );
    assert_ok(&default_run);
    assert_ok(&override_run);
    assert_ne!(default_run.stdout, override_run.stdout);

    fs::write(tmp.path().join("bad.txt"), "write_speed = 3\n").unwrap();
    let out = mlcw(&["energy", "w.f16le", "--costs", "bad.txt"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_succeeds() {
    let tmp = TempDir::new().unwrap();
    let out = mlcw(&["verify"], tmp.path());
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("verify: all checks passed"));
}
