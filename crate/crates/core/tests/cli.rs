use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sddql::cli::SweepRow;
use sddql::{
    apply_speckle, generate_phantom, save_image, Image, ImageFormat, PhantomKind, PhantomSpec,
    SpeckleSpec,
};
use serde_json::Value;

fn sddql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sddql"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn speckled_pgm(dir: &Path, size: usize) -> PathBuf {
    let clean = generate_phantom(&PhantomSpec::new(PhantomKind::Shapes, size, 3)).unwrap();
    let g = apply_speckle(
        &clean,
        &SpeckleSpec {
            looks: 4.0,
            seed: 4,
        },
    )
    .unwrap();
    let path = dir.join("g.pgm");
    save_image(&g, &path, ImageFormat::Pgm8).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn despeckle_with_defaults_writes_image_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = speckled_pgm(dir.path(), 32);
    let output = dir.path().join("f.pgm");
    ok(&sddql(&[
        "despeckle",
        "--input",
        s(&input),
        "--output",
        s(&output),
    ]));
    assert!(output.exists());
    let report = read_json(&dir.path().join("f.pgm.json"));
    assert_eq!(report["params"]["lambda"], 100.0);
    assert_eq!(report["params"]["epsilon"], 1e-2);
    assert_eq!(report["params"]["alpha"], 0.5);
    assert_eq!(report["params"]["n_max"], 5);
    assert_eq!(report["report"]["iterations"].as_array().unwrap().len(), 5);
    assert_eq!(report["manifest"]["command"], "despeckle");
}

#[test]
fn alpha_one_skips_pcg() {
    let dir = tempfile::tempdir().unwrap();
    let input = speckled_pgm(dir.path(), 24);
    let output = dir.path().join("f.raw");
    let report = dir.path().join("r.json");
    ok(&sddql(&[
        "despeckle",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--alpha",
        "1.0",
        "--report",
        s(&report),
    ]));
    assert_eq!(read_json(&report)["report"]["total_pcg_iterations"], 0);
}

#[test]
fn method_sdd_is_alpha_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = speckled_pgm(dir.path(), 24);
    let run = |extra: &[&str], name: &str| {
        let output = dir.path().join(name);
        let mut args = vec!["despeckle", "--input", s(&input), "--output", s(&output)];
        args.extend_from_slice(extra);
        ok(&sddql(&args));
        std::fs::read(&output).unwrap()
    };
    assert_eq!(
        run(&["--method", "sdd"], "a.raw"),
        run(&["--alpha", "0"], "b.raw")
    );
    let out = sddql(&[
        "despeckle",
        "--input",
        s(&input),
        "--output",
        s(&dir.path().join("c.raw")),
        "--method",
        "sdd",
        "--alpha",
        "0.5",
    ]);
    assert!(!out.status.success());
}

#[test]
fn missing_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = sddql(&[
        "despeckle",
        "--input",
        s(&dir.path().join("nope.pgm")),
        "--output",
        s(&dir.path().join("f.pgm")),
    ]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        ok(&sddql(&[
            "simulate",
            "--phantom",
            "shapes",
            "--size",
            "64",
            "--looks",
            "1",
            "--seed",
            "42",
            "--output",
            s(&out_dir),
        ]));
        let clean = std::fs::read(out_dir.join("clean.raw")).unwrap();
        let speckled = std::fs::read(out_dir.join("speckled.raw")).unwrap();
        assert_eq!(clean.len(), 64 * 64 * 4);
        assert!(out_dir.join("manifest.json").exists());
        (clean, speckled)
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn simulate_rejects_zero_looks() {
    let dir = tempfile::tempdir().unwrap();
    let out = sddql(&["simulate", "--looks", "0", "--output", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_raw(dir: &Path, name: &str, img: &Image) -> PathBuf {
    let p = dir.join(name);
    save_image(img, &p, ImageFormat::Raw32).unwrap();
    p
}

fn evaluate(clean: &Path, input: &Path, w: usize, h: usize) -> Output {
    sddql(&[
        "evaluate",
        "--clean",
        s(clean),
        "--input",
        s(input),
        "--width",
        &w.to_string(),
        "--height",
        &h.to_string(),
    ])
}

#[test]
fn evaluate_identical_and_known_pair() {
    let dir = tempfile::tempdir().unwrap();
    let clean = generate_phantom(&PhantomSpec::new(PhantomKind::Checker, 16, 1)).unwrap();
    let c = write_raw(dir.path(), "c.raw", &clean);
    let out = evaluate(&c, &c, 16, 16);
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["snr_db"], "inf");
    assert_eq!(v["ssim"], 1.0);

    let c = write_raw(
        dir.path(),
        "c2.raw",
        &Image::new(2, 1, vec![10.0, 10.0]).unwrap(),
    );
    let e = write_raw(
        dir.path(),
        "e2.raw",
        &Image::new(2, 1, vec![11.0, 9.0]).unwrap(),
    );
    let out = evaluate(&c, &e, 2, 1);
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["snr_db"].as_f64().unwrap() - 20.0).abs() < 1e-9);
    assert!(v["ssim"].is_null());
}

#[test]
fn evaluate_rejects_mismatched_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    save_image(&Image::filled(4, 4, 1.0).unwrap(), &a, ImageFormat::Pgm8).unwrap();
    save_image(&Image::filled(5, 4, 1.0).unwrap(), &b, ImageFormat::Pgm8).unwrap();
    let out = sddql(&["evaluate", "--clean", s(&a), "--input", s(&b)]);
    assert!(!out.status.success());
}

#[test]
fn sweep_writes_both_methods_and_best_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    ok(&sddql(&[
        "simulate",
        "--size",
        "24",
        "--seed",
        "5",
        "--output",
        s(&out_dir),
    ]));
    let csv_path = dir.path().join("sweep.csv");
    let out = sddql(&[
        "sweep",
        "--clean",
        s(&out_dir.join("clean.raw")),
        "--input",
        s(&out_dir.join("speckled.raw")),
        "--width",
        "24",
        "--height",
        "24",
        "--lambda-grid",
        "10:400:20",
        "--output",
        s(&csv_path),
        "--best",
    ]);
    ok(&out);
    let rows: Vec<SweepRow> = csv::Reader::from_path(&csv_path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows[..20].iter().all(|r| r.method == "sdd"));
    assert!(rows[20..].iter().all(|r| r.method == "sdd-ql"));
    assert_eq!(rows[0].lambda, 10.0);
    assert_eq!(rows[19].lambda, 400.0);

    // round trip through the writer gives the same text
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).unwrap();
    }
    let again = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert_eq!(again, std::fs::read_to_string(&csv_path).unwrap());

    let best = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = best.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("criterion,method,lambda"));
    let sdd_best_snr = rows[..20]
        .iter()
        .map(|r| r.snr_db)
        .fold(f64::NEG_INFINITY, f64::max);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "max-snr");
    assert_eq!(first[1], "sdd");
    assert_eq!(first[3].parse::<f64>().unwrap(), sdd_best_snr);
}

#[test]
fn sweep_rejects_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_raw(dir.path(), "x.raw", &Image::filled(12, 12, 1.0).unwrap());
    let out = sddql(&[
        "sweep",
        "--clean",
        s(&p),
        "--input",
        s(&p),
        "--width",
        "12",
        "--height",
        "12",
        "--lambda-grid",
        "10:400:0",
        "--output",
        s(&dir.path().join("o.csv")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn bench_rows_and_iteration_counts_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        ok(&sddql(&[
            "bench",
            "--size",
            "32",
            "--seed",
            "9",
            "--output",
            s(&path),
        ]));
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<(String, f64, usize)> = rdr
            .records()
            .map(|r| {
                let r = r.unwrap();
                (
                    r[0].to_string(),
                    r[1].parse().unwrap(),
                    r[3].parse().unwrap(),
                )
            })
            .collect();
        rows
    };
    let a = run("a.csv");
    assert_eq!(a.len(), 10);
    assert_eq!(a, run("b.csv"));
    assert!(dir.path().join("a.csv.manifest.json").exists());
}
