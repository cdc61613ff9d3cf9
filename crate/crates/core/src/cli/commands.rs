use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::manifest::{write_json, RunManifest, SCHEMA_VERSION};
use super::{
    infer_format, BenchArgs, DespeckleArgs, EvaluateArgs, ImageArgs, Method, SimulateArgs,
    SweepArgs,
};
use crate::despeckle::{run_despeckle, DespeckleParams, DespeckleReport};
use crate::error::{Error, Result};
use crate::image::{image_stats, load_image, save_image, Image, ImageFormat, ImageStats};
use crate::metrics::{snr_db, ssim, MetricParams};
use crate::simulate::{apply_speckle, generate_phantom, PhantomSpec, SpeckleSpec};
use crate::solver::SolverConfig;

fn load(path: &Path, image: &ImageArgs) -> Result<(Image, ImageFormat)> {
    let format = image.format_for(path)?;
    let img = load_image(path, format, image.dims())?;
    Ok((img, format))
}

fn warn_negative(path: &Path, img: &Image) {
    let neg = img.pixels().iter().filter(|&&v| v < 0.0).count();
    if neg > 0 {
        eprintln!(
            "warning: {} has {neg} negative pixels; SAR intensities should be nonnegative",
            path.display()
        );
    }
}

/// Output encoding: explicit `--format`, else the extension; a PGM output
/// keeps the depth of a PGM input.
fn output_format(
    out: &Path,
    image: &ImageArgs,
    input_format: ImageFormat,
    img: &Image,
) -> Result<ImageFormat> {
    if let Some(f) = image.format {
        return Ok(f.into());
    }
    let is_pgm = out
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        return Ok(match input_format {
            ImageFormat::Pgm8 | ImageFormat::Pgm16 => input_format,
            ImageFormat::Raw32 if image_stats(img).max > 255.0 => ImageFormat::Pgm16,
            ImageFormat::Raw32 => ImageFormat::Pgm8,
        });
    }
    infer_format(out)
}

fn json_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Order-preserving map over `items` on up to `threads` scoped workers.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[derive(Serialize)]
struct DespeckleOutput<'a> {
    schema_version: u32,
    manifest: &'a RunManifest,
    params: &'a DespeckleParams,
    input_stats: ImageStats,
    output_stats: ImageStats,
    report: &'a DespeckleReport,
}

pub(super) fn despeckle(a: &DespeckleArgs, argv: &[String]) -> Result<()> {
    let params = a.params.params()?;
    let batch = a.input.len() > 1;
    if batch && a.report.is_some() {
        return Err(Error::InvalidParameter(
            "--report applies to a single input; batch reports go next to each output".into(),
        ));
    }
    let jobs: Vec<(PathBuf, PathBuf, PathBuf)> = if batch {
        fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
        a.input
            .iter()
            .map(|inp| {
                let stem = inp.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                let ext = inp.extension().and_then(|s| s.to_str()).unwrap_or("raw");
                let out = a.output.join(format!("{stem}.despeckled.{ext}"));
                let rep = PathBuf::from(format!("{}.json", out.display()));
                (inp.clone(), out, rep)
            })
            .collect()
    } else {
        let rep = a
            .report
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.json", a.output.display())));
        vec![(a.input[0].clone(), a.output.clone(), rep)]
    };

    let results = parallel_map(&jobs, a.threads as usize, |(inp, out, rep)| -> Result<()> {
        let t0 = Instant::now();
        let (g, in_fmt) = load(inp, &a.image)?;
        warn_negative(inp, &g);
        let t_load = t0.elapsed().as_secs_f64() * 1e3;
        let (f, report) = run_despeckle(&g, &params)?;
        if !report.all_converged() {
            eprintln!(
                "note: {}: some PCG solves stopped at the iteration cap",
                inp.display()
            );
        }
        let fmt = output_format(out, &a.image, in_fmt, &f)?;
        save_image(&f, out, fmt)?;

        let mut m = RunManifest::new(
            "despeckle",
            argv,
            json!({
                "despeckle": json_value(&params),
                "method": a.params.method.name(),
                "input_format": in_fmt.name(),
                "output_format": fmt.name(),
                "width": g.width(),
                "height": g.height(),
            }),
            a.threads as usize,
        );
        m.input(inp);
        m.output(out);
        m.output(rep);
        m.timings_ms.insert("load".into(), t_load);
        m.timings_ms
            .insert("despeckle".into(), report.total_wall_time_ms);
        m.timings_ms
            .insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
        write_json(
            rep,
            &DespeckleOutput {
                schema_version: SCHEMA_VERSION,
                manifest: &m,
                params: &params,
                input_stats: image_stats(&g),
                output_stats: image_stats(&f),
                report: &report,
            },
        )
    });
    results.into_iter().collect()
}

pub(super) fn simulate(a: &SimulateArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let mut spec = PhantomSpec::new(a.phantom.into(), a.size, a.seed);
    if let Some(levels) = &a.levels {
        spec.levels = levels.clone();
    }
    let speckle = SpeckleSpec {
        looks: a.looks,
        seed: a.seed.wrapping_add(1),
    };
    let clean = generate_phantom(&spec)?;
    let speckled = apply_speckle(&clean, &speckle)?;

    fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    let format: ImageFormat = a.format.into();
    let ext = match format {
        ImageFormat::Raw32 => "raw",
        _ => "pgm",
    };
    let clean_path = a.output.join(format!("clean.{ext}"));
    let speckled_path = a.output.join(format!("speckled.{ext}"));
    save_image(&clean, &clean_path, format)?;
    save_image(&speckled, &speckled_path, format)?;

    let metrics = MetricParams::default();
    let mut m = RunManifest::new(
        "simulate",
        argv,
        json!({
            "phantom": json_value(&spec),
            "speckle": json_value(&speckle),
            "format": format.name(),
            "width": clean.width(),
            "height": clean.height(),
            "speckled_snr_db": snr_db(&clean, &speckled)?,
            "speckled_ssim": ssim(&clean, &speckled, &metrics).ok(),
        }),
        1,
    );
    m.seed = Some(a.seed);
    let manifest_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.output.join("manifest.json"));
    m.output(&clean_path);
    m.output(&speckled_path);
    m.output(&manifest_path);
    m.timings_ms
        .insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
    write_json(&manifest_path, &m)
}

fn serialize_db<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Serialize)]
struct EvaluateOutput {
    #[serde(serialize_with = "serialize_db")]
    snr_db: f64,
    /// `null` when the image is smaller than the SSIM window.
    ssim: Option<f64>,
    manifest: RunManifest,
}

pub(super) fn evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let (clean, _) = load(&a.clean, &a.image)?;
    let (est, _) = load(&a.input, &a.image)?;
    if !clean.same_shape(&est) {
        return Err(Error::DimensionMismatch(format!(
            "clean is {}x{}, input is {}x{}",
            clean.width(),
            clean.height(),
            est.width(),
            est.height()
        )));
    }
    let metrics = MetricParams {
        dynamic_range: a.dynamic_range,
        ..MetricParams::default()
    };
    let mut m = RunManifest::new("evaluate", argv, json_value(&metrics), 1);
    m.input(&a.clean);
    m.input(&a.input);
    let win = metrics.ssim_window;
    let ssim = if clean.width() < win || clean.height() < win {
        eprintln!("warning: image smaller than the {win}x{win} SSIM window, ssim omitted");
        None
    } else {
        Some(ssim(&clean, &est, &metrics)?)
    };
    let out = EvaluateOutput {
        snr_db: snr_db(&clean, &est)?,
        ssim,
        manifest: m,
    };
    let text = serde_json::to_string(&out).map_err(|e| Error::Format(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Inclusive linear grid from `lo:hi:count`.
pub fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidParameter(format!("lambda grid must be lo:hi:count, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 {
        return Err(Error::InvalidParameter("lambda grid is empty".into()));
    }
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda grid needs 0 < lo <= hi, got {lo}:{hi}"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

pub fn parse_epsilon_grid(spec: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::InvalidParameter(format!("bad epsilon {s:?}")))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("epsilon grid is empty".into()));
    }
    Ok(grid)
}

/// One row of the `sweep` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub lambda: f64,
    pub snr_db: f64,
    pub ssim: f64,
    pub total_pcg_iters: usize,
    pub wall_ms: f64,
}

#[derive(Serialize)]
struct BestRow<'a> {
    criterion: &'static str,
    method: &'a str,
    lambda: f64,
    snr_db: f64,
    ssim: f64,
    total_pcg_iters: usize,
    wall_ms: f64,
}

impl<'a> BestRow<'a> {
    fn new(criterion: &'static str, r: &'a SweepRow) -> Self {
        Self {
            criterion,
            method: &r.method,
            lambda: r.lambda,
            snr_db: r.snr_db,
            ssim: r.ssim,
            total_pcg_iters: r.total_pcg_iters,
            wall_ms: r.wall_ms,
        }
    }
}

fn solver_cfg(tol: f64, max_iters: usize) -> SolverConfig {
    SolverConfig {
        tol,
        max_iters,
        ..SolverConfig::default()
    }
}

pub(super) fn sweep(a: &SweepArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let grid = parse_lambda_grid(&a.lambda_grid)?;
    let (clean, _) = load(&a.clean, &a.image)?;
    let (g, _) = load(&a.input, &a.image)?;
    clean.check_shape(&g)?;
    warn_negative(&a.input, &g);
    let metrics = MetricParams::default();

    let base = DespeckleParams {
        lambda: 1.0,
        epsilon: a.epsilon,
        alpha: a.alpha,
        n_max: a.iters,
        solver: solver_cfg(a.pcg_tol, a.pcg_max_iters),
    };
    base.validate()?;
    let jobs: Vec<(Method, f64)> = [Method::Sdd, Method::SddQl]
        .into_iter()
        .flat_map(|m| grid.iter().map(move |&l| (m, l)))
        .collect();

    let rows = parallel_map(
        &jobs,
        a.threads as usize,
        |&(method, lambda)| -> Result<SweepRow> {
            let params = DespeckleParams {
                lambda,
                alpha: if method == Method::Sdd { 0.0 } else { a.alpha },
                ..base
            };
            let (f, report) = run_despeckle(&g, &params)?;
            Ok(SweepRow {
                method: method.name().into(),
                lambda,
                snr_db: snr_db(&clean, &f)?,
                ssim: ssim(&clean, &f, &metrics)?,
                total_pcg_iters: report.total_pcg_iterations,
                wall_ms: report.total_wall_time_ms,
            })
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    write_csv(&a.output, &rows)?;

    if a.best {
        let mut w = csv::Writer::from_writer(std::io::stdout());
        for method in [Method::Sdd, Method::SddQl] {
            let of_method = || rows.iter().filter(|r| r.method == method.name());
            let by_snr = of_method().max_by(|x, y| x.snr_db.total_cmp(&y.snr_db));
            let by_ssim = of_method().max_by(|x, y| x.ssim.total_cmp(&y.ssim));
            for (criterion, row) in [("max-snr", by_snr), ("max-ssim", by_ssim)] {
                if let Some(row) = row {
                    w.serialize(BestRow::new(criterion, row))
                        .map_err(|e| Error::Format(e.to_string()))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<stdout>", e))?;
    }

    let mut m = RunManifest::new(
        "sweep",
        argv,
        json!({
            "lambda_grid": grid,
            "base": json_value(&base),
            "metrics": json_value(&metrics),
            "input_snr_db": snr_db(&clean, &g)?,
            "input_ssim": ssim(&clean, &g, &metrics)?,
            "columns": ["method", "lambda", "snr_db", "ssim", "total_pcg_iters", "wall_ms"],
        }),
        a.threads as usize,
    );
    m.input(&a.clean);
    m.input(&a.input);
    m.output(&a.output);
    let manifest_path = a
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.manifest.json", a.output.display())));
    m.output(&manifest_path);
    m.timings_ms
        .insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
    write_json(&manifest_path, &m)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// One row of the `bench` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub epsilon: f64,
    pub wall_ms: f64,
    pub total_pcg_iters: usize,
    pub mean_pcg_iters_per_outer: f64,
}

pub(super) fn bench(a: &BenchArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let grid = parse_epsilon_grid(&a.epsilon_grid)?;
    if a.repeats == 0 {
        return Err(Error::InvalidParameter(
            "--repeats must be at least 1".into(),
        ));
    }
    let mut inputs = Vec::new();
    let (g, source) = match &a.input {
        Some(p) => {
            let (g, _) = load(p, &a.image)?;
            warn_negative(p, &g);
            inputs.push(p.clone());
            (g, json!({ "input": p.display().to_string() }))
        }
        None => {
            let spec = PhantomSpec::new(a.phantom.into(), a.size, a.seed);
            let speckle = SpeckleSpec {
                looks: a.looks,
                seed: a.seed.wrapping_add(1),
            };
            let g = apply_speckle(&generate_phantom(&spec)?, &speckle)?;
            (
                g,
                json!({ "phantom": json_value(&spec), "speckle": json_value(&speckle) }),
            )
        }
    };

    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &epsilon in &grid {
        let mut pair = Vec::new();
        for method in [Method::Sdd, Method::SddQl] {
            let params = DespeckleParams {
                lambda: a.lambda,
                epsilon,
                alpha: if method == Method::Sdd { 0.0 } else { a.alpha },
                n_max: a.iters,
                solver: solver_cfg(a.pcg_tol, a.pcg_max_iters),
            };
            let mut best: Option<DespeckleReport> = None;
            for _ in 0..a.repeats {
                let (_, report) = run_despeckle(&g, &params)?;
                if best
                    .as_ref()
                    .is_none_or(|b| report.total_wall_time_ms < b.total_wall_time_ms)
                {
                    best = Some(report);
                }
            }
            let report = best.expect("at least one repeat");
            let row = BenchRow {
                method: method.name().into(),
                epsilon,
                wall_ms: report.total_wall_time_ms,
                total_pcg_iters: report.total_pcg_iterations,
                mean_pcg_iters_per_outer: report.total_pcg_iterations as f64
                    / report.iterations.len() as f64,
            };
            pair.push(row.clone());
            rows.push(row);
        }
        let (sdd, ql) = (&pair[0], &pair[1]);
        let wall_ratio = sdd.wall_ms / ql.wall_ms;
        eprintln!(
            "epsilon {epsilon:e}: sdd {:.1} ms / {} iters, sdd-ql {:.1} ms / {} iters, time ratio {wall_ratio:.2}",
            sdd.wall_ms, sdd.total_pcg_iters, ql.wall_ms, ql.total_pcg_iters
        );
        ratios.push(json!({
            "epsilon": epsilon,
            "wall_ratio_sdd_over_sddql": wall_ratio,
            "pcg_iters_sdd": sdd.total_pcg_iters,
            "pcg_iters_sddql": ql.total_pcg_iters,
        }));
    }
    write_csv(&a.output, &rows)?;

    let mut m = RunManifest::new(
        "bench",
        argv,
        json!({
            "source": source,
            "width": g.width(),
            "height": g.height(),
            "epsilon_grid": grid,
            "lambda": a.lambda,
            "alpha": a.alpha,
            "n_max": a.iters,
            "solver": json_value(&solver_cfg(a.pcg_tol, a.pcg_max_iters)),
            "repeats": a.repeats,
            "ratios": ratios,
            "columns": ["method", "epsilon", "wall_ms", "total_pcg_iters", "mean_pcg_iters_per_outer"],
        }),
        a.threads as usize,
    );
    m.seed = a.input.is_none().then_some(a.seed);
    for p in &inputs {
        m.input(p);
    }
    m.output(&a.output);
    let manifest_path = a
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.manifest.json", a.output.display())));
    m.output(&manifest_path);
    m.timings_ms
        .insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
    write_json(&manifest_path, &m)
}
