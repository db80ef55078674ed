use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use adis_core::csst::{copf_forward, train_toy as fit, CopfInputs, CopfModel, InitKind, TrainSample};
use adis_core::io::{
    hash_psf, load_cube, load_measurement, load_psf_stack, save_cube, save_cube_preview, save_measurement,
    save_measurement_preview, save_psf_stack, synth_scene, write_atomic, write_provenance, InputRecord, Provenance,
    RunConfig,
};
use adis_core::optics::{diffraction_factor, dispersion_distance, zero_first_ratio};
use adis_core::recon::{fista_reconstruct, scaled_adjoint};
use adis_core::sensor::{add_noise, forward_apply};
use adis_core::{
    AdisError, Boundary, ForwardOperator, HsiCube, Measurement, NoiseModel, OpticsConfig, PsfStack, QualityReport,
    Result, WavelengthGrid,
};
use clap::Args;
use ndarray::Array3;
use serde_json::{json, Value};

use crate::{checks, CheckTarget, ConfigArgs, InitArg, Method, PsfMethodArg, Scene};

/// Errors reading `path` are reported as data errors naming the file.
fn reading<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        AdisError::Io(io) => AdisError::Data(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn provenance(command: &str, cfg: &RunConfig, psf: Option<&PsfStack>, inputs: &[&Path]) -> Result<Provenance> {
    let mut p = Provenance::new(command, cfg)?;
    p.psf_sha256 = psf.map(hash_psf);
    for path in inputs {
        p.inputs.push(reading(path, InputRecord::from_file(path))?);
    }
    p.extra
        .insert("argv".into(), json!(std::env::args().collect::<Vec<_>>()));
    Ok(p)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_grid(what: &str, have: &WavelengthGrid, want: &WavelengthGrid) -> Result<()> {
    let same = have.count() == want.count()
        && have
            .lambdas()
            .iter()
            .zip(want.lambdas())
            .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1e-9));
    if same {
        Ok(())
    } else {
        Err(AdisError::Dimension(format!(
            "{what} has {} bands on {:.1}-{:.1} nm, the configuration expects {} on {:.1}-{:.1} nm",
            have.count(),
            have.min() * 1e9,
            have.max() * 1e9,
            want.count(),
            want.min() * 1e9,
            want.max() * 1e9
        )))
    }
}

fn psf_for(cfg: &RunConfig, file: Option<&Path>) -> Result<PsfStack> {
    let stack = match file {
        Some(p) => reading(p, load_psf_stack(p))?,
        None => cfg.psf_stack()?,
    };
    check_grid("PSF stack", stack.grid(), &cfg.wavelength_grid()?)?;
    Ok(stack)
}

fn write_csv(path: &Path, header: [&str; 2], rows: impl IntoIterator<Item = (String, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AdisError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for (k, v) in rows {
        w.write_record([k, format!("{v:e}")]).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AdisError::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

#[derive(Args, Debug)]
pub struct DesignMaskArgs {
    /// Aperture width along y (µm).
    #[arg(long, default_value_t = 5.0)]
    pub a: f64,
    /// Aperture length along x (µm).
    #[arg(long, default_value_t = 5.0)]
    pub b: f64,
    /// Slit period (µm).
    #[arg(long, default_value_t = 10.0)]
    pub d: f64,
    /// Slits per axis.
    #[arg(long = "N", visible_alias = "n", default_value_t = 16)]
    pub n: usize,
    /// Mask-to-sensor distance (mm).
    #[arg(long, default_value_t = 50.0)]
    pub f2: f64,
    #[arg(long, default_value_t = 450.0)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 650.0)]
    pub lambda_max: f64,
    /// Bands on the grid, for the per-band dispersion figures.
    #[arg(long, default_value_t = 28)]
    pub bands: usize,
    /// Sensor pixel size (µm); by default the pitch giving 0.5 px per band.
    #[arg(long)]
    pub pixel_pitch: Option<f64>,
    /// Highest order in the table.
    #[arg(long, default_value_t = 5)]
    pub orders: u32,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

pub fn design_mask(a: &DesignMaskArgs) -> Result<()> {
    if !(a.lambda_min > 0.0 && a.lambda_max >= a.lambda_min) {
        return Err(AdisError::Parameter(format!(
            "need 0 < lambda-min <= lambda-max, got {} and {}",
            a.lambda_min, a.lambda_max
        )));
    }
    let bands = if a.lambda_max == a.lambda_min {
        1
    } else {
        a.bands.max(2)
    };
    let grid = WavelengthGrid::uniform(a.lambda_min * 1e-9, a.lambda_max * 1e-9, bands)?;
    let mut cfg = OpticsConfig {
        a: a.a * 1e-6,
        b: a.b * 1e-6,
        d: a.d * 1e-6,
        n_slits: a.n,
        f2: a.f2 * 1e-3,
        pixel_pitch: a.pixel_pitch.map_or(1.0, |p| p * 1e-6),
        supersample: 1,
        order_truncation: None,
    };
    cfg.validate()?;
    if a.pixel_pitch.is_none() && bands >= 2 {
        cfg = cfg.with_dispersion_step(&grid, 0.5)?;
    }
    // closed form for a = b = d/2, envelope value at the order otherwise
    let lambda = grid.min();
    let table: Vec<(u32, f64)> = (0..=a.orders)
        .map(|m| {
            let amp = cfg
                .order_amplitude(m)
                .unwrap_or_else(|_| diffraction_factor(m as f64 * cfg.order_spacing(lambda), 0.0, lambda, &cfg));
            (m, amp)
        })
        .collect();
    let ratio = zero_first_ratio(cfg.d / cfg.b)?;
    let ratio2 = zero_first_ratio(2.0)?;
    let spread = dispersion_distance(&cfg, &grid);
    let step_px = if bands >= 2 {
        cfg.d.recip() * cfg.f2 * grid.mean_step() / cfg.pixel_pitch
    } else {
        0.0
    };
    if a.json {
        let v = json!({
            "orders": table.iter().map(|(m, v)| json!({"order": m, "amplitude": v})).collect::<Vec<_>>(),
            "d_over_b": cfg.d / cfg.b,
            "first_zero_ratio": ratio,
            "first_zero_ratio_at_2": ratio2,
            "dispersion_m": spread,
            "dispersion_px": spread / cfg.pixel_pitch,
            "pixel_pitch_m": cfg.pixel_pitch,
            "step_px_per_band": step_px,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("order  A_D");
    for (m, v) in &table {
        println!("{m:>5}  {v:.6}");
    }
    println!("I'/I0 at d/b = {:.4}: {ratio:.6}", cfg.d / cfg.b);
    println!("I'/I0 at d/b = 2: {ratio2:.6}");
    println!(
        "first-order dispersion over {:.1}-{:.1} nm: {:.6e} m = {:.3} px at {:.4} µm pitch",
        a.lambda_min,
        a.lambda_max,
        spread,
        spread / cfg.pixel_pitch,
        cfg.pixel_pitch * 1e6
    );
    if bands >= 2 {
        println!("per-band step over {bands} bands: {step_px:.3} px");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PsfArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_enum)]
    pub method: Option<PsfMethodArg>,
    /// Kernel side in pixels (odd).
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a PNG of the kernels.
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

pub fn psf(a: &PsfArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(m) = a.method {
        cfg.psf.method = m.into();
    }
    if a.side.is_some() {
        cfg.psf.side = a.side;
    }
    cfg.validate()?;
    let t = Instant::now();
    let stack = cfg.psf_stack()?;
    save_psf_stack(&stack, &a.out)?;
    if let Some(p) = &a.preview {
        save_cube_preview(&HsiCube::new(stack.grid().clone(), stack.kernels().clone())?, p)?;
    }
    write_provenance(&a.out, &provenance("psf", &cfg, Some(&stack), &[])?)?;
    let optics = cfg.resolved_optics()?;
    println!(
        "{} bands, side {}, pitch {:.4e} m, mean dispersion step {} px, {:.2} s",
        stack.bands(),
        stack.side(),
        stack.pixel_pitch(),
        stack
            .mean_dispersion_step(&optics)
            .map_or("n/a".into(), |s| format!("{s:.3}")),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "patches")]
    pub kind: Scene,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let cube = synth_scene(a.kind.into(), a.height, a.width, &cfg.wavelength_grid()?, cfg.seed)?;
    save_cube(&cube, &a.out)?;
    if let Some(p) = &a.preview {
        save_cube_preview(&cube, p)?;
    }
    let mut prov = provenance("synth", &cfg, None, &[])?;
    prov.extra.insert(
        "scene".into(),
        json!({"kind": a.kind.to_possible_value_name(), "height": a.height, "width": a.width}),
    );
    write_provenance(&a.out, &prov)?;
    println!(
        "{}x{}x{} cube written to {}",
        a.height,
        a.width,
        cube.bands(),
        a.out.display()
    );
    Ok(())
}

trait PossibleName {
    fn to_possible_value_name(&self) -> String;
}

impl<T: clap::ValueEnum> PossibleName for T {
    fn to_possible_value_name(&self) -> String {
        self.to_possible_value()
            .map(|v| v.get_name().to_string())
            .unwrap_or_default()
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub cube: PathBuf,
    /// Precomputed PSF stack; built from the configuration when omitted.
    #[arg(long)]
    pub psf: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Add Gaussian noise with this standard deviation (overrides the
    /// configured noise model).
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(s) = a.noise_sigma {
        cfg.noise = Some(NoiseModel::Gaussian { sigma: s });
    }
    let t = Instant::now();
    let cube = reading(&a.cube, load_cube(&a.cube))?;
    check_grid("cube", cube.grid(), &cfg.wavelength_grid()?)?;
    let stack = psf_for(&cfg, a.psf.as_deref())?;
    let op = cfg.operator(stack, cube.height(), cube.width())?;
    let mut meas = forward_apply(&cube, &op)?;
    if let Some(n) = cfg.noise {
        meas = add_noise(&meas, n, cfg.seed)?;
    }
    save_measurement(&meas, &a.out)?;
    if let Some(p) = &a.preview {
        save_measurement_preview(&meas, p)?;
    }
    let mut inputs: Vec<&Path> = vec![&a.cube];
    if let Some(p) = &a.psf {
        inputs.push(p);
    }
    write_provenance(&a.out, &provenance("simulate", &cfg, Some(op.psf()), &inputs)?)?;
    println!(
        "{}x{} measurement written to {} in {:.2} s",
        meas.height(),
        meas.width(),
        a.out.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "fista")]
    pub method: Method,
    #[arg(long)]
    pub measurement: PathBuf,
    #[arg(long)]
    pub psf: Option<PathBuf>,
    /// Checkpoint stem (`<stem>.json` + `<stem>.bin`), required for csst.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Ground-truth cube; adds PSNR/SSIM to the metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Override the FISTA iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override the regularisation weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Objective trace CSV; `<out>.trace.csv` by default.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

/// Cube size whose image under `boundary` has the measurement's size.
fn cube_size(meas: &Measurement, side: usize, boundary: Boundary) -> (usize, usize) {
    match boundary {
        Boundary::Same => (meas.height(), meas.width()),
        Boundary::Valid => (meas.height() + side - 1, meas.width() + side - 1),
    }
}

fn half_residual(op: &ForwardOperator, cube: &HsiCube, meas: &Measurement) -> Result<f64> {
    let fit = forward_apply(cube, op)?;
    Ok(0.5
        * fit
            .data()
            .iter()
            .zip(meas.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>())
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(n) = a.iterations {
        cfg.solver.iterations = n;
    }
    if let Some(l) = a.lambda {
        cfg.solver.lambda_reg = l;
    }
    cfg.solver.validate()?;
    let checkpoint = match (a.method, &a.checkpoint) {
        (Method::Csst, None) => {
            return Err(AdisError::Parameter(
                "--method csst needs --checkpoint <stem>; create one with `adis train-toy --out <stem>`".into(),
            ))
        }
        (Method::Csst, Some(stem)) => {
            let json = stem.with_extension("json");
            if !json.exists() {
                return Err(AdisError::Data(format!(
                    "checkpoint manifest {} not found; pass the stem written by `adis train-toy --out`",
                    json.display()
                )));
            }
            let model = reading(&json, CopfModel::load(stem, cfg.model.shift_step))?;
            if model.bands() != cfg.grid.bands {
                return Err(AdisError::Dimension(format!(
                    "checkpoint was trained for {} bands, the configuration has {}",
                    model.bands(),
                    cfg.grid.bands
                )));
            }
            Some(model)
        }
        _ => None,
    };
    let t = Instant::now();
    let meas = reading(&a.measurement, load_measurement(&a.measurement))?;
    let stack = psf_for(&cfg, a.psf.as_deref())?;
    let (h, w) = cube_size(&meas, stack.side(), cfg.boundary);
    let op = Arc::new(cfg.operator(stack, h, w)?);
    let grid = op.psf().grid().clone();
    let y: Vec<f64> = meas.data().iter().copied().collect();
    let x0 = HsiCube::from_clamped(
        grid.clone(),
        Array3::from_shape_vec(op.in_shape(), scaled_adjoint(op.as_ref(), &y)).expect("operator shape"),
    )?;

    let mut metrics = serde_json::Map::new();
    let (cube, trace): (HsiCube, Vec<(String, f64)>) = match (a.method, checkpoint) {
        (Method::Fista, _) => {
            let r = fista_reconstruct(&meas, &op, &cfg.solver, None)?;
            metrics.insert("lipschitz".into(), json!(r.lipschitz));
            metrics.insert("iterations".into(), json!(r.objective.len() - 1));
            metrics.insert("final_objective".into(), json!(r.objective.last()));
            let rows = r
                .objective
                .iter()
                .enumerate()
                .map(|(i, v)| (i.to_string(), *v))
                .collect();
            (r.cube, rows)
        }
        (Method::Csst, Some(model)) => {
            let cube = copf_forward(&meas, op.clone(), &model)?;
            metrics.insert("stages".into(), json!(model.config().stages));
            let rows = vec![
                ("0".to_string(), half_residual(&op, &x0, &meas)?),
                (model.config().stages.to_string(), half_residual(&op, &cube, &meas)?),
            ];
            (cube, rows)
        }
        _ => {
            let r = half_residual(&op, &x0, &meas)?;
            (x0.clone(), vec![("0".to_string(), r)])
        }
    };
    metrics.insert("method".into(), json!(a.method.to_possible_value_name()));
    metrics.insert("seconds".into(), json!(t.elapsed().as_secs_f64()));

    let mut inputs: Vec<&Path> = vec![&a.measurement];
    if let Some(p) = &a.psf {
        inputs.push(p);
    }
    let ckpt_bin = a.checkpoint.as_ref().map(|s| s.with_extension("bin"));
    if let Some(p) = &ckpt_bin {
        inputs.push(p);
    }
    if let Some(p) = &a.truth {
        let truth = reading(p, load_cube(p))?;
        let q = QualityReport::compare(&truth, &cube)?;
        let q0 = QualityReport::compare(&truth, &x0)?;
        println!(
            "PSNR {:.2} dB (adjoint {:.2} dB, gain {:+.2} dB), SSIM {:.4}",
            q.psnr_db,
            q0.psnr_db,
            q.psnr_db - q0.psnr_db,
            q.ssim
        );
        metrics.insert("quality".into(), serde_json::to_value(q)?);
        metrics.insert("adjoint_quality".into(), serde_json::to_value(q0)?);
        metrics.insert("psnr_gain_db".into(), json!(q.psnr_db - q0.psnr_db));
        inputs.push(p);
    }

    save_cube(&cube, &a.out)?;
    if let Some(p) = &a.preview {
        save_cube_preview(&cube, p)?;
    }
    let trace_path = a.trace.clone().unwrap_or_else(|| with_suffix(&a.out, ".trace.csv"));
    write_csv(&trace_path, ["iteration", "objective"], trace)?;
    let metrics_path = with_suffix(&a.out, ".metrics.json");
    write_atomic(
        &metrics_path,
        serde_json::to_string_pretty(&Value::Object(metrics))?.as_bytes(),
    )?;
    write_provenance(&a.out, &provenance("reconstruct", &cfg, Some(op.psf()), &inputs)?)?;
    println!("{}x{}x{} cube written to {}", h, w, cube.bands(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let truth = reading(&a.truth, load_cube(&a.truth))?;
    let test = reading(&a.test, load_cube(&a.test))?;
    let q = QualityReport::compare(&truth, &test)?;
    println!(
        "PSNR {:.3} dB (peak = reference max), SSIM {:.4} (box window {})",
        q.psnr_db, q.ssim, q.ssim_window
    );
    if let Some(p) = &a.out {
        write_atomic(p, serde_json::to_string_pretty(&q)?.as_bytes())?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub target: CheckTarget,
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let results = checks::run(a.target, a.step, a.probes, a.seed)?;
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.error < r.tolerance;
        println!(
            "{:<20} {:.2e}  (tol {:.0e})  {}",
            r.name,
            r.error,
            r.tolerance,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(AdisError::Numeric {
            location: format!("gradient check of {}", failed.join(", ")),
        })
    }
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Checkpoint stem; writes `<stem>.json`, `<stem>.bin` and `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Side of the synthetic training scenes.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Number of synthetic pairs.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
}

pub fn train_toy(a: &TrainToyArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(k) = a.stages {
        cfg.model.stages = k;
    }
    if let Some(i) = a.init {
        cfg.model.init = match i {
            InitArg::Random => InitKind::Random,
            InitArg::Residual => InitKind::Residual,
            InitArg::Identity => InitKind::Identity,
        };
    }
    cfg.validate()?;
    if a.samples == 0 {
        return Err(AdisError::Parameter("need at least one training sample".into()));
    }
    let grid = cfg.wavelength_grid()?;
    let stack = cfg.psf_stack()?;
    let op = Arc::new(cfg.operator(stack, a.size, a.size)?);
    let data = (0..a.samples)
        .map(|i| {
            let scene = synth_scene(
                adis_core::io::SceneKind::Patches,
                a.size,
                a.size,
                &grid,
                cfg.seed + i as u64,
            )?;
            let meas = forward_apply(&scene, &op)?;
            let (k, h, w) = op.in_shape();
            Ok(TrainSample {
                truth: adis_core::autodiff::Tensor::new(vec![k, h, w], scene.into_data().into_raw_vec_and_offset().0)?,
                inputs: CopfInputs::prepare(&meas, op.clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = CopfModel::new(cfg.model.clone(), grid.count())?;
    let t = Instant::now();
    let trace = fit(&mut model, &data, &cfg.train)?;
    let secs = t.elapsed().as_secs_f64();
    model.save(&a.out)?;
    write_csv(
        &with_suffix(&a.out, ".loss.csv"),
        ["step", "loss"],
        trace.iter().enumerate().map(|(i, v)| (i.to_string(), *v)),
    )?;
    let mut prov = provenance("train-toy", &cfg, Some(op.psf()), &[])?;
    prov.extra
        .insert("loss".into(), json!({"first": trace.first(), "last": trace.last()}));
    write_provenance(&a.out, &prov)?;
    match (trace.first(), trace.last()) {
        (Some(f), Some(l)) => println!(
            "{} steps in {secs:.1} s, loss {f:.3e} -> {l:.3e}; checkpoint {}",
            trace.len(),
            a.out.display()
        ),
        _ => println!("untrained checkpoint written to {}", a.out.display()),
    }
    Ok(())
}
