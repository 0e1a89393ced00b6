//! Run manifests, initial curves, snapshots, reports and plot series on disk.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curve::{curvature, length, reparametrize_with, speeds, ClosedCurve, ReparamOptions};
use crate::diagnostics::{
    all_proved_pass, certify, elastica_residual, flat_core_report, tangential_residual, weak_residuals,
    CertificateReport, FlatCoreReport, ResidualOptions,
};
use crate::energy::total_energy;
use crate::error::FlowError;
use crate::flow::{run_flow, FlowConfig, Trajectory};
use crate::vec2::Vec2;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid manifest: {0}")]
    ManifestParse(#[from] toml::de::Error),
    #[error("cannot serialize manifest: {0}")]
    ManifestWrite(#[from] toml::ser::Error),
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialShape {
    Circle { r: f64 },
    Ellipse { a: f64, b: f64 },
    /// r(1 + amplitude·ρ(θ)) with ρ a random combination of wavenumbers
    /// 2..=modes+1 scaled so that |ρ| ≤ 1.
    FourierPerturbedCircle { r: f64, modes: usize, amplitude: f64, seed: u64 },
}

impl InitialShape {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FlowError::InvalidParameter(format!("{name} = {v} must be positive")))
            }
        };
        match *self {
            InitialShape::Circle { r } => positive("r", r),
            InitialShape::Ellipse { a, b } => positive("a", a).and(positive("b", b)),
            InitialShape::FourierPerturbedCircle { r, modes, amplitude, .. } => {
                positive("r", r)?;
                if modes == 0 {
                    return Err(FlowError::InvalidParameter("modes must be at least 1".into()));
                }
                if !(0.0..1.0).contains(&amplitude) {
                    return Err(FlowError::InvalidParameter(format!("amplitude = {amplitude} must lie in [0, 1)")));
                }
                Ok(())
            }
        }
    }
}

/// Samples the shape on N nodes and maps it to constant speed.
pub fn generate_initial(shape: &InitialShape, n: usize, opts: ReparamOptions) -> Result<ClosedCurve, FlowError> {
    shape.validate()?;
    let raw = match *shape {
        InitialShape::Circle { r } => ClosedCurve::circle(n, r, Vec2::ZERO)?,
        InitialShape::Ellipse { a, b } => {
            ClosedCurve::from_fn(n, |x| Vec2::new(a * (2.0 * PI * x).cos(), b * (2.0 * PI * x).sin()))?
        }
        InitialShape::FourierPerturbedCircle { r, modes, amplitude, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<(f64, f64)> = (0..modes).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let total: f64 = coeffs.iter().map(|(a, b)| a.hypot(*b)).sum::<f64>().max(f64::MIN_POSITIVE);
            ClosedCurve::from_fn(n, |x| {
                let th = 2.0 * PI * x;
                let rho: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, (a, b))| {
                        let k = (i + 2) as f64;
                        a * (k * th).cos() + b * (k * th).sin()
                    })
                    .sum::<f64>()
                    / total;
                Vec2::new(th.cos(), th.sin()) * (r * (1.0 + amplitude * rho))
            })?
        }
    };
    reparametrize_with(&raw, opts)
}

fn default_stride() -> usize {
    1
}

fn default_flat_threshold() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub output_dir: PathBuf,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// |κ| below this counts as flat in the terminal flat-core report.
    #[serde(default = "default_flat_threshold")]
    pub flat_core_threshold: f64,
    pub config: FlowConfig,
    pub initial_shape: InitialShape,
}

impl RunManifest {
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.snapshot_stride == 0 {
            return Err(FlowError::InvalidParameter("snapshot_stride must be at least 1".into()));
        }
        if !(self.flat_core_threshold >= 0.0) {
            return Err(FlowError::InvalidParameter("flat_core_threshold must be nonnegative".into()));
        }
        self.config.validate()?;
        self.initial_shape.validate()
    }

    pub fn from_toml(text: &str) -> IoResult<Self> {
        let m: RunManifest = toml::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> IoResult<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> IoResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            IoError::ManifestParse(source) => IoError::Format { path: path.to_path_buf(), msg: source.to_string() },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        fs::write(path, self.to_toml()?).map_err(io_err(path))
    }

    pub fn initial_curve(&self) -> Result<ClosedCurve, FlowError> {
        let opts = ReparamOptions { tol: self.config.tol_reparam, ..ReparamOptions::default() };
        generate_initial(&self.initial_shape, self.config.grid_size, opts)
    }
}

pub const SNAPSHOT_HEADER: [&str; 7] = ["t", "j", "x", "gamma_x", "gamma_y", "kappa", "speed"];

#[derive(Debug, Deserialize)]
struct SnapshotRow {
    t: f64,
    j: usize,
    #[allow(dead_code)]
    x: f64,
    gamma_x: f64,
    gamma_y: f64,
}

/// Writes one curve as CSV rows `t,j,x,gamma_x,gamma_y,kappa,speed`,
/// every real with 17 significant digits.
pub fn write_snapshot(curve: &ClosedCurve, t: f64, path: &Path) -> IoResult<()> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SNAPSHOT_HEADER).map_err(csv_err)?;
    let kappa = curvature(curve).values;
    let speed = speeds(curve);
    let n = curve.grid_size();
    let f = |v: f64| format!("{v:.16e}");
    for (j, p) in curve.samples().iter().enumerate() {
        let row = [f(t), j.to_string(), f(j as f64 / n as f64), f(p.x), f(p.y), f(kappa[j]), f(speed[j])];
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a snapshot back as (t, γ).
pub fn read_snapshot(path: &Path) -> IoResult<(f64, ClosedCurve)> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let format = |msg: String| IoError::Format { path: path.to_path_buf(), msg };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(SNAPSHOT_HEADER.iter().copied()) {
        return Err(format(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut t = None;
    let mut samples = Vec::new();
    for (line, row) in r.deserialize::<SnapshotRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        if row.j != line {
            return Err(format(format!("row {line} carries node index {}", row.j)));
        }
        match t {
            None => t = Some(row.t),
            Some(t0) if t0 != row.t => return Err(format(format!("row {line} has time {} ≠ {t0}", row.t))),
            _ => {}
        }
        samples.push(Vec2::new(row.gamma_x, row.gamma_y));
    }
    let t = t.ok_or_else(|| format("empty snapshot".into()))?;
    Ok((t, ClosedCurve::new(samples)?))
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> IoResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> IoResult<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

pub fn write_report(reports: &[CertificateReport], path: &Path) -> IoResult<()> {
    write_json(reports, path)
}

pub fn read_report(path: &Path) -> IoResult<Vec<CertificateReport>> {
    read_json(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub bending: f64,
    pub length: f64,
    /// Proximity term of the step that produced this curve; 0 at t = 0.
    pub penalty: f64,
    pub inner_iters: usize,
}

pub fn plot_series(traj: &Trajectory) -> Vec<PlotRecord> {
    traj.curves
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let e = total_energy(c, &traj.config.params);
            let rec = i.checked_sub(1).map(|k| &traj.records[k]);
            PlotRecord {
                step: i,
                t: traj.times[i],
                energy: e.total,
                bending: e.bending,
                length: e.len,
                penalty: rec.map_or(0.0, |r| r.penalty_value),
                inner_iters: rec.map_or(0, |r| r.inner_iters),
            }
        })
        .collect()
}

pub fn emit_plot_data(traj: &Trajectory, path: &Path) -> IoResult<()> {
    write_json(&plot_series(traj), path)
}

pub fn read_plot_data(path: &Path) -> IoResult<Vec<PlotRecord>> {
    read_json(path)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_time: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub length_final: f64,
    pub elastica_residual: f64,
    pub flat_core: FlatCoreReport,
    pub init_reparametrized: bool,
    pub stalled_steps: usize,
    pub failure: Option<String>,
    pub all_proved_pass: bool,
}

pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub reports: Vec<CertificateReport>,
    pub summary: RunSummary,
}

fn snapshot_dir(out: &Path) -> PathBuf {
    out.join("snapshots")
}

fn snapshot_path(out: &Path, step: usize) -> PathBuf {
    snapshot_dir(out).join(format!("step_{step:07}.csv"))
}

/// Certificates plus residual and elastica measurements for a trajectory.
pub fn full_report(traj: &Trajectory) -> Vec<CertificateReport> {
    let params = traj.config.params;
    let mut reports = certify(traj);
    if traj.steps() >= 2 {
        if let Ok(w) = weak_residuals(traj, &params, ResidualOptions::default()) {
            reports.push(CertificateReport::measurement("weak_residual", w.literal, "Fourier K = 8, 8 windows"));
            reports.push(CertificateReport::measurement("scheme_residual", w.constrained, "Fourier K = 8, 8 windows"));
        }
    }
    if traj.steps() >= 1 {
        if let Ok(r) = tangential_residual(traj, 8) {
            reports.push(CertificateReport::measurement("tangential_residual", r, "Fourier K = 8"));
        }
    }
    reports.push(CertificateReport::measurement(
        "elastica_residual",
        elastica_residual(traj.terminal(), &params),
        format!("t = {}", traj.final_time()),
    ));
    reports
}

/// Runs the manifest and writes the run directory:
/// manifest.toml, snapshots/step_*.csv every stride steps, terminal.csv,
/// report.json, plot.json, flat_core.json and summary.json.
pub fn run_manifest(manifest: &RunManifest, out: &Path) -> IoResult<RunOutcome> {
    manifest.validate()?;
    let init = manifest.initial_curve()?;
    let traj = run_flow(&init, &manifest.config)?;

    fs::create_dir_all(snapshot_dir(out)).map_err(io_err(out))?;
    let mut stored = manifest.clone();
    stored.output_dir = out.to_path_buf();
    stored.save(&out.join("manifest.toml"))?;
    for (i, c) in traj.curves.iter().enumerate() {
        if i % manifest.snapshot_stride == 0 {
            write_snapshot(c, traj.times[i], &snapshot_path(out, i))?;
        }
    }
    write_snapshot(traj.terminal(), traj.final_time(), &out.join("terminal.csv"))?;

    let reports = full_report(&traj);
    let flat = flat_core_report(traj.terminal(), manifest.flat_core_threshold);
    let energies = traj.energies();
    let summary = RunSummary {
        steps: traj.steps(),
        final_time: traj.final_time(),
        energy_initial: energies[0],
        energy_final: *energies.last().unwrap(),
        length_final: length(traj.terminal()),
        elastica_residual: elastica_residual(traj.terminal(), &traj.config.params),
        flat_core: flat.clone(),
        init_reparametrized: traj.init_reparametrized,
        stalled_steps: traj.records.iter().filter(|r| r.stalled).count(),
        failure: traj.failure.clone(),
        all_proved_pass: all_proved_pass(&reports),
    };
    write_report(&reports, &out.join("report.json"))?;
    emit_plot_data(&traj, &out.join("plot.json"))?;
    write_json(&flat, &out.join("flat_core.json"))?;
    write_json(&summary, &out.join("summary.json"))?;
    Ok(RunOutcome { trajectory: traj, reports, summary })
}

/// Rebuilds the trajectory stored in a run directory from its snapshots.
/// With a stride k > 1 the rebuilt sequence has time step kτ.
pub fn load_run(dir: &Path) -> IoResult<Trajectory> {
    let manifest = RunManifest::load(&dir.join("manifest.toml"))?;
    let snaps = snapshot_dir(dir);
    let mut files: Vec<PathBuf> = fs::read_dir(&snaps)
        .map_err(io_err(&snaps))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut times = Vec::with_capacity(files.len());
    let mut curves = Vec::with_capacity(files.len());
    for f in &files {
        let (t, c) = read_snapshot(f)?;
        times.push(t);
        curves.push(c);
    }
    if curves.len() < 2 {
        return Err(IoError::Format { path: snaps, msg: "need at least two snapshots".into() });
    }
    let dt = times[1] - times[0];
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(IoError::Format { path: files[k + 1].clone(), msg: format!("snapshot spacing {} ≠ {dt}", w[1] - w[0]) });
        }
    }
    let mut config = manifest.config.clone();
    config.tau = dt;
    config.horizon = times[times.len() - 1].max(dt);
    Ok(Trajectory::from_curves(config, curves)?)
}

/// Re-runs every certificate on a stored run.
pub fn diagnose_run(dir: &Path) -> IoResult<Vec<CertificateReport>> {
    let traj = load_run(dir)?;
    Ok(full_report(&traj))
}
