//! Run configuration, orchestration, and artifact emission for the batch
//! front end: one JSON document describes the signature, domain, boundary
//! preset, solver knobs, verification block, and output paths.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, DiagnosticsReport, PerturbationField};
use crate::boundary::{BoundaryData, BoundaryPreset};
use crate::element;
use crate::error::{Error, Result};
use crate::grid::{self, DomainSpec, GraphField, StructuredGrid};
use crate::lorentz::Signature;
use crate::solver::{self, ProgressRecord, SolveState, SolverConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub signature: Signature,
    pub domain: DomainSpec,
    pub boundary: BoundaryPreset,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct VerifyConfig {
    /// probe names: volume_maximality, uniqueness, gradient_ellipticity,
    /// second_variation, ricci, conservation
    pub probes: Vec<String>,
    pub trials: usize,
    pub seed: u64,
    /// verify a previously written solution instead of solving
    pub solution_csv_in: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OutputConfig {
    pub solution_csv: Option<PathBuf>,
    pub progress_jsonl: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub probes_json: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.signature.n;
        if n < 1 || self.signature.m < 1 {
            return Err(Error::Config("signature needs n >= 1 and m >= 1".into()));
        }
        let dim = match &self.domain {
            DomainSpec::CartesianBox { bounds, .. } => bounds.len(),
            DomainSpec::PolarAnnulus { .. } => 2,
        };
        if dim != n {
            return Err(Error::Config(format!(
                "domain dimension {dim} does not match signature n = {n}"
            )));
        }
        if self.solver.newton_tol <= 0.0
            || self.solver.linear_tol <= 0.0
            || !(0.0..1.0).contains(&self.solver.spacelike_slack_delta)
        {
            return Err(Error::Config("solver tolerances out of range".into()));
        }
        for probe in &self.verify.probes {
            if !KNOWN_PROBES.contains(&probe.as_str()) {
                return Err(Error::Config(format!(
                    "unknown probe {probe:?}; known probes: {KNOWN_PROBES:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn verify_trials(&self) -> usize {
        if self.verify.trials == 0 {
            100
        } else {
            self.verify.trials
        }
    }

    pub fn verify_seed(&self) -> u64 {
        if self.verify.seed == 0 {
            42
        } else {
            self.verify.seed
        }
    }
}

pub const KNOWN_PROBES: &[&str] = &[
    "volume_maximality",
    "uniqueness",
    "gradient_ellipticity",
    "second_variation",
    "ricci",
    "conservation",
];

/// Everything a solve run produces.
pub struct SolveArtifacts {
    pub grid: Arc<StructuredGrid>,
    pub boundary: BoundaryData,
    pub state: SolveState,
    pub progress: Vec<ProgressRecord>,
    pub report: DiagnosticsReport,
}

/// Build the grid and boundary data, run the continuity solve, collect
/// diagnostics, and write any configured outputs.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveArtifacts> {
    cfg.validate()?;
    let grid = Arc::new(grid::build_grid(&cfg.domain)?);
    let boundary = cfg
        .boundary
        .build(grid.clone(), cfg.signature.n, cfg.signature.m)?;
    let (state, progress) = solver::continuity_solve(&boundary, &cfg.solver)?;
    let report =
        analysis::gradient_ellipticity_report(&state.u, cfg.verify_trials(), cfg.verify_seed())?;
    write_outputs(cfg, &state, &progress, &report)?;
    Ok(SolveArtifacts {
        grid,
        boundary,
        state,
        progress,
        report,
    })
}

fn write_outputs(
    cfg: &RunConfig,
    state: &SolveState,
    progress: &[ProgressRecord],
    report: &DiagnosticsReport,
) -> Result<()> {
    if let Some(path) = &cfg.output.solution_csv {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        grid::write_field_csv(&state.u, &mut f)?;
    }
    if let Some(path) = &cfg.output.progress_jsonl {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for rec in progress {
            writeln!(f, "{}", serde_json::to_string(rec)?)?;
        }
    }
    if let Some(path) = &cfg.output.report_json {
        std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    }
    Ok(())
}

/// One verification probe outcome; the process exit code is the only
/// cross-process contract, but the JSON detail is kept for humans.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

/// Run the verify flow: solve (or load a stored solution), then run the
/// selected probes. Returns the artifacts, outcomes, and overall verdict.
pub fn run_verify(cfg: &RunConfig) -> Result<(SolveArtifacts, Vec<ProbeOutcome>, bool)> {
    cfg.validate()?;
    let artifacts = if let Some(path) = &cfg.verify.solution_csv_in {
        load_solution(cfg, path)?
    } else {
        run_solve(cfg)?
    };
    if cfg.verify.probes.is_empty() {
        eprintln!("warning: empty verify block, zero probes run");
    }
    let mut outcomes = Vec::new();
    let mut all_passed = true;
    for probe in &cfg.verify.probes {
        let outcome = run_probe(probe, cfg, &artifacts)?;
        all_passed &= outcome.passed;
        outcomes.push(outcome);
    }
    if let Some(path) = &cfg.output.probes_json {
        std::fs::write(path, serde_json::to_string_pretty(&outcomes)?)?;
    }
    Ok((artifacts, outcomes, all_passed))
}

fn load_solution(cfg: &RunConfig, path: &Path) -> Result<SolveArtifacts> {
    let grid = Arc::new(grid::build_grid(&cfg.domain)?);
    let boundary = cfg
        .boundary
        .build(grid.clone(), cfg.signature.n, cfg.signature.m)?;
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot read solution {}: {e}", path.display())))?;
    let u = grid::read_field_csv(grid.clone(), cfg.signature.m, std::io::BufReader::new(file))?;
    u.assert_finite()?;
    let residual = solver::residual_div(&u)?;
    let residual_inf = analysis::sup_norm(&residual);
    let (min_margin, _) = element::min_margin(&u);
    let state = SolveState {
        t: 1.0,
        u,
        residual_inf,
        min_margin,
        newton_iters_used: 0,
    };
    let report =
        analysis::gradient_ellipticity_report(&state.u, cfg.verify_trials(), cfg.verify_seed())?;
    Ok(SolveArtifacts {
        grid,
        boundary,
        state,
        progress: Vec::new(),
        report,
    })
}

fn run_probe(name: &str, cfg: &RunConfig, art: &SolveArtifacts) -> Result<ProbeOutcome> {
    let trials = cfg.verify_trials();
    let seed = cfg.verify_seed();
    let u = &art.state.u;
    match name {
        "volume_maximality" => {
            let rep = analysis::volume_maximality_probe(u, trials, seed)?;
            Ok(ProbeOutcome {
                name: name.into(),
                passed: rep.violations == 0,
                detail: serde_json::to_value(&rep)?,
            })
        }
        "uniqueness" => {
            let rep = analysis::uniqueness_probe(&art.boundary, &cfg.solver)?;
            Ok(ProbeOutcome {
                name: name.into(),
                passed: rep.max_pairwise_sup <= 1e-8,
                detail: serde_json::to_value(&rep)?,
            })
        }
        "gradient_ellipticity" => {
            let rep = &art.report;
            let gradient_ok = rep.sigma_max_Du < 1.0;
            let ellipticity_ok = rep.sum_gii_max <= rep.ellipticity_bound + 1e-8;
            let max_principle_ok = rep.interior_energy_max <= rep.boundary_energy_max + 1e-8;
            Ok(ProbeOutcome {
                name: name.into(),
                passed: gradient_ok && ellipticity_ok && max_principle_ok,
                detail: serde_json::json!({
                    "sigma_max_Du": rep.sigma_max_Du,
                    "sum_gii_max": rep.sum_gii_max,
                    "ellipticity_bound": rep.ellipticity_bound,
                    "interior_energy_max": rep.interior_energy_max,
                    "boundary_energy_max": rep.boundary_energy_max,
                    "gradient_ok": gradient_ok,
                    "ellipticity_ok": ellipticity_ok,
                    "max_principle_ok": max_principle_ok,
                }),
            })
        }
        "second_variation" => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5ec0);
            let mut max_rayleigh = f64::NEG_INFINITY;
            let mut worst_fd_rel = 0.0f64;
            let mut worst_first_variation = 0.0f64;
            let jac = solver::assemble_jacobi(u)?;
            for trial in 0..trials {
                let w = analysis::random_perturbation(&u.grid, u.m, &mut rng).scaled(0.1);
                if w.sup_norm() == 0.0 {
                    continue;
                }
                let sv = analysis::second_variation(u, &w)?;
                let norm2 = dof_norm_sq(&u.grid, &w, &jac);
                if norm2 > 0.0 {
                    max_rayleigh = max_rayleigh.max(sv / norm2);
                }
                let fv = analysis::first_variation(u, &w)?;
                worst_first_variation = worst_first_variation.max(fv.abs() / w.sup_norm());
                // finite-difference oracle on a few probes
                if trial < 5 {
                    let eps = 1e-4;
                    let vp = shifted_volume(u, &w, eps)?;
                    let vm = shifted_volume(u, &w, -eps)?;
                    let v0 = analysis::volume(u)?;
                    let fd = (vp - 2.0 * v0 + vm) / (eps * eps);
                    let rel = (sv - fd).abs() / sv.abs().max(fd.abs()).max(1e-300);
                    worst_fd_rel = worst_fd_rel.max(rel);
                }
            }
            let passed =
                max_rayleigh < 0.0 && worst_fd_rel <= 1e-5 && worst_first_variation <= 1e-8;
            Ok(ProbeOutcome {
                name: name.into(),
                passed,
                detail: serde_json::json!({
                    "max_rayleigh": max_rayleigh,
                    "fd_oracle_rel_err": worst_fd_rel,
                    "first_variation_sup": worst_first_variation,
                }),
            })
        }
        "ricci" => {
            let min_eig = analysis::ricci_check(u, 100.0 * cfg.solver.newton_tol)?;
            Ok(ProbeOutcome {
                name: name.into(),
                passed: min_eig >= -1e-6,
                detail: serde_json::json!({ "ricci_min_eig": min_eig }),
            })
        }
        "conservation" => {
            // machine-level telescoping of the flux divergence, plus the
            // coefficient-divergence identity magnitude for the record
            let div = element::flux_divergence(u, &element::Coeff::MetricVolume)?;
            let grid = &u.grid;
            let mut total = 0.0;
            let mut total_abs = 0.0;
            for node in 0..grid.n_nodes {
                for t in 0..u.m {
                    let v = grid.node_volume[node] * div[node * u.m + t];
                    total += v;
                    total_abs += v.abs();
                }
            }
            let identity = solver::conservation_identity_residual(u)?;
            let identity_sup = analysis::sup_norm(&identity);
            let passed = total.abs() <= 1e-11 * (1.0 + total_abs);
            Ok(ProbeOutcome {
                name: name.into(),
                passed,
                detail: serde_json::json!({
                    "telescoped_net_flux": total,
                    "identity_sup": identity_sup,
                }),
            })
        }
        other => Err(Error::Config(format!("unknown probe {other:?}"))),
    }
}

fn shifted_volume(u: &GraphField, w: &PerturbationField, s: f64) -> Result<f64> {
    let mut probe = u.clone();
    for (v, dw) in probe.values.iter_mut().zip(&w.w) {
        *v += s * dw;
    }
    analysis::volume(&probe)
}

fn dof_norm_sq(
    grid: &StructuredGrid,
    w: &PerturbationField,
    jac: &solver::JacobiOperator,
) -> f64 {
    let m = w.m;
    let mut wi = vec![0.0; grid.n_interior() * m];
    for (rank, &node) in grid.interior_nodes.iter().enumerate() {
        for t in 0..m {
            wi[rank * m + t] = w.w[node * m + t];
        }
    }
    jac.inner(&wi, &wi)
}

/// Honor the worker cap from the environment; safe to call repeatedly.
pub fn init_threads() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        if let Ok(v) = std::env::var("MAXGRAPH_THREADS") {
            if let Ok(k) = v.trim().parse::<usize>() {
                if k >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_config(dir: &Path) -> RunConfig {
        serde_json::from_value(serde_json::json!({
            "signature": {"n": 2, "m": 2},
            "domain": {"kind": "cartesian_box", "bounds": [[0.0, 1.0], [0.0, 1.0]], "counts": [9, 9]},
            "boundary": {"preset": "affine", "matrix": [[0.4, 0.1], [0.0, 0.3]]},
            "verify": {"probes": ["volume_maximality", "gradient_ellipticity"], "trials": 10, "seed": 7},
            "output": {
                "solution_csv": dir.join("u.csv"),
                "progress_jsonl": dir.join("progress.jsonl"),
                "report_json": dir.join("report.json")
            }
        }))
        .unwrap()
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = affine_config(dir.path());
        cfg.validate().unwrap();

        // mismatched dimensions rejected
        let bad: RunConfig = serde_json::from_value(serde_json::json!({
            "signature": {"n": 3, "m": 1},
            "domain": {"kind": "polar_annulus", "r0": 1.0, "r1": 2.0, "counts": [5, 8]},
            "boundary": {"preset": "constant", "value": [0.0]}
        }))
        .unwrap();
        assert!(bad.validate().is_err());

        // unknown probe rejected
        let mut cfg2 = affine_config(dir.path());
        cfg2.verify.probes = vec!["bogus".into()];
        assert!(cfg2.validate().is_err());
    }

    #[test]
    fn solve_and_verify_affine_case_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = affine_config(dir.path());
        let (art, outcomes, all_passed) = run_verify(&cfg).unwrap();
        assert!(all_passed, "outcomes: {outcomes:?}");
        assert_eq!(outcomes.len(), 2);
        assert!(art.state.residual_inf <= cfg.solver.newton_tol);
        assert!(dir.path().join("u.csv").exists());
        assert!(dir.path().join("report.json").exists());
        // report deserializes back with the exact field names
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let rep: DiagnosticsReport = serde_json::from_str(&text).unwrap();
        assert!(rep.sigma_max_Du < 1.0);
        assert!(text.contains("\"sigma_max_Du\""));
        assert!(text.contains("\"second_variation_max_rayleigh\""));
    }

    #[test]
    fn verify_from_stored_solution_negative_control() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = affine_config(dir.path());
        cfg.verify.probes = vec!["second_variation".into()];
        let art = run_solve(&cfg).unwrap();

        // corrupt the stored solution, write it out, and verify from it
        let mut corrupted = art.state.u.clone();
        let interior = corrupted.grid.interior_nodes.clone();
        for &node in &interior {
            let x = corrupted.grid.coords(node).to_vec();
            corrupted.values[node * 2] += 0.05 * (7.0 * x[0]).sin() * (5.0 * x[1]).cos();
        }
        let path = dir.path().join("corrupted.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
        grid::write_field_csv(&corrupted, &mut f).unwrap();
        drop(f);

        cfg.verify.solution_csv_in = Some(path);
        let (_, outcomes, all_passed) = run_verify(&cfg).unwrap();
        assert!(!all_passed, "corrupted solution must fail: {outcomes:?}");
    }
}
