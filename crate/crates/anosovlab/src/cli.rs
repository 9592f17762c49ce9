//! Orchestration: experiment pipelines, JSON configuration, deterministic
//! CSV/SVG artifacts, and a content-hash manifest.
//!
//! Every numeric output is fully determined by (config, seed); worker counts
//! and scheduling never enter the numbers, so identical configs produce
//! byte-identical files.

use crate::dynamics::{
    a_function, birkhoff, integrate, riccati_limits, winding_observable, BirkhoffParams,
    Direction, FlowSpec, SMPoint,
};
use crate::hyperbolic::enumerate_primitive_classes;
use crate::mesh::build::build_bolza_mesh;
use crate::mesh::dec::harmonic_one_form_basis;
use crate::mesh::{kernel, ops, KSection, SurfaceMesh, C64};
use crate::orbits::{
    cat_fixed_count, suspension_invariants, weighted_orbit_average, zeta_partial,
    CatMapSuspension,
};
use crate::resonance::{
    classify, helicity, resonant_recurrence, ruelle_order, seed_space, ClassificationInput,
    HelicityParams, ThermostatData,
};
use crate::vortex::solve_vortex;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {message}")]
pub struct CliError {
    pub stage: String,
    pub message: String,
}

fn stage_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError { stage: stage.to_string(), message: e.to_string() }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum FlowConfig {
    /// geodesic flow of the hyperbolic metric
    Geodesic,
    /// Gaussian thermostat driven by `scale` times a fixed smooth 1-form
    GaussianThermostat { scale: f64 },
    /// thermostat of the solved conformal pair for `scale` times a fixed
    /// holomorphic quadratic differential
    QuasiFuchsian { scale: f64 },
    /// the volume-preserving family deforming X along a harmonic 1-form
    XsFamily { s: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub t: f64,
    pub n_orbits: usize,
    pub seed: u64,
    pub burn_in: f64,
    pub dt: f64,
    pub n_samples: usize,
    pub riccati_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub blowup_tol: f64,
    pub t_relax: f64,
    pub t_cut: f64,
    pub quad_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mesh_level: u32,
    pub flow: FlowConfig,
    pub budgets: BudgetConfig,
    pub tolerances: ToleranceConfig,
    /// pipeline stages to run, in order; subset of
    /// srb | riccati | resonant | helicity | classify
    pub stages: Vec<String>,
    /// recurrence depth for the resonant stage
    pub modes: usize,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
        match name {
            "geodesic-baseline" => Ok(ExperimentConfig {
                name: "geodesic-baseline".into(),
                mesh_level: 3,
                flow: FlowConfig::Geodesic,
                budgets: BudgetConfig {
                    t: 100.0,
                    n_orbits: 16,
                    seed: 7,
                    burn_in: 10.0,
                    dt: 0.01,
                    n_samples: 8,
                    riccati_points: 8,
                },
                tolerances: ToleranceConfig {
                    blowup_tol: 1e9,
                    t_relax: 20.0,
                    t_cut: 25.0,
                    quad_tol: 1e-3,
                },
                stages: vec!["srb".into(), "riccati".into(), "helicity".into(), "classify".into()],
                modes: 6,
            }),
            "quasi-fuchsian" => Ok(ExperimentConfig {
                name: "quasi-fuchsian".into(),
                mesh_level: 3,
                flow: FlowConfig::QuasiFuchsian { scale: 0.5 },
                budgets: BudgetConfig {
                    t: 100.0,
                    n_orbits: 16,
                    seed: 7,
                    burn_in: 10.0,
                    dt: 0.01,
                    n_samples: 8,
                    riccati_points: 8,
                },
                tolerances: ToleranceConfig {
                    blowup_tol: 1e9,
                    t_relax: 20.0,
                    t_cut: 25.0,
                    quad_tol: 1e-3,
                },
                stages: vec![
                    "srb".into(),
                    "riccati".into(),
                    "resonant".into(),
                    "helicity".into(),
                    "classify".into(),
                ],
                modes: 6,
            }),
            other => Err(CliError {
                stage: "config".into(),
                message: format!("unknown preset '{other}'"),
            }),
        }
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(stage_err("config"))?;
        serde_json::from_str(&text).map_err(stage_err("config"))
    }
}

// ---------------------------------------------------------------------------
// deterministic artifact helpers

/// 17-significant-digit float rendering, identical across platforms.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// In-memory artifact bundle; files are written (and hashed) all at once so
/// the manifest is complete by construction.
pub struct ArtifactBundle {
    pub out_dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
}

impl ArtifactBundle {
    pub fn new(out_dir: &Path) -> ArtifactBundle {
        ArtifactBundle { out_dir: out_dir.to_path_buf(), files: BTreeMap::new() }
    }

    pub fn add_csv(&mut self, name: &str, header: &str, rows: &[Vec<String>]) {
        let mut text = String::new();
        text.push_str(header);
        text.push('\n');
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        self.files.insert(name.to_string(), text.into_bytes());
    }

    pub fn add_text(&mut self, name: &str, text: String) {
        self.files.insert(name.to_string(), text.into_bytes());
    }

    /// Write every file plus `manifest.json` listing each output with its
    /// SHA-256 content hash, the tool version, and the provided context.
    pub fn finish(mut self, context: serde_json::Value) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir).map_err(stage_err("write"))?;
        let mut hashes = BTreeMap::new();
        for (name, bytes) in &self.files {
            let mut h = Sha256::new();
            h.update(bytes);
            hashes.insert(name.clone(), format!("{:x}", h.finalize()));
        }
        let manifest = serde_json::json!({
            "tool": "anosovlab",
            "version": env!("CARGO_PKG_VERSION"),
            "context": context,
            "files": hashes,
        });
        let mtext = serde_json::to_string_pretty(&manifest).map_err(stage_err("write"))?;
        self.files.insert("manifest.json".into(), mtext.into_bytes());
        for (name, bytes) in &self.files {
            std::fs::write(self.out_dir.join(name), bytes).map_err(stage_err("write"))?;
        }
        Ok(self.out_dir.join("manifest.json"))
    }
}

/// One plotted series: points in data coordinates with optional symmetric
/// error bars.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub err: Option<Vec<f64>>,
}

const PALETTE: [&str; 4] = ["#1f6fb2", "#c23b22", "#3a7d44", "#7b5aa6"];

/// Deterministic SVG line/scatter plot by direct templating. Empty series
/// lists produce an empty-axes plot.
pub fn render_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], logy: bool) -> String {
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let map_y = |v: f64| if logy { v.max(1e-300).log10() } else { v };
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            xs.push(x);
            ys.push(map_y(y));
            if let Some(e) = &s.err {
                ys.push(map_y(y - e[i]));
                ys.push(map_y(y + e[i]));
            }
        }
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (map_y(y) - y0) / (y1 - y0) * (h - mt - mb);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb,
        h - mb
    );
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" \
         text-anchor=\"middle\">{xlabel}</text>\n",
        (ml + w - mr) / 2.0,
        h - 12.0
    );
    let _ = write!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        if logy { format!("log10 {ylabel}") } else { ylabel.to_string() }
    );
    // tick labels at the corners of the data range
    for (v, x, anchor) in [(x0, ml, "middle"), (x1, w - mr, "middle")] {
        let _ = write!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" \
             text-anchor=\"{anchor}\">{v:.3}</text>\n",
            h - mb + 16.0
        );
    }
    for (v, y) in [(y0, h - mb), (y1, mt)] {
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-family=\"monospace\" font-size=\"10\" \
             text-anchor=\"end\">{v:.3}</text>\n",
            ml - 6.0
        );
    }
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if s.points.len() > 1 {
            let path: Vec<String> =
                s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            );
        }
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            );
            if let Some(e) = &s.err {
                let _ = write!(
                    svg,
                    "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
                     stroke=\"{color}\" stroke-width=\"1\"/>\n",
                    px(x),
                    py(y - e[i]),
                    px(x),
                    py(y + e[i])
                );
            }
        }
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" \
             fill=\"{color}\">{}</text>\n",
            w - mr - 150.0,
            mt + 16.0 * (si as f64 + 1.0),
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(vs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vs {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

// ---------------------------------------------------------------------------
// flow construction shared by the subcommands

pub struct BuiltFlow {
    pub spec: FlowSpec,
    /// base hyperbolic mesh (the spec's mesh may carry a rescaled metric)
    pub base: SurfaceMesh,
    pub vortex: Option<crate::vortex::VortexSolution>,
}

pub fn build_flow(level: u32, flow: &FlowConfig) -> Result<BuiltFlow, CliError> {
    let base = build_bolza_mesh(level).map_err(stage_err("flow"))?;
    match flow {
        FlowConfig::Geodesic => Ok(BuiltFlow {
            spec: FlowSpec::geodesic(base.clone()),
            base,
            vortex: None,
        }),
        FlowConfig::GaussianThermostat { scale } => {
            let rho = ops::smooth_test_sections(&base).map_err(stage_err("flow"))?[1]
                .scale(C64::new(*scale, 0.0));
            Ok(BuiltFlow {
                spec: FlowSpec::gaussian_thermostat(base.clone(), rho),
                base,
                vortex: None,
            })
        }
        FlowConfig::QuasiFuchsian { scale } => {
            let quads = kernel::holomorphic_quadratic_differentials(&base)
                .map_err(stage_err("vortex"))?;
            let a = quads[0].scale(C64::new(*scale, 0.0));
            let sol = solve_vortex(&base, &a, 2).map_err(stage_err("vortex"))?;
            Ok(BuiltFlow {
                spec: FlowSpec::holo_thermostat(&base, &sol),
                base,
                vortex: Some(sol),
            })
        }
        FlowConfig::XsFamily { s } => {
            let theta = harmonic_one_form_basis(&base).map_err(stage_err("flow"))?.swap_remove(0);
            Ok(BuiltFlow {
                spec: FlowSpec::xs_family(base.clone(), theta, *s),
                base,
                vortex: None,
            })
        }
    }
}

fn sample_points(spec: &FlowSpec, n: usize, seed: u64) -> Vec<SMPoint> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2_000_000 + i as u64);
            crate::dynamics::sample_smooth(spec, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// stages

fn stage_mesh(b: &mut ArtifactBundle, mesh: &SurfaceMesh) {
    let rows: Vec<Vec<String>> = (0..mesh.n_verts())
        .map(|i| {
            vec![
                i.to_string(),
                fmt_float(mesh.verts[i].re),
                fmt_float(mesh.verts[i].im),
                fmt_float(mesh.u[i]),
                fmt_float(mesh.mass[i]),
            ]
        })
        .collect();
    b.add_csv("mesh.csv", "vertex,x,y,u,mass", &rows);
    let area: f64 = mesh.mass.iter().sum();
    b.add_csv(
        "mesh_summary.csv",
        "level,vertices,faces,area",
        &[vec![
            mesh.level.to_string(),
            mesh.n_verts().to_string(),
            mesh.faces.len().to_string(),
            fmt_float(area),
        ]],
    );
}

/// Winding + entropy-production Birkhoff report. Returns the two winding
/// zero-flags (forward, backward) for the classification stage.
fn stage_srb(
    b: &mut ArtifactBundle,
    spec: &FlowSpec,
    base: &SurfaceMesh,
    params: BirkhoffParams,
) -> Result<(bool, bool), CliError> {
    let mut rows = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    let mut all_zero = [true, true];
    let div = &crate::dynamics::div_observable;
    for (di, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
        let est = birkhoff(spec, div, params, dir).map_err(stage_err("srb"))?;
        // e+ = -<div>_forward, e- = -<div>_backward
        rows.push(vec![
            format!("entropy_{}", ["plus", "minus"][di]),
            fmt_float(-est.mean),
            fmt_float(est.stderr),
            est.n_orbits.to_string(),
            fmt_float(est.t),
        ]);
    }
    let basis = if base.level >= 3 {
        harmonic_one_form_basis(base).map_err(stage_err("srb"))?
    } else {
        Vec::new()
    };
    for (di, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
        let mut pts = Vec::new();
        let mut errs = Vec::new();
        for (ci, eta) in basis.iter().enumerate() {
            let obs = |s: &FlowSpec, p: SMPoint| winding_observable(s, eta, p);
            let est = birkhoff(spec, &obs, params, dir).map_err(stage_err("srb"))?;
            if est.mean.abs() > 3.0 * est.stderr + 2e-3 {
                all_zero[di] = false;
            }
            rows.push(vec![
                format!("winding_{}_{ci}", ["plus", "minus"][di]),
                fmt_float(est.mean),
                fmt_float(est.stderr),
                est.n_orbits.to_string(),
                fmt_float(est.t),
            ]);
            pts.push((ci as f64, est.mean));
            errs.push(3.0 * est.stderr);
        }
        series.push(Series {
            label: format!("W{}", ["+", "-"][di]),
            points: pts,
            err: Some(errs),
        });
    }
    b.add_csv("srb.csv", "quantity,mean,stderr,n_orbits,t", &rows);
    b.add_text(
        "winding.svg",
        render_plot("winding cycles (3 sigma bars)", "component", "estimate", &series, false),
    );
    Ok((all_zero[0], all_zero[1]))
}

fn stage_riccati(
    b: &mut ArtifactBundle,
    spec: &FlowSpec,
    budgets: &BudgetConfig,
    tol: &ToleranceConfig,
) -> Result<(), CliError> {
    let pts = sample_points(spec, budgets.riccati_points, budgets.seed);
    let mut rows = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let (ru, rs) = riccati_limits(spec, *p, tol.t_relax, budgets.dt).map_err(stage_err("riccati"))?;
        // thermostats admit the closed forms r_u = 1 + Vlambda/2,
        // r_s = -1 + Vlambda/2 in constant curvature
        let vl = crate::dynamics::evaluate_coefficients(spec, *p).map_err(stage_err("riccati"))?.vlambda;
        let (cf_u, cf_s) = (1.0 + 0.5 * vl, -1.0 + 0.5 * vl);
        rows.push(vec![
            i.to_string(),
            fmt_float(p.z.re),
            fmt_float(p.z.im),
            fmt_float(p.theta),
            fmt_float(ru),
            fmt_float(rs),
            fmt_float(ru - cf_u),
            fmt_float(rs - cf_s),
        ]);
    }
    b.add_csv(
        "riccati.csv",
        "point,x,y,theta,r_u,r_s,gap_u_closed_form,gap_s_closed_form",
        &rows,
    );
    Ok(())
}

fn stage_resonant(
    b: &mut ArtifactBundle,
    built: &BuiltFlow,
    cfg: &ExperimentConfig,
) -> Result<(), CliError> {
    let data = match (&cfg.flow, &built.vortex) {
        (FlowConfig::Geodesic, _) => ThermostatData::hyperbolic(built.base.clone()),
        (FlowConfig::QuasiFuchsian { .. }, Some(sol)) => {
            ThermostatData::from_vortex(&built.base, sol).map_err(stage_err("resonant"))?
        }
        _ => {
            return Err(CliError {
                stage: "resonant".into(),
                message: "resonant towers need a geodesic or quasi-fuchsian flow".into(),
            })
        }
    };
    let seeds = seed_space(&data).map_err(stage_err("resonant"))?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut summary = Vec::new();
    for (si, seed) in seeds.iter().enumerate() {
        let (_, rep) = resonant_recurrence(&data, seed, cfg.modes, cfg.tolerances.blowup_tol)
            .map_err(stage_err("resonant"))?;
        for k in 0..rep.residuals.len() {
            rows.push(vec![
                si.to_string(),
                k.to_string(),
                fmt_float(rep.residuals[k]),
                fmt_float(rep.norms[k.min(rep.norms.len() - 1)]),
            ]);
        }
        series.push(Series {
            label: format!("seed {si}"),
            points: rep
                .residuals
                .iter()
                .enumerate()
                .map(|(k, &r)| (k as f64, r))
                .collect(),
            err: None,
        });
        summary.push(vec![
            si.to_string(),
            rep.z_exponent.to_string(),
            fmt_float(rep.growth_slope),
        ]);
    }
    b.add_csv("resonant.csv", "seed,mode,residual,norm", &rows);
    b.add_csv("resonant_summary.csv", "seed,z_exponent,growth_slope", &summary);
    b.add_text(
        "resonant_residuals.svg",
        render_plot("ladder consistency residuals", "mode", "residual", &series, true),
    );
    Ok(())
}

fn stage_helicity(
    b: &mut ArtifactBundle,
    spec: &FlowSpec,
    cfg: &ExperimentConfig,
) -> Result<Option<bool>, CliError> {
    let params = HelicityParams {
        birkhoff: BirkhoffParams {
            t: cfg.budgets.t,
            n_orbits: cfg.budgets.n_orbits,
            seed: cfg.budgets.seed,
            burn_in: cfg.budgets.burn_in,
            dt: cfg.budgets.dt,
        },
        n_samples: cfg.budgets.n_samples,
        t_cut: cfg.tolerances.t_cut,
        tol: cfg.tolerances.quad_tol,
        dt: cfg.budgets.dt,
        t_relax: cfg.tolerances.t_relax,
    };
    // vanishing of the winding cycles is reported by the srb stage; the
    // helicity formula itself is evaluated without re-running the guard
    let est = helicity(spec, &[], params).map_err(stage_err("helicity"))?;
    b.add_csv(
        "helicity.csv",
        "value,stderr,e_plus,e_plus_stderr,a_sq_integral,a_sq_stderr,vol",
        &[vec![
            fmt_float(est.value),
            fmt_float(est.stderr),
            fmt_float(est.e_plus),
            fmt_float(est.e_plus_stderr),
            fmt_float(est.a_sq_integral),
            fmt_float(est.a_sq_stderr),
            fmt_float(est.vol),
        ]],
    );
    Ok(Some(est.value.abs() <= 3.0 * est.stderr))
}

fn stage_classify(
    b: &mut ArtifactBundle,
    input: ClassificationInput,
) -> Result<(), CliError> {
    let c = classify(input).map_err(stage_err("classify"))?;
    b.add_csv(
        "classify.csv",
        "w_plus_zero,w_minus_zero,helicity_zero,b1,res01_d_nontrivial,m10,res1_d_nontrivial,m1,ruelle_order",
        &[vec![
            input.w_plus_zero.to_string(),
            input.w_minus_zero.to_string(),
            input
                .helicity_zero
                .map(|v| v.to_string())
                .unwrap_or_else(|| "na".into()),
            input.b1.to_string(),
            c.res01_d_nontrivial.to_string(),
            c.m10.to_string(),
            c.res1_d_nontrivial.to_string(),
            c.m1.to_string(),
            ruelle_order(c.m10).to_string(),
        ]],
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline

/// Run a full configured pipeline into `out_dir`, returning the manifest path.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf, CliError> {
    let mut b = ArtifactBundle::new(out_dir);
    let built = build_flow(cfg.mesh_level, &cfg.flow)?;
    stage_mesh(&mut b, &built.spec.mesh);
    if let Some(sol) = &built.vortex {
        let rows: Vec<Vec<String>> = (0..built.base.n_verts())
            .map(|i| {
                vec![i.to_string(), fmt_float(sol.u.values[i]), fmt_float(sol.k.values[i])]
            })
            .collect();
        b.add_csv("vortex.csv", "vertex,u,k", &rows);
    }
    let params = BirkhoffParams {
        t: cfg.budgets.t,
        n_orbits: cfg.budgets.n_orbits,
        seed: cfg.budgets.seed,
        burn_in: cfg.budgets.burn_in,
        dt: cfg.budgets.dt,
    };
    let mut winding_flags: Option<(bool, bool)> = None;
    let mut helicity_flag: Option<bool> = None;
    for stage in &cfg.stages {
        match stage.as_str() {
            "srb" => winding_flags = Some(stage_srb(&mut b, &built.spec, &built.base, params)?),
            "riccati" => stage_riccati(&mut b, &built.spec, &cfg.budgets, &cfg.tolerances)?,
            "resonant" => stage_resonant(&mut b, &built, cfg)?,
            "helicity" => helicity_flag = stage_helicity(&mut b, &built.spec, cfg)?,
            "classify" => {
                let (wp, wm) = winding_flags.ok_or_else(|| CliError {
                    stage: "classify".into(),
                    message: "classify requires the srb stage to run first".into(),
                })?;
                // helicity decides the table row only when both cycles vanish
                let hz = if wp && wm { helicity_flag.or(Some(false)) } else { None };
                stage_classify(
                    &mut b,
                    ClassificationInput {
                        w_plus_zero: wp,
                        w_minus_zero: wm,
                        helicity_zero: hz,
                        b1: 4,
                    },
                )?;
            }
            other => {
                return Err(CliError {
                    stage: "pipeline".into(),
                    message: format!("unknown stage '{other}'"),
                })
            }
        }
    }
    b.finish(serde_json::json!({
        "config": cfg,
        "seed": cfg.budgets.seed,
    }))
}

// ---------------------------------------------------------------------------
// command line

#[derive(Parser, Debug)]
#[command(name = "anosovlab", about = "numerical laboratory for dissipative flows")]
pub struct Cli {
    /// JSON experiment config (unknown keys rejected)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// override the config's random seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// output directory for CSV/SVG artifacts and the manifest
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a surface mesh and dump vertices + summary
    Mesh {
        #[arg(long, default_value_t = 2)]
        level: u32,
    },
    /// Certified kernel dimensions of the ladder operators
    Kernels {
        #[arg(long, default_value_t = 3)]
        level: u32,
    },
    /// Solve the conformal-factor equation for a scaled differential
    Vortex {
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
    },
    /// Integrate one sample orbit of a flow
    Flow {
        #[arg(long, default_value_t = 2)]
        level: u32,
        #[arg(long, default_value = "geodesic")]
        kind: String,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 10.0)]
        t: f64,
    },
    /// Birkhoff winding + entropy-production report
    Srb {
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value = "geodesic")]
        kind: String,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
    },
    /// Stable/unstable Riccati limits at sample points
    Riccati {
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value = "geodesic")]
        kind: String,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Damping-function samples along orbits
    Afun {
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value = "quasi-fuchsian")]
        kind: String,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Resonant mode towers and consistency residuals
    Resonant {
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value = "geodesic")]
        kind: String,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 6)]
        modes: usize,
    },
    /// Helicity estimate for a flow
    Helicity {
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value = "geodesic")]
        kind: String,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
    },
    /// Classification table lookup
    Classify {
        #[arg(long)]
        w_plus_zero: bool,
        #[arg(long)]
        w_minus_zero: bool,
        #[arg(long)]
        helicity_zero: Option<bool>,
        #[arg(long, default_value_t = 4)]
        b1: i64,
    },
    /// Cat-map suspension invariants and fixed-point counts
    Suspension {
        /// matrix entries a,b,c,d row-major
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [2i64, 1, 1, 1])]
        matrix: Vec<i64>,
        #[arg(long, default_value_t = 10)]
        n_max: u32,
    },
    /// Partial Ruelle zeta products over primitive geodesics
    Zeta {
        #[arg(long, default_value_t = 2.0)]
        s: f64,
        #[arg(long, default_value_t = 0.0)]
        s_im: f64,
        #[arg(long, default_value_t = 7.0)]
        l: f64,
    },
    /// Length-window weighted orbital averages for the geodesic flow
    OrbitAverage {
        #[arg(long, default_value_t = 2)]
        level: u32,
        #[arg(long, default_value_t = 6.2)]
        t: f64,
        /// "const" or "harmonic:<index>"
        #[arg(long, default_value = "const")]
        observable: String,
    },
    /// Run a full configured pipeline (preset or --config)
    Run {
        #[arg(long, default_value = "geodesic-baseline")]
        preset: String,
    },
}

fn flow_config(kind: &str, scale: f64) -> Result<FlowConfig, CliError> {
    match kind {
        "geodesic" => Ok(FlowConfig::Geodesic),
        "gaussian" => Ok(FlowConfig::GaussianThermostat { scale }),
        "quasi-fuchsian" => Ok(FlowConfig::QuasiFuchsian { scale }),
        "xs" => Ok(FlowConfig::XsFamily { s: scale }),
        other => Err(CliError {
            stage: "flow".into(),
            message: format!("unknown flow kind '{other}'"),
        }),
    }
}

fn default_config_for(kind: &str, scale: f64, level: u32) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::preset("geodesic-baseline")?;
    cfg.flow = flow_config(kind, scale)?;
    cfg.mesh_level = level;
    Ok(cfg)
}

/// Execute a parsed command; returns the manifest path of the bundle written.
pub fn execute(cli: &Cli) -> Result<PathBuf, CliError> {
    let out = &cli.out_dir;
    match &cli.cmd {
        Command::Mesh { level } => {
            let mesh = build_bolza_mesh(*level).map_err(stage_err("mesh"))?;
            let mut b = ArtifactBundle::new(out);
            stage_mesh(&mut b, &mesh);
            b.finish(serde_json::json!({"command": "mesh", "level": level}))
        }
        Command::Kernels { level } => {
            let mesh = build_bolza_mesh(*level).map_err(stage_err("kernels"))?;
            let zero2 = KSection {
                degree: 2,
                values: vec![C64::new(0.0, 0.0); mesh.n_verts()],
            };
            let spaces: Vec<(&str, i32, bool, Option<&KSection>, usize)> = vec![
                ("lowering_h0", 0, true, None, 1),
                ("lowering_h1", 1, true, None, 2),
                ("twisted_lowering_h1", 1, true, Some(&zero2), 2),
                ("raising_h1", 1, false, None, 0),
                ("raising_h2", 2, false, None, 0),
            ];
            let mut rows = Vec::new();
            for (name, m, lower, twist, dim) in spaces {
                let op = ops::face_ladder_operator(&mesh, m, lower, twist);
                let kb = kernel::kernel_basis_expect(&op, &mesh, dim).map_err(stage_err("kernels"))?;
                rows.push(vec![
                    name.to_string(),
                    kb.dim.to_string(),
                    fmt_float(kb.gap),
                    fmt_float(kb.singular_values[0]),
                ]);
            }
            let harm = harmonic_one_form_basis(&mesh).map_err(stage_err("kernels"))?;
            rows.push(vec![
                "harmonic_one_forms".to_string(),
                harm.len().to_string(),
                fmt_float(0.0),
                fmt_float(0.0),
            ]);
            let mut b = ArtifactBundle::new(out);
            b.add_csv("kernels.csv", "space,dim,gap,sigma_min", &rows);
            b.finish(serde_json::json!({"command": "kernels", "level": level}))
        }
        Command::Vortex { level, scale } => {
            let mesh = build_bolza_mesh(*level).map_err(stage_err("vortex"))?;
            let quads = kernel::holomorphic_quadratic_differentials(&mesh).map_err(stage_err("vortex"))?;
            let a = quads[0].scale(C64::new(*scale, 0.0));
            let sol = solve_vortex(&mesh, &a, 2).map_err(stage_err("vortex"))?;
            let rows: Vec<Vec<String>> = (0..mesh.n_verts())
                .map(|i| {
                    vec![i.to_string(), fmt_float(sol.u.values[i]), fmt_float(sol.k.values[i])]
                })
                .collect();
            let kmin = sol.k.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let kmax = sol.k.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut b = ArtifactBundle::new(out);
            b.add_csv("vortex.csv", "vertex,u,k", &rows);
            b.add_csv(
                "vortex_summary.csv",
                "level,scale,newton_residual,k_min,k_max",
                &[vec![
                    level.to_string(),
                    fmt_float(*scale),
                    fmt_float(sol.newton_residual),
                    fmt_float(kmin),
                    fmt_float(kmax),
                ]],
            );
            b.finish(serde_json::json!({"command": "vortex", "level": level, "scale": scale}))
        }
        Command::Flow { level, kind, scale, t } => {
            let built = build_flow(*level, &flow_config(kind, *scale)?)?;
            let mut p = SMPoint { z: C64::new(0.1, 0.05), theta: 0.4 };
            let dt = 0.01;
            let n = (*t / 0.1).ceil() as usize;
            let mut rows = vec![vec![
                fmt_float(0.0),
                fmt_float(p.z.re),
                fmt_float(p.z.im),
                fmt_float(p.theta),
            ]];
            for k in 1..=n {
                p = integrate(&built.spec, p, 0.1, dt).map_err(stage_err("flow"))?.end;
                rows.push(vec![
                    fmt_float(0.1 * k as f64),
                    fmt_float(p.z.re),
                    fmt_float(p.z.im),
                    fmt_float(p.theta),
                ]);
            }
            let mut b = ArtifactBundle::new(out);
            b.add_csv("flow.csv", "t,x,y,theta", &rows);
            b.add_text(
                "orbit.svg",
                render_plot(
                    &format!("{} orbit", built.spec.name),
                    "x",
                    "y",
                    &[Series {
                        label: built.spec.name.clone(),
                        points: rows
                            .iter()
                            .map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap()))
                            .collect(),
                        err: None,
                    }],
                    false,
                ),
            );
            b.finish(serde_json::json!({"command": "flow", "kind": kind, "level": level, "t": t}))
        }
        Command::Srb { level, kind, scale } => {
            let mut cfg = default_config_for(kind, *scale, *level)?;
            if let Some(s) = cli.seed {
                cfg.budgets.seed = s;
            }
            let built = build_flow(cfg.mesh_level, &cfg.flow)?;
            let params = BirkhoffParams {
                t: cfg.budgets.t,
                n_orbits: cfg.budgets.n_orbits,
                seed: cfg.budgets.seed,
                burn_in: cfg.budgets.burn_in,
                dt: cfg.budgets.dt,
            };
            let mut b = ArtifactBundle::new(out);
            stage_srb(&mut b, &built.spec, &built.base, params)?;
            b.finish(serde_json::json!({"command": "srb", "config": cfg}))
        }
        Command::Riccati { level, kind, scale, points } => {
            let mut cfg = default_config_for(kind, *scale, *level)?;
            cfg.budgets.riccati_points = *points;
            if let Some(s) = cli.seed {
                cfg.budgets.seed = s;
            }
            let built = build_flow(cfg.mesh_level, &cfg.flow)?;
            let mut b = ArtifactBundle::new(out);
            stage_riccati(&mut b, &built.spec, &cfg.budgets, &cfg.tolerances)?;
            b.finish(serde_json::json!({"command": "riccati", "config": cfg}))
        }
        Command::Afun { level, kind, scale, points } => {
            let mut cfg = default_config_for(kind, *scale, *level)?;
            if let Some(s) = cli.seed {
                cfg.budgets.seed = s;
            }
            let built = build_flow(cfg.mesh_level, &cfg.flow)?;
            let pts = sample_points(&built.spec, *points, cfg.budgets.seed);
            let mut rows = Vec::new();
            for (i, p) in pts.iter().enumerate() {
                let a = a_function(
                    &built.spec,
                    *p,
                    cfg.tolerances.t_cut,
                    cfg.tolerances.quad_tol,
                    cfg.budgets.dt,
                    cfg.tolerances.t_relax,
                )
                .map_err(stage_err("afun"))?;
                rows.push(vec![
                    i.to_string(),
                    fmt_float(p.z.re),
                    fmt_float(p.z.im),
                    fmt_float(p.theta),
                    fmt_float(a),
                ]);
            }
            let mut b = ArtifactBundle::new(out);
            b.add_csv("afun.csv", "point,x,y,theta,a_value", &rows);
            b.finish(serde_json::json!({"command": "afun", "config": cfg}))
        }
        Command::Resonant { level, kind, scale, modes } => {
            let mut cfg = default_config_for(kind, *scale, *level)?;
            cfg.modes = *modes;
            let built = build_flow(cfg.mesh_level, &cfg.flow)?;
            let mut b = ArtifactBundle::new(out);
            stage_resonant(&mut b, &built, &cfg)?;
            b.finish(serde_json::json!({"command": "resonant", "config": cfg}))
        }
        Command::Helicity { level, kind, scale } => {
            let mut cfg = default_config_for(kind, *scale, *level)?;
            if let Some(s) = cli.seed {
                cfg.budgets.seed = s;
            }
            let built = build_flow(cfg.mesh_level, &cfg.flow)?;
            let mut b = ArtifactBundle::new(out);
            stage_helicity(&mut b, &built.spec, &cfg)?;
            b.finish(serde_json::json!({"command": "helicity", "config": cfg}))
        }
        Command::Classify { w_plus_zero, w_minus_zero, helicity_zero, b1 } => {
            let mut b = ArtifactBundle::new(out);
            stage_classify(
                &mut b,
                ClassificationInput {
                    w_plus_zero: *w_plus_zero,
                    w_minus_zero: *w_minus_zero,
                    helicity_zero: *helicity_zero,
                    b1: *b1,
                },
            )?;
            b.finish(serde_json::json!({"command": "classify"}))
        }
        Command::Suspension { matrix, n_max } => {
            let m = [[matrix[0], matrix[1]], [matrix[2], matrix[3]]];
            let susp = CatMapSuspension::new(m).map_err(stage_err("suspension"))?;
            let inv = suspension_invariants(&susp).map_err(stage_err("suspension"))?;
            let mut rows = Vec::new();
            for n in 1..=*n_max {
                rows.push(vec![n.to_string(), cat_fixed_count(&susp, n).map_err(stage_err("suspension"))?.to_string()]);
            }
            let mut b = ArtifactBundle::new(out);
            b.add_csv("suspension_counts.csv", "n,fixed_points", &rows);
            b.add_csv(
                "suspension_invariants.csv",
                "b1,winding_nonzero,winding_dt,m10,m1,ruelle_order",
                &[vec![
                    inv.b1.to_string(),
                    inv.winding_nonzero.to_string(),
                    fmt_float(inv.winding_dt),
                    inv.classification.m10.to_string(),
                    inv.classification.m1.to_string(),
                    inv.ruelle_order.to_string(),
                ]],
            );
            b.finish(serde_json::json!({"command": "suspension", "matrix": matrix}))
        }
        Command::Zeta { s, s_im, l } => {
            let group = crate::hyperbolic::bolza_group();
            let set = enumerate_primitive_classes(&group, *l, 50_000_000).map_err(stage_err("zeta"))?;
            let sc = C64::new(*s, *s_im);
            let mut rows = Vec::new();
            let mut cut = 4.0;
            while cut <= *l + 1e-9 {
                let z = zeta_partial(&set, sc, cut).map_err(stage_err("zeta"))?;
                rows.push(vec![fmt_float(cut), fmt_float(z.re), fmt_float(z.im)]);
                cut += 1.0;
            }
            let mut b = ArtifactBundle::new(out);
            b.add_csv("zeta.csv", "l,re,im", &rows);
            b.finish(serde_json::json!({"command": "zeta", "s": s, "s_im": s_im, "l": l}))
        }
        Command::OrbitAverage { level, t, observable } => {
            let mesh = build_bolza_mesh(*level).map_err(stage_err("orbit-average"))?;
            let eta = if let Some(idx) = observable.strip_prefix("harmonic:") {
                let i: usize = idx.parse().map_err(stage_err("orbit-average"))?;
                Some(harmonic_one_form_basis(&mesh).map_err(stage_err("orbit-average"))?.swap_remove(i))
            } else if observable == "const" {
                None
            } else {
                return Err(CliError {
                    stage: "orbit-average".into(),
                    message: format!("unknown observable '{observable}'"),
                });
            };
            let spec = FlowSpec::geodesic(mesh);
            let set =
                enumerate_primitive_classes(&spec.mesh.group, *t, 50_000_000).map_err(stage_err("orbit-average"))?;
            let obs: Box<dyn Fn(&FlowSpec, SMPoint) -> f64 + Sync> = match &eta {
                Some(e) => Box::new(move |s: &FlowSpec, p: SMPoint| winding_observable(s, e, p)),
                None => Box::new(|_: &FlowSpec, _: SMPoint| 1.0),
            };
            let est = weighted_orbit_average(&spec, &set, &*obs, *t, 0.01, false).map_err(stage_err("orbit-average"))?;
            let mut b = ArtifactBundle::new(out);
            b.add_csv(
                "orbit_average.csv",
                "t,value,spread,n_orbits,weight_sum",
                &[vec![
                    fmt_float(*t),
                    fmt_float(est.value),
                    fmt_float(est.spread),
                    est.n_orbits.to_string(),
                    fmt_float(est.weight_sum),
                ]],
            );
            b.finish(serde_json::json!({
                "command": "orbit-average", "t": t, "observable": observable
            }))
        }
        Command::Run { preset } => {
            let mut cfg = match &cli.config {
                Some(path) => ExperimentConfig::from_file(path)?,
                None => ExperimentConfig::preset(preset)?,
            };
            if let Some(s) = cli.seed {
                cfg.budgets.seed = s;
            }
            run_pipeline(&cfg, out)
        }
    }
}
