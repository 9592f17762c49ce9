//! Resonant 1-forms at zero for thermostat flows: twisted-ladder recurrences,
//! reconstruction in the frame coframe, helicity, the winding/helicity
//! classification table, and the order of vanishing of the zeta function.

use crate::dynamics::{
    birkhoff, a_function, evaluate_coefficients, BirkhoffParams, Direction, FlowError, FlowSpec,
    SMPoint,
};
use crate::mesh::{kernel, ops, KSection, MeshError, ScalarField, SurfaceMesh, C64};
use crate::vortex::VortexSolution;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResonanceError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("curvature not negative: max K = {0}")]
    CurvatureNotNegative(f64),
    #[error("consistency residual blowup at mode {k}: {residual:.3e}")]
    ResidualBlowup { k: usize, residual: f64 },
    #[error("winding cycle component {component} is nonzero: {mean} +- {stderr}")]
    WindingNotZero { component: usize, mean: f64, stderr: f64 },
    #[error("invalid classification input: {0}")]
    InvalidCase(String),
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Metric + generator data of a thermostat in the form needed by the twisted
/// ladder recurrences: the (rescaled) mesh, the degree-2 component of the
/// generator, and the pointwise curvature.
pub struct ThermostatData {
    pub mesh: SurfaceMesh,
    pub lambda2: KSection,
    pub kfield: Vec<f64>,
}

impl ThermostatData {
    /// From a solved conformal pair of degree 2.
    pub fn from_vortex(base: &SurfaceMesh, sol: &VortexSolution) -> Result<Self, ResonanceError> {
        if sol.m != 2 {
            return Err(ResonanceError::BadInput(format!(
                "recurrences require a degree-2 differential, got {}",
                sol.m
            )));
        }
        let mesh = base.with_metric(&sol.u);
        let half_mi = C64::new(0.0, -0.5);
        let vals: Vec<C64> = sol
            .a
            .values
            .iter()
            .zip(&sol.u.values)
            .map(|(a, &u)| half_mi * a * (-2.0 * u).exp())
            .collect();
        Ok(ThermostatData {
            mesh,
            lambda2: KSection { degree: 2, values: vals },
            kfield: sol.k.values.clone(),
        })
    }

    /// The untwisted (hyperbolic, zero differential) case.
    pub fn hyperbolic(mesh: SurfaceMesh) -> Self {
        let n = mesh.n_verts();
        ThermostatData {
            lambda2: KSection { degree: 2, values: vec![C64::new(0.0, 0.0); n] },
            kfield: vec![-1.0; n],
            mesh,
        }
    }

    fn check_curvature(&self) -> Result<(), ResonanceError> {
        let kmax = self.kfield.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if kmax >= 0.0 {
            return Err(ResonanceError::CurvatureNotNegative(kmax));
        }
        Ok(())
    }
}

/// Seeds of the recurrence: the kernel of the twisted lowering operator on
/// degree-1 sections (complex dimension 2, certified by the spectral gap).
pub fn seed_space(data: &ThermostatData) -> Result<Vec<KSection>, ResonanceError> {
    let op = ops::face_ladder_operator(&data.mesh, 1, true, Some(&data.lambda2));
    let kb = kernel::kernel_basis_expect(&op, &data.mesh, 2)?;
    Ok(kb.sections)
}

/// Positive-degree Fourier tower h = sum_k h_k with the real structure
/// h_{-k} = conj h_k and h_0 = 0; comps[j] is the degree-(j+1) component.
#[derive(Debug, Clone)]
pub struct FourierField {
    pub comps: Vec<KSection>,
}

impl FourierField {
    pub fn n_modes(&self) -> usize {
        self.comps.len()
    }

    pub fn is_zero(&self) -> bool {
        self.comps
            .iter()
            .all(|c| c.values.iter().all(|v| v.norm() == 0.0))
    }

    pub fn scale(&self, s: C64) -> FourierField {
        FourierField { comps: self.comps.iter().map(|c| c.scale(s)).collect() }
    }

    /// Evaluate the truncated real function 2 Re sum_k h_k e^{i k theta}.
    pub fn eval(&self, mesh: &SurfaceMesh, z: C64, theta: f64) -> Option<f64> {
        let mut v = 0.0;
        for c in &self.comps {
            let cv = mesh.eval_section(c, z)?;
            v += 2.0 * (cv * C64::from_polar(1.0, c.degree as f64 * theta)).re;
        }
        Some(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecurrenceReport {
    /// relative consistency residual per mode: entry k (0-based) checks the
    /// lowering equation pairing h_k with h_{k+1} (entry 0 is the seed check)
    pub residuals: Vec<f64>,
    /// L2 norm of each constructed mode, k = 1..=n
    pub norms: Vec<f64>,
    /// ceil(sup |mu_-(1/K)|^2), the exponent entering the growth bound
    pub z_exponent: u64,
    /// fitted log-log slope of ||h_k|| vs k over k in [8, n] (NaN if n < 10)
    pub growth_slope: f64,
}

/// Default consistency-blowup threshold (relative, per mode).
pub const BLOWUP_TOL: f64 = 1e-2;

/// Build the mode tower from a seed h1 in the kernel of the twisted lowering
/// operator: h_k = 2 mu_+ h_{k-1} / ((k-1) K), checking the companion
/// lowering identity 2 mu_- h_{k+1} = -(k+1) K h_k mode by mode.
pub fn resonant_recurrence(
    data: &ThermostatData,
    h1: &KSection,
    n: usize,
    blowup_tol: f64,
) -> Result<(FourierField, RecurrenceReport), ResonanceError> {
    if h1.degree != 1 {
        return Err(ResonanceError::BadInput(format!("seed degree {} != 1", h1.degree)));
    }
    if n < 1 || n > 64 {
        return Err(ResonanceError::BadInput(format!("mode count {n} outside 1..=64")));
    }
    data.check_curvature()?;
    let mesh = &data.mesh;
    let nv = mesh.n_verts();

    // Each mode solves the overdetermined pair
    //   (k-1) K h_k = 2 mu_+ h_{k-1},   2 mu_- h_k = -k K h_{k-1}
    // in the mass-weighted least-squares sense. Plain pointwise division by
    // (k-1)K is exact in the continuum but numerically unstable: iterated
    // raising amplifies grid-frequency noise exponentially in k, while the
    // lowering equation penalizes exactly those components.
    let mut comps = vec![h1.clone()];
    for k in 2..=n as i32 {
        let prev = &comps[k as usize - 2].values;
        let rhs_up = ops::mu_plus(mesh, &data.lambda2, k - 1).apply(prev);
        let mdown = ops::mu_minus(mesh, &data.lambda2, k);
        let mut a = DMatrix::<C64>::zeros(nv, nv);
        let mut b = DVector::<C64>::zeros(nv);
        for i in 0..nv {
            let m = mesh.mass[i];
            let d = (k - 1) as f64 * data.kfield[i];
            a[(i, i)] += C64::new(m * d * d, 0.0);
            b[i] += m * d * 2.0 * rhs_up[i];
            let row = &mdown.rows[i];
            let t = k as f64 * data.kfield[i] * prev[i];
            for &(p, cp) in row {
                b[p as usize] += -2.0 * m * cp.conj() * t;
                for &(q, cq) in row {
                    a[(p as usize, q as usize)] += 4.0 * m * cp.conj() * cq;
                }
            }
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| ResonanceError::BadInput("mode system not positive definite".into()))?;
        let vals: Vec<C64> = chol.solve(&b).iter().cloned().collect();
        comps.push(KSection { degree: k, values: vals });
    }
    let field = FourierField { comps };

    let norms: Vec<f64> = field.comps.iter().map(|c| mesh.norm(&c.values)).collect();
    let mut residuals = Vec::with_capacity(n);
    for k in 0..n {
        let hk_norm = if k == 0 { norms[0] } else { norms[k - 1] };
        if hk_norm == 0.0 {
            residuals.push(0.0);
            continue;
        }
        let down =
            ops::mu_minus(mesh, &data.lambda2, k as i32 + 1).apply_section(&field.comps[k]);
        let res: Vec<C64> = if k == 0 {
            down.values.clone()
        } else {
            (0..nv)
                .map(|i| {
                    2.0 * down.values[i]
                        + (k as f64 + 1.0) * data.kfield[i] * field.comps[k - 1].values[i]
                })
                .collect()
        };
        let scale = if k == 0 { hk_norm } else { (k as f64 + 1.0) * hk_norm };
        let r = mesh.norm(&res) / scale;
        if r > blowup_tol {
            return Err(ResonanceError::ResidualBlowup { k, residual: r });
        }
        residuals.push(r);
    }

    // growth-bound exponent from the twisted lowering of 1/K
    let invk: Vec<C64> = data.kfield.iter().map(|&k| C64::new(1.0 / k, 0.0)).collect();
    let mk = ops::mu_minus(mesh, &data.lambda2, 0).apply(&invk);
    let sup = mk.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let z_exponent = (sup * sup).ceil() as u64;

    let growth_slope = if n >= 10 {
        let pts: Vec<(f64, f64)> = (8..=n)
            .filter(|&k| norms[k - 1] > 0.0)
            .map(|k| ((k as f64).ln(), norms[k - 1].ln()))
            .collect();
        let m = pts.len() as f64;
        let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (sxx, sxy): (f64, f64) = pts
            .iter()
            .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
        (m * sxy - sx * sy) / (m * sxx - sx * sx)
    } else {
        f64::NAN
    };

    Ok((field, RecurrenceReport { residuals, norms, z_exponent, growth_slope }))
}

/// The companion tower for the reversed flow, obtained from the flip
/// symmetry: mode k picks up the sign (-1)^k (the conjugation that moves it
/// to degree -k is folded into the Hermitian pairing).
pub fn coresonant_field(h: &FourierField) -> FourierField {
    FourierField {
        comps: h
            .comps
            .iter()
            .map(|c| {
                if c.degree % 2 == 0 {
                    c.clone()
                } else {
                    c.scale(C64::new(-1.0, 0.0))
                }
            })
            .collect(),
    }
}

/// Resonant 1-form reconstructed from its stable-horocyclic contraction h:
/// u = C (-lambda alpha - r^u beta + psi) with C = -h/2, expressed through
/// its frame-coframe coefficients.
pub struct ResonantForm {
    /// coefficient of the contact form psi (the vertical coframe leg)
    pub c: FourierField,
}

/// C = -h/2; the contractions with the flow and with the unstable direction
/// vanish identically by construction.
pub fn reconstruct_resonant_form(h: &FourierField) -> ResonantForm {
    ResonantForm { c: h.scale(C64::new(-0.5, 0.0)) }
}

impl ResonantForm {
    /// Contract u with the vector field x X + w H + v V at a phase point.
    pub fn contract(
        &self,
        spec: &FlowSpec,
        p: SMPoint,
        (x, w, v): (f64, f64, f64),
    ) -> Result<f64, ResonanceError> {
        let coeff = evaluate_coefficients(spec, p)?;
        let cval = self
            .c
            .eval(&spec.mesh, p.z, p.theta)
            .ok_or(FlowError::OutsideDomain(p.z.re, p.z.im))?;
        let ru = 1.0 + 0.5 * coeff.vlambda;
        Ok(cval * (-coeff.lambda * x - ru * w + v))
    }

    /// Contraction with the thermostat field X + lambda V (exact zero).
    pub fn contract_flow(&self, spec: &FlowSpec, p: SMPoint) -> Result<f64, ResonanceError> {
        let lam = evaluate_coefficients(spec, p)?.lambda;
        self.contract(spec, p, (1.0, 0.0, lam))
    }

    /// Contraction with the unstable direction H + r^u V (exact zero).
    pub fn contract_unstable(&self, spec: &FlowSpec, p: SMPoint) -> Result<f64, ResonanceError> {
        let ru = 1.0 + 0.5 * evaluate_coefficients(spec, p)?.vlambda;
        self.contract(spec, p, (0.0, 1.0, ru))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HelicityParams {
    pub birkhoff: BirkhoffParams,
    /// Monte-Carlo sample count for the damping-function square integral
    pub n_samples: usize,
    pub t_cut: f64,
    pub tol: f64,
    pub dt: f64,
    pub t_relax: f64,
}

impl Default for HelicityParams {
    fn default() -> Self {
        HelicityParams {
            birkhoff: BirkhoffParams { t: 300.0, n_orbits: 32, seed: 0, burn_in: 10.0, dt: 0.01 },
            n_samples: 48,
            t_cut: 30.0,
            tol: 1e-3,
            dt: 0.01,
            t_relax: 20.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HelicityEstimate {
    pub value: f64,
    pub stderr: f64,
    pub e_plus: f64,
    pub e_plus_stderr: f64,
    /// integral of a^2 against the smooth volume (total mass 2 pi vol)
    pub a_sq_integral: f64,
    pub a_sq_stderr: f64,
    pub vol: f64,
}

/// Helicity via the entropy-production / damping-function formula:
/// H = (1 + e+/2) / (2 pi vol + int a^2). The winding cycles of the basis
/// forms are tested first and must vanish statistically (pass an empty basis
/// to skip, e.g. when vanishing is exact by symmetry).
pub fn helicity(
    spec: &FlowSpec,
    winding_basis: &[KSection],
    params: HelicityParams,
) -> Result<HelicityEstimate, ResonanceError> {
    for (ci, eta) in winding_basis.iter().enumerate() {
        for dir in [Direction::Forward, Direction::Backward] {
            let obs =
                |s: &FlowSpec, p: SMPoint| crate::dynamics::winding_observable(s, eta, p);
            let est = birkhoff(spec, &obs, params.birkhoff, dir)?;
            if est.mean.abs() > 3.0 * est.stderr + 2e-3 {
                return Err(ResonanceError::WindingNotZero {
                    component: ci,
                    mean: est.mean,
                    stderr: est.stderr,
                });
            }
        }
    }

    let vol: f64 = spec.mesh.mass.iter().sum();
    let liouville = 2.0 * std::f64::consts::PI * vol;

    if spec.lambda.is_zero() {
        // divergence and damping vanish identically: the value is exact
        return Ok(HelicityEstimate {
            value: 1.0 / liouville,
            stderr: 0.0,
            e_plus: 0.0,
            e_plus_stderr: 0.0,
            a_sq_integral: 0.0,
            a_sq_stderr: 0.0,
            vol,
        });
    }

    let div = birkhoff(spec, &crate::dynamics::div_observable, params.birkhoff, Direction::Forward)?;
    let (e_plus, e_plus_stderr) = (-div.mean, div.stderr);

    let mut vals = Vec::with_capacity(params.n_samples);
    for i in 0..params.n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(params.birkhoff.seed);
        rng.set_stream(1_000_000 + i as u64);
        let p = crate::dynamics::sample_smooth(spec, &mut rng);
        let a = a_function(spec, p, params.t_cut, params.tol, params.dt, params.t_relax)?;
        vals.push(a * a);
    }
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0).max(1.0);
    let a_sq_integral = mean * liouville;
    let a_sq_stderr = (var / m).sqrt() * liouville;

    let num = 1.0 + 0.5 * e_plus;
    let den = liouville + a_sq_integral;
    let value = num / den;
    let rel = ((0.5 * e_plus_stderr / num).powi(2) + (a_sq_stderr / den).powi(2)).sqrt();
    Ok(HelicityEstimate {
        value,
        stderr: value.abs() * rel,
        e_plus,
        e_plus_stderr,
        a_sq_integral,
        a_sq_stderr,
        vol,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassificationInput {
    pub w_plus_zero: bool,
    pub w_minus_zero: bool,
    /// meaningful only when both winding flags are true
    pub helicity_zero: Option<bool>,
    pub b1: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub res01_d_nontrivial: bool,
    pub m10: i64,
    pub res1_d_nontrivial: bool,
    pub m1: i64,
}

/// The five-case multiplicity table as a function of the winding cycles and
/// the helicity, with the first Betti number substituted.
pub fn classify(input: ClassificationInput) -> Result<Classification, ResonanceError> {
    let b1 = input.b1;
    match (input.w_plus_zero, input.w_minus_zero, input.helicity_zero) {
        (false, false, None) => Ok(Classification {
            res01_d_nontrivial: false,
            m10: b1 - 1,
            res1_d_nontrivial: false,
            m1: b1,
        }),
        (false, true, None) => Ok(Classification {
            res01_d_nontrivial: false,
            m10: b1,
            res1_d_nontrivial: false,
            m1: b1,
        }),
        (true, false, None) => Ok(Classification {
            res01_d_nontrivial: true,
            m10: b1,
            res1_d_nontrivial: true,
            m1: b1 + 1,
        }),
        (true, true, Some(false)) => Ok(Classification {
            res01_d_nontrivial: false,
            m10: b1,
            res1_d_nontrivial: true,
            m1: b1 + 1,
        }),
        (true, true, Some(true)) => Ok(Classification {
            res01_d_nontrivial: true,
            m10: b1 + 1,
            res1_d_nontrivial: true,
            m1: b1 + 1,
        }),
        (true, true, None) => Err(ResonanceError::InvalidCase(
            "both winding cycles vanish: a helicity flag is required".into(),
        )),
        _ => Err(ResonanceError::InvalidCase(
            "helicity flag supplied while a winding cycle is nonzero".into(),
        )),
    }
}

/// Order of vanishing of the zeta function at zero for a transitive flow,
/// assuming semisimplicity: m10 - 2 (one unit each from degrees 0 and 2).
pub fn ruelle_order(m10_inf: i64) -> i64 {
    m10_inf - 2
}

/// EXPERIMENTAL: Abel-regularized mode-sum pairing between resonant and
/// coresonant towers, reported over a sweep of regularization weights rho.
/// The summation scheme is a numerical choice; results are advisory and the
/// rank is reported, never asserted.
pub fn gram_pairing(
    mesh: &SurfaceMesh,
    res: &[FourierField],
    cores: &[FourierField],
    rhos: &[f64],
) -> Vec<(f64, Vec<Vec<C64>>)> {
    rhos.iter()
        .map(|&rho| {
            let g: Vec<Vec<C64>> = res
                .iter()
                .map(|hi| {
                    cores
                        .iter()
                        .map(|hj| {
                            let n = hi.n_modes().min(hj.n_modes());
                            let mut s = C64::new(0.0, 0.0);
                            let mut w = rho;
                            for k in 0..n {
                                s += w * mesh.inner(&hi.comps[k].values, &hj.comps[k].values);
                                w *= rho;
                            }
                            s
                        })
                        .collect()
                })
                .collect();
            (rho, g)
        })
        .collect()
}

/// Convenience: the untwisted curvature field for a mesh whose metric is a
/// conformal rescale of the hyperbolic one.
pub fn measured_curvature(mesh: &SurfaceMesh) -> Vec<f64> {
    ops::curvature(mesh, &ScalarField::zeros(mesh.n_verts())).values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build::build_bolza_mesh;
    use crate::mesh::dec::harmonic_one_form_basis;
    use crate::vortex::solve_vortex;

    const PI: f64 = std::f64::consts::PI;

    fn hyperbolic_data(level: u32) -> ThermostatData {
        ThermostatData::hyperbolic(build_bolza_mesh(level).unwrap())
    }

    #[test]
    fn seed_space_has_complex_dimension_two() {
        let data = hyperbolic_data(3);
        let seeds = seed_space(&data).unwrap();
        assert_eq!(seeds.len(), 2);
        for h1 in &seeds {
            assert_eq!(h1.degree, 1);
            // the seeds really sit in the kernel of the twisted lowering map
            let dn = ops::mu_minus(&data.mesh, &data.lambda2, 1).apply_section(h1);
            let rel = data.mesh.norm(&dn.values) / data.mesh.norm(&h1.values);
            assert!(rel < 1e-2, "seed lowering residual {rel:.3e}");
        }
    }

    #[test]
    fn constant_curvature_tower_matches_the_pointwise_ladder() {
        // with K identically -1 the raising equation can be divided through
        // pointwise; the least-squares modes must agree with that closed form
        // on the low modes, where the grid still resolves the solution
        let data = hyperbolic_data(3);
        let seeds = seed_space(&data).unwrap();
        let (field, rep) = resonant_recurrence(&data, &seeds[0], 6, f64::INFINITY).unwrap();
        assert_eq!(field.n_modes(), 6);
        assert!(rep.residuals[0] < 1e-2, "seed residual {:.3e}", rep.residuals[0]);
        for (k, r) in rep.residuals.iter().enumerate() {
            assert!(*r < 0.4, "mode {k} residual {r:.3e}");
        }
        // resolved modes grow monotonically, as the growth bound predicts
        for k in 1..rep.norms.len() {
            assert!(rep.norms[k] > rep.norms[k - 1], "norms not increasing at {k}");
        }
        assert!(rep.z_exponent <= 1, "z exponent {}", rep.z_exponent);
        for k in 2..=3i32 {
            let up = ops::mu_plus(&data.mesh, &data.lambda2, k - 1)
                .apply_section(&field.comps[k as usize - 2]);
            let direct: Vec<C64> = up
                .values
                .iter()
                .zip(&data.kfield)
                .map(|(&v, &kk)| 2.0 * v / ((k - 1) as f64 * kk))
                .collect();
            let diff: Vec<C64> = direct
                .iter()
                .zip(&field.comps[k as usize - 1].values)
                .map(|(a, b)| a - b)
                .collect();
            let rel = data.mesh.norm(&diff) / data.mesh.norm(&field.comps[k as usize - 1].values);
            assert!(rel < 0.1, "mode {k} disagrees with the pointwise ladder: {rel:.3e}");
        }
    }

    #[test]
    fn tight_tolerance_reports_a_residual_blowup() {
        let data = hyperbolic_data(3);
        let seeds = seed_space(&data).unwrap();
        match resonant_recurrence(&data, &seeds[0], 6, 1e-3) {
            Err(ResonanceError::ResidualBlowup { residual, .. }) => assert!(residual > 1e-3),
            other => panic!("expected a residual blowup, got {other:?}"),
        }
    }

    #[test]
    fn twisted_tower_for_the_vortex_thermostat_is_consistent() {
        let mesh = build_bolza_mesh(3).unwrap();
        let quads = kernel::holomorphic_quadratic_differentials(&mesh).unwrap();
        let a = quads[0].scale(C64::new(0.5, 0.0));
        let sol = solve_vortex(&mesh, &a, 2).unwrap();
        let data = ThermostatData::from_vortex(&mesh, &sol).unwrap();
        assert!(data.kfield.iter().all(|&k| k < 0.0));
        let seeds = seed_space(&data).unwrap();
        assert_eq!(seeds.len(), 2);
        let (field, rep) = resonant_recurrence(&data, &seeds[0], 6, f64::INFINITY).unwrap();
        assert_eq!(field.n_modes(), 6);
        assert!(rep.residuals[0] < 1e-2, "seed residual {:.3e}", rep.residuals[0]);
        assert!(rep.residuals[1] < 5e-2, "first ladder residual {:.3e}", rep.residuals[1]);
        for (k, r) in rep.residuals.iter().enumerate() {
            assert!(*r < 0.5, "mode {k} residual {r:.3e}");
        }
        assert!(rep.z_exponent >= 1);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let data = hyperbolic_data(2);
        let nv = data.mesh.n_verts();
        let bad_degree = KSection { degree: 2, values: vec![C64::new(1.0, 0.0); nv] };
        assert!(matches!(
            resonant_recurrence(&data, &bad_degree, 4, f64::INFINITY),
            Err(ResonanceError::BadInput(_))
        ));
        let seed = KSection { degree: 1, values: vec![C64::new(1.0, 0.0); nv] };
        assert!(matches!(
            resonant_recurrence(&data, &seed, 0, f64::INFINITY),
            Err(ResonanceError::BadInput(_))
        ));
        let mut positive = hyperbolic_data(2);
        positive.kfield = vec![1.0; positive.mesh.n_verts()];
        assert!(matches!(
            resonant_recurrence(&positive, &seed, 4, f64::INFINITY),
            Err(ResonanceError::CurvatureNotNegative(_))
        ));
    }

    #[test]
    fn reconstructed_form_annihilates_flow_and_unstable_directions() {
        let mesh = build_bolza_mesh(2).unwrap();
        let s = ops::smooth_test_sections(&mesh).unwrap()[1].clone();
        let tower = FourierField { comps: vec![s] };
        let form = reconstruct_resonant_form(&tower);
        let spec = FlowSpec::geodesic(mesh);
        for &(x, y, th) in &[(0.1, 0.2, 0.7), (-0.25, 0.05, 2.1), (0.02, -0.3, 5.3)] {
            let p = SMPoint { z: C64::new(x, y), theta: th };
            // both contractions vanish identically, not just numerically
            assert_eq!(form.contract_flow(&spec, p).unwrap(), 0.0);
            assert_eq!(form.contract_unstable(&spec, p).unwrap(), 0.0);
            // for the geodesic flow the coframe coefficients reduce to
            // (0, -c, c): pairing with V gives c, with H gives -c
            let cv = form.c.eval(&spec.mesh, p.z, p.theta).unwrap();
            assert!((form.contract(&spec, p, (0.0, 0.0, 1.0)).unwrap() - cv).abs() < 1e-14);
            assert!((form.contract(&spec, p, (0.0, 1.0, 0.0)).unwrap() + cv).abs() < 1e-14);
            assert_eq!(form.contract(&spec, p, (1.0, 0.0, 0.0)).unwrap(), 0.0);
        }
    }

    #[test]
    fn geodesic_helicity_is_the_exact_reciprocal_of_the_contact_volume() {
        let mesh = build_bolza_mesh(2).unwrap();
        let spec = FlowSpec::geodesic(mesh);
        let est = helicity(&spec, &[], HelicityParams::default()).unwrap();
        // metric area is exact by angle defect: 4 pi, so H = 1 / (8 pi^2)
        assert!((est.vol - 4.0 * PI).abs() < 1e-10, "area {:.15}", est.vol);
        assert!((est.value - 1.0 / (8.0 * PI * PI)).abs() < 1e-15);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.e_plus, 0.0);
        assert_eq!(est.a_sq_integral, 0.0);
    }

    #[test]
    fn thermostat_helicity_stays_within_five_percent_of_geodesic() {
        let mesh = build_bolza_mesh(3).unwrap();
        let quads = kernel::holomorphic_quadratic_differentials(&mesh).unwrap();
        let a = quads[0].scale(C64::new(0.5, 0.0));
        let sol = solve_vortex(&mesh, &a, 2).unwrap();
        let spec = FlowSpec::holo_thermostat(&mesh, &sol);
        let params = HelicityParams {
            birkhoff: BirkhoffParams { t: 100.0, n_orbits: 16, seed: 2, burn_in: 10.0, dt: 0.01 },
            n_samples: 16,
            t_cut: 25.0,
            tol: 1e-3,
            dt: 0.01,
            t_relax: 20.0,
        };
        let est = helicity(&spec, &[], params).unwrap();
        // entropy production is strictly positive for the dissipative flow
        assert!(est.e_plus > 3.0 * est.e_plus_stderr, "e+ {} +- {}", est.e_plus, est.e_plus_stderr);
        assert!(est.a_sq_integral > 0.0);
        // the rescaled metric has more area than the hyperbolic one
        assert!(est.vol > 4.0 * PI);
        let geod = 1.0 / (8.0 * PI * PI);
        assert!(
            (est.value - geod).abs() / geod < 0.05,
            "helicity {:.6e} drifted more than 5% from {:.6e}",
            est.value,
            geod
        );
    }

    #[test]
    fn nonvanishing_winding_cycles_block_the_helicity_formula() {
        let mesh = build_bolza_mesh(3).unwrap();
        let basis = harmonic_one_form_basis(&mesh).unwrap();
        let rho = ops::smooth_test_sections(&mesh).unwrap()[1].scale(C64::new(0.8, 0.0));
        let spec = FlowSpec::gaussian_thermostat(mesh, rho);
        let params = HelicityParams {
            birkhoff: BirkhoffParams { t: 100.0, n_orbits: 16, seed: 3, burn_in: 10.0, dt: 0.01 },
            n_samples: 4,
            t_cut: 25.0,
            tol: 1e-3,
            dt: 0.01,
            t_relax: 20.0,
        };
        match helicity(&spec, &basis, params) {
            Err(ResonanceError::WindingNotZero { mean, stderr, .. }) => {
                assert!(mean.abs() > 3.0 * stderr)
            }
            other => panic!("expected a nonzero winding cycle, got {other:?}"),
        }
    }

    #[test]
    fn classification_table_matches_all_five_cases() {
        let case = |wp, wm, h, b1| ClassificationInput {
            w_plus_zero: wp,
            w_minus_zero: wm,
            helicity_zero: h,
            b1,
        };
        // suspension-type flow: both cycles nonzero, b1 = 1
        let c = classify(case(false, false, None, 1)).unwrap();
        assert_eq!(c, Classification {
            res01_d_nontrivial: false, m10: 0, res1_d_nontrivial: false, m1: 1 });
        assert_eq!(ruelle_order(c.m10), -2);
        // one-sided vanishing on a genus-2 surface flow, b1 = 4
        let c = classify(case(false, true, None, 4)).unwrap();
        assert_eq!(c, Classification {
            res01_d_nontrivial: false, m10: 4, res1_d_nontrivial: false, m1: 4 });
        let c = classify(case(true, false, None, 4)).unwrap();
        assert_eq!(c, Classification {
            res01_d_nontrivial: true, m10: 4, res1_d_nontrivial: true, m1: 5 });
        assert_eq!(ruelle_order(3), 1);
        // both cycles vanish: the helicity decides the degree-0/2 ladder
        let c = classify(case(true, true, Some(false), 4)).unwrap();
        assert_eq!(c, Classification {
            res01_d_nontrivial: false, m10: 4, res1_d_nontrivial: true, m1: 5 });
        assert_eq!(ruelle_order(c.m10), 2);
        let c = classify(case(true, true, Some(true), 4)).unwrap();
        assert_eq!(c, Classification {
            res01_d_nontrivial: true, m10: 5, res1_d_nontrivial: true, m1: 5 });
        // the degenerate inputs are rejected, not guessed
        assert!(matches!(
            classify(case(true, true, None, 4)),
            Err(ResonanceError::InvalidCase(_))
        ));
        assert!(matches!(
            classify(case(false, true, Some(true), 4)),
            Err(ResonanceError::InvalidCase(_))
        ));
    }

    #[test]
    fn mode_sum_pairing_separates_the_two_seed_towers() {
        let data = hyperbolic_data(3);
        let seeds = seed_space(&data).unwrap();
        let towers: Vec<FourierField> = seeds
            .iter()
            .map(|s| resonant_recurrence(&data, s, 8, f64::INFINITY).unwrap().0)
            .collect();
        let cores: Vec<FourierField> = towers.iter().map(coresonant_field).collect();
        let sweep = gram_pairing(&data.mesh, &towers, &cores, &[0.5, 0.9]);
        assert_eq!(sweep.len(), 2);
        for (rho, g) in &sweep {
            // the kernel basis is mass-orthonormal and the ladder operators
            // respect that symmetry, so the pairing comes out near-diagonal
            let d0 = g[0][0].norm();
            let d1 = g[1][1].norm();
            assert!(d0 > 0.0 && d1 > 0.0, "degenerate diagonal at rho {rho}");
            let off = g[0][1].norm().max(g[1][0].norm());
            assert!(off < 1e-6 * d0.min(d1), "off-diagonal {off:.3e} at rho {rho}");
        }
    }

    #[test]
    fn fourier_field_arithmetic_behaves() {
        let mesh = build_bolza_mesh(1).unwrap();
        let nv = mesh.n_verts();
        let zero = FourierField {
            comps: vec![KSection { degree: 1, values: vec![C64::new(0.0, 0.0); nv] }],
        };
        assert!(zero.is_zero());
        assert_eq!(zero.eval(&mesh, C64::new(0.1, 0.0), 0.3).unwrap(), 0.0);
        let one = FourierField {
            comps: vec![KSection { degree: 1, values: vec![C64::new(1.0, 0.0); nv] }],
        };
        assert!(!one.is_zero());
        assert!(one.scale(C64::new(0.0, 0.0)).is_zero());
        // 2 Re(e^{i theta}) = 2 cos(theta) for the constant unit section
        let v = one.eval(&mesh, C64::new(0.05, -0.1), 1.1).unwrap();
        assert!((v - 2.0 * 1.1f64.cos()).abs() < 1e-6);
    }
}
