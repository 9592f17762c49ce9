//! Flow integration on the unit tangent bundle for generalized frame vector
//! fields a X + b H + c V: thermostats, the X_s family, and conformal
//! rescalings, with deck reduction, ensemble Birkhoff averages, Riccati
//! limits, and the damping-function quadrature.

use crate::hyperbolic::{HypError, MobiusMap};
use crate::mesh::{ops, psi_hyp, psi_hyp_dz, KSection, ScalarField, SurfaceMesh, C64};
use crate::vortex::VortexSolution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("point left the covered region: {0}")]
    Step(#[from] HypError),
    #[error("state became non-finite")]
    NonfiniteState,
    #[error("field not interpolable at ({0}, {1})")]
    OutsideDomain(f64, f64),
    #[error("Riccati solution escaped [-10, 10]: r = {0}")]
    RiccatiBlowup(f64),
    #[error("damping-function tail bound {0:.3e} exceeds tolerance {1:.3e}")]
    TailNotConverged(f64, f64),
}

/// Point of the unit tangent bundle in the octagon chart: base point and the
/// fiber angle of the unit vector (current-metric unit frame is e^{-psi}d/dz,
/// so theta is the plain chart angle of the direction).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SMPoint {
    pub z: C64,
    pub theta: f64,
}

/// Function on the unit tangent bundle with finitely many vertical Fourier
/// modes: f(z, theta) = Re c_0(z) + sum_{m>0} 2 Re(c_m(z) e^{i m theta}),
/// each coefficient a degree-m section in the unit-norm frame.
#[derive(Debug, Clone, Default)]
pub struct VerticalFn {
    pub comps: Vec<KSection>,
}

impl VerticalFn {
    pub fn zero() -> Self {
        VerticalFn { comps: Vec::new() }
    }
    pub fn constant(n: usize, v: f64) -> Self {
        VerticalFn {
            comps: vec![KSection { degree: 0, values: vec![C64::new(v, 0.0); n] }],
        }
    }
    pub fn single(s: KSection) -> Self {
        assert!(s.degree >= 0);
        VerticalFn { comps: vec![s] }
    }
    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    /// Evaluate at a chart point already reduced into the octagon.
    pub fn eval(&self, mesh: &SurfaceMesh, z: C64, theta: f64) -> Option<f64> {
        let mut v = 0.0;
        for c in &self.comps {
            let cv = mesh.eval_section(c, z)?;
            if c.degree == 0 {
                v += cv.re;
            } else {
                v += 2.0 * (cv * C64::from_polar(1.0, c.degree as f64 * theta)).re;
            }
        }
        Some(v)
    }

    /// Vertical derivative: c_m -> i m c_m.
    pub fn v_deriv(&self) -> VerticalFn {
        VerticalFn {
            comps: self
                .comps
                .iter()
                .filter(|c| c.degree != 0)
                .map(|c| c.scale(C64::new(0.0, c.degree as f64)))
                .collect(),
        }
    }

    /// Horizontal derivative i (eta_+ - eta_-) acting componentwise, with the
    /// conjugate tower folded back onto non-negative degrees.
    pub fn h_deriv(&self, mesh: &SurfaceMesh) -> VerticalFn {
        use std::collections::HashMap;
        let n = mesh.n_verts();
        let mut full: HashMap<i32, Vec<C64>> = HashMap::new();
        let add = |m: i32, vals: Vec<C64>, full: &mut HashMap<i32, Vec<C64>>| {
            let e = full.entry(m).or_insert_with(|| vec![C64::new(0.0, 0.0); n]);
            for (a, b) in e.iter_mut().zip(vals) {
                *a += b;
            }
        };
        for c in &self.comps {
            let sources: Vec<KSection> = if c.degree == 0 {
                vec![c.clone()]
            } else {
                vec![c.clone(), c.conj()]
            };
            for s in sources {
                let up = ops::eta_plus_operator(mesh, s.degree).apply(&s.values);
                let dn = ops::dbar_operator(mesh, s.degree).apply(&s.values);
                let i = C64::new(0.0, 1.0);
                add(s.degree + 1, up.iter().map(|v| i * v).collect(), &mut full);
                add(s.degree - 1, dn.iter().map(|v| -i * v).collect(), &mut full);
            }
        }
        // keep m >= 0; negative degrees are the conjugates by construction
        let mut comps: Vec<KSection> = full
            .into_iter()
            .filter(|&(m, _)| m >= 0)
            .map(|(m, values)| KSection { degree: m, values })
            .collect();
        comps.sort_by_key(|c| c.degree);
        VerticalFn { comps }
    }
}

/// Flow specification: the metric (folded into the mesh conformal factor),
/// frame coefficients a, b, c as vertical Fourier data, the generator lambda
/// with its derivatives, and the curvature field for Riccati equations.
pub struct FlowSpec {
    pub mesh: SurfaceMesh,
    pub name: String,
    pub a: VerticalFn,
    pub b: VerticalFn,
    pub c: VerticalFn,
    pub lambda: VerticalFn,
    pub vlambda: VerticalFn,
    pub hlambda: VerticalFn,
    /// curvature of the current metric at vertices
    pub kfield: Vec<f64>,
    /// canonical-chart Wirtinger gradient of the mesh conformal deviation
    pub uz: Vec<C64>,
    /// optional positive time-change factor on the base
    pub time_change: Option<Vec<f64>>,
    /// true for fields of the form X + lambda V
    pub is_thermostat: bool,
}

impl FlowSpec {
    fn base(mesh: SurfaceMesh, name: &str, lambda: VerticalFn, is_thermostat: bool) -> FlowSpec {
        let n = mesh.n_verts();
        let vlambda = lambda.v_deriv();
        let hlambda = lambda.h_deriv(&mesh);
        let kfield = ops::curvature(&mesh, &ScalarField::zeros(n)).values;
        let uz = ops::scalar_gradient(&mesh, &mesh.u);
        let c = lambda.clone();
        FlowSpec {
            a: VerticalFn::constant(n, 1.0),
            b: VerticalFn::zero(),
            c,
            lambda,
            vlambda,
            hlambda,
            kfield,
            uz,
            time_change: None,
            is_thermostat,
            name: name.to_string(),
            mesh,
        }
    }

    /// Geodesic flow of the mesh's current metric.
    pub fn geodesic(mesh: SurfaceMesh) -> FlowSpec {
        FlowSpec::base(mesh, "geodesic", VerticalFn::zero(), true)
    }

    /// Gaussian thermostat X + (pullback of rho) V for a 1-form rho given by
    /// its degree-1 stored values.
    pub fn gaussian_thermostat(mesh: SurfaceMesh, rho: KSection) -> FlowSpec {
        assert_eq!(rho.degree, 1);
        FlowSpec::base(mesh, "gaussian-thermostat", VerticalFn::single(rho), true)
    }

    /// Holomorphic thermostat of a solved vortex pair: metric e^{2u} g_hyp and
    /// lambda = Im(pullback of A), i.e. c_m = -i/2 * A_stored * e^{-m u}.
    pub fn holo_thermostat(base: &SurfaceMesh, sol: &VortexSolution) -> FlowSpec {
        let mesh = base.with_metric(&sol.u);
        let half_mi = C64::new(0.0, -0.5);
        let vals: Vec<C64> = sol
            .a
            .values
            .iter()
            .zip(&sol.u.values)
            .map(|(a, &u)| half_mi * a * (-(sol.m as f64) * u).exp())
            .collect();
        let lam = KSection { degree: sol.m, values: vals };
        let mut spec = FlowSpec::base(mesh, "holo-thermostat", VerticalFn::single(lam), true);
        // the solved curvature field is algebraically exact; prefer it
        spec.kfield = sol.k.values.clone();
        spec
    }

    /// The X_s family for a harmonic 1-form theta (degree-1 stored values):
    /// (a, b, c) = (1 - s pi*(star theta), -s pi*theta, s pi*theta).
    pub fn xs_family(mesh: SurfaceMesh, theta: KSection, s: f64) -> FlowSpec {
        assert_eq!(theta.degree, 1);
        let n = mesh.n_verts();
        let lam = VerticalFn::single(theta.scale(C64::new(s, 0.0)));
        let mut spec = FlowSpec::base(mesh, "xs-family", lam, false);
        // a = 1 - s pi*(star theta); star acts as -i on stored values
        let star_scaled = theta.scale(C64::new(0.0, -s));
        spec.a = VerticalFn {
            comps: vec![
                KSection { degree: 0, values: vec![C64::new(1.0, 0.0); n] },
                star_scaled.scale(C64::new(-1.0, 0.0)),
            ],
        };
        spec.b = VerticalFn::single(theta.scale(C64::new(-s, 0.0)));
        spec
    }

    /// Pulled-back geodesic field of the rescaled metric e^{-2f} g:
    /// e^f X + pi*(star d e^f) V on the unit tangent bundle of g.
    pub fn conformal_rescale(mesh: SurfaceMesh, f: &ScalarField) -> FlowSpec {
        let n = mesh.n_verts();
        let ef: Vec<f64> = f.values.iter().map(|&v| v.exp()).collect();
        let efz = ops::scalar_gradient(&mesh, &ef);
        // stored value of the 1-form d e^f is (e^f)_z e^{-psi}; star is -i
        let h: Vec<C64> = (0..n)
            .map(|i| C64::new(0.0, -1.0) * efz[i] * (-(mesh.psi_at(i))).exp())
            .collect();
        let cfun = VerticalFn::single(KSection { degree: 1, values: h });
        let mut spec = FlowSpec::base(mesh, "conformal-rescale", VerticalFn::zero(), false);
        spec.c = cfun;
        spec.a = VerticalFn::single(KSection {
            degree: 0,
            values: ef.iter().map(|&v| C64::new(v, 0.0)).collect(),
        });
        spec
    }

    /// Same field multiplied by a positive base function (time change).
    pub fn with_time_change(mut self, f: &ScalarField) -> FlowSpec {
        assert!(f.values.iter().all(|&v| v > 0.0));
        self.time_change = Some(f.values.clone());
        self
    }

    /// Reduce an arbitrary disk point into the octagon, returning the reduced
    /// chart point, the rotated fiber angle, and the derivative of the
    /// reducing map at z (identity fast path).
    fn reduce_point(&self, z: C64, theta: f64) -> Result<(C64, f64, C64, MobiusMap), FlowError> {
        if self.mesh.group.in_domain(z, 1e-12) {
            return Ok((z, theta, C64::new(1.0, 0.0), MobiusMap::identity()));
        }
        let (zr, word) = self.mesh.group.reduce(z, 64)?;
        let mut g = MobiusMap::identity();
        for &k in &word {
            g = self.mesh.group.generators[k as usize].compose(&g);
        }
        let gp = g.deriv(z);
        debug_assert!((g.apply(z) - zr).norm() < 1e-9);
        Ok((zr, theta + gp.arg(), gp, g))
    }

    /// psi and psi_z of the current metric at a reduced chart point.
    fn psi_and_grad(&self, zr: C64) -> Result<(f64, C64), FlowError> {
        let (fi, bc) = self
            .mesh
            .locate(zr)
            .ok_or(FlowError::OutsideDomain(zr.re, zr.im))?;
        let f = &self.mesh.faces[fi];
        let mut u = 0.0;
        let mut uz = C64::new(0.0, 0.0);
        for c in 0..3 {
            let v = self.mesh.raw_canon[f[c]];
            u += bc[c] * self.mesh.u[v];
            uz += bc[c] * self.uz[v];
        }
        Ok((psi_hyp(zr) + u, psi_hyp_dz(zr) + uz))
    }

    /// Time derivative of the chart state (z, theta); sign < 0 integrates -F.
    fn rhs(&self, z: C64, theta: f64, sign: f64) -> Result<(C64, f64), FlowError> {
        let (zr, tr, gp, g) = self.reduce_point(z, theta)?;
        let (psi_r, psiz_r) = self.psi_and_grad(zr)?;
        // transport the conformal factor back to the unreduced point:
        // psi(z) = psi(zr) + ln|g'(z)|, psi_z(z) = psi_z(zr) g'(z) + (ln|g'|)_z
        let (psi, psi_z) = if gp == C64::new(1.0, 0.0) {
            (psi_r, psiz_r)
        } else {
            let (alpha, beta) = g.disk_coeffs();
            let denom = beta.conj() * z + alpha.conj();
            (psi_r + gp.norm().ln(), psiz_r * gp - beta.conj() / denom)
        };
        let a = self
            .a
            .eval(&self.mesh, zr, tr)
            .ok_or(FlowError::OutsideDomain(zr.re, zr.im))?;
        let b = if self.b.is_zero() {
            0.0
        } else {
            self.b
                .eval(&self.mesh, zr, tr)
                .ok_or(FlowError::OutsideDomain(zr.re, zr.im))?
        };
        let c = if self.c.is_zero() {
            0.0
        } else {
            self.c
                .eval(&self.mesh, zr, tr)
                .ok_or(FlowError::OutsideDomain(zr.re, zr.im))?
        };
        let tc = match &self.time_change {
            Some(f) => self
                .mesh
                .eval_scalar(f, zr)
                .ok_or(FlowError::OutsideDomain(zr.re, zr.im))?,
            None => 1.0,
        };
        let em = (-psi).exp();
        let dir = C64::from_polar(1.0, theta);
        let zdot = em * (C64::new(a, b)) * dir;
        let (px, py) = (2.0 * psi_z.re, -2.0 * psi_z.im);
        let (st, ct) = theta.sin_cos();
        let thdot = a * em * (-px * st + py * ct) + b * em * (-px * ct - py * st) + c;
        Ok((sign * tc * zdot, sign * tc * thdot))
    }
}

/// Pointwise coefficient evaluation at a (reduced) phase-space point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoeffEval {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub lambda: f64,
    pub vlambda: f64,
    pub hlambda: f64,
}

pub fn evaluate_coefficients(spec: &FlowSpec, p: SMPoint) -> Result<CoeffEval, FlowError> {
    let (zr, tr, _, _) = spec.reduce_point(p.z, p.theta)?;
    let ev = |f: &VerticalFn| -> Result<f64, FlowError> {
        if f.is_zero() {
            Ok(0.0)
        } else {
            f.eval(&spec.mesh, zr, tr)
                .ok_or(FlowError::OutsideDomain(zr.re, zr.im))
        }
    };
    Ok(CoeffEval {
        a: ev(&spec.a)?,
        b: ev(&spec.b)?,
        c: ev(&spec.c)?,
        lambda: ev(&spec.lambda)?,
        vlambda: ev(&spec.vlambda)?,
        hlambda: ev(&spec.hlambda)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitResult {
    pub end: SMPoint,
    /// generator indices applied during deck reduction, in order
    pub deck_word: Vec<u8>,
    pub n_steps: usize,
}

/// Classical 4th-order step of the chart state.
fn rk4_step(spec: &FlowSpec, z: C64, th: f64, dt: f64, sign: f64) -> Result<(C64, f64), FlowError> {
    let (k1z, k1t) = spec.rhs(z, th, sign)?;
    let (k2z, k2t) = spec.rhs(z + 0.5 * dt * k1z, th + 0.5 * dt * k1t, sign)?;
    let (k3z, k3t) = spec.rhs(z + 0.5 * dt * k2z, th + 0.5 * dt * k2t, sign)?;
    let (k4z, k4t) = spec.rhs(z + dt * k3z, th + dt * k3t, sign)?;
    let zn = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
    let tn = th + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
    if !zn.re.is_finite() || !zn.im.is_finite() || !tn.is_finite() {
        return Err(FlowError::NonfiniteState);
    }
    Ok((zn, tn))
}

/// Integrate for time |T| (T < 0 integrates the reversed field), reducing
/// into the fundamental domain after every step.
pub fn integrate(spec: &FlowSpec, p0: SMPoint, t_total: f64, dt: f64) -> Result<OrbitResult, FlowError> {
    let sign = if t_total < 0.0 { -1.0 } else { 1.0 };
    let total = t_total.abs();
    let n = (total / dt).ceil().max(1.0) as usize;
    let h = total / n as f64;
    let (mut z, mut th) = (p0.z, p0.theta);
    let mut word = Vec::new();
    for _ in 0..n {
        let (zn, tn) = rk4_step(spec, z, th, h, sign)?;
        let (zr, tr, w) = spec.mesh.group.reduce_sm(zn, tn, 64)?;
        z = zr;
        th = tr;
        word.extend(w);
    }
    Ok(OrbitResult { end: SMPoint { z, theta: th }, deck_word: word, n_steps: n })
}

/// Integration plus observable accumulation: returns the time average of
/// `obs` over [0, T] after a burn-in of `burn` (rectangle rule on steps).
fn orbit_average(
    spec: &FlowSpec,
    obs: &(dyn Fn(&FlowSpec, SMPoint) -> f64 + Sync),
    p0: SMPoint,
    burn: f64,
    t_total: f64,
    dt: f64,
    sign: f64,
) -> Result<f64, FlowError> {
    let (mut z, mut th) = (p0.z, p0.theta);
    let nb = (burn / dt).ceil() as usize;
    for _ in 0..nb {
        let (zn, tn) = rk4_step(spec, z, th, dt, sign)?;
        let (zr, tr, _) = spec.mesh.group.reduce_sm(zn, tn, 64)?;
        z = zr;
        th = tr;
    }
    let n = (t_total / dt).ceil().max(1.0) as usize;
    let mut acc = 0.0;
    for _ in 0..n {
        acc += obs(spec, SMPoint { z, theta: th });
        let (zn, tn) = rk4_step(spec, z, th, dt, sign)?;
        let (zr, tr, _) = spec.mesh.group.reduce_sm(zn, tn, 64)?;
        z = zr;
        th = tr;
    }
    Ok(acc / n as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct BirkhoffEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_orbits: usize,
    pub t: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct BirkhoffParams {
    pub t: f64,
    pub n_orbits: usize,
    pub seed: u64,
    pub burn_in: f64,
    pub dt: f64,
}

impl Default for BirkhoffParams {
    fn default() -> Self {
        BirkhoffParams { t: 2000.0, n_orbits: 256, seed: 0, burn_in: 20.0, dt: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Draw an initial phase point from the normalized smooth measure (metric
/// area on the base times the uniform fiber measure).
pub fn sample_smooth(spec: &FlowSpec, rng: &mut ChaCha8Rng) -> SMPoint {
    let mesh = &spec.mesh;
    // cumulative metric face areas
    let mut total = 0.0;
    let weights: Vec<f64> = mesh
        .faces
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let e2: f64 = f
                .iter()
                .map(|&r| (2.0 * mesh.u[mesh.raw_canon[r]]).exp())
                .sum::<f64>()
                / 3.0;
            let w = mesh.face_area_hyp[fi] * e2;
            total += w;
            total
        })
        .collect();
    let x: f64 = rng.gen::<f64>() * total;
    let fi = weights.partition_point(|&w| w < x).min(mesh.faces.len() - 1);
    let f = &mesh.faces[fi];
    // uniform barycentric sample
    let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
    let s1 = r1.sqrt();
    let (l0, l1, l2) = (1.0 - s1, s1 * (1.0 - r2), s1 * r2);
    let z = l0 * mesh.raw_pos[f[0]] + l1 * mesh.raw_pos[f[1]] + l2 * mesh.raw_pos[f[2]];
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    SMPoint { z, theta }
}

/// Ensemble Birkhoff average of an observable. Orbit i uses the stream
/// (seed, i) of a counter-based generator, so results are reproducible and
/// independent of the parallel schedule.
pub fn birkhoff(
    spec: &FlowSpec,
    obs: &(dyn Fn(&FlowSpec, SMPoint) -> f64 + Sync),
    params: BirkhoffParams,
    direction: Direction,
) -> Result<BirkhoffEstimate, FlowError> {
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let means: Result<Vec<f64>, FlowError> = (0..params.n_orbits)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64 + 1);
            let p0 = sample_smooth(spec, &mut rng);
            orbit_average(spec, obs, p0, params.burn_in, params.t, params.dt, sign)
        })
        .collect();
    let means = means?;
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(BirkhoffEstimate {
        mean,
        stderr: (var / n).sqrt(),
        n_orbits: params.n_orbits,
        t: params.t,
        seed: params.seed,
    })
}

/// Divergence observable: div F = V lambda for thermostats and the X_s family.
pub fn div_observable(spec: &FlowSpec, p: SMPoint) -> f64 {
    if spec.vlambda.is_zero() {
        return 0.0;
    }
    match evaluate_coefficients(spec, p) {
        Ok(c) => c.vlambda,
        Err(_) => 0.0,
    }
}

/// Entropy production of the forward and backward SRB measures:
/// e+ = -<div F>_forward, e- = +<div F>_backward.
pub fn entropy_production(
    spec: &FlowSpec,
    params: BirkhoffParams,
) -> Result<(BirkhoffEstimate, BirkhoffEstimate), FlowError> {
    let fwd = birkhoff(spec, &div_observable, params, Direction::Forward)?;
    let bwd = birkhoff(spec, &div_observable, params, Direction::Backward)?;
    Ok((
        BirkhoffEstimate { mean: -fwd.mean, ..fwd },
        BirkhoffEstimate { mean: bwd.mean, ..bwd },
    ))
}

/// eta(F) observable for a 1-form eta given by degree-1 stored values:
/// a pi* eta - b pi*(star eta) (c-term vanishes on basic forms).
pub fn winding_observable(spec: &FlowSpec, eta: &KSection, p: SMPoint) -> f64 {
    let (zr, tr, _, _) = match spec.reduce_point(p.z, p.theta) {
        Ok(v) => v,
        Err(_) => return 0.0,
    };
    let h = match spec.mesh.eval_section(eta, zr) {
        Some(v) => v,
        None => return 0.0,
    };
    let dir = C64::from_polar(1.0, tr);
    let pull = 2.0 * (h * dir).re;
    let pull_star = 2.0 * (C64::new(0.0, -1.0) * h * dir).re;
    let a = spec.a.eval(&spec.mesh, zr, tr).unwrap_or(1.0);
    let b = if spec.b.is_zero() {
        0.0
    } else {
        spec.b.eval(&spec.mesh, zr, tr).unwrap_or(0.0)
    };
    a * pull - b * pull_star
}

/// Forward and backward winding-cycle estimates against a basis of 1-forms.
pub fn winding_cycles(
    spec: &FlowSpec,
    basis: &[KSection],
    params: BirkhoffParams,
) -> Result<(Vec<BirkhoffEstimate>, Vec<BirkhoffEstimate>), FlowError> {
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for eta in basis {
        let obs = |s: &FlowSpec, p: SMPoint| winding_observable(s, eta, p);
        fwd.push(birkhoff(spec, &obs, params, Direction::Forward)?);
        bwd.push(birkhoff(spec, &obs, params, Direction::Backward)?);
    }
    Ok((fwd, bwd))
}

/// Riccati right-hand side along the flow:
/// dr/dt = -r^2 - K + H lambda - lambda^2 + (V lambda) r.
fn riccati_rhs(spec: &FlowSpec, p: SMPoint, r: f64) -> Result<f64, FlowError> {
    let (zr, tr, _, _) = spec.reduce_point(p.z, p.theta)?;
    let k = spec
        .mesh
        .eval_scalar(&spec.kfield, zr)
        .ok_or(FlowError::OutsideDomain(zr.re, zr.im))?;
    let ev = |f: &VerticalFn| -> Result<f64, FlowError> {
        if f.is_zero() {
            Ok(0.0)
        } else {
            f.eval(&spec.mesh, zr, tr)
                .ok_or(FlowError::OutsideDomain(zr.re, zr.im))
        }
    };
    let lam = ev(&spec.lambda)?;
    let hl = ev(&spec.hlambda)?;
    let vl = ev(&spec.vlambda)?;
    Ok(-r * r - k + hl - lam * lam + vl * r)
}

/// Integrate the joint (state, r) system for `t_total` with sign `sign`
/// (sign applies to the flow AND the Riccati clock, i.e. the pair moves along
/// the same orbit parametrization).
fn integrate_riccati(
    spec: &FlowSpec,
    p0: SMPoint,
    r0: f64,
    t_total: f64,
    dt: f64,
    sign: f64,
) -> Result<(SMPoint, f64), FlowError> {
    let n = (t_total / dt).ceil().max(1.0) as usize;
    let h = t_total / n as f64;
    let (mut z, mut th, mut r) = (p0.z, p0.theta, r0);
    for _ in 0..n {
        // RK4 on the combined 4-dimensional state
        let f = |z: C64, th: f64, r: f64| -> Result<(C64, f64, f64), FlowError> {
            let (zd, td) = spec.rhs(z, th, sign)?;
            let rd = sign * riccati_rhs(spec, SMPoint { z, theta: th }, r)?;
            Ok((zd, td, rd))
        };
        let (k1z, k1t, k1r) = f(z, th, r)?;
        let (k2z, k2t, k2r) = f(z + 0.5 * h * k1z, th + 0.5 * h * k1t, r + 0.5 * h * k1r)?;
        let (k3z, k3t, k3r) = f(z + 0.5 * h * k2z, th + 0.5 * h * k2t, r + 0.5 * h * k2r)?;
        let (k4z, k4t, k4r) = f(z + h * k3z, th + h * k3t, r + h * k3r)?;
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        th += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        r += h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        if !r.is_finite() {
            return Err(FlowError::NonfiniteState);
        }
        if r.abs() > 10.0 {
            return Err(FlowError::RiccatiBlowup(r));
        }
        let (zr, tr, _) = spec.mesh.group.reduce_sm(z, th, 64)?;
        z = zr;
        th = tr;
    }
    Ok((SMPoint { z, theta: th }, r))
}

/// Unstable and stable Riccati limits at `p`: relax the attracting solutions
/// along the orbit from both sides, verifying initial-condition independence.
pub fn riccati_limits(
    spec: &FlowSpec,
    p: SMPoint,
    t_relax: f64,
    dt: f64,
) -> Result<(f64, f64), FlowError> {
    // unstable: forward relaxation starting T back along the orbit
    let back = integrate(spec, p, -t_relax, dt)?;
    let mut r_u = None;
    for r0 in [1.0, 2.5] {
        let (_, r) = integrate_riccati(spec, back.end, r0, t_relax, dt, 1.0)?;
        if let Some(prev) = r_u {
            let d: f64 = r - prev;
            if d.abs() > 1e-6 {
                return Err(FlowError::RiccatiBlowup(d));
            }
        }
        r_u = Some(r);
    }
    // stable: backward relaxation starting T ahead along the orbit
    let fwd = integrate(spec, p, t_relax, dt)?;
    let mut r_s = None;
    for r0 in [-1.0, -2.5] {
        let (_, r) = integrate_riccati(spec, fwd.end, r0, t_relax, dt, -1.0)?;
        if let Some(prev) = r_s {
            let d: f64 = r - prev;
            if d.abs() > 1e-6 {
                return Err(FlowError::RiccatiBlowup(d));
            }
        }
        r_s = Some(r);
    }
    Ok((r_u.unwrap(), r_s.unwrap()))
}

/// Damping function by resolvent quadrature:
/// a(p) = -int_0^inf exp(-int_0^t r^u(phi_{-q} p) dq) lambda(phi_{-t} p) dt,
/// truncated at `t_cut` with an a-posteriori tail bound checked against tol.
pub fn a_function(
    spec: &FlowSpec,
    p: SMPoint,
    t_cut: f64,
    tol: f64,
    dt: f64,
    t_relax: f64,
) -> Result<f64, FlowError> {
    if spec.lambda.is_zero() {
        return Ok(0.0);
    }
    // walk backward t_relax + t_cut, recording the backward orbit states
    let n_back = ((t_relax + t_cut) / dt).ceil() as usize;
    let h = (t_relax + t_cut) / n_back as f64;
    let mut states = Vec::with_capacity(n_back + 1);
    let (mut z, mut th) = (p.z, p.theta);
    states.push(SMPoint { z, theta: th });
    for _ in 0..n_back {
        let (zn, tn) = rk4_step(spec, z, th, h, -1.0)?;
        let (zr, tr, _) = spec.mesh.group.reduce_sm(zn, tn, 64)?;
        z = zr;
        th = tr;
        states.push(SMPoint { z, theta: th });
    }
    // relax r^u forward from the far end; after t_relax the value is the
    // unstable limit, recorded at each backward-time offset t in [0, t_cut]
    let n_cut = (t_cut / h).round() as usize;
    let mut r = 1.0;
    let mut r_at = vec![0.0; n_cut + 1]; // r^u at phi_{-t_j} p, t_j = j h
    for step in (0..n_back).rev() {
        let from = states[step + 1];
        let fr = |pt: SMPoint, r: f64| riccati_rhs(spec, pt, r);
        // single RK4 substep along the recorded orbit segment (endpoints only;
        // the flow state is re-integrated for the interior stage)
        let (zm, tm) = rk4_step(spec, from.z, from.theta, 0.5 * h, 1.0)?;
        let mid = SMPoint { z: zm, theta: tm };
        let k1 = fr(from, r)?;
        let k2 = fr(mid, r + 0.5 * h * k1)?;
        let k3 = fr(mid, r + 0.5 * h * k2)?;
        let to = states[step];
        let k4 = fr(to, r + h * k3)?;
        r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if r.abs() > 10.0 {
            return Err(FlowError::RiccatiBlowup(r));
        }
        if step <= n_cut {
            r_at[step] = r;
        }
    }
    // quadrature: trapezoid in t with the exponential prefix sum
    let lam_at = |pt: SMPoint| -> Result<f64, FlowError> {
        let (zr, tr, _, _) = spec.reduce_point(pt.z, pt.theta)?;
        spec.lambda
            .eval(&spec.mesh, zr, tr)
            .ok_or(FlowError::OutsideDomain(zr.re, zr.im))
    };
    let mut integral = 0.0;
    let mut prefix = 0.0; // int_0^t r^u(phi_{-q} p) dq
    let mut prev = (-0.0f64).exp() * lam_at(states[0])?;
    let mut sup_lam: f64 = prev.abs();
    let mut nu_min = f64::INFINITY;
    for j in 1..=n_cut {
        prefix += 0.5 * h * (r_at[j - 1] + r_at[j]);
        let t = j as f64 * h;
        nu_min = nu_min.min(prefix / t);
        let lam = lam_at(states[j])?;
        sup_lam = sup_lam.max(lam.abs());
        let cur = (-prefix).exp() * lam;
        integral += 0.5 * h * (prev + cur);
        prev = cur;
    }
    let nu = nu_min.max(1e-12);
    let tail = (-nu * t_cut).exp() * sup_lam / nu;
    if tail > tol {
        return Err(FlowError::TailNotConverged(tail, tol));
    }
    Ok(-integral)
}
