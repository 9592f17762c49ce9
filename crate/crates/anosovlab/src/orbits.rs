//! Closed-orbit arithmetic: fixed-point counts and resonance invariants of
//! cat-map suspensions, partial Ruelle zeta products over primitive geodesics,
//! and length-window weighted orbital averages for the geodesic flow.

use crate::dynamics::{integrate, FlowError, FlowSpec, SMPoint};
use crate::hyperbolic::{ClassSet, ConjugacyClass, HypError, MobiusMap};
use crate::mesh::C64;
use crate::resonance::{classify, ruelle_order, Classification, ClassificationInput, ResonanceError};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrbitError {
    #[error(transparent)]
    Hyp(#[from] HypError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error("matrix is not a hyperbolic toral automorphism: {0}")]
    NotHyperbolic(String),
    #[error("integer overflow at power {0}")]
    Overflow(u32),
    #[error("class list covers lengths up to {have}, need {need}")]
    IncompleteClasses { need: f64, have: f64 },
    #[error("no primitive class has length in ({0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error("orbit of class [{word:?}] failed to close: gap {gap:.3e}")]
    NotClosed { word: Vec<u8>, gap: f64 },
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Suspension of a hyperbolic toral automorphism with constant roof 1:
/// the mapping torus of A acting on R^2/Z^2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CatMapSuspension {
    pub a: [[i64; 2]; 2],
}

impl CatMapSuspension {
    /// Requires det A = 1 and |trace A| > 2 (hyperbolicity).
    pub fn new(a: [[i64; 2]; 2]) -> Result<Self, OrbitError> {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if det != 1 {
            return Err(OrbitError::NotHyperbolic(format!("det = {det}, expected 1")));
        }
        let tr = a[0][0] + a[1][1];
        if tr.abs() <= 2 {
            return Err(OrbitError::NotHyperbolic(format!("|trace| = {} <= 2", tr.abs())));
        }
        Ok(CatMapSuspension { a })
    }

    pub fn trace(&self) -> i64 {
        self.a[0][0] + self.a[1][1]
    }
}

fn mat_mul_checked(x: [[i128; 2]; 2], y: [[i128; 2]; 2], n: u32) -> Result<[[i128; 2]; 2], OrbitError> {
    let mut out = [[0i128; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let p = x[i][0]
                .checked_mul(y[0][j])
                .and_then(|a| x[i][1].checked_mul(y[1][j]).and_then(|b| a.checked_add(b)))
                .ok_or(OrbitError::Overflow(n))?;
            out[i][j] = p;
        }
    }
    Ok(out)
}

/// Number of period-n points of the automorphism (= closed orbits of the
/// suspension cut at time n): |trace(A^n) - 2|, by exact integer arithmetic.
pub fn cat_fixed_count(susp: &CatMapSuspension, n: u32) -> Result<i128, OrbitError> {
    if !(1..=30).contains(&n) {
        return Err(OrbitError::BadInput(format!("period {n} outside 1..=30")));
    }
    let base = [
        [susp.a[0][0] as i128, susp.a[0][1] as i128],
        [susp.a[1][0] as i128, susp.a[1][1] as i128],
    ];
    let mut pow = base;
    for k in 2..=n {
        pow = mat_mul_checked(pow, base, k)?;
    }
    let tr = pow[0][0]
        .checked_add(pow[1][1])
        .ok_or(OrbitError::Overflow(n))?;
    Ok((tr - 2).abs())
}

/// Topological and resonance invariants of the suspension flow.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SuspensionInvariants {
    /// first Betti number of the mapping torus (hyperbolic A: always 1)
    pub b1: i64,
    /// both winding cycles are nonzero for the suspension direction class
    pub winding_nonzero: bool,
    /// winding functional of the suspension class: exactly 1 (constant roof,
    /// smooth invariant volume)
    pub winding_dt: f64,
    pub classification: Classification,
    /// order of vanishing of the zeta function at zero
    pub ruelle_order: i64,
}

/// Invariants through the same classification table used for surface flows
/// (single source of truth): both winding cycles nonzero, b1 = 1 gives
/// m10 = 0 and zeta order -2.
pub fn suspension_invariants(susp: &CatMapSuspension) -> Result<SuspensionInvariants, OrbitError> {
    let _ = susp.trace(); // construction already certified hyperbolicity
    let classification = classify(ClassificationInput {
        w_plus_zero: false,
        w_minus_zero: false,
        helicity_zero: None,
        b1: 1,
    })?;
    Ok(SuspensionInvariants {
        b1: 1,
        winding_nonzero: true,
        winding_dt: 1.0,
        classification,
        ruelle_order: ruelle_order(classification.m10),
    })
}

/// Partial Ruelle zeta product prod_gamma (1 - e^{-s T_gamma}) over the
/// primitive classes with length <= l. Requires Re(s) > 1.2 (safely inside
/// the convergence region for an entropy-1 flow) and a class list certified
/// complete up to l.
pub fn zeta_partial(set: &ClassSet, s: C64, l: f64) -> Result<C64, OrbitError> {
    if s.re <= 1.2 {
        return Err(OrbitError::BadInput(format!("Re(s) = {} <= 1.2", s.re)));
    }
    if set.max_length < l - 1e-12 {
        return Err(OrbitError::IncompleteClasses { need: l, have: set.max_length });
    }
    let mut prod = C64::new(1.0, 0.0);
    for c in &set.classes {
        if c.length <= l {
            prod *= C64::new(1.0, 0.0) - (-s * c.length).exp();
        }
    }
    Ok(prod)
}

/// Phase point on the axis of a hyperbolic element, in chart coordinates:
/// the axis point closest to the origin, oriented toward the attracting
/// fixed point.
pub fn axis_basepoint(map: &MobiusMap) -> Result<SMPoint, OrbitError> {
    let (att, rep) = map
        .axis_endpoints()
        .ok_or_else(|| OrbitError::BadInput("element has no axis (not hyperbolic)".into()))?;
    if (att + rep).norm() < 1e-9 {
        // the axis is a diameter through the origin
        return Ok(SMPoint { z: C64::new(0.0, 0.0), theta: att.arg() });
    }
    // Euclidean circle through the two boundary points, orthogonal to the
    // unit circle: its center c solves Re(att * conj(c)) = Re(rep * conj(c)) = 1
    let det = att.re * rep.im - att.im * rep.re;
    if det.abs() < 1e-14 {
        return Err(OrbitError::BadInput("degenerate axis endpoints".into()));
    }
    let c = C64::new((rep.im - att.im) / det, (att.re - rep.re) / det);
    let r = (c.norm_sqr() - 1.0).sqrt();
    let z0 = c * (1.0 - r / c.norm());
    // unit chart tangent of the circle at z0, pointing at the attracting end
    let mut t = C64::new(0.0, 1.0) * (z0 - c) / r;
    if (t * (att - z0).conj()).re < 0.0 {
        t = -t;
    }
    Ok(SMPoint { z: z0, theta: t.arg() })
}

/// Integral of the observable over one period of the closed geodesic of a
/// primitive class, by flowing the axis representative for one length.
/// The orbit is required to close to within `closure_tol` (chart distance).
pub fn orbit_integral(
    spec: &FlowSpec,
    class: &ConjugacyClass,
    obs: &(dyn Fn(&FlowSpec, SMPoint) -> f64 + Sync),
    dt: f64,
    closure_tol: f64,
) -> Result<f64, OrbitError> {
    let base = axis_basepoint(&class.map)?;
    // nudge along the axis so the start is generically interior to the domain
    let start = integrate(spec, base, 0.137, dt)?.end;
    let period = class.length;
    let n = (period / dt).ceil().max(2.0) as usize;
    let h = period / n as f64;
    let mut p = start;
    let mut acc = 0.5 * obs(spec, p);
    for k in 1..=n {
        p = integrate(spec, p, h, h)?.end;
        acc += if k == n { 0.5 * obs(spec, p) } else { obs(spec, p) };
    }
    let dth = (p.theta - start.theta).sin().atan2((p.theta - start.theta).cos());
    let gap = (p.z - start.z).norm() + dth.abs();
    if gap > closure_tol {
        return Err(OrbitError::NotClosed { word: class.word.clone(), gap });
    }
    Ok(acc * h)
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitAverage {
    /// weighted average of per-orbit time averages
    pub value: f64,
    /// weighted standard deviation across the window's orbits
    pub spread: f64,
    pub n_orbits: usize,
    pub window: (f64, f64),
    /// total weight sum_gamma e^{-T_gamma}
    pub weight_sum: f64,
}

/// Weighted orbital average over the length window (t-1, t]: each primitive
/// closed geodesic gamma contributes its normalized orbit average with weight
/// e^{-T_gamma} (the geodesic-flow weight, where the unstable Riccati
/// solution is identically 1). With `null_homologous_only` the window is
/// restricted to classes with vanishing integer homology.
pub fn weighted_orbit_average(
    spec: &FlowSpec,
    set: &ClassSet,
    obs: &(dyn Fn(&FlowSpec, SMPoint) -> f64 + Sync),
    t: f64,
    dt: f64,
    null_homologous_only: bool,
) -> Result<OrbitAverage, OrbitError> {
    if !spec.lambda.is_zero() {
        return Err(OrbitError::BadInput(
            "weighted orbital averages are only supported for geodesic flows".into(),
        ));
    }
    if set.max_length < t - 1e-12 {
        return Err(OrbitError::IncompleteClasses { need: t, have: set.max_length });
    }
    let lo = t - 1.0;
    let window: Vec<&ConjugacyClass> = set
        .classes
        .iter()
        .filter(|c| c.length > lo && c.length <= t)
        .filter(|c| !null_homologous_only || c.homology == [0, 0, 0, 0])
        .collect();
    if window.is_empty() {
        return Err(OrbitError::EmptyWindow(lo, t));
    }
    let integrals: Result<Vec<f64>, OrbitError> = window
        .par_iter()
        .map(|c| orbit_integral(spec, c, obs, dt, 1e-5).map(|i| i / c.length))
        .collect();
    let avgs = integrals?;
    let weights: Vec<f64> = window.iter().map(|c| (-c.length).exp()).collect();
    let wsum: f64 = weights.iter().sum();
    let value = avgs.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() / wsum;
    let var = avgs
        .iter()
        .zip(&weights)
        .map(|(a, w)| w * (a - value) * (a - value))
        .sum::<f64>()
        / wsum;
    Ok(OrbitAverage {
        value,
        spread: var.sqrt(),
        n_orbits: window.len(),
        window: (lo, t),
        weight_sum: wsum,
    })
}
