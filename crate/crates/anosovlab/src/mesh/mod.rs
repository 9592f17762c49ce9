//! Triangulated genus-2 surface with glued octagon boundary, scalar fields,
//! twisted sections, and sparse operators between section spaces.

pub mod build;
pub mod dec;
pub mod kernel;
pub mod ops;
#[cfg(test)]
mod tests;

use crate::hyperbolic::{FuchsianGroup, MobiusMap};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("refinement level {0} outside supported range 1..6")]
    BadLevel(u32),
    #[error("numerical kernel dimension {found} does not match expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no 10x singular-value gap at dimension {dim}: ratio {ratio:.3}")]
    NoSpectralGap { dim: usize, ratio: f64 },
    #[error("curvature not negative: max K = {0}")]
    CurvatureNotNegative(f64),
    #[error("section degrees incompatible: {0}")]
    DegreeMismatch(String),
}

/// Real-valued function on the surface, sampled at canonical vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { values: vec![0.0; n] }
    }
    pub fn constant(n: usize, c: f64) -> Self {
        ScalarField { values: vec![c; n] }
    }
}

/// Section of the m-th tensor power of the canonical bundle (m may be
/// negative: conjugate powers), stored in the unit-norm frame e^{-m psi} dz^m.
/// Under a chart transition with rotation angle tau the stored value picks up
/// the phase e^{-i m tau}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KSection {
    pub degree: i32,
    pub values: Vec<C64>,
}

impl KSection {
    pub fn zeros(degree: i32, n: usize) -> Self {
        KSection { degree, values: vec![C64::new(0.0, 0.0); n] }
    }
    pub fn conj(&self) -> KSection {
        KSection { degree: -self.degree, values: self.values.iter().map(|v| v.conj()).collect() }
    }
    pub fn scale(&self, c: C64) -> KSection {
        KSection { degree: self.degree, values: self.values.iter().map(|v| v * c).collect() }
    }
}

/// One sample point of a vertex star: a lift of canonical vertex `vert`
/// placed in the chart of the star's center. `tau` is the frame rotation from
/// the canonical chart of `vert` into the center chart.
#[derive(Debug, Clone, Copy)]
pub struct StarEntry {
    pub vert: usize,
    pub pos: C64,
    pub tau: f64,
    pub ring: u8,
}

#[derive(Debug, Clone)]
pub struct Star {
    pub center: usize,
    /// entries[0] is the center itself. Positions are in geodesic normal
    /// coordinates: the chart is the center's canonical chart composed with
    /// the disk translation moving the center to the origin, so the
    /// hyperbolic conformal factor is locally flat (psi_z = 0 at the center).
    pub entries: Vec<StarEntry>,
    /// true if any entry required a deck transport (star crosses a gluing)
    pub has_transport: bool,
}

/// Oriented mesh edge after boundary identification.
#[derive(Debug, Clone)]
pub struct MeshEdge {
    /// canonical endpoints (tail, head)
    pub verts: (usize, usize),
    /// representative raw endpoints fixing the orientation
    pub raw: (usize, usize),
    /// adjacent faces with traversal sign (+1 if the face walks tail->head)
    pub faces: Vec<(usize, f64)>,
    /// cotan weight (sum over adjacent faces)
    pub cotan: f64,
}

#[derive(Debug, Clone)]
pub struct FaceLocator {
    pub nx: usize,
    pub ny: usize,
    pub min: (f64, f64),
    pub cell: f64,
    pub bins: Vec<Vec<u32>>,
}

/// Triangulated model of the closed genus-2 surface. The octagon interior is
/// one global chart; boundary vertices carry deck words relating their raw
/// position to the canonical merged vertex.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub group: FuchsianGroup,
    pub level: u32,
    /// canonical vertex positions (inside the closed octagon)
    pub verts: Vec<C64>,
    pub raw_pos: Vec<C64>,
    pub raw_canon: Vec<usize>,
    /// deck map sending the canonical position to the raw position
    pub raw_deck: Vec<MobiusMap>,
    /// arg of the deck map derivative at the canonical position
    pub raw_shift: Vec<f64>,
    /// faces as raw-vertex triples, counterclockwise
    pub faces: Vec<[usize; 3]>,
    /// conformal deviation of the current metric from the hyperbolic one:
    /// g = e^{2(psi_hyp + u)} |dz|^2
    pub u: Vec<f64>,
    pub stars: Vec<Star>,
    pub edges: Vec<MeshEdge>,
    /// per-face edge ids with traversal sign
    pub face_edges: Vec<[(usize, f64); 3]>,
    /// lumped vertex areas, current metric
    pub mass: Vec<f64>,
    /// lumped vertex areas, flat chart metric (for DEC weights)
    pub mass_flat: Vec<f64>,
    pub face_area_flat: Vec<f64>,
    /// exact hyperbolic areas of the geodesic triangles on each face's
    /// vertices (angle defect); these tile the surface exactly
    pub face_area_hyp: Vec<f64>,
    pub area: f64,
    pub locator: FaceLocator,
}

pub fn psi_hyp(z: C64) -> f64 {
    (2.0 / (1.0 - z.norm_sqr())).ln()
}

/// d(psi_hyp)/dz as a complex number (Wirtinger derivative).
pub fn psi_hyp_dz(z: C64) -> C64 {
    // psi = ln 2 - ln(1 - z zbar); d/dz = zbar / (1 - |z|^2)
    z.conj() / (1.0 - z.norm_sqr())
}

impl SurfaceMesh {
    pub fn n_verts(&self) -> usize {
        self.verts.len()
    }

    /// psi of the current metric at a canonical vertex.
    pub fn psi_at(&self, i: usize) -> f64 {
        psi_hyp(self.verts[i]) + self.u[i]
    }

    /// Clone with a different conformal deviation; geometry and connectivity
    /// are shared, masses and area are recomputed.
    pub fn with_metric(&self, u: &ScalarField) -> SurfaceMesh {
        let mut m = self.clone();
        m.u = u.values.clone();
        m.recompute_mass();
        m
    }

    pub(crate) fn recompute_mass(&mut self) {
        let n = self.verts.len();
        let mut mass = vec![0.0; n];
        let mut mass_flat = vec![0.0; n];
        let mut area = 0.0;
        for (fi, f) in self.faces.iter().enumerate() {
            // hyperbolic part exactly (geodesic triangles tile the surface),
            // conformal deviation by corner-mean quadrature
            let mut w = 0.0;
            for &r in f {
                w += (2.0 * self.u[self.raw_canon[r]]).exp();
            }
            let fw = self.face_area_hyp[fi] * w / 3.0;
            area += fw;
            for &r in f {
                mass[self.raw_canon[r]] += fw / 3.0;
                mass_flat[self.raw_canon[r]] += self.face_area_flat[fi] / 3.0;
            }
        }
        self.mass = mass;
        self.mass_flat = mass_flat;
        self.area = area;
    }

    /// L2 inner product of sections with the current-metric vertex masses.
    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for i in 0..a.len() {
            s += self.mass[i] * a[i] * b[i].conj();
        }
        s
    }

    pub fn norm(&self, a: &[C64]) -> f64 {
        self.inner(a, a).re.sqrt()
    }

    /// Locate the face containing the disk point `z` (must lie inside the
    /// octagon up to a small tolerance); returns (face, barycentric coords).
    pub fn locate(&self, z: C64) -> Option<(usize, [f64; 3])> {
        let loc = &self.locator;
        let ix = ((z.re - loc.min.0) / loc.cell).floor();
        let iy = ((z.im - loc.min.1) / loc.cell).floor();
        if ix < 0.0 || iy < 0.0 || ix >= loc.nx as f64 || iy >= loc.ny as f64 {
            return None;
        }
        let bin = &loc.bins[iy as usize * loc.nx + ix as usize];
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &fi in bin {
            let f = &self.faces[fi as usize];
            let (p0, p1, p2) = (
                self.raw_pos[f[0]],
                self.raw_pos[f[1]],
                self.raw_pos[f[2]],
            );
            let det = (p1 - p0).re * (p2 - p0).im - (p1 - p0).im * (p2 - p0).re;
            if det.abs() < 1e-30 {
                continue;
            }
            let l1 = ((z - p0).re * (p2 - p0).im - (z - p0).im * (p2 - p0).re) / det;
            let l2 = ((p1 - p0).re * (z - p0).im - (p1 - p0).im * (z - p0).re) / det;
            let l0 = 1.0 - l1 - l2;
            let worst = l0.min(l1).min(l2);
            match best {
                Some((_, _, bw)) if bw >= worst => {}
                _ => best = Some((fi as usize, [l0, l1, l2], worst)),
            }
            if worst >= 0.0 {
                return Some((fi as usize, [l0, l1, l2]));
            }
        }
        // Accept slightly-outside points (integration substeps graze edges).
        match best {
            Some((fi, bc, worst)) if worst > -1e-6 => Some((fi, bc)),
            _ => None,
        }
    }

    /// Interpolate a scalar field at a disk point inside the octagon.
    pub fn eval_scalar(&self, field: &[f64], z: C64) -> Option<f64> {
        let (fi, bc) = self.locate(z)?;
        let f = &self.faces[fi];
        let mut v = 0.0;
        for c in 0..3 {
            v += bc[c] * field[self.raw_canon[f[c]]];
        }
        Some(v)
    }

    /// Interpolate a section's stored value at a disk point, transporting each
    /// corner value from its canonical chart into the global octagon chart.
    pub fn eval_section(&self, s: &KSection, z: C64) -> Option<C64> {
        let (fi, bc) = self.locate(z)?;
        let f = &self.faces[fi];
        let m = s.degree as f64;
        let mut v = C64::new(0.0, 0.0);
        for c in 0..3 {
            let r = f[c];
            let phase = C64::from_polar(1.0, -m * self.raw_shift[r]);
            v += bc[c] * s.values[self.raw_canon[r]] * phase;
        }
        Some(v)
    }
}
