//! Cochain calculus on the glued triangulation: exterior derivative, diagonal
//! Hodge weights, codifferential, and the harmonic cochain space. Used both
//! for the pulled-back 1-form machinery and as an independent oracle for the
//! kernel-based harmonic basis.

use super::*;
use nalgebra::{DMatrix, DVector};

/// Unit-frame degree-1 stored value -> full 1-form coefficient w = a - i b
/// (gamma = Re(w dz)) at a raw vertex, in the global chart.
pub fn w_at_raw(mesh: &SurfaceMesh, h: &KSection, r: usize) -> C64 {
    debug_assert_eq!(h.degree, 1);
    let c = mesh.raw_canon[r];
    let psi = psi_hyp(mesh.raw_pos[r]) + mesh.u[c];
    2.0 * h.values[c] * C64::from_polar(1.0, -mesh.raw_shift[r]) * psi.exp()
}

/// Integrate the real 1-form represented by a degree-1 section over every
/// mesh edge (trapezoid rule in the edge's chart).
pub fn section_to_cochain(mesh: &SurfaceMesh, h: &KSection) -> Vec<f64> {
    mesh.edges
        .iter()
        .map(|e| {
            let (t, hd) = e.raw;
            let wt = w_at_raw(mesh, h, t);
            let wh = w_at_raw(mesh, h, hd);
            let d = mesh.raw_pos[hd] - mesh.raw_pos[t];
            (0.5 * (wt + wh) * d).re
        })
        .collect()
}

/// d of a scalar vertex function: per-edge difference.
pub fn d0(mesh: &SurfaceMesh, f: &[f64]) -> Vec<f64> {
    mesh.edges.iter().map(|e| f[e.verts.1] - f[e.verts.0]).collect()
}

/// d of a 1-cochain: per-face circulation.
pub fn d1(mesh: &SurfaceMesh, gamma: &[f64]) -> Vec<f64> {
    mesh.face_edges
        .iter()
        .map(|fe| fe.iter().map(|&(e, s)| s * gamma[e]).sum())
        .collect()
}

/// Codifferential (current metric) of a 1-cochain, as a vertex function:
/// delta = S0^{-1} d0^T S1 with cotan 1-form weights. Satisfies
/// <d f, w>_1 = <f, delta w>_0 exactly.
pub fn codifferential(mesh: &SurfaceMesh, gamma: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_verts()];
    for (ei, e) in mesh.edges.iter().enumerate() {
        let x = e.cotan * gamma[ei];
        out[e.verts.1] += x;
        out[e.verts.0] -= x;
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v /= mesh.mass[i];
    }
    out
}

/// Discrete 1-form inner product (cotan weights): sum_e w_e a_e b_e.
pub fn one_form_inner(mesh: &SurfaceMesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.edges
        .iter()
        .enumerate()
        .map(|(ei, e)| e.cotan * a[ei] * b[ei])
        .sum()
}

/// Rotate a 1-cochain by the Hodge star through the dual-edge route and fit a
/// degree-1 section back from the dual samples around each vertex. The dual
/// segment of edge e is the primal vector rotated +90 degrees and scaled by
/// the cotan weight (|e*|/|e| = w_e), and carries the integral w_e * gamma_e.
pub fn hodge_star_dual_route(mesh: &SurfaceMesh, gamma: &[f64]) -> Vec<C64> {
    let n = mesh.n_verts();
    let mut copies_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..mesh.raw_pos.len() {
        copies_of[mesh.raw_canon[r]].push(r);
    }
    let mut faces_of_raw: Vec<Vec<usize>> = vec![Vec::new(); mesh.raw_pos.len()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &r in f {
            faces_of_raw[r].push(fi);
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        // collect dual-edge samples (displacement, integral) in the chart of i
        let mut samples: Vec<(C64, f64)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for &r in &copies_of[i] {
            let g = mesh.raw_deck[r].inverse();
            let rot = g.deriv(mesh.raw_pos[r]);
            for &fi in &faces_of_raw[r] {
                for c in 0..3 {
                    let (a, b) = (mesh.faces[fi][c], mesh.faces[fi][(c + 1) % 3]);
                    if a != r && b != r {
                        continue;
                    }
                    let (e, sign) = mesh.face_edges[fi][c];
                    if !seen.insert(e) {
                        continue;
                    }
                    let edge = &mesh.edges[e];
                    // primal vector in this raw chart, walked a -> b; the
                    // cochain value along that direction is sign * gamma_e
                    let d_primal = mesh.raw_pos[b] - mesh.raw_pos[a];
                    let d_dual = C64::new(0.0, 1.0) * d_primal * edge.cotan;
                    let val = edge.cotan * sign * gamma[e];
                    // transport the displacement into the canonical chart of i
                    samples.push((rot * d_dual, val));
                }
            }
        }
        // least squares for (a*, b*): val = a dx + b dy
        let mut m = DMatrix::<f64>::zeros(samples.len(), 2);
        let mut rhs = DVector::<f64>::zeros(samples.len());
        for (s, (d, v)) in samples.iter().enumerate() {
            m[(s, 0)] = d.re;
            m[(s, 1)] = d.im;
            rhs[s] = *v;
        }
        let sol = (m.transpose() * &m)
            .lu()
            .solve(&(m.transpose() * rhs))
            .expect("dual-edge fit singular");
        let w = C64::new(sol[0], -sol[1]);
        out[i] = 0.5 * w * (-(mesh.psi_at(i))).exp();
    }
    out
}

/// Orthonormal basis of the harmonic 1-cochain space (kernel of the cochain
/// Hodge energy), with eigenvalues for gap inspection. Dimension is 4 for the
/// genus-2 surface, independent of the mesh weights.
pub fn harmonic_cochain_basis(mesh: &SurfaceMesh) -> (Vec<Vec<f64>>, Vec<f64>) {
    let ne = mesh.edges.len();
    // S2 weights: reciprocal metric face area
    let s2: Vec<f64> = (0..mesh.faces.len())
        .map(|fi| {
            let f = &mesh.faces[fi];
            let mut e2 = 0.0;
            for &r in f {
                e2 += (2.0 * mesh.u[mesh.raw_canon[r]]).exp();
            }
            1.0 / (mesh.face_area_hyp[fi] * e2 / 3.0)
        })
        .collect();
    let mut q = DMatrix::<f64>::zeros(ne, ne);
    // d1^T S2 d1
    for (fi, fe) in mesh.face_edges.iter().enumerate() {
        for &(ea, sa) in fe {
            for &(eb, sb) in fe {
                q[(ea, eb)] += sa * sb * s2[fi];
            }
        }
    }
    // S1 d0 S0^{-1} d0^T S1
    // (d0^T S1 gamma)_v as in `codifferential` but without the S0 division
    let mut incid: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mesh.n_verts()];
    for (ei, e) in mesh.edges.iter().enumerate() {
        incid[e.verts.1].push((ei, e.cotan));
        incid[e.verts.0].push((ei, -e.cotan));
    }
    for v in 0..mesh.n_verts() {
        let inv_m = 1.0 / mesh.mass[v];
        for &(ea, wa) in &incid[v] {
            for &(eb, wb) in &incid[v] {
                q[(ea, eb)] += wa * wb * inv_m;
            }
        }
    }
    // Q is positive semidefinite (both summands are Gram forms) even though
    // individual cotan weights may be negative on obtuse triangles; the
    // kernel is found in the plain Euclidean cochain inner product, so the
    // returned basis is l2-orthonormal.
    let eig = nalgebra::SymmetricEigen::new(q);
    let mut idx: Vec<usize> = (0..ne).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut basis = Vec::new();
    for &c in idx.iter().take(4) {
        let v: Vec<f64> = (0..ne).map(|r| eig.eigenvectors[(r, c)]).collect();
        basis.push(v);
    }
    let evals: Vec<f64> = idx.iter().map(|&c| eig.eigenvalues[c]).collect();
    (basis, evals)
}

/// Four real harmonic 1-forms represented by their degree-1 components
/// (the degree -1 component is the conjugate). The list is closed under the
/// Hodge star: star acts as multiplication by -i on the stored values, so
/// entries 2k+1 are the stars of entries 2k.
pub fn harmonic_one_form_basis(mesh: &SurfaceMesh) -> Result<Vec<KSection>, MeshError> {
    let hol = super::kernel::holomorphic_one_forms(mesh)?;
    if hol.len() != 2 {
        return Err(MeshError::DimensionMismatch { expected: 2, found: hol.len() });
    }
    let mut out = Vec::with_capacity(4);
    for h in hol {
        let star = h.scale(C64::new(0.0, -1.0));
        out.push(h);
        out.push(star);
    }
    Ok(out)
}

/// Intersection pairing int gamma_i ^ gamma_j of 1-forms given by degree-1
/// sections (flat-chart quadrature; the integrand is conformally invariant).
pub fn pairing_matrix(mesh: &SurfaceMesh, basis: &[KSection]) -> DMatrix<f64> {
    let nb = basis.len();
    let mut p = DMatrix::<f64>::zeros(nb, nb);
    for (fi, f) in mesh.faces.iter().enumerate() {
        let a = mesh.face_area_flat[fi];
        for i in 0..nb {
            for j in 0..nb {
                let mut s = 0.0;
                for &r in f {
                    let wi = w_at_raw(mesh, &basis[i], r);
                    let wj = w_at_raw(mesh, &basis[j], r);
                    s += (wi * wj.conj()).im;
                }
                p[(i, j)] += a * s / 3.0;
            }
        }
    }
    p
}

/// Deterministic smooth degree-1 test sections: the two harmonic generators
/// plus one multiplied by a smooth function (not harmonic).
pub fn harmonic_like_test_forms(mesh: &SurfaceMesh) -> Result<Vec<KSection>, MeshError> {
    let op = super::ops::face_ladder_operator(mesh, 1, true, None);
    let hol = super::kernel::lowest_sections(&op, mesh, 2);
    let n = mesh.n_verts();
    let mut third = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        let f = 1.0 + (hol[0].values[i] * hol[1].values[i].conj()).re;
        third[i] = hol[0].values[i] * f;
    }
    let mut out = hol;
    out.push(KSection { degree: 1, values: third });
    Ok(out)
}
