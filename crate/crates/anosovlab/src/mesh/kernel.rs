//! Numerical kernel extraction for section-space operators via weighted SVD.

use super::ops::FaceOperator;
use super::*;
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct KernelBasis {
    /// mass-orthonormal kernel vectors (ascending singular value)
    pub sections: Vec<KSection>,
    /// all singular values, ascending
    pub singular_values: Vec<f64>,
    pub dim: usize,
    /// ratio of the first kept to the last cut singular value
    pub gap: f64,
}

pub(crate) fn weighted_svd(op: &FaceOperator, mesh: &SurfaceMesh) -> (Vec<f64>, DMatrix<C64>) {
    let n = op.n_src;
    // Hermitian Gram route: with B = D_L A D_R^{-1} (square-root masses on
    // each side), B^H B = D_R^{-1} (A^H M_L A) D_R^{-1}, accumulated from the
    // sparse rows; singular values/vectors come from its eigendecomposition.
    let d: Vec<f64> = mesh.mass.iter().map(|&m| m.sqrt()).collect();
    let mut g = DMatrix::<C64>::zeros(n, n);
    for (i, row) in op.rows.iter().enumerate() {
        let w = op.dst_mass[i];
        for &(j, cj) in row {
            for &(k, ck) in row {
                g[(j as usize, k as usize)] += w * cj.conj() * ck;
            }
        }
    }
    for j in 0..n {
        for k in 0..n {
            g[(j, k)] /= d[j] * d[k];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(g);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let sv: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    // eigenvectors are the right singular vectors; undo the weighting
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        for r in 0..n {
            vecs[(r, col)] = eig.eigenvectors[(r, i)] / d[r];
        }
    }
    (sv, vecs)
}

/// Orthonormal basis of the numerical kernel: all singular values below
/// rank_tol * sigma_max, requiring a 10x spectral gap at the cut.
pub fn kernel_basis(
    op: &FaceOperator,
    mesh: &SurfaceMesh,
    rank_tol: f64,
) -> Result<KernelBasis, MeshError> {
    let (sv, vecs) = weighted_svd(op, mesh);
    let n = sv.len();
    let smax = sv[n - 1];
    let thresh = rank_tol * smax;
    let dim = sv.iter().filter(|&&s| s < thresh).count();
    let gap = if dim == 0 {
        sv[0] / thresh.max(1e-300)
    } else if dim < n {
        sv[dim] / sv[dim - 1].max(1e-300)
    } else {
        f64::INFINITY
    };
    if gap < 10.0 {
        return Err(MeshError::NoSpectralGap { dim, ratio: gap });
    }
    Ok(KernelBasis {
        sections: extract(op.src_degree, &vecs, dim),
        singular_values: sv,
        dim,
        gap,
    })
}

/// Kernel basis of a prescribed dimension: the tolerance is placed inside the
/// spectral gap after the `dim` smallest singular values (10x gap required).
pub fn kernel_basis_expect(
    op: &FaceOperator,
    mesh: &SurfaceMesh,
    dim: usize,
) -> Result<KernelBasis, MeshError> {
    let (sv, vecs) = weighted_svd(op, mesh);
    let n = sv.len();
    if dim >= n {
        return Err(MeshError::DimensionMismatch { expected: dim, found: n });
    }
    let gap = if dim == 0 {
        f64::INFINITY
    } else {
        sv[dim] / sv[dim - 1].max(1e-300)
    };
    if gap < 10.0 {
        return Err(MeshError::NoSpectralGap { dim, ratio: gap });
    }
    Ok(KernelBasis {
        sections: extract(op.src_degree, &vecs, dim),
        singular_values: sv,
        dim,
        gap,
    })
}

fn extract(degree: i32, vecs: &DMatrix<C64>, dim: usize) -> Vec<KSection> {
    let n = vecs.nrows();
    let mut out = Vec::with_capacity(dim);
    for c in 0..dim {
        let mut vals: Vec<C64> = (0..n).map(|r| vecs[(r, c)]).collect();
        // deterministic phase: largest-magnitude entry made real positive
        let mut imax = 0;
        for (i, v) in vals.iter().enumerate() {
            if v.norm() > vals[imax].norm() {
                imax = i;
            }
        }
        let phase = vals[imax] / vals[imax].norm();
        for v in vals.iter_mut() {
            *v /= phase;
        }
        out.push(KSection { degree, values: vals });
    }
    out
}

/// The `dim` sections of smallest singular value, without the spectral-gap
/// guard. Used for deterministic smooth test data on meshes too coarse to
/// certify kernel dimensions; not a kernel-dimension claim.
pub fn lowest_sections(op: &FaceOperator, mesh: &SurfaceMesh, dim: usize) -> Vec<KSection> {
    let (_, vecs) = weighted_svd(op, mesh);
    extract(op.src_degree, &vecs, dim)
}

/// The two holomorphic 1-differentials: kernel of the lowering operator on
/// degree-1 sections, with the spectral-gap guard.
pub fn holomorphic_one_forms(mesh: &SurfaceMesh) -> Result<Vec<KSection>, MeshError> {
    let op = super::ops::face_ladder_operator(mesh, 1, true, None);
    let kb = kernel_basis_expect(&op, mesh, 2)?;
    Ok(kb.sections)
}

/// Holomorphic quadratic differentials (dimension 3 in genus 2).
pub fn holomorphic_quadratic_differentials(
    mesh: &SurfaceMesh,
) -> Result<Vec<KSection>, MeshError> {
    let op = super::ops::face_ladder_operator(mesh, 2, true, None);
    let kb = kernel_basis_expect(&op, mesh, 3)?;
    Ok(kb.sections)
}
