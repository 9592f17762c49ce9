//! Isometries of the hyperbolic plane, the genus-2 octagon group, and
//! enumeration of primitive conjugacy classes (closed geodesics).
//!
//! Convention: an isometry is stored as a real 2x2 matrix with determinant 1
//! acting on the upper half-plane; the action on the Poincare disk is obtained
//! by conjugating with the Cayley transform w -> (w - i)/(w + i).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet, VecDeque};
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum HypError {
    #[error("point at |z| = {0} is too far from the fundamental domain (max_steps exhausted)")]
    PointTooFar(f64),
    #[error("enumeration budget exceeded: {visited} words visited (budget {budget})")]
    BudgetExceeded { visited: usize, budget: usize },
}

/// Orientation-preserving isometry of the hyperbolic plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MobiusMap {
    /// Row-major SL(2,R) matrix.
    pub m: [[f64; 2]; 2],
}

impl MobiusMap {
    pub fn identity() -> Self {
        MobiusMap { m: [[1.0, 0.0], [0.0, 1.0]] }
    }

    pub fn new(m: [[f64; 2]; 2]) -> Self {
        MobiusMap { m }
    }

    /// Hyperbolic translation of length `t` (along the imaginary axis of H,
    /// i.e. along the real diameter of the disk, moving 0 to tanh(t/2)).
    pub fn translation(t: f64) -> Self {
        MobiusMap { m: [[(t / 2.0).exp(), 0.0], [0.0, (-t / 2.0).exp()]] }
    }

    /// Rotation by angle `phi` about the disk origin.
    pub fn rotation(phi: f64) -> Self {
        // R(a) = [[cos a/2, sin a/2], [-sin a/2, cos a/2]] rotates the disk
        // by the angle `a` around 0 (checked against the Cayley conjugation).
        let (s, c) = (phi / 2.0).sin_cos();
        MobiusMap { m: [[c, s], [-s, c]] }
    }

    pub fn compose(&self, other: &MobiusMap) -> MobiusMap {
        let a = &self.m;
        let b = &other.m;
        MobiusMap {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
        }
    }

    pub fn inverse(&self) -> MobiusMap {
        let a = &self.m;
        // det = 1
        MobiusMap { m: [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]] }
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// SU(1,1) coefficients (alpha, beta) of the disk action
    /// z -> (alpha z + beta) / (conj(beta) z + conj(alpha)).
    pub fn disk_coeffs(&self) -> (C64, C64) {
        let [[a, b], [c, d]] = self.m;
        let alpha = C64::new((a + d) / 2.0, (b - c) / 2.0);
        let beta = C64::new((a - d) / 2.0, -(b + c) / 2.0);
        (alpha, beta)
    }

    /// Image of a disk point.
    pub fn apply(&self, z: C64) -> C64 {
        let (alpha, beta) = self.disk_coeffs();
        (alpha * z + beta) / (beta.conj() * z + alpha.conj())
    }

    /// Complex derivative of the disk action at `z`.
    pub fn deriv(&self, z: C64) -> C64 {
        let (alpha, beta) = self.disk_coeffs();
        let den = beta.conj() * z + alpha.conj();
        1.0 / (den * den)
    }

    /// arg of the complex derivative at `z`: rotation applied to tangent
    /// directions at `z`.
    pub fn angle_shift(&self, z: C64) -> f64 {
        self.deriv(z).arg()
    }

    /// Attracting and repelling fixed points on the unit circle for a
    /// hyperbolic element, as (attracting, repelling). None if not hyperbolic.
    pub fn axis_endpoints(&self) -> Option<(C64, C64)> {
        let tr = self.trace();
        if tr.abs() <= 2.0 + 1e-12 {
            return None;
        }
        let (alpha, beta) = self.disk_coeffs();
        // Fixed points of (alpha z + beta)/(conj(beta) z + conj(alpha)):
        // conj(beta) z^2 + (conj(alpha) - alpha) z - beta = 0.
        let bb = beta.conj();
        if bb.norm() < 1e-15 {
            return None; // rotation about 0 or identity
        }
        let mid = C64::new(0.0, alpha.im); // (alpha - conj(alpha))/2
        let disc = (mid * mid + beta * bb).sqrt();
        let z1 = (mid + disc) / bb;
        let z2 = (mid - disc) / bb;
        // attracting endpoint: |derivative| < 1
        let d1 = self.deriv(z1).norm();
        if d1 < 1.0 {
            Some((z1, z2))
        } else {
            Some((z2, z1))
        }
    }

    pub fn approx_eq(&self, other: &MobiusMap, tol: f64) -> bool {
        let mut d = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        d < tol
    }

    /// True if this equals +/- other (same isometry).
    pub fn same_isometry(&self, other: &MobiusMap, tol: f64) -> bool {
        let neg = MobiusMap {
            m: [
                [-other.m[0][0], -other.m[0][1]],
                [-other.m[1][0], -other.m[1][1]],
            ],
        };
        self.approx_eq(other, tol) || self.approx_eq(&neg, tol)
    }
}

/// Hyperbolic distance between two disk points.
pub fn dist(z: C64, w: C64) -> f64 {
    let num = 2.0 * (z - w).norm_sqr();
    let den = (1.0 - z.norm_sqr()) * (1.0 - w.norm_sqr());
    (1.0 + num / den).acosh()
}

/// Translation length of a hyperbolic element: 2 arccosh(|tr|/2).
pub fn translation_length(tr: f64) -> f64 {
    2.0 * (tr.abs() / 2.0).acosh()
}

/// A point of the Poincare disk, |z| < 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiskPoint {
    pub z: C64,
}

/// Index of the inverse generator under the convention gen[k+4] = gen[k]^-1.
#[inline]
pub fn inv_gen(k: u8) -> u8 {
    (k + 4) % 8
}

/// Cocompact surface group with a centered fundamental polygon.
#[derive(Debug, Clone)]
pub struct FuchsianGroup {
    /// 8 generators; generators[k+4] = generators[k]^{-1}.
    pub generators: Vec<MobiusMap>,
    /// Relation word (indices into `generators`); the product is +/- identity.
    pub relation: Vec<u8>,
    /// Octagon vertices in the disk, counterclockwise.
    pub vertices: Vec<C64>,
    /// Images of the origin under the generators (Dirichlet neighbors).
    gen_images_of_origin: Vec<C64>,
}

/// Genus-2 surface group of the regular octagon with opposite-side pairing
/// (the square-symmetric genus-2 surface). Generator k translates by
/// 2 arccosh(1 + sqrt 2) in the direction k*pi/4.
pub fn bolza_group() -> FuchsianGroup {
    let ell = 2.0 * (1.0 + 2.0_f64.sqrt()).acosh();
    let mut generators = Vec::with_capacity(8);
    for k in 0..8u32 {
        let a = k as f64 * std::f64::consts::FRAC_PI_4;
        let r = MobiusMap::rotation(a);
        let g = r.compose(&MobiusMap::translation(ell)).compose(&r.inverse());
        generators.push(g);
    }
    // Octagon vertices: radius tanh(d_v/2) with cosh d_v = 3 + 2 sqrt 2,
    // at angles (2k+1) pi/8.
    let dv = (3.0 + 2.0 * 2.0_f64.sqrt()).acosh();
    let rv = (dv / 2.0).tanh();
    let vertices: Vec<C64> = (0..8)
        .map(|k| C64::from_polar(rv, (2 * k + 1) as f64 * std::f64::consts::PI / 8.0))
        .collect();
    let gen_images_of_origin = generators.iter().map(|g| g.apply(C64::new(0.0, 0.0))).collect();
    FuchsianGroup {
        generators,
        relation: vec![0, 5, 2, 7, 4, 1, 6, 3],
        vertices,
        gen_images_of_origin,
    }
}

impl FuchsianGroup {
    /// Compose a word (applied left to right: word [a, b] means g_b g_a).
    pub fn word_map(&self, word: &[u8]) -> MobiusMap {
        let mut m = MobiusMap::identity();
        for &k in word {
            m = self.generators[k as usize].compose(&m);
        }
        m
    }

    /// Product of the word read left to right as written:
    /// word [a, b] means g_a g_b.
    pub fn word_product(&self, word: &[u8]) -> MobiusMap {
        let mut m = MobiusMap::identity();
        for &k in word {
            m = m.compose(&self.generators[k as usize]);
        }
        m
    }

    /// True if `z` lies in the (closed) Dirichlet fundamental octagon.
    pub fn in_domain(&self, z: C64, tol: f64) -> bool {
        let d0 = dist(z, C64::new(0.0, 0.0));
        self.gen_images_of_origin.iter().all(|&p| d0 <= dist(z, p) + tol)
    }

    /// Reduce a disk point into the fundamental domain.
    ///
    /// Returns (reduced point, word of generator indices applied in order):
    /// reduced = g_{w_n} ... g_{w_1} (z). Boundary convention: points on a
    /// paired side are owned by the side of smaller index, so a point found on
    /// side k >= 4 (equidistant from 0 and g_k(0)) is mapped to side k - 4.
    pub fn reduce(&self, z: C64, max_steps: usize) -> Result<(C64, Vec<u8>), HypError> {
        const EPS: f64 = 1e-12;
        let origin = C64::new(0.0, 0.0);
        let mut z = z;
        let mut word = Vec::new();
        for _ in 0..max_steps {
            let d0 = dist(z, origin);
            let mut best_k = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, &p) in self.gen_images_of_origin.iter().enumerate() {
                let d = dist(z, p);
                if d < best_d - EPS {
                    best_d = d;
                    best_k = k;
                }
            }
            if d0 <= best_d - EPS {
                return Ok((z, word)); // strictly interior
            }
            if (d0 - best_d).abs() < EPS {
                // On the boundary. Owned unless every nearest side has index >= 4.
                let mut owner = None;
                for (k, &p) in self.gen_images_of_origin.iter().enumerate() {
                    if (dist(z, p) - d0).abs() < EPS {
                        if k < 4 {
                            owner = Some(k);
                            break;
                        } else if owner.is_none() {
                            owner = Some(k);
                        }
                    }
                }
                match owner {
                    Some(k) if k < 4 => return Ok((z, word)),
                    Some(k) => {
                        let ik = inv_gen(k as u8);
                        z = self.generators[ik as usize].apply(z);
                        word.push(ik);
                        continue;
                    }
                    None => return Ok((z, word)),
                }
            }
            // Strictly closer to g_k(0): pull back by g_k^{-1}.
            let ik = inv_gen(best_k as u8);
            z = self.generators[ik as usize].apply(z);
            word.push(ik);
        }
        if self.in_domain(z, EPS) {
            Ok((z, word))
        } else {
            Err(HypError::PointTooFar(z.norm()))
        }
    }

    /// Reduce a unit-tangent point (z, theta); theta is rotated by the angle
    /// shift of each applied generator.
    pub fn reduce_sm(
        &self,
        z: C64,
        theta: f64,
        max_steps: usize,
    ) -> Result<(C64, f64, Vec<u8>), HypError> {
        let mut zz = z;
        let mut th = theta;
        let (zr, word) = self.reduce(z, max_steps)?;
        for &k in &word {
            th += self.generators[k as usize].angle_shift(zz);
            zz = self.generators[k as usize].apply(zz);
        }
        debug_assert!((zz - zr).norm() < 1e-9);
        Ok((zr, th, word))
    }
}

/// Primitive conjugacy class of a hyperbolic element: a closed geodesic with
/// orientation. Inverse classes are distinct entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugacyClass {
    /// Canonical cyclically-minimal word (generator indices, product left to right).
    pub word: Vec<u8>,
    /// Representative matrix (product of the word).
    pub map: MobiusMap,
    /// Geodesic length 2 arccosh(|tr|/2).
    pub length: f64,
    /// Homology class: signed generator counts (g0..g3).
    pub homology: [i64; 4],
}

/// Result of class enumeration, with the length bound actually covered.
#[derive(Debug, Clone)]
pub struct ClassSet {
    pub classes: Vec<ConjugacyClass>,
    pub max_length: f64,
}

fn homology_of_word(word: &[u8]) -> [i64; 4] {
    let mut h = [0i64; 4];
    for &k in word {
        if k < 4 {
            h[k as usize] += 1;
        } else {
            h[(k - 4) as usize] -= 1;
        }
    }
    h
}

/// Half-relator rewriting table: every 4-letter half `u` of a cyclic rotation
/// of the relation word (or its inverse) may be replaced by the inverse `v^-1`
/// of the complementary half, preserving the group element and word length.
fn half_relator_swaps(relation: &[u8]) -> HashMap<Vec<u8>, Vec<u8>> {
    let mut map = HashMap::new();
    let mut words: Vec<Vec<u8>> = Vec::new();
    words.push(relation.to_vec());
    let inv: Vec<u8> = relation.iter().rev().map(|&k| inv_gen(k)).collect();
    words.push(inv);
    for w in words {
        let n = w.len();
        for r in 0..n {
            let rot: Vec<u8> = (0..n).map(|i| w[(i + r) % n]).collect();
            let u = rot[..n / 2].to_vec();
            let v = &rot[n / 2..];
            let v_inv: Vec<u8> = v.iter().rev().map(|&k| inv_gen(k)).collect();
            map.insert(u, v_inv);
        }
    }
    map
}

/// Pieces longer than half the relator, used for Dehn shortening:
/// a (>=5)-letter piece maps to the (<=3)-letter inverse complement.
fn long_relator_pieces(relation: &[u8]) -> HashMap<Vec<u8>, Vec<u8>> {
    let mut map = HashMap::new();
    let mut words: Vec<Vec<u8>> = Vec::new();
    words.push(relation.to_vec());
    let inv: Vec<u8> = relation.iter().rev().map(|&k| inv_gen(k)).collect();
    words.push(inv);
    for w in words {
        let n = w.len();
        for r in 0..n {
            let rot: Vec<u8> = (0..n).map(|i| w[(i + r) % n]).collect();
            for take in (n / 2 + 1)..=n {
                let u = rot[..take].to_vec();
                let v = &rot[take..];
                let v_inv: Vec<u8> = v.iter().rev().map(|&k| inv_gen(k)).collect();
                map.insert(u, v_inv);
            }
        }
    }
    map
}

fn free_reduce_cyclic(mut w: Vec<u8>) -> Vec<u8> {
    // free reduction
    loop {
        let mut out: Vec<u8> = Vec::with_capacity(w.len());
        for &k in &w {
            if let Some(&last) = out.last() {
                if last == inv_gen(k) {
                    out.pop();
                    continue;
                }
            }
            out.push(k);
        }
        // cyclic reduction
        while out.len() >= 2 && out[0] == inv_gen(*out.last().unwrap()) {
            out.remove(0);
            out.pop();
        }
        if out.len() == w.len() {
            return out;
        }
        w = out;
    }
}

/// Shorten a cyclic word with Dehn's algorithm until no piece longer than half
/// the relator remains, then return it (cyclically reduced).
fn dehn_cyclic_reduce(word: &[u8], long: &HashMap<Vec<u8>, Vec<u8>>) -> Vec<u8> {
    let mut w = free_reduce_cyclic(word.to_vec());
    'outer: loop {
        let n = w.len();
        if n < 5 {
            return w;
        }
        for start in 0..n {
            for take in 5..=8.min(n) {
                let piece: Vec<u8> = (0..take).map(|i| w[(start + i) % n]).collect();
                if let Some(repl) = long.get(&piece) {
                    // rebuild: remainder after the piece, then replacement
                    let mut nw: Vec<u8> = (take..n).map(|i| w[(start + i) % n]).collect();
                    nw.extend_from_slice(repl);
                    w = free_reduce_cyclic(nw);
                    continue 'outer;
                }
            }
        }
        return w;
    }
}

/// Canonical representative of the conjugacy class of a cyclically minimal
/// word: lexicographic minimum over the closure under cyclic rotations and
/// half-relator swaps.
fn canonical_cyclic_word(word: &[u8], swaps: &HashMap<Vec<u8>, Vec<u8>>) -> Vec<u8> {
    let n = word.len();
    if n == 0 {
        return Vec::new();
    }
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut queue: VecDeque<Vec<u8>> = VecDeque::new();
    let mut best = word.to_vec();
    queue.push_back(word.to_vec());
    seen.insert(word.to_vec());
    while let Some(w) = queue.pop_front() {
        // all rotations
        for r in 0..n {
            let rot: Vec<u8> = (0..n).map(|i| w[(i + r) % n]).collect();
            if rot < best {
                best = rot.clone();
            }
            if !seen.contains(&rot) {
                seen.insert(rot.clone());
                // half-relator swaps at position 0 of this rotation
                if n >= 4 {
                    let prefix = rot[..4].to_vec();
                    if let Some(repl) = swaps.get(&prefix) {
                        let mut nw = repl.clone();
                        nw.extend_from_slice(&rot[4..]);
                        let nw = free_reduce_cyclic(nw);
                        if nw.len() == n && !seen.contains(&nw) {
                            seen.insert(nw.clone());
                            queue.push_back(nw);
                        }
                    }
                }
                queue.push_back(rot);
            }
            if seen.len() > 4096 {
                return best; // safety valve; class closures are small
            }
        }
    }
    best
}

fn is_proper_power(word: &[u8]) -> bool {
    let n = word.len();
    for d in 1..n {
        if n % d != 0 {
            continue;
        }
        let mut ok = true;
        'chk: for i in 0..n {
            if word[i] != word[i % d] {
                ok = false;
                break 'chk;
            }
        }
        if ok {
            return true;
        }
    }
    false
}

/// Enumerate primitive conjugacy classes of geodesic length <= `max_length`.
///
/// Walks reduced words depth-first with a displacement prune, Dehn-minimizes
/// each cyclically reduced hyperbolic candidate, and dedupes by the canonical
/// cyclic word (closure under rotations and half-relator swaps), cross-checked
/// by a trace bucket at 1e-9. `budget` bounds the number of tree nodes visited.
pub fn enumerate_primitive_classes(
    group: &FuchsianGroup,
    max_length: f64,
    budget: usize,
) -> Result<ClassSet, HypError> {
    // Any class of length <= L has a representative whose axis meets the
    // fundamental octagon, hence displacement d(0, g0) <= L + 2 * circumradius.
    let circum = (3.0 + 2.0 * 2.0_f64.sqrt()).acosh();
    // extra slack so breadth-first paths can reach every candidate element
    // even when intermediate prefixes bulge slightly outside the target ball
    let max_disp = max_length + 3.0 * circum;
    let max_cosh = ((max_disp).cosh() - 1.0) / 2.0; // |g0|^2 bound via dist formula
    let origin = C64::new(0.0, 0.0);

    let swaps = half_relator_swaps(&group.relation);
    let long = long_relator_pieces(&group.relation);

    // PSL(2,R)-normalized rounded matrix key: elements of a discrete group in
    // a compact ball are uniformly separated, so rounding is collision-free.
    let element_key = |m: &MobiusMap| -> [i64; 4] {
        let e = [m.m[0][0], m.m[0][1], m.m[1][0], m.m[1][1]];
        let sign = e
            .iter()
            .find(|x| x.abs() > 1e-8)
            .map(|x| x.signum())
            .unwrap_or(1.0);
        [
            (sign * e[0] * 1e7).round() as i64,
            (sign * e[1] * 1e7).round() as i64,
            (sign * e[2] * 1e7).round() as i64,
            (sign * e[3] * 1e7).round() as i64,
        ]
    };

    let mut visited = 0usize;
    let mut found: HashMap<Vec<u8>, ConjugacyClass> = HashMap::new();

    // breadth-first search over group elements (not word spellings) in the
    // displacement ball: bounded and small by discreteness
    let mut seen: HashSet<[i64; 4]> = HashSet::new();
    let mut queue: VecDeque<(MobiusMap, Vec<u8>)> = VecDeque::new();
    seen.insert(element_key(&MobiusMap::identity()));
    queue.push_back((MobiusMap::identity(), Vec::new()));
    while let Some((map, word)) = queue.pop_front() {
        visited += 1;
        if visited > budget {
            return Err(HypError::BudgetExceeded { visited, budget });
        }
        let tr = map.trace().abs();
        if tr > 2.0 + 1e-10 {
            let len = translation_length(map.trace());
            if len <= max_length + 1e-9 {
                let minimal = dehn_cyclic_reduce(&word, &long);
                if !minimal.is_empty() {
                    let canon = canonical_cyclic_word(&minimal, &swaps);
                    if !is_proper_power(&canon) && !found.contains_key(&canon) {
                        let cmap = group.word_product(&canon);
                        found.insert(
                            canon.clone(),
                            ConjugacyClass {
                                homology: homology_of_word(&canon),
                                length: translation_length(cmap.trace()),
                                word: canon,
                                map: cmap,
                            },
                        );
                    }
                }
            }
        }
        let last = word.last().copied();
        for k in 0..8u8 {
            if last == Some(inv_gen(k)) {
                continue;
            }
            let next = map.compose(&group.generators[k as usize]);
            let g0 = next.apply(origin);
            let disp_cosh = g0.norm_sqr() / (1.0 - g0.norm_sqr());
            if disp_cosh > max_cosh {
                continue;
            }
            if seen.insert(element_key(&next)) {
                let mut w = word.clone();
                w.push(k);
                queue.push_back((next, w));
            }
        }
    }

    let mut classes: Vec<ConjugacyClass> = found.into_values().collect();
    classes.sort_by(|a, b| {
        a.length
            .partial_cmp(&b.length)
            .unwrap()
            .then_with(|| a.word.cmp(&b.word))
    });
    Ok(ClassSet { classes, max_length })
}
