//! Octagon mesh construction: uniform macro-triangle subdivision, boundary
//! gluing by the side pairings, deck words, vertex stars, and edge complex.

use super::*;
use crate::hyperbolic::bolza_group;
use std::collections::{HashMap, HashSet, VecDeque};

fn key_of(z: C64) -> (i64, i64) {
    ((z.re * 1e9).round() as i64, (z.im * 1e9).round() as i64)
}

/// Hyperbolic angle at `a` of the geodesic triangle (a, b, c).
fn hyp_angle(a: C64, b: C64, c: C64) -> f64 {
    let tb = (b - a) / (C64::new(1.0, 0.0) - a.conj() * b);
    let tc = (c - a) / (C64::new(1.0, 0.0) - a.conj() * c);
    (tc / tb).arg().abs()
}

/// Area of the geodesic triangle (a, b, c): angle defect.
fn hyp_triangle_area(a: C64, b: C64, c: C64) -> f64 {
    std::f64::consts::PI - hyp_angle(a, b, c) - hyp_angle(b, c, a) - hyp_angle(c, a, b)
}

/// Point at hyperbolic-arclength fraction `t` along the geodesic from `va`
/// to `vb`. The side pairings are isometries, so equal-arclength boundary
/// samples on paired sides map exactly onto each other.
fn geodesic_point(va: C64, vb: C64, t: f64) -> C64 {
    // move va to the origin, walk the straight ray, move back
    let w = (vb - va) / (C64::new(1.0, 0.0) - va.conj() * vb);
    let len = 2.0 * w.norm().atanh();
    let dir = w / w.norm();
    let u = (0.5 * t * len).tanh() * dir;
    (u + va) / (C64::new(1.0, 0.0) + va.conj() * u)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }
    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let r = self.find(self.parent[i]);
            self.parent[i] = r;
        }
        self.parent[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Build the glued triangulation of the genus-2 octagon surface.
/// `level` in 1..6; each macro triangle edge is split into 2^level segments.
pub fn build_bolza_mesh(level: u32) -> Result<SurfaceMesh, MeshError> {
    if !(1..=6).contains(&level) {
        return Err(MeshError::BadLevel(level));
    }
    let group = bolza_group();
    let n = 1usize << level;
    let origin = C64::new(0.0, 0.0);

    // 1. raw vertices and faces from 8 macro triangles (origin, V_k, V_{k+1})
    let mut raw_pos: Vec<C64> = Vec::new();
    let mut pos_index: HashMap<(i64, i64), usize> = HashMap::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut idx_of = |p: C64, raw_pos: &mut Vec<C64>| -> usize {
        *pos_index.entry(key_of(p)).or_insert_with(|| {
            raw_pos.push(p);
            raw_pos.len() - 1
        })
    };
    for k in 0..8 {
        let va = group.vertices[k];
        let vb = group.vertices[(k + 1) % 8];
        // grid point (i, j): i steps toward va, j toward vb; transfinite
        // interpolation bends the outer rows onto the geodesic octagon side
        let p = |i: usize, j: usize| -> C64 {
            if i + j == 0 {
                return origin;
            }
            let (l1, l2) = (i as f64 / n as f64, j as f64 / n as f64);
            let l12 = l1 + l2;
            let t = l2 / l12;
            let chord = va + t * (vb - va);
            l1 * va + l2 * vb + l12 * (geodesic_point(va, vb, t) - chord)
        };
        for i in 0..n {
            for j in 0..(n - i) {
                let a = idx_of(p(i, j), &mut raw_pos);
                let b = idx_of(p(i + 1, j), &mut raw_pos);
                let c = idx_of(p(i, j + 1), &mut raw_pos);
                faces.push([a, b, c]);
                if i + j < n - 1 {
                    let d = idx_of(p(i + 1, j + 1), &mut raw_pos);
                    faces.push([b, d, c]);
                }
            }
        }
    }
    let nraw = raw_pos.len();

    // 2. boundary identification: generator k maps octagon side k+4 onto side k.
    // Side s runs between vertices V_{s-1+...}: side s has midpoint direction
    // s*pi/4, i.e. it connects V_{s-1 mod 8} and V_s ... determined below by
    // matching actual node images.
    // Collect nodes on each octagon side (segment V_s -> V_{s+1} lies on the
    // side with midpoint angle (2s+2)pi/8 = (s+1)pi/4).
    let mut side_nodes: Vec<Vec<usize>> = vec![Vec::new(); 8];
    for s in 0..8 {
        let va = group.vertices[s];
        let vb = group.vertices[(s + 1) % 8];
        let side = (s + 1) % 8; // side index = midpoint direction / (pi/4)
        for j in 0..=n {
            let p = geodesic_point(va, vb, j as f64 / n as f64);
            let idx = pos_index
                .get(&key_of(p))
                .copied()
                .expect("boundary node must exist");
            side_nodes[side].push(idx);
        }
    }
    let mut uf = UnionFind::new(nraw);
    // identification edges: (from_raw, to_raw, generator k) with
    // raw_pos[to] = g_k(raw_pos[from])
    let mut ident: Vec<(usize, usize, usize)> = Vec::new();
    // raw-edge matching across the pairing, used for edge gluing; keyed by
    // sorted endpoint pairs so octagon corners (which sit on two sides) never
    // pick inconsistent partners
    let mut side_edge_match: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for k in 0..4 {
        let g = &group.generators[k];
        let mut matched: Vec<usize> = Vec::with_capacity(n + 1);
        for &r in &side_nodes[k + 4] {
            let img = g.apply(raw_pos[r]);
            let m = side_nodes[k]
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    (raw_pos[a] - img)
                        .norm()
                        .partial_cmp(&(raw_pos[b] - img).norm())
                        .unwrap()
                })
                .expect("side has nodes");
            assert!(
                (raw_pos[m] - img).norm() < 1e-9,
                "side pairing did not land on a node: {} vs {}",
                raw_pos[m],
                img
            );
            uf.union(r, m);
            ident.push((r, m, k));
            matched.push(m);
        }
        for (w, mw) in side_nodes[k + 4].windows(2).zip(matched.windows(2)) {
            let far = (w[0].min(w[1]), w[0].max(w[1]));
            let near = (mw[0].min(mw[1]), mw[0].max(mw[1]));
            side_edge_match.insert(far, near);
        }
    }

    // 3. canonical vertices and deck words
    let mut canon_of_root: HashMap<usize, usize> = HashMap::new();
    let mut verts: Vec<C64> = Vec::new();
    let mut raw_canon = vec![usize::MAX; nraw];
    for r in 0..nraw {
        let root = uf.find(r);
        let c = *canon_of_root.entry(root).or_insert_with(|| {
            verts.push(raw_pos[root]);
            verts.len() - 1
        });
        raw_canon[r] = c;
    }
    // BFS deck maps from each class representative
    let mut raw_deck = vec![MobiusMap::identity(); nraw];
    let mut have = vec![false; nraw];
    let mut adj: HashMap<usize, Vec<(usize, usize, bool)>> = HashMap::new();
    for &(a, b, k) in &ident {
        adj.entry(a).or_default().push((b, k, true)); // pos_b = g_k(pos_a)
        adj.entry(b).or_default().push((a, k, false));
    }
    for r in 0..nraw {
        let root = uf.find(r);
        if !have[root] {
            have[root] = true;
            raw_deck[root] = MobiusMap::identity();
            let mut q = VecDeque::new();
            q.push_back(root);
            while let Some(a) = q.pop_front() {
                if let Some(list) = adj.get(&a) {
                    for &(b, k, fwd) in list {
                        if !have[b] {
                            have[b] = true;
                            let g = if fwd {
                                group.generators[k]
                            } else {
                                group.generators[k].inverse()
                            };
                            raw_deck[b] = g.compose(&raw_deck[a]);
                            q.push_back(b);
                        }
                    }
                }
            }
        }
    }
    let raw_shift: Vec<f64> = (0..nraw)
        .map(|r| raw_deck[r].angle_shift(verts[raw_canon[r]]))
        .collect();
    // consistency: deck(canon) must reproduce raw position
    for r in 0..nraw {
        let img = raw_deck[r].apply(verts[raw_canon[r]]);
        assert!(
            (img - raw_pos[r]).norm() < 1e-9,
            "deck word inconsistent at raw {r}"
        );
    }

    // 3b. relax interior vertices toward the hyperbolic mean of their
    // neighbors: the transfinite grid leaves a band of distorted triangles
    // where local fits lose accuracy; damped sweeps even out triangle shapes
    // without touching the glued boundary nodes.
    {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); nraw];
        for f in &faces {
            for c in 0..3 {
                nbrs[f[c]].push(f[(c + 1) % 3]);
                nbrs[f[(c + 1) % 3]].push(f[c]);
            }
        }
        let mut copies = vec![0usize; verts.len()];
        for r in 0..nraw {
            copies[raw_canon[r]] += 1;
        }
        // movable = interior (single raw copy, identity deck word)
        let movable: Vec<bool> = (0..nraw).map(|r| copies[raw_canon[r]] == 1).collect();
        for _ in 0..20 {
            let snapshot = raw_pos.clone();
            for r in 0..nraw {
                if !movable[r] {
                    continue;
                }
                let p = snapshot[r];
                let one = C64::new(1.0, 0.0);
                let mut mu = C64::new(0.0, 0.0);
                for &q in &nbrs[r] {
                    // neighbor displacement in the chart centered at p
                    mu += (snapshot[q] - p) / (one - p.conj() * snapshot[q]);
                }
                mu *= 0.6 / nbrs[r].len() as f64;
                let np = (p + mu) / (one + p.conj() * mu);
                raw_pos[r] = np;
                verts[raw_canon[r]] = np;
            }
        }
    }

    // 4. edges with gluing
    let edge_key = |a: usize, b: usize| -> (usize, usize) {
        // map a far-side boundary edge onto its partner on the near side
        let key = (a.min(b), a.max(b));
        side_edge_match.get(&key).copied().unwrap_or(key)
    };
    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<MeshEdge> = Vec::new();
    let mut face_edges: Vec<[(usize, f64); 3]> = Vec::new();
    let mut face_area_flat = Vec::with_capacity(faces.len());
    let mut face_area_hyp = Vec::with_capacity(faces.len());
    for (fi, f) in faces.iter().enumerate() {
        let mut fe = [(0usize, 0.0f64); 3];
        for c in 0..3 {
            let (a, b) = (f[c], f[(c + 1) % 3]);
            let key = edge_key(a, b);
            let id = *edge_index.entry(key).or_insert_with(|| {
                edges.push(MeshEdge {
                    verts: (raw_canon[key.0], raw_canon[key.1]),
                    raw: key,
                    faces: Vec::new(),
                    cotan: 0.0,
                });
                edges.len() - 1
            });
            // traversal sign: face goes canon(a) -> canon(b); edge orientation
            // is raw key.0 -> key.1 i.e. canon order
            let sign = if raw_canon[a] == edges[id].verts.0 && raw_canon[b] == edges[id].verts.1 {
                1.0
            } else if raw_canon[a] == edges[id].verts.1 && raw_canon[b] == edges[id].verts.0 {
                -1.0
            } else {
                panic!("edge endpoints mismatch");
            };
            edges[id].faces.push((fi, sign));
            fe[c] = (id, sign);
            // cotan contribution: angle at the opposite corner in this face
            let p0 = raw_pos[f[(c + 2) % 3]];
            let (pa, pb) = (raw_pos[a], raw_pos[b]);
            let (u, v) = (pa - p0, pb - p0);
            let cross = u.re * v.im - u.im * v.re;
            let dot = u.re * v.re + u.im * v.im;
            edges[id].cotan += 0.5 * dot / cross.abs();
        }
        face_edges.push(fe);
        let (p0, p1, p2) = (raw_pos[f[0]], raw_pos[f[1]], raw_pos[f[2]]);
        let ar = 0.5 * ((p1 - p0).re * (p2 - p0).im - (p1 - p0).im * (p2 - p0).re);
        assert!(ar > 0.0, "face {fi} not counterclockwise");
        face_area_flat.push(ar);
        face_area_hyp.push(hyp_triangle_area(p0, p1, p2));
    }
    // self-check: edges with degenerate endpoints would break DEC
    for e in &edges {
        assert_eq!(e.faces.len(), 2, "every glued edge has two faces");
    }

    // 5. vertex stars (3-ring) via situated BFS across charts
    let mut copies_of: Vec<Vec<usize>> = vec![Vec::new(); verts.len()];
    for r in 0..nraw {
        copies_of[raw_canon[r]].push(r);
    }
    let mut faces_of_raw: Vec<Vec<usize>> = vec![Vec::new(); nraw];
    for (fi, f) in faces.iter().enumerate() {
        for &r in f {
            faces_of_raw[r].push(fi);
        }
    }
    let mut stars = Vec::with_capacity(verts.len());
    for i in 0..verts.len() {
        stars.push(build_star(
            i,
            &verts,
            &raw_pos,
            &raw_canon,
            &raw_deck,
            &copies_of,
            &faces_of_raw,
            &faces,
        ));
    }

    // 6. locator grid
    let rv = raw_pos.iter().map(|p| p.norm()).fold(0.0f64, f64::max);
    let minc = -rv - 1e-6;
    let cell = 2.0 * (rv + 1e-6) / 64.0;
    let (nx, ny) = (64usize, 64usize);
    let mut bins = vec![Vec::new(); nx * ny];
    for (fi, f) in faces.iter().enumerate() {
        let (p0, p1, p2) = (raw_pos[f[0]], raw_pos[f[1]], raw_pos[f[2]]);
        let (x0, x1) = (
            p0.re.min(p1.re).min(p2.re) - 1e-9,
            p0.re.max(p1.re).max(p2.re) + 1e-9,
        );
        let (y0, y1) = (
            p0.im.min(p1.im).min(p2.im) - 1e-9,
            p0.im.max(p1.im).max(p2.im) + 1e-9,
        );
        let ix0 = (((x0 - minc) / cell).floor().max(0.0)) as usize;
        let ix1 = ((((x1 - minc) / cell).floor()) as usize).min(nx - 1);
        let iy0 = (((y0 - minc) / cell).floor().max(0.0)) as usize;
        let iy1 = ((((y1 - minc) / cell).floor()) as usize).min(ny - 1);
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                bins[iy * nx + ix].push(fi as u32);
            }
        }
    }
    let locator = FaceLocator { nx, ny, min: (minc, minc), cell, bins };

    let mut mesh = SurfaceMesh {
        group,
        level,
        u: vec![0.0; verts.len()],
        verts,
        raw_pos,
        raw_canon,
        raw_deck,
        raw_shift,
        faces,
        stars,
        edges,
        face_edges,
        mass: Vec::new(),
        mass_flat: Vec::new(),
        face_area_flat,
        face_area_hyp,
        area: 0.0,
        locator,
    };
    mesh.recompute_mass();
    Ok(mesh)
}

#[allow(clippy::too_many_arguments)]
fn build_star(
    center: usize,
    verts: &[C64],
    raw_pos: &[C64],
    raw_canon: &[usize],
    raw_deck: &[MobiusMap],
    copies_of: &[Vec<usize>],
    faces_of_raw: &[Vec<usize>],
    faces: &[[usize; 3]],
) -> Star {
    // situated raw vertex: (raw index, chart map G applied to raw positions)
    let mut entries: Vec<StarEntry> = vec![StarEntry {
        vert: center,
        pos: verts[center],
        tau: 0.0,
        ring: 0,
    }];
    let mut has_transport = false;
    let mut entry_keys: HashSet<(usize, (i64, i64))> = HashSet::new();
    entry_keys.insert((center, key_of(verts[center])));

    // queue of situated canonical vertices to expand, with chart maps
    // Phi: canonical chart of that vertex -> center chart
    let mut frontier: VecDeque<(usize, MobiusMap, u8)> = VecDeque::new();
    frontier.push_back((center, MobiusMap::identity(), 0));
    let mut visited: HashSet<(usize, (i64, i64))> = HashSet::new();
    visited.insert((center, key_of(verts[center])));

    while let Some((cv, phi, ring)) = frontier.pop_front() {
        if ring >= 3 {
            continue;
        }
        for &rc in &copies_of[cv] {
            // chart map for this raw copy: G = phi o deck_rc^{-1}
            let g = phi.compose(&raw_deck[rc].inverse());
            for &fi in &faces_of_raw[rc] {
                for &r2 in &faces[fi] {
                    if r2 == rc {
                        continue;
                    }
                    let c2 = raw_canon[r2];
                    let q = g.apply(raw_pos[r2]);
                    let phi2 = g.compose(&raw_deck[r2]);
                    let ekey = (c2, key_of(q));
                    if !entry_keys.contains(&ekey) {
                        entry_keys.insert(ekey);
                        if !phi2.same_isometry(&MobiusMap::identity(), 1e-9) {
                            has_transport = true;
                        }
                        let tau = phi2.angle_shift(verts[c2]);
                        entries.push(StarEntry { vert: c2, pos: q, tau, ring: ring + 1 });
                    }
                    if ring + 1 < 3 && !visited.contains(&ekey) {
                        visited.insert(ekey);
                        frontier.push_back((c2, phi2, ring + 1));
                    }
                }
            }
        }
    }
    // recenter into geodesic normal coordinates: w = (z - p)/(1 - conj(p) z)
    // is a disk isometry taking the center to the origin, so the hyperbolic
    // conformal factor becomes locally flat there. Frame rotation picks up
    // arg T'(z) = arg((1 - |p|^2)/(1 - conj(p) z)^2).
    let p = verts[center];
    let one = C64::new(1.0, 0.0);
    let scale = 1.0 - p.norm_sqr();
    for e in entries.iter_mut() {
        let denom = one - p.conj() * e.pos;
        e.tau += (scale / (denom * denom)).arg();
        e.pos = (e.pos - p) / denom;
    }
    Star { center, entries, has_transport }
}
