//! The pointed BDG construction: arcs from every white corner to its successor, drawn without
//! crossings, plus the exact identities it satisfies.

use rand::Rng;

use crate::mobile::{LabeledMobile, Mobile, NONE};
use crate::planarmap::{alpha, build_map, faces, genus, Adjacency, HalfEdgeMap, Marks};
use crate::{Error, Result};

/// A two-colored plane map (mobile or unicyclomobile) seen through darts.
#[derive(Debug, Clone)]
pub struct PlaneMobile {
    pub sigma: Vec<u32>,
    pub vertex_of: Vec<u32>,
    pub white: Vec<bool>,
    pub label: Vec<i64>,
}

impl PlaneMobile {
    #[inline]
    pub fn next_corner(&self, a: u32) -> u32 {
        alpha(self.sigma[a as usize])
    }

    pub fn n_vertices(&self) -> usize {
        self.white.len()
    }
}

/// Mobile darts: the edge above a non-root node v has down dart 2e(v) at the parent and up dart
/// 2e(v)+1 at v. Rotations are [up, children…].
#[derive(Debug, Clone)]
pub struct MobileEmbedding {
    pub plane: PlaneMobile,
    pub edge_of: Vec<u32>,
    /// corner at the root between its last and its first child
    pub root_corner: u32,
}

pub fn embed_mobile(lm: &LabeledMobile) -> MobileEmbedding {
    let m = &lm.mobile;
    let mut edge_of = vec![NONE; m.len()];
    let mut e = 0u32;
    for v in 0..m.len() {
        if v as u32 != m.root {
            edge_of[v] = e;
            e += 1;
        }
    }
    let n_darts = 2 * e as usize;
    let mut sigma = vec![0u32; n_darts];
    let mut vertex_of = vec![0u32; n_darts];
    for v in 0..m.len() {
        let mut rot = Vec::with_capacity(m.children[v].len() + 1);
        if edge_of[v] != NONE {
            rot.push(2 * edge_of[v] + 1);
        }
        rot.extend(m.children[v].iter().map(|&c| 2 * edge_of[c as usize]));
        for (i, &h) in rot.iter().enumerate() {
            sigma[h as usize] = rot[(i + 1) % rot.len()];
            vertex_of[h as usize] = v as u32;
        }
    }
    let root_corner = m.children[m.root as usize].last().map(|&c| 2 * edge_of[c as usize]).unwrap_or(NONE);
    let white = (0..m.len()).map(|v| m.is_white(v as u32)).collect();
    MobileEmbedding { plane: PlaneMobile { sigma, vertex_of, white, label: lm.label.clone() }, edge_of, root_corner }
}

/// White corners of one face in contour order with their successors.
#[derive(Debug, Clone, Default)]
pub struct CornerSequence {
    /// corner darts of the plane mobile
    pub dart: Vec<u32>,
    pub vertex: Vec<u32>,
    pub label: Vec<i64>,
    /// index of the successor corner, or NONE for the extra vertex
    pub succ: Vec<u32>,
}

impl CornerSequence {
    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    pub fn min_label(&self) -> i64 {
        self.label.iter().copied().min().unwrap_or(0)
    }

    pub fn first_min(&self) -> usize {
        let m = self.min_label();
        self.label.iter().position(|&l| l == m).unwrap_or(0)
    }
}

/// First later corner (cyclically) with label one less, by a backward sweep over the doubled
/// sequence with one slot per label value.
pub fn compute_successors(label: &[i64]) -> Vec<u32> {
    let m = label.len();
    if m == 0 {
        return Vec::new();
    }
    let lo = *label.iter().min().unwrap();
    let hi = *label.iter().max().unwrap();
    let mut next = vec![NONE; (hi - lo + 1) as usize];
    let mut succ = vec![NONE; m];
    for idx in (0..2 * m).rev() {
        let i = idx % m;
        let l = label[i];
        if idx < m && l > lo {
            succ[i] = next[(l - 1 - lo) as usize] % m as u32;
        }
        next[(l - lo) as usize] = idx as u32;
    }
    succ
}

pub fn face_corners(pm: &PlaneMobile, start: u32) -> CornerSequence {
    let mut cs = CornerSequence::default();
    let mut a = start;
    loop {
        let v = pm.vertex_of[a as usize];
        if pm.white[v as usize] {
            cs.dart.push(a);
            cs.vertex.push(v);
            cs.label.push(pm.label[v as usize]);
        }
        a = pm.next_corner(a);
        if a == start {
            break;
        }
    }
    cs.succ = compute_successors(&cs.label);
    cs
}

pub fn successors(lm: &LabeledMobile) -> CornerSequence {
    let emb = embed_mobile(lm);
    if emb.root_corner == NONE {
        return CornerSequence { dart: vec![NONE], vertex: vec![lm.mobile.root], label: vec![0], succ: vec![NONE] };
    }
    face_corners(&emb.plane, emb.root_corner)
}

#[derive(Debug, Clone)]
pub struct FaceBdg {
    pub map: HalfEdgeMap,
    /// plane-mobile vertex ↦ map vertex (NONE for black vertices)
    pub map_vertex: Vec<u32>,
    /// one extra vertex per face
    pub extra: Vec<u32>,
    pub faces: Vec<CornerSequence>,
    /// arc id of corner i of face f is arc_base[f] + i; its darts are 2·arc (source), 2·arc+1
    pub arc_base: Vec<u32>,
}

/// Runs the successor construction independently inside each listed face (given by one corner
/// dart) and glues the arcs into a map whose vertices are the white vertices plus one extra
/// vertex per face. Arcs at each corner are ordered by their contour offset, which realizes the
/// non-crossing drawing.
pub fn bdg_faces(pm: &PlaneMobile, face_starts: &[u32]) -> Result<FaceBdg> {
    let n = pm.n_vertices();
    let mut map_vertex = vec![NONE; n];
    let mut nv = 0u32;
    for v in 0..n {
        if pm.white[v] {
            map_vertex[v] = nv;
            nv += 1;
        }
    }
    let extra: Vec<u32> = (0..face_starts.len() as u32).map(|i| nv + i).collect();
    let total_v = nv as usize + face_starts.len();
    let fcs: Vec<CornerSequence> = face_starts.iter().map(|&s| face_corners(pm, s)).collect();
    let mut arc_base = Vec::with_capacity(fcs.len());
    let mut acc = 0u32;
    for f in &fcs {
        arc_base.push(acc);
        acc += f.len() as u32;
    }
    // darts sitting in each corner of the plane mobile, keyed by corner dart
    let mut at_corner: Vec<Vec<(u32, u32)>> = vec![Vec::new(); pm.sigma.len()];
    let mut at_extra: Vec<Vec<(u32, u32)>> = vec![Vec::new(); fcs.len()];
    for (fi, f) in fcs.iter().enumerate() {
        let m2 = 2 * f.len() as u32;
        let i0 = f.first_min() as u32;
        let extra_pos = 2 * i0 + 1;
        for i in 0..f.len() {
            let arc = arc_base[fi] + i as u32;
            let pos = 2 * i as u32;
            let (tpos, to_extra) = match f.succ[i] {
                NONE => (extra_pos, true),
                j => (2 * j, false),
            };
            let off = (tpos + m2 - pos) % m2;
            at_corner[f.dart[i] as usize].push((off, 2 * arc));
            if to_extra {
                at_extra[fi].push(((pos + m2 - extra_pos) % m2, 2 * arc + 1));
            } else {
                let j = f.succ[i] as usize;
                at_corner[f.dart[j] as usize].push(((pos + m2 - 2 * j as u32) % m2, 2 * arc + 1));
            }
        }
    }
    let mut rotations: Vec<Vec<u32>> = vec![Vec::new(); total_v];
    let mut seen = vec![false; pm.sigma.len()];
    for start in 0..pm.sigma.len() {
        if seen[start] {
            continue;
        }
        let v = pm.vertex_of[start] as usize;
        let mut a = start as u32;
        while !seen[a as usize] {
            seen[a as usize] = true;
            if pm.white[v] {
                let slot = &mut at_corner[a as usize];
                slot.sort_unstable_by(|x, y| y.0.cmp(&x.0));
                rotations[map_vertex[v] as usize].extend(slot.iter().map(|x| x.1));
            }
            a = pm.sigma[a as usize];
        }
    }
    for (fi, slot) in at_extra.iter_mut().enumerate() {
        slot.sort_unstable_by(|x, y| y.0.cmp(&x.0));
        rotations[extra[fi] as usize].extend(slot.iter().map(|x| x.1));
    }
    let map = build_map(&rotations, 0).map_err(|e| Error::Internal(format!("BDG rotation system invalid: {e}")))?;
    Ok(FaceBdg { map, map_vertex, extra, faces: fcs, arc_base })
}

#[derive(Debug, Clone)]
pub struct PointedMap {
    pub map: HalfEdgeMap,
    pub v_star: u32,
    /// mobile node ↦ map vertex (NONE for black nodes)
    pub map_vertex: Vec<u32>,
    pub corners: CornerSequence,
    pub eps: i8,
}

/// Map on the white vertices plus v*, rooted at the arc of the root corner (reversed when
/// eps = −1).
pub fn bdg_forward(lm: &LabeledMobile, eps: i8) -> Result<PointedMap> {
    if eps != 1 && eps != -1 {
        return Err(Error::Domain(format!("eps = {eps} must be ±1")));
    }
    let emb = embed_mobile(lm);
    if emb.root_corner == NONE {
        // single white vertex: the edge-map
        let mut map = build_map(&[vec![0], vec![1]], if eps == 1 { 0 } else { 1 })?;
        map.marks = Marks { v_star: Some(1), ..Marks::default() };
        let mut map_vertex = vec![NONE; lm.mobile.len()];
        map_vertex[lm.mobile.root as usize] = 0;
        return Ok(PointedMap { map, v_star: 1, map_vertex, corners: successors(lm), eps });
    }
    let fb = bdg_faces(&emb.plane, &[emb.root_corner])?;
    let mut map = fb.map;
    map.root = if eps == 1 { 0 } else { 1 };
    map.marks = Marks { v_star: Some(fb.extra[0]), ..Marks::default() };
    let pmap = PointedMap {
        map,
        v_star: fb.extra[0],
        map_vertex: fb.map_vertex,
        corners: fb.faces.into_iter().next().unwrap(),
        eps,
    };
    check_structure(&pmap.map, &lm.mobile)?;
    Ok(pmap)
}

/// Genus 0 and face degrees {2·deg(b)}.
pub fn check_structure(map: &HalfEdgeMap, m: &Mobile) -> Result<()> {
    if m.len() == 1 {
        return if map.n_vertices == 2 && map.n_edges() == 1 {
            Ok(())
        } else {
            Err(Error::Internal("single white vertex must give the edge-map".into()))
        };
    }
    let g = genus(map)?;
    if g != 0 {
        return Err(Error::Internal(format!("BDG output has genus {g}")));
    }
    let mut fd: Vec<usize> = faces(map).iter().map(|f| f.degree).collect();
    let mut bd: Vec<usize> =
        (0..m.len()).filter(|&v| !m.is_white(v as u32)).map(|b| 2 * (m.children[b].len() + 1)).collect();
    fd.sort_unstable();
    bd.sort_unstable();
    if fd != bd {
        return Err(Error::Internal("face degrees do not match black degrees".into()));
    }
    Ok(())
}

/// Sparse table for range minima over a fixed sequence.
pub struct RangeMin {
    levels: Vec<Vec<i64>>,
}

impl RangeMin {
    pub fn new(v: &[i64]) -> Self {
        let mut levels = vec![v.to_vec()];
        let mut w = 1;
        while 2 * w <= v.len() {
            let prev = levels.last().unwrap();
            let next: Vec<i64> = (0..=v.len() - 2 * w).map(|i| prev[i].min(prev[i + w])).collect();
            levels.push(next);
            w *= 2;
        }
        RangeMin { levels }
    }

    /// min over i..=j
    pub fn query(&self, i: usize, j: usize) -> i64 {
        let len = j - i + 1;
        let k = usize::BITS as usize - 1 - len.leading_zeros() as usize;
        self.levels[k][i].min(self.levels[k][j + 1 - (1 << k)])
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub distance_checked: usize,
    pub distance_violations: usize,
    pub schaeffer_pairs: usize,
    pub schaeffer_violations: usize,
    pub cactus_tuples: usize,
    pub cactus_violations: usize,
    pub geodesic_violations: usize,
    pub structure_ok: bool,
    pub witnesses: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.structure_ok
            && self.distance_violations == 0
            && self.schaeffer_violations == 0
            && self.cactus_violations == 0
            && self.geodesic_violations == 0
    }
}

/// Exact checks on a BDG output: distance identity for every vertex, label bounds on sampled
/// pairs (grouped by source), the discrete cactus bound on sampled 4-tuples, and structure.
pub fn verify_map<R: Rng + ?Sized>(
    lm: &LabeledMobile,
    pm: &PointedMap,
    sources: usize,
    targets_per_source: usize,
    tuples: usize,
    rng: &mut R,
) -> VerifyReport {
    let mut rep = VerifyReport { structure_ok: check_structure(&pm.map, &lm.mobile).is_ok(), ..Default::default() };
    let m = &lm.mobile;
    let adj = pm.map.adjacency();
    let cs = &pm.corners;
    let min = cs.min_label();
    let d_star = adj.bfs(pm.v_star);
    let whites = m.white_order();
    for &w in &whites {
        let expect = lm.label[w as usize] - min + 1;
        let got = d_star[pm.map_vertex[w as usize] as usize] as i64;
        rep.distance_checked += 1;
        if got != expect {
            rep.distance_violations += 1;
            rep.witnesses.push(format!("d(v{w}, v*) = {got}, label predicts {expect}"));
        }
    }
    // simple geodesics from a few corners
    for _ in 0..sources.min(cs.len()) {
        let mut c = rng.random_range(0..cs.len());
        loop {
            let here = d_star[pm.map_vertex[cs.vertex[c] as usize] as usize];
            let s = cs.succ[c];
            let next = if s == NONE { 0 } else { d_star[pm.map_vertex[cs.vertex[s as usize] as usize] as usize] };
            if here != next + 1 {
                rep.geodesic_violations += 1;
                break;
            }
            if s == NONE {
                break;
            }
            c = s as usize;
        }
    }

    // corners of each white vertex, positions in the doubled contour for cyclic range minima
    let k = cs.len();
    let mut corners_of: Vec<Vec<usize>> = vec![Vec::new(); m.len()];
    for (i, &v) in cs.vertex.iter().enumerate() {
        corners_of[v as usize].push(i);
    }
    let doubled: Vec<i64> = cs.label.iter().chain(cs.label.iter()).copied().collect();
    let rmq = RangeMin::new(&doubled);
    let cyc_min = |i: usize, j: usize| if i <= j { rmq.query(i, j) } else { rmq.query(i, j + k) };
    let upper = |v: u32, u: u32| -> i64 {
        let (lv, lu) = (lm.label[v as usize], lm.label[u as usize]);
        let mut best = i64::MAX;
        for &c in &corners_of[v as usize] {
            for &c2 in &corners_of[u as usize] {
                let mx = cyc_min(c, c2).max(cyc_min(c2, c));
                best = best.min(lv + lu - 2 * mx + 2);
            }
        }
        best
    };
    for _ in 0..sources {
        let v = whites[rng.random_range(0..whites.len())];
        let dist = adj.bfs(pm.map_vertex[v as usize]);
        for _ in 0..targets_per_source {
            let u = whites[rng.random_range(0..whites.len())];
            let d = dist[pm.map_vertex[u as usize] as usize] as i64;
            let lower = (lm.label[v as usize] - lm.label[u as usize]).abs();
            let up = if u == v { 0 } else { upper(v, u) };
            rep.schaeffer_pairs += 1;
            if d < lower || d > up {
                rep.schaeffer_violations += 1;
                rep.witnesses.push(format!("pair ({v},{u}): d = {d} outside [{lower}, {up}]"));
            }
        }
    }

    if whites.len() >= 4 {
        let depth = depths(m);
        for _ in 0..tuples {
            let mut idx = rand::seq::index::sample(rng, whites.len(), 4).into_vec();
            idx.sort_unstable();
            let [r1, s, r2, t] = [whites[idx[0]], whites[idx[1]], whites[idx[2]], whites[idx[3]]];
            let branch = tree_path_whites(m, &depth, r1, r2);
            let dist = adj.bfs(pm.map_vertex[s as usize]);
            let d = dist[pm.map_vertex[t as usize] as usize] as i64;
            let l = |x: u32| lm.label[x as usize];
            let bound_for = |x: u32| {
                let b = branch.iter().map(|&w| (l(x) - l(w)).abs()).min().unwrap_or(i64::MAX);
                b.min(l(x) - l(r1)).min(l(x) - l(r2))
            };
            rep.cactus_tuples += 1;
            for (who, bound) in [("s", bound_for(s)), ("t", bound_for(t))] {
                if d < bound {
                    rep.cactus_violations += 1;
                    rep.witnesses.push(format!("cactus ({r1},{s},{r2},{t}) via {who}: d = {d} < {bound}"));
                }
            }
        }
    }
    rep
}

pub fn depths(m: &Mobile) -> Vec<u32> {
    let mut d = vec![0u32; m.len()];
    for v in m.preorder() {
        for &c in &m.children[v as usize] {
            d[c as usize] = d[v as usize] + 1;
        }
    }
    d
}

/// White vertices on the tree path between a and b, endpoints included.
pub fn tree_path_whites(m: &Mobile, depth: &[u32], a: u32, b: u32) -> Vec<u32> {
    let (mut x, mut y) = (a, b);
    let mut left = Vec::new();
    let mut right = Vec::new();
    while depth[x as usize] > depth[y as usize] {
        left.push(x);
        x = m.parent[x as usize];
    }
    while depth[y as usize] > depth[x as usize] {
        right.push(y);
        y = m.parent[y as usize];
    }
    while x != y {
        left.push(x);
        right.push(y);
        x = m.parent[x as usize];
        y = m.parent[y as usize];
    }
    left.push(x);
    left.extend(right.into_iter().rev());
    left.retain(|&v| m.is_white(v));
    left
}

/// Distances in the map restricted to one BFS; convenience for callers holding an adjacency.
pub fn distances_from(adj: &Adjacency, src: u32) -> Vec<u32> {
    adj.bfs(src)
}
