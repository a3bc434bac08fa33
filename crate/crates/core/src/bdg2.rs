//! Two marked vertices: unicyclomobiles, the BDG construction with a delay, and the belt–buckle
//! decomposition of unicyclomobiles into a pointed mobile and a buckle.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;

use crate::bdg::{bdg_faces, bdg_forward, embed_mobile, face_corners, PlaneMobile};
use crate::mobile::{enumerate_labelings, enumerate_mobiles, sample_labeled_mobile, Color, LabeledMobile, Mobile, NONE};
use crate::planarmap::{alpha, faces, genus, HalfEdgeMap, Marks, UNREACHED};
use crate::rng::{Streams, DOMAIN_MARKS};
use crate::weights::{GrandchildLaw, TwoTypeOffspring};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayRecord {
    pub delta: i64,
    pub delta1: i64,
    pub delta2: i64,
}

impl DelayRecord {
    pub fn new(delta1: i64, delta2: i64) -> Self {
        DelayRecord { delta: delta1 - delta2, delta1, delta2 }
    }

    /// Delay alone, with ▵2 = 0.
    pub fn from_delta(delta: i64) -> Self {
        Self::new(delta, 0)
    }

    pub fn is_admissible(&self, d: u32) -> bool {
        self.delta == self.delta1 - self.delta2 && self.delta.abs() < d as i64 && (self.delta + d as i64) % 2 == 0
    }
}

/// {▵ : |▵| < d, ▵ ≡ d mod 2}, which has (d − 1)+ elements.
pub fn admissible_delays_for(d: u32) -> Vec<i64> {
    if d < 2 {
        return Vec::new();
    }
    let d = d as i64;
    (0..d - 1).map(|i| 2 - d + 2 * i).collect()
}

pub fn admissible_delays(m: &HalfEdgeMap, v1: u32, v2: u32) -> Result<Vec<i64>> {
    if v1 == v2 || v1 as usize >= m.n_vertices || v2 as usize >= m.n_vertices {
        return Err(Error::Domain(format!("marked vertices {v1}, {v2} must be distinct vertices")));
    }
    Ok(admissible_delays_for(m.adjacency().bfs(v1)[v2 as usize]))
}

/// Plane map from per-vertex counterclockwise dart lists (darts 2e, 2e+1 form edge e).
pub fn plane_from_rotations(rot: &[Vec<u32>], white: Vec<bool>, label: Vec<i64>) -> PlaneMobile {
    let nd: usize = rot.iter().map(|r| r.len()).sum();
    let mut sigma = vec![NONE; nd];
    let mut vertex_of = vec![NONE; nd];
    for (v, r) in rot.iter().enumerate() {
        for (i, &h) in r.iter().enumerate() {
            sigma[h as usize] = r[(i + 1) % r.len()];
            vertex_of[h as usize] = v as u32;
        }
    }
    PlaneMobile { sigma, vertex_of, white, label }
}

fn sigma_inverse(sigma: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; sigma.len()];
    for (h, &s) in sigma.iter().enumerate() {
        inv[s as usize] = h as u32;
    }
    inv
}

fn darts_at(pm: &PlaneMobile) -> Vec<u32> {
    let mut first = vec![NONE; pm.n_vertices()];
    for (h, &v) in pm.vertex_of.iter().enumerate() {
        if first[v as usize] == NONE {
            first[v as usize] = h as u32;
        }
    }
    first
}

/// A two-face bipartite labeled plane map: a mobile with one extra edge closing a cycle.
#[derive(Debug, Clone)]
pub struct Unicyclomobile {
    pub plane: PlaneMobile,
    /// white corner, by its dart
    pub root_corner: u32,
    /// one corner dart inside f1 and one inside f2
    pub face_start: [u32; 2],
    /// cycle vertices in cyclic order
    pub cycle: Vec<u32>,
}

impl Unicyclomobile {
    pub fn new(plane: PlaneMobile, root_corner: u32, face_start: [u32; 2]) -> Result<Self> {
        let cycle = find_cycle(&plane)?;
        let u = Unicyclomobile { plane, root_corner, face_start, cycle };
        u.validate()?;
        Ok(u)
    }

    pub fn n_white(&self) -> usize {
        self.plane.white.iter().filter(|&&w| w).count()
    }

    pub fn root_vertex(&self) -> u32 {
        self.plane.vertex_of[self.root_corner as usize]
    }

    /// Face (0 for f1, 1 for f2) of the corner at every dart.
    pub fn corner_faces(&self) -> Vec<u8> {
        let mut f = vec![u8::MAX; self.plane.sigma.len()];
        for (i, &s) in self.face_start.iter().enumerate() {
            let mut a = s;
            while f[a as usize] == u8::MAX {
                f[a as usize] = i as u8;
                a = self.plane.next_corner(a);
            }
        }
        f
    }

    pub fn on_cycle(&self) -> Vec<bool> {
        let mut on = vec![false; self.plane.n_vertices()];
        for &v in &self.cycle {
            on[v as usize] = true;
        }
        on
    }

    pub fn validate(&self) -> Result<()> {
        let pm = &self.plane;
        let nd = pm.sigma.len();
        let nv = pm.n_vertices();
        if nd == 0 || nd % 2 != 0 || pm.label.len() != nv {
            return Err(Error::Structural("bad dart or label count".into()));
        }
        if pm.sigma.iter().any(|&s| s as usize >= nd) || pm.vertex_of.iter().any(|&v| v as usize >= nv) {
            return Err(Error::Structural("dart tables out of range".into()));
        }
        let mut seen = vec![false; nd];
        for &s in &pm.sigma {
            if std::mem::replace(&mut seen[s as usize], true) {
                return Err(Error::Structural("sigma is not a permutation".into()));
            }
        }
        for h in 0..nd {
            if pm.vertex_of[pm.sigma[h] as usize] != pm.vertex_of[h] {
                return Err(Error::Structural("sigma leaves its vertex".into()));
            }
            let (a, b) = (pm.vertex_of[h] as usize, pm.vertex_of[h ^ 1] as usize);
            if pm.white[a] == pm.white[b] {
                return Err(Error::Structural(format!("edge {} joins equal colors", h / 2)));
            }
        }
        if nd / 2 != nv {
            return Err(Error::Structural("a unicyclic map has as many edges as vertices".into()));
        }
        let f = self.corner_faces();
        if f.contains(&u8::MAX) || f[self.face_start[0] as usize] == f[self.face_start[1] as usize] {
            return Err(Error::Structural("the map must have exactly two faces".into()));
        }
        if !pm.white[self.root_vertex() as usize] || pm.label[self.root_vertex() as usize] != 0 {
            return Err(Error::Structural("root corner must be white with label 0".into()));
        }
        for h in 0..nd {
            if pm.white[pm.vertex_of[h] as usize] {
                continue;
            }
            let a = pm.label[pm.vertex_of[h ^ 1] as usize];
            let b = pm.label[pm.vertex_of[pm.sigma[h] as usize ^ 1] as usize];
            if b < a - 1 {
                return Err(Error::Structural("labels are not a well-labeling".into()));
            }
        }
        if self.cycle.len() % 2 != 0 || self.cycle.len() < 2 {
            return Err(Error::Structural("cycle must have even length".into()));
        }
        Ok(())
    }

    /// Breadth-first relabeling of darts from the root corner, then colors, labels and the f1
    /// marker; equal codes mean equal rooted unicyclomobiles.
    pub fn canonical_code(&self) -> Vec<i64> {
        let pm = &self.plane;
        let nd = pm.sigma.len();
        let mut lab = vec![u32::MAX; nd];
        let mut order = Vec::with_capacity(nd);
        let mut q = VecDeque::new();
        lab[self.root_corner as usize] = 0;
        order.push(self.root_corner);
        q.push_back(self.root_corner);
        while let Some(h) = q.pop_front() {
            for x in [alpha(h), pm.sigma[h as usize]] {
                if lab[x as usize] == u32::MAX {
                    lab[x as usize] = order.len() as u32;
                    order.push(x);
                    q.push_back(x);
                }
            }
        }
        let mut code = Vec::with_capacity(4 * nd + 1);
        for &h in &order {
            let v = pm.vertex_of[h as usize] as usize;
            code.push(lab[alpha(h) as usize] as i64);
            code.push(lab[pm.sigma[h as usize] as usize] as i64);
            code.push(pm.white[v] as i64);
            code.push(if pm.white[v] { pm.label[v] } else { 0 });
        }
        let f = self.corner_faces();
        code.push((0..nd).filter(|&h| f[h] == 0).map(|h| lab[h] as i64).min().unwrap_or(-1));
        code
    }

    /// One line per vertex "id color [label] : darts", then the root, face and cycle lines.
    pub fn to_text(&self) -> String {
        let pm = &self.plane;
        let first = darts_at(pm);
        let mut s = String::new();
        for v in 0..pm.n_vertices() {
            let mut darts = Vec::new();
            let mut h = first[v];
            loop {
                darts.push(h.to_string());
                h = pm.sigma[h as usize];
                if h == first[v] {
                    break;
                }
            }
            if pm.white[v] {
                writeln!(s, "{v} white {} : {}", pm.label[v], darts.join(" ")).unwrap();
            } else {
                writeln!(s, "{v} black : {}", darts.join(" ")).unwrap();
            }
        }
        writeln!(s, "root {}", self.root_corner).unwrap();
        writeln!(s, "faces {} {}", self.face_start[0], self.face_start[1]).unwrap();
        let cyc: Vec<String> = self.cycle.iter().map(|v| v.to_string()).collect();
        writeln!(s, "cycle {}", cyc.join(" ")).unwrap();
        s
    }
}

/// Vertices of the unique cycle in order, found by pruning leaves.
pub fn find_cycle(pm: &PlaneMobile) -> Result<Vec<u32>> {
    let nv = pm.n_vertices();
    let mut deg = vec![0usize; nv];
    for &v in &pm.vertex_of {
        deg[v as usize] += 1;
    }
    let first = darts_at(pm);
    let mut alive = vec![true; nv];
    let mut stack: Vec<u32> = (0..nv as u32).filter(|&v| deg[v as usize] == 1).collect();
    while let Some(v) = stack.pop() {
        alive[v as usize] = false;
        let mut h = first[v as usize];
        loop {
            let u = pm.vertex_of[h as usize ^ 1] as usize;
            if alive[u] {
                deg[u] -= 1;
                if deg[u] == 1 {
                    stack.push(u as u32);
                }
            }
            h = pm.sigma[h as usize];
            if h == first[v as usize] {
                break;
            }
        }
    }
    let start = alive.iter().position(|&a| a).ok_or_else(|| Error::Structural("map has no cycle".into()))? as u32;
    let mut cycle = vec![start];
    let mut v = start;
    let mut back = NONE;
    loop {
        let mut h = first[v as usize];
        let mut next = NONE;
        loop {
            if h != back && alive[pm.vertex_of[h as usize ^ 1] as usize] {
                next = h;
                break;
            }
            h = pm.sigma[h as usize];
            if h == first[v as usize] {
                break;
            }
        }
        if next == NONE {
            return Err(Error::Structural("cycle is not simple".into()));
        }
        v = pm.vertex_of[next as usize ^ 1];
        back = alpha(next);
        if v == start {
            break;
        }
        cycle.push(v);
        if cycle.len() > nv {
            return Err(Error::Structural("more than one cycle".into()));
        }
    }
    if cycle.len() != alive.iter().filter(|&&a| a).count() {
        return Err(Error::Structural("more than one cycle".into()));
    }
    Ok(cycle)
}

#[derive(Debug, Clone)]
pub struct BipointedMap {
    pub map: HalfEdgeMap,
    pub v1: u32,
    pub v2: u32,
    pub delay: DelayRecord,
    pub eps: i8,
    /// unicyclomobile vertex ↦ map vertex (NONE for black vertices)
    pub map_vertex: Vec<u32>,
}

impl BipointedMap {
    /// Canonical code of the rooted map with both marks, followed by the delay.
    pub fn canonical_code(&self) -> Vec<i64> {
        let mut c: Vec<i64> = self.map.canonical_code().into_iter().map(|x| x as i64).collect();
        c.push(self.delay.delta);
        c
    }
}

/// Successor arcs inside each face toward a new vertex v_i with ℓ(v_i) = min_{f_i} ℓ − 1; the
/// root is the arc of the root corner, reversed when eps = −1.
pub fn bdg2_forward(u: &Unicyclomobile, eps: i8) -> Result<BipointedMap> {
    if eps != 1 && eps != -1 {
        return Err(Error::Domain(format!("eps = {eps} must be ±1")));
    }
    let fb = bdg_faces(&u.plane, &u.face_start)?;
    let mut root_arc = NONE;
    for (fi, f) in fb.faces.iter().enumerate() {
        if let Some(i) = f.dart.iter().position(|&d| d == u.root_corner) {
            root_arc = fb.arc_base[fi] + i as u32;
        }
    }
    if root_arc == NONE {
        return Err(Error::Internal("root corner lies in neither face".into()));
    }
    let mut map = fb.map;
    map.root = if eps == 1 { 2 * root_arc } else { 2 * root_arc + 1 };
    let (v1, v2) = (fb.extra[0], fb.extra[1]);
    map.marks = Marks { v_star: None, v1: Some(v1), v2: Some(v2) };
    let delay = DelayRecord::new(fb.faces[0].min_label() - 1, fb.faces[1].min_label() - 1);
    let g = genus(&map)?;
    if g != 0 {
        return Err(Error::Internal(format!("two-face construction has genus {g}")));
    }
    let mut fd: Vec<usize> = faces(&map).iter().map(|f| f.degree).collect();
    let mut bd: Vec<usize> = Vec::new();
    for (h, &v) in u.plane.vertex_of.iter().enumerate() {
        if !u.plane.white[v as usize] && darts_at(&u.plane)[v as usize] == h as u32 {
            let mut k = 0;
            let mut x = h as u32;
            loop {
                k += 1;
                x = u.plane.sigma[x as usize];
                if x == h as u32 {
                    break;
                }
            }
            bd.push(2 * k);
        }
    }
    fd.sort_unstable();
    bd.sort_unstable();
    if fd != bd {
        return Err(Error::Internal("face degrees do not match black degrees".into()));
    }
    Ok(BipointedMap { map, v1, v2, delay, eps, map_vertex: fb.map_vertex })
}

/// ℓ̃ = min(d(·, v1) + ▵1, d(·, v2) + ▵2), then one arc per label descent of each face contour,
/// read against the corner order, from a new black vertex placed in the face.
pub fn bdg2_inverse(m: &HalfEdgeMap, v1: u32, v2: u32, delay: &DelayRecord) -> Result<(Unicyclomobile, i8)> {
    let nv = m.n_vertices;
    if v1 == v2 || v1 as usize >= nv || v2 as usize >= nv {
        return Err(Error::Domain(format!("marked vertices {v1}, {v2} must be distinct vertices")));
    }
    let adj = m.adjacency();
    let d1 = adj.bfs(v1);
    let d2 = adj.bfs(v2);
    let d12 = d1[v2 as usize];
    if d12 == UNREACHED || !delay.is_admissible(d12) {
        return Err(Error::Domain(format!("delay {:?} is not admissible at distance {d12}", delay)));
    }
    let lt: Vec<i64> =
        (0..nv).map(|v| (d1[v] as i64 + delay.delta1).min(d2[v] as i64 + delay.delta2)).collect();
    let nd = m.n_darts();
    let mut has_lower = vec![false; nv];
    for h in 0..nd as u32 {
        let (a, b) = (m.tail(h) as usize, m.head(h) as usize);
        if (lt[a] - lt[b]).abs() != 1 {
            return Err(Error::Internal(format!("labels of adjacent vertices {a}, {b} differ by more than one")));
        }
        if lt[b] < lt[a] {
            has_lower[a] = true;
        }
    }
    for v in 0..nv {
        if !has_lower[v] && v as u32 != v1 && v as u32 != v2 {
            return Err(Error::Internal(format!("vertex {v} is a spurious local minimum")));
        }
    }
    // whites keep their order, then one black per face
    let mut uvert = vec![NONE; nv];
    let mut nw = 0u32;
    for v in 0..nv as u32 {
        if v != v1 && v != v2 {
            uvert[v as usize] = nw;
            nw += 1;
        }
    }
    let mut face_id = vec![NONE; nd];
    let mut arc_at = vec![NONE; nd];
    let mut black_rot: Vec<Vec<u32>> = Vec::new();
    let mut arcs = 0u32;
    for s in 0..nd as u32 {
        if face_id[s as usize] != NONE {
            continue;
        }
        let fid = black_rot.len() as u32;
        let mut contour = Vec::new();
        let mut a = s;
        while face_id[a as usize] == NONE {
            face_id[a as usize] = fid;
            contour.push(a);
            a = alpha(m.sigma[a as usize]);
        }
        let k = contour.len();
        let mut rot = Vec::new();
        for j in 0..k {
            let prev = m.tail(contour[(j + k - 1) % k]) as usize;
            let cur = m.tail(contour[j]) as usize;
            if lt[prev] == lt[cur] - 1 {
                arc_at[contour[j] as usize] = arcs;
                rot.push(2 * arcs + 1);
                arcs += 1;
            }
        }
        // the face contour turns around its black vertex clockwise
        rot.reverse();
        black_rot.push(rot);
    }
    let mut rot: Vec<Vec<u32>> = vec![Vec::new(); nw as usize];
    let mut first = vec![NONE; nv];
    for h in 0..nd {
        let v = m.vertex_of[h] as usize;
        if first[v] == NONE {
            first[v] = h as u32;
        }
    }
    for v in 0..nv {
        if uvert[v] == NONE {
            continue;
        }
        let mut h = first[v];
        loop {
            if arc_at[h as usize] != NONE {
                rot[uvert[v] as usize].push(2 * arc_at[h as usize]);
            }
            h = m.sigma[h as usize];
            if h == first[v] {
                break;
            }
        }
    }
    let n_black = black_rot.len();
    rot.extend(black_rot);
    let sinv: Vec<u32> = {
        let mut inv = vec![0u32; nd];
        for (h, &s) in m.sigma.iter().enumerate() {
            inv[s as usize] = h as u32;
        }
        inv
    };
    // the unicyclomobile corner whose sector at tail(d) contains the map dart d
    let slot_of = |d: u32| -> u32 {
        let mut x = d;
        loop {
            let p = sinv[x as usize];
            if arc_at[p as usize] != NONE {
                return 2 * arc_at[p as usize];
            }
            x = p;
            if x == d {
                return NONE;
            }
        }
    };
    let r = m.root;
    let (e0, eps) = if lt[m.tail(r) as usize] > lt[m.head(r) as usize] { (r, 1i8) } else { (alpha(r), -1i8) };
    let top = m.tail(e0) as usize;
    let root_corner = slot_of(e0);
    let mut face_start = [NONE; 2];
    for (i, &v) in [v1, v2].iter().enumerate() {
        face_start[i] = slot_of(alpha(first[v as usize]));
    }
    if root_corner == NONE || face_start.contains(&NONE) {
        return Err(Error::Internal("missing corner while rebuilding the unicyclomobile".into()));
    }
    let mut white = vec![true; nw as usize];
    white.extend(std::iter::repeat(false).take(n_black));
    let mut label = vec![0i64; nw as usize + n_black];
    for v in 0..nv {
        if uvert[v] != NONE {
            label[uvert[v] as usize] = lt[v] - lt[top];
        }
    }
    let plane = plane_from_rotations(&rot, white, label);
    let u = Unicyclomobile::new(plane, root_corner, face_start)
        .map_err(|e| Error::Internal(format!("inverse construction is not a unicyclomobile: {e}")))?;
    Ok((u, eps))
}

/// A pointed mobile: the distinguished white leaf is the root itself when the mobile is trivial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Belt {
    pub mobile: LabeledMobile,
    pub marked_leaf: u32,
}

/// A mobile with a marked white leaf at height 2 and a marked white corner, indexed in contour
/// order from the root corner; index `n_corners()` is the duplicated root corner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Buckle {
    pub mobile: LabeledMobile,
    pub marked_leaf: u32,
    pub marked_corner: usize,
}

impl Buckle {
    /// K: children of the black parent of the marked leaf.
    pub fn star_size(&self) -> usize {
        let m = &self.mobile.mobile;
        m.children[m.parent[self.marked_leaf as usize] as usize].len()
    }

    /// R: rank of the marked leaf among its siblings, from 1.
    pub fn star_rank(&self) -> usize {
        let m = &self.mobile.mobile;
        let b = m.parent[self.marked_leaf as usize] as usize;
        m.children[b].iter().position(|&c| c == self.marked_leaf).unwrap() + 1
    }

    pub fn n_corners(&self) -> usize {
        white_corner_count(&self.mobile.mobile)
    }
}

/// White corners of a mobile: each white vertex has as many corners as its degree, at least one.
fn white_corner_count(m: &Mobile) -> usize {
    (0..m.len())
        .filter(|&v| m.is_white(v as u32))
        .map(|v| (m.children[v].len() + (m.parent[v] != NONE) as usize).max(1))
        .sum()
}

fn is_leaf(m: &Mobile, v: u32) -> bool {
    m.is_white(v) && m.children[v as usize].is_empty()
}

impl Belt {
    pub fn validate(&self) -> Result<()> {
        self.mobile.validate()?;
        let m = &self.mobile.mobile;
        if self.marked_leaf as usize >= m.len() || !is_leaf(m, self.marked_leaf) {
            return Err(Error::Domain("belt mark must be a white leaf".into()));
        }
        if m.len() > 1 && self.marked_leaf == m.root {
            return Err(Error::Domain("belt mark must be a leaf".into()));
        }
        Ok(())
    }
}

impl Buckle {
    pub fn validate(&self) -> Result<()> {
        self.mobile.validate()?;
        let m = &self.mobile.mobile;
        let v = self.marked_leaf;
        if v as usize >= m.len() || !is_leaf(m, v) || v == m.root {
            return Err(Error::Domain("buckle mark must be a white leaf".into()));
        }
        if m.parent[m.parent[v as usize] as usize] != m.root {
            return Err(Error::Domain("buckle mark must sit at height 2".into()));
        }
        Ok(())
    }
}

/// Concatenates the buckle at the belt's leaf, then merges the buckle's leaf into the belt's
/// root corner, closing the cycle. f1 is the face on the side of the buckle's first corner.
pub fn compose_belt_buckle(belt: &Belt, buckle: &Buckle) -> Result<Unicyclomobile> {
    belt.validate()?;
    buckle.validate()?;
    let (t, lt) = (&belt.mobile.mobile, &belt.mobile.label);
    let (p, lp) = (&buckle.mobile.mobile, &buckle.mobile.label);
    let (vhat, vp) = (belt.marked_leaf, buckle.marked_leaf);
    if lt[vhat as usize] + lp[vp as usize] != 0 {
        return Err(Error::Domain(format!(
            "leaf labels {} and {} do not cancel",
            lt[vhat as usize], lp[vp as usize]
        )));
    }
    let emb_t = embed_mobile(&belt.mobile);
    let emb_p = embed_mobile(&buckle.mobile);
    let off = 2 * (t.len() as u32 - 1);
    let trivial = t.len() == 1;
    let nt = t.len();
    let mut pv = vec![NONE; p.len()];
    let mut next = nt as u32;
    for x in 0..p.len() as u32 {
        pv[x as usize] = if x == p.root {
            vhat
        } else if x == vp {
            t.root
        } else {
            next += 1;
            next - 1
        };
    }
    let total = next as usize;
    let up_t = |v: u32| 2 * emb_t.edge_of[v as usize] + 1;
    let down_t = |v: u32| 2 * emb_t.edge_of[v as usize];
    let up_p = |x: u32| 2 * emb_p.edge_of[x as usize] + 1 + off;
    let down_p = |x: u32| 2 * emb_p.edge_of[x as usize] + off;
    let mut rot: Vec<Vec<u32>> = vec![Vec::new(); total];
    let mut white = vec![true; total];
    let mut label = vec![0i64; total];
    let p_root_children: Vec<u32> = p.children[p.root as usize].iter().map(|&c| down_p(c)).collect();
    for v in 0..nt as u32 {
        let kids = t.children[v as usize].iter().map(|&c| down_t(c));
        let r = &mut rot[v as usize];
        if trivial {
            r.extend(p_root_children.iter().copied());
            r.push(up_p(vp));
        } else if v == t.root {
            r.extend(kids);
            r.push(up_p(vp));
        } else if v == vhat {
            r.push(up_t(v));
            r.extend(p_root_children.iter().copied());
        } else {
            r.push(up_t(v));
            r.extend(kids);
        }
        white[v as usize] = t.is_white(v);
        label[v as usize] = lt[v as usize];
    }
    for x in 0..p.len() as u32 {
        if x == p.root || x == vp {
            continue;
        }
        let r = &mut rot[pv[x as usize] as usize];
        r.push(up_p(x));
        r.extend(p.children[x as usize].iter().map(|&c| down_p(c)));
        white[pv[x as usize] as usize] = p.is_white(x);
        if p.is_white(x) {
            label[pv[x as usize] as usize] = lp[x as usize] + lt[vhat as usize];
        }
    }
    let cs = face_corners(&emb_p.plane, emb_p.root_corner);
    let cp = cs.len();
    let c = buckle.marked_corner;
    let vp_idx = cs.vertex.iter().position(|&x| x == vp).unwrap();
    if c > cp || c == vp_idx {
        return Err(Error::Domain(format!("marked corner {c} is not an admissible corner")));
    }
    let s_w = if trivial { up_p(vp) } else { up_t(vhat) };
    let root_corner = match c {
        0 => s_w,
        c if c == cp => cs.dart[0] + off,
        c => cs.dart[c] + off,
    };
    let mut plane = plane_from_rotations(&rot, white, label);
    let shift = plane.label[plane.vertex_of[root_corner as usize] as usize];
    for (l, &w) in plane.label.iter_mut().zip(&plane.white) {
        if w {
            *l -= shift;
        }
    }
    let f2 = other_face_start(&plane, s_w)?;
    Unicyclomobile::new(plane, root_corner, [s_w, f2])
}

/// Some corner dart outside the face of `s`.
fn other_face_start(pm: &PlaneMobile, s: u32) -> Result<u32> {
    let mut in_face = vec![false; pm.sigma.len()];
    let mut a = s;
    while !in_face[a as usize] {
        in_face[a as usize] = true;
        a = pm.next_corner(a);
    }
    in_face.iter().position(|&f| !f).map(|h| h as u32).ok_or_else(|| Error::Structural("map has a single face".into()))
}

/// Cuts the cycle where the contour walk from the root corner (forward in f1, backward in f2)
/// first reaches a cycle white vertex after a cycle black vertex.
pub fn decompose_belt_buckle(u: &Unicyclomobile) -> Result<(Belt, Buckle)> {
    let pm = &u.plane;
    let nd = pm.sigma.len();
    let on = u.on_cycle();
    let sinv = sigma_inverse(&pm.sigma);
    let fwd = u.corner_faces()[u.root_corner as usize] == 0;
    let mut a = u.root_corner;
    let mut bl = NONE;
    let mut cut = NONE;
    for _ in 0..2 * nd {
        let (next, dart) = if fwd {
            let d = pm.sigma[a as usize];
            (alpha(d), d)
        } else {
            (sinv[alpha(a) as usize], a)
        };
        a = next;
        let v = pm.vertex_of[a as usize];
        if bl == NONE {
            if !pm.white[v as usize] && on[v as usize] {
                bl = v;
            }
        } else if pm.white[v as usize] && on[v as usize] {
            cut = dart;
            break;
        }
    }
    if cut == NONE || pm.vertex_of[cut as usize] != bl {
        return Err(Error::Internal("contour walk did not reach the cycle".into()));
    }
    let head = |h: u32| pm.vertex_of[alpha(h) as usize];
    // darts after `from` in counterclockwise order around its vertex
    let around = |from: u32| {
        let mut out = Vec::new();
        let mut h = pm.sigma[from as usize];
        while h != from {
            out.push(h);
            h = pm.sigma[h as usize];
        }
        out
    };
    let r = head(cut);
    let cr = alpha(cut);
    let e1 = std::iter::once(cut)
        .chain(around(cut))
        .find(|&h| h != cut && on[head(h) as usize])
        .ok_or_else(|| Error::Internal("black cycle vertex has one cycle edge".into()))?;
    let w = head(e1);
    let s_w = std::iter::once(alpha(e1))
        .chain(around(alpha(e1)))
        .find(|&h| h != alpha(e1) && on[head(h) as usize])
        .ok_or_else(|| Error::Internal("white cycle vertex has one cycle edge".into()))?;

    // belt: from r, entering through the cut, stopping at w
    let mut t = Mobile::new();
    let mut t_label = vec![0i64];
    let mut vhat = 0u32;
    if r != w {
        let mut stack = vec![(0u32, cr)];
        while let Some((node, up)) = stack.pop() {
            for d in around(up) {
                let y = head(d);
                let col = if pm.white[y as usize] { Color::White } else { Color::Black };
                let id = t.add_child(node, col);
                t_label.push(if col == Color::White { pm.label[y as usize] - pm.label[r as usize] } else { 0 });
                if y == w {
                    vhat = id;
                } else {
                    stack.push((id, alpha(d)));
                }
            }
        }
    }

    // buckle: from w, entering through s_w; the cut becomes the marked leaf
    let mut p = Mobile::new();
    let mut p_label = vec![0i64];
    let mut p_down = vec![NONE];
    let mut vp = NONE;
    let mut stack = vec![(0u32, s_w)];
    while let Some((node, up)) = stack.pop() {
        for d in around(up) {
            let y = head(d);
            let col = if pm.white[y as usize] { Color::White } else { Color::Black };
            let id = p.add_child(node, col);
            p_down.push(d);
            p_label.push(if col == Color::White { pm.label[y as usize] - pm.label[w as usize] } else { 0 });
            if d == cut {
                vp = id;
            } else {
                stack.push((id, alpha(d)));
            }
        }
    }
    if vp == NONE {
        return Err(Error::Internal("cut edge missing from the buckle".into()));
    }
    let pl = LabeledMobile { mobile: p, label: p_label };
    let emb_p = embed_mobile(&pl);
    let mut to_p = vec![NONE; nd];
    for x in 0..pl.mobile.len() {
        if p_down[x] != NONE {
            let e = emb_p.edge_of[x];
            to_p[p_down[x] as usize] = 2 * e;
            to_p[alpha(p_down[x]) as usize] = 2 * e + 1;
        }
    }
    let cs = face_corners(&emb_p.plane, emb_p.root_corner);
    let c = u.root_corner;
    let last = *pl.mobile.children[0].last().unwrap();
    let marked_corner = if c == s_w {
        0
    } else if c == p_down[last as usize] {
        cs.len()
    } else {
        let pd = to_p[c as usize];
        cs.dart.iter().position(|&x| x == pd).ok_or_else(|| Error::Internal("root corner is not in the buckle".into()))?
    };
    let belt = Belt { mobile: LabeledMobile { mobile: t, label: t_label }, marked_leaf: vhat };
    let buckle = Buckle { mobile: pl, marked_leaf: vp, marked_corner };
    Ok((belt, buckle))
}

#[derive(Debug, Clone)]
pub struct BipointedSample {
    pub bipointed: BipointedMap,
    pub unicyclomobile: Unicyclomobile,
    pub d12: u32,
    /// (d(v1, v2) − 1)+, the density of the two-point measure against the sampled law
    pub weight: f64,
    pub attempts: u64,
}

/// Map with n vertices from the mobile sampler, then uniform v1 ≠ v2 at distance ≥ 2, a uniform
/// admissible delay and a uniform sign; the unicyclomobile comes from the inverse construction.
pub fn sample_bipointed(
    off: &TwoTypeOffspring,
    law: &GrandchildLaw,
    n: usize,
    seed: u64,
    sample: u64,
    max_attempts: u64,
) -> Result<BipointedSample> {
    if n < 3 {
        return Err(Error::Domain(format!("n = {n} leaves no pair at distance 2")));
    }
    let sm = sample_labeled_mobile(off, law, n, seed, sample, max_attempts)?;
    let mut rng = Streams::new(seed, sample, DOMAIN_MARKS).at(0);
    let eps: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let pmap = bdg_forward(&sm.labeled, eps)?;
    let mut map = pmap.map;
    map.marks = Marks::default();
    let adj = map.adjacency();
    for tries in 1..=max_attempts {
        let v1 = rng.random_range(0..n as u32);
        let v2 = rng.random_range(0..n as u32 - 1);
        let v2 = if v2 >= v1 { v2 + 1 } else { v2 };
        let d = adj.bfs(v1)[v2 as usize];
        if d < 2 {
            continue;
        }
        let choices = admissible_delays_for(d);
        let delta = choices[rng.random_range(0..choices.len())];
        let (u, eps_back) = bdg2_inverse(&map, v1, v2, &DelayRecord::from_delta(delta))?;
        let mut bmap = map.clone();
        bmap.marks = Marks { v_star: None, v1: Some(v1), v2: Some(v2) };
        let bipointed =
            BipointedMap { map: bmap, v1, v2, delay: DelayRecord::from_delta(delta), eps: eps_back, map_vertex: Vec::new() };
        return Ok(BipointedSample {
            bipointed,
            unicyclomobile: u,
            d12: d,
            weight: (d - 1) as f64,
            attempts: sm.attempts + tries,
        });
    }
    Err(Error::Budget { attempts: max_attempts })
}

/// Distance identities of a bi-pointed map against its unicyclomobile: the delay is admissible,
/// the cycle minimizers sit at distances ((d ∓ ▵)/2), some geodesic meets the cycle, and
/// d(v, v_i) = ℓ(v) − ▵_i on the corners of face f_i. Returns one message per violation.
pub fn delay_distance_violations(bm: &BipointedMap, u: &Unicyclomobile) -> Vec<String> {
    let mut out = Vec::new();
    let adj = bm.map.adjacency();
    let d1 = adj.bfs(bm.v1);
    let d2 = adj.bfs(bm.v2);
    let d12 = d1[bm.v2 as usize] as i64;
    if !bm.delay.is_admissible(d12 as u32) {
        out.push(format!("delay {} not admissible at distance {d12}", bm.delay.delta));
    }
    let whites = || u.cycle.iter().copied().filter(|&v| u.plane.white[v as usize]);
    let lmin = whites().map(|v| u.plane.label[v as usize]).min().unwrap_or(0);
    let mut through = i64::MAX;
    for v in whites() {
        let mv = bm.map_vertex[v as usize] as usize;
        through = through.min(d1[mv] as i64 + d2[mv] as i64);
        if u.plane.label[v as usize] == lmin
            && (d1[mv] as i64 != (d12 - bm.delay.delta) / 2 || d2[mv] as i64 != (d12 + bm.delay.delta) / 2)
        {
            out.push(format!("cycle minimizer {v} at distances ({}, {})", d1[mv], d2[mv]));
        }
    }
    if through != d12 {
        out.push(format!("no geodesic through the cycle: {through} vs {d12}"));
    }
    let f = u.corner_faces();
    for h in 0..u.plane.sigma.len() {
        let v = u.plane.vertex_of[h] as usize;
        if !u.plane.white[v] {
            continue;
        }
        let (d, di) = if f[h] == 0 { (&d1, bm.delay.delta1) } else { (&d2, bm.delay.delta2) };
        if d[bm.map_vertex[v] as usize] as i64 != u.plane.label[v] - di {
            out.push(format!("corner {h}: distance {} but label predicts {}", d[bm.map_vertex[v] as usize], u.plane.label[v] - di));
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BipointedReport {
    pub forward_matches: bool,
    pub belt_buckle_round_trip: bool,
    pub parity_ok: bool,
    pub violations: Vec<String>,
}

impl BipointedReport {
    pub fn ok(&self) -> bool {
        self.forward_matches && self.belt_buckle_round_trip && self.parity_ok && self.violations.is_empty()
    }
}

/// Forward image of the sampled unicyclomobile equals the sampled map, belt/buckle round trip,
/// and the delay identities.
pub fn verify_bipointed(bs: &BipointedSample) -> BipointedReport {
    let u = &bs.unicyclomobile;
    let mut rep = BipointedReport { parity_ok: bs.bipointed.delay.is_admissible(bs.d12), ..Default::default() };
    match bdg2_forward(u, bs.bipointed.eps) {
        Ok(fwd) => {
            rep.forward_matches =
                fwd.map.canonical_code() == bs.bipointed.map.canonical_code() && fwd.delay.delta == bs.bipointed.delay.delta;
            rep.violations = delay_distance_violations(&fwd, u);
        }
        Err(e) => rep.violations.push(format!("forward failed: {e}")),
    }
    rep.belt_buckle_round_trip = decompose_belt_buckle(u)
        .and_then(|(t, p)| compose_belt_buckle(&t, &p))
        .is_ok_and(|v| v.canonical_code() == u.canonical_code());
    rep
}

/// Every labeled belt with `nw` white vertices whose black vertices have degrees in `support`.
pub fn enumerate_belts(nw: usize, support: &[usize], max_blacks: usize) -> Vec<Belt> {
    let mut out = Vec::new();
    for m in enumerate_mobiles(nw, support, max_blacks) {
        for lm in enumerate_labelings(&m) {
            for v in 0..m.len() as u32 {
                let b = Belt { mobile: lm.clone(), marked_leaf: v };
                if b.validate().is_ok() {
                    out.push(b);
                }
            }
        }
    }
    out
}

/// Every buckle with `nw` white vertices, one per marked corner.
pub fn enumerate_buckles(nw: usize, support: &[usize], max_blacks: usize) -> Vec<Buckle> {
    let mut out = Vec::new();
    for m in enumerate_mobiles(nw, support, max_blacks) {
        for lm in enumerate_labelings(&m) {
            for v in 1..m.len() as u32 {
                let b = Buckle { mobile: lm.clone(), marked_leaf: v, marked_corner: 0 };
                if b.validate().is_err() {
                    continue;
                }
                for c in 0..=b.n_corners() {
                    out.push(Buckle { marked_corner: c, ..b.clone() });
                }
            }
        }
    }
    out
}

fn leaf_rank(m: &Mobile, v: u32) -> usize {
    m.preorder().iter().position(|&x| x == v).unwrap_or(usize::MAX)
}

pub fn belt_key(b: &Belt) -> (Vec<u32>, Vec<i64>, usize) {
    let (c, l) = b.mobile.code();
    (c, l, leaf_rank(&b.mobile.mobile, b.marked_leaf))
}

pub fn buckle_key(b: &Buckle) -> (Vec<u32>, Vec<i64>, usize, usize) {
    let (c, l) = b.mobile.code();
    (c, l, leaf_rank(&b.mobile.mobile, b.marked_leaf), b.marked_corner)
}

/// Every unicyclomobile with `nw` white vertices, as images of all belt/buckle pairs. A pair is
/// composable when the marked labels cancel and the marked corner is not the leaf's own corner;
/// a disagreement between that rule and the composition is an error.
pub fn enumerate_unicyclomobiles(nw: usize, support: &[usize], max_blacks: usize) -> Result<Vec<(Belt, Buckle, Unicyclomobile)>> {
    let mut out = Vec::new();
    for tw in 1..=nw {
        let bs = enumerate_buckles(nw + 2 - tw, support, max_blacks);
        for t in enumerate_belts(tw, support, max_blacks) {
            for p in &bs {
                let lt = t.mobile.label[t.marked_leaf as usize];
                let labels_ok = lt + p.mobile.label[p.marked_leaf as usize] == 0;
                let emb = embed_mobile(&p.mobile);
                let own = face_corners(&emb.plane, emb.root_corner).vertex.iter().position(|&x| x == p.marked_leaf);
                let expect = labels_ok && own != Some(p.marked_corner);
                match compose_belt_buckle(&t, p) {
                    Ok(u) if expect => out.push((t.clone(), p.clone(), u)),
                    Err(_) if !expect => {}
                    Ok(_) => return Err(Error::Internal("composition accepted an invalid pair".into())),
                    Err(e) => return Err(Error::Internal(format!("composition rejected a valid pair: {e}"))),
                }
            }
        }
    }
    Ok(out)
}

/// Rooted maps with n vertices as BDG images of all pointed mobiles with the given black degrees.
pub fn enumerate_rooted_maps(n: usize, support: &[usize], max_blacks: usize) -> Result<Vec<HalfEdgeMap>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in enumerate_mobiles(n - 1, support, max_blacks) {
        for lm in enumerate_labelings(&m) {
            for eps in [1, -1] {
                let mut map = bdg_forward(&lm, eps)?.map;
                map.marks = Marks::default();
                if seen.insert(map.canonical_code()) {
                    out.push(map);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExhaustiveReport {
    /// (white count, number of unicyclomobiles, Σ over rooted maps of Σ_{v1≠v2} (d−1)+)
    pub counts: Vec<(usize, usize, usize)>,
    pub violations: Vec<String>,
}

impl ExhaustiveReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.counts.iter().all(|&(_, u, m)| m == 2 * u)
    }
}

/// Both bijections on every object up to `max_white` white vertices with black degrees in
/// `support`: Φ injective with inverse, the inverse map construction on every bi-pointed
/// delayed rooted map, both round trips, and the delay distance identities.
pub fn exhaustive_check(max_white: usize, support: &[usize], max_blacks: usize) -> Result<ExhaustiveReport> {
    let mut rep = ExhaustiveReport::default();
    for nw in 1..=max_white {
        let us = enumerate_unicyclomobiles(nw, support, max_blacks)?;
        let mut codes = HashSet::new();
        for (t, p, u) in &us {
            if !codes.insert(u.canonical_code()) {
                rep.violations.push(format!("nw = {nw}: two pairs give the same unicyclomobile"));
            }
            match decompose_belt_buckle(u) {
                Ok((t2, p2)) if belt_key(&t2) == belt_key(t) && buckle_key(&p2) == buckle_key(p) => {}
                _ => rep.violations.push(format!("nw = {nw}: decomposition does not invert composition")),
            }
        }
        let mut twopointed = 0usize;
        let mut images = HashSet::new();
        for map in enumerate_rooted_maps(nw + 2, support, max_blacks)? {
            let adj = map.adjacency();
            for v1 in 0..map.n_vertices as u32 {
                let d1 = adj.bfs(v1);
                for v2 in (0..map.n_vertices as u32).filter(|&v| v != v1) {
                    for delta in admissible_delays_for(d1[v2 as usize]) {
                        twopointed += 1;
                        let (u, eps) = bdg2_inverse(&map, v1, v2, &DelayRecord::from_delta(delta))?;
                        if !codes.contains(&u.canonical_code()) || !images.insert((u.canonical_code(), eps)) {
                            rep.violations.push(format!("nw = {nw}: inverse image missing or repeated"));
                        }
                        let back = bdg2_forward(&u, eps)?;
                        let mut orig = map.clone();
                        orig.marks = Marks { v_star: None, v1: Some(v1), v2: Some(v2) };
                        if back.map.canonical_code() != orig.canonical_code() || back.delay.delta != delta {
                            rep.violations.push(format!("nw = {nw}: forward(inverse(m)) ≠ m"));
                        }
                    }
                }
            }
        }
        for (_, _, u) in &us {
            for eps in [1, -1] {
                let bm = bdg2_forward(u, eps)?;
                rep.violations.extend(delay_distance_violations(&bm, u));
                let (u2, e2) = bdg2_inverse(&bm.map, bm.v1, bm.v2, &bm.delay)?;
                if e2 != eps || u2.canonical_code() != u.canonical_code() {
                    rep.violations.push(format!("nw = {nw}: inverse(forward(u)) ≠ u"));
                }
            }
        }
        rep.counts.push((nw, us.len(), twopointed));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::binomial;
    use crate::weights::{grandchild_law, offspring_laws, WeightSequence};
    use std::collections::HashMap;

    const SUPPORT: [usize; 2] = [1, 2];

    #[test]
    fn admissible_delay_sets() {
        assert_eq!(admissible_delays_for(3), vec![-1, 1]);
        assert!(admissible_delays_for(1).is_empty());
        assert_eq!(admissible_delays_for(4), vec![-2, 0, 2]);
        for d in 0..20u32 {
            let s = admissible_delays_for(d);
            assert_eq!(s.len(), d.saturating_sub(1) as usize);
            assert!(s.iter().all(|&x| x.abs() < d as i64 && (x + d as i64) % 2 == 0));
        }
    }

    #[test]
    fn smallest_buckle_with_trivial_belt() {
        let mut m = Mobile::new();
        let b = m.add_child(0, Color::Black);
        let leaf = m.add_child(b, Color::White);
        let buckle = Buckle { mobile: LabeledMobile { mobile: m, label: vec![0; 3] }, marked_leaf: leaf, marked_corner: 0 };
        let belt = Belt { mobile: LabeledMobile { mobile: Mobile::new(), label: vec![0] }, marked_leaf: 0 };
        let u = compose_belt_buckle(&belt, &buckle).unwrap();
        assert_eq!(u.cycle.len(), 2);
        assert_eq!(u.n_white(), 1);
        let bm = bdg2_forward(&u, 1).unwrap();
        assert_eq!(bm.map.n_vertices, 3);
        assert_eq!(bm.map.n_edges(), 2);
        assert_eq!(bm.delay, DelayRecord { delta: 0, delta1: -1, delta2: -1 });
        let (belt2, buckle2) = decompose_belt_buckle(&u).unwrap();
        assert_eq!(belt_key(&belt2), belt_key(&belt));
        assert_eq!(buckle_key(&buckle2), buckle_key(&buckle));
    }

    #[test]
    fn exhaustive_bijections_up_to_four_whites() {
        let rep = exhaustive_check(4, &SUPPORT, 8).unwrap();
        assert!(rep.violations.is_empty(), "{:?}", &rep.violations[..rep.violations.len().min(5)]);
        for &(nw, u, m) in &rep.counts {
            assert_eq!(m, 2 * u, "nw = {nw}");
        }
        assert_eq!(rep.counts.len(), 4);
    }

    fn labeled_gw(lm: &LabeledMobile, off: &TwoTypeOffspring) -> f64 {
        let m = &lm.mobile;
        let mut w = 1.0;
        for v in 0..m.len() {
            let k = m.children[v].len();
            w *= match m.color[v] {
                Color::White => off.mu_circ(k),
                Color::Black => off.mu_bullet[k] / binomial(2 * k as u64 + 1, k as u64),
            };
        }
        w
    }

    #[test]
    fn weight_identity_on_small_unicyclomobiles() {
        let w = WeightSequence::from_black_law(5.0 / 3.0, &[0.0, 0.5, 0.5]).unwrap();
        let off = offspring_laws(&w, 8).unwrap();
        for nw in 1..=4 {
            for (t, p, u) in enumerate_unicyclomobiles(nw, &SUPPORT, 8).unwrap() {
                let lhs = labeled_gw(&t.mobile, &off) / off.mu_circ(0) * labeled_gw(&p.mobile, &off) / off.mu_circ(0);
                let mut rhs = 1.0;
                let mut deg: HashMap<u32, usize> = HashMap::new();
                for &v in &u.plane.vertex_of {
                    if !u.plane.white[v as usize] {
                        *deg.entry(v).or_default() += 1;
                    }
                }
                for (_, k) in deg {
                    rhs *= w.q(k);
                }
                assert!((lhs - rhs).abs() <= 1e-12 * rhs, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn sampled_round_trips() {
        let w = WeightSequence::kazakov(1.5).unwrap();
        let off = offspring_laws(&w, 4000).unwrap();
        let law = grandchild_law(&off, 4000).unwrap();
        for s in 0..20 {
            let bs = sample_bipointed(&off, &law, 300, 11, s, 100_000).unwrap();
            assert_eq!(bs.weight, (bs.d12 - 1) as f64);
            let rep = verify_bipointed(&bs);
            assert!(rep.ok(), "{rep:?}");
        }
    }
}
