//! Half-edge maps: rotation systems, faces, genus and graph distances.
//!
//! Darts are paired as (2e, 2e+1). `sigma` turns counterclockwise around a vertex and the face
//! permutation is φ = σ∘α, so the corner at dart h (between h and σ(h)) is followed along its
//! face by the corner at α(σ(h)).

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::{Error, Result};

pub const UNREACHED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Marks {
    pub v_star: Option<u32>,
    pub v1: Option<u32>,
    pub v2: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfEdgeMap {
    pub sigma: Vec<u32>,
    pub vertex_of: Vec<u32>,
    pub n_vertices: usize,
    pub root: u32,
    pub marks: Marks,
}

#[inline]
pub fn alpha(h: u32) -> u32 {
    h ^ 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Face {
    pub id: usize,
    pub degree: usize,
    pub darts: Vec<u32>,
}

/// Builds a map from per-vertex counterclockwise lists of darts; dart 2e and 2e+1 form edge e.
pub fn build_map(rotations: &[Vec<u32>], root: u32) -> Result<HalfEdgeMap> {
    let n_darts: usize = rotations.iter().map(|r| r.len()).sum();
    if n_darts == 0 || n_darts % 2 != 0 {
        return Err(Error::Structural(format!("{n_darts} darts cannot pair into edges")));
    }
    let mut sigma = vec![u32::MAX; n_darts];
    let mut vertex_of = vec![u32::MAX; n_darts];
    for (v, rot) in rotations.iter().enumerate() {
        for (i, &h) in rot.iter().enumerate() {
            let hu = h as usize;
            if hu >= n_darts || vertex_of[hu] != u32::MAX {
                return Err(Error::Structural(format!("dart {h} is out of range or listed twice")));
            }
            vertex_of[hu] = v as u32;
            sigma[hu] = rot[(i + 1) % rot.len()];
        }
    }
    let m = HalfEdgeMap { sigma, vertex_of, n_vertices: rotations.len(), root, marks: Marks::default() };
    m.validate()?;
    Ok(m)
}

impl HalfEdgeMap {
    pub fn n_darts(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_edges(&self) -> usize {
        self.sigma.len() / 2
    }

    #[inline]
    pub fn phi(&self, h: u32) -> u32 {
        self.sigma[alpha(h) as usize]
    }

    #[inline]
    pub fn head(&self, h: u32) -> u32 {
        self.vertex_of[alpha(h) as usize]
    }

    #[inline]
    pub fn tail(&self, h: u32) -> u32 {
        self.vertex_of[h as usize]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_darts();
        if n == 0 || n % 2 != 0 || (self.root as usize) >= n {
            return Err(Error::Structural("bad dart count or root".into()));
        }
        let mut seen = vec![false; n];
        for &s in &self.sigma {
            if (s as usize) >= n || std::mem::replace(&mut seen[s as usize], true) {
                return Err(Error::Structural("sigma is not a permutation".into()));
            }
        }
        for h in 0..n as u32 {
            if self.vertex_of[self.sigma[h as usize] as usize] != self.vertex_of[h as usize] {
                return Err(Error::Structural(format!("sigma moves dart {h} to another vertex")));
            }
        }
        // each vertex must be a single sigma cycle
        let mut cycles = 0usize;
        let mut done = vec![false; n];
        let mut has_dart = vec![false; self.n_vertices];
        for h in 0..n {
            if done[h] {
                continue;
            }
            cycles += 1;
            let v = self.vertex_of[h] as usize;
            if v >= self.n_vertices || std::mem::replace(&mut has_dart[v], true) {
                return Err(Error::Structural(format!("vertex {v} carries more than one rotation cycle")));
            }
            let mut x = h;
            while !done[x] {
                done[x] = true;
                x = self.sigma[x] as usize;
            }
        }
        if cycles != self.n_vertices {
            return Err(Error::Structural("some vertex has no darts".into()));
        }
        if self.dist_from(0, &self.adjacency()).iter().any(|&d| d == UNREACHED) {
            return Err(Error::Structural("map is disconnected".into()));
        }
        Ok(())
    }

    pub fn face_of(&self) -> (Vec<u32>, usize) {
        let n = self.n_darts();
        let mut f = vec![u32::MAX; n];
        let mut count = 0u32;
        for h in 0..n {
            if f[h] != u32::MAX {
                continue;
            }
            let mut x = h as u32;
            while f[x as usize] == u32::MAX {
                f[x as usize] = count;
                x = self.phi(x);
            }
            count += 1;
        }
        (f, count as usize)
    }

    /// Counterclockwise list of darts at each vertex, starting anywhere.
    pub fn rotations(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_vertices];
        let mut done = vec![false; self.n_darts()];
        for h in 0..self.n_darts() {
            if done[h] {
                continue;
            }
            let v = self.vertex_of[h] as usize;
            let mut x = h as u32;
            while !done[x as usize] {
                done[x as usize] = true;
                out[v].push(x);
                x = self.sigma[x as usize];
            }
        }
        out
    }

    pub fn degree(&self, v: u32) -> usize {
        self.vertex_of.iter().filter(|&&u| u == v).count()
    }

    pub fn adjacency(&self) -> Adjacency {
        let mut start = vec![0u32; self.n_vertices + 1];
        for &v in &self.vertex_of {
            start[v as usize + 1] += 1;
        }
        for i in 0..self.n_vertices {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut nbr = vec![0u32; self.n_darts()];
        for h in 0..self.n_darts() as u32 {
            let v = self.tail(h) as usize;
            nbr[fill[v] as usize] = self.head(h);
            fill[v] += 1;
        }
        Adjacency { start, nbr }
    }

    fn dist_from(&self, src: u32, adj: &Adjacency) -> Vec<u32> {
        adj.bfs(src)
    }

    pub fn is_bipartite(&self) -> bool {
        let d = self.adjacency().bfs(0);
        (0..self.n_darts() as u32).all(|h| d[self.tail(h) as usize] % 2 != d[self.head(h) as usize] % 2)
    }

    /// Header "V E", then one "u v" line per edge.
    pub fn edge_list(&self) -> String {
        let mut s = format!("{} {}\n", self.n_vertices, self.n_edges());
        for e in 0..self.n_edges() as u32 {
            writeln!(s, "{} {}", self.tail(2 * e), self.head(2 * e)).unwrap();
        }
        s
    }

    /// One "u: h1 h2 …" line per vertex.
    pub fn rotation_text(&self) -> String {
        let mut s = String::new();
        for (v, rot) in self.rotations().iter().enumerate() {
            let hs: Vec<String> = rot.iter().map(|h| h.to_string()).collect();
            writeln!(s, "{v}: {}", hs.join(" ")).unwrap();
        }
        s
    }

    /// Relabels darts in breadth-first order from the root so that isomorphic rooted maps give
    /// identical codes. Marked vertices are encoded through their smallest relabeled dart.
    pub fn canonical_code(&self) -> Vec<u32> {
        let n = self.n_darts();
        let mut lab = vec![u32::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut q = VecDeque::new();
        lab[self.root as usize] = 0;
        order.push(self.root);
        q.push_back(self.root);
        while let Some(h) = q.pop_front() {
            for x in [alpha(h), self.sigma[h as usize]] {
                if lab[x as usize] == u32::MAX {
                    lab[x as usize] = order.len() as u32;
                    order.push(x);
                    q.push_back(x);
                }
            }
        }
        let mut code = Vec::with_capacity(2 * n + 3);
        for &h in &order {
            code.push(lab[alpha(h) as usize]);
            code.push(lab[self.sigma[h as usize] as usize]);
        }
        let vmin = |v: Option<u32>| match v {
            None => u32::MAX,
            Some(v) => (0..n).filter(|&h| self.vertex_of[h] == v).map(|h| lab[h]).min().unwrap_or(u32::MAX),
        };
        code.push(vmin(self.marks.v_star));
        code.push(vmin(self.marks.v1));
        code.push(vmin(self.marks.v2));
        code
    }
}

pub fn faces(m: &HalfEdgeMap) -> Vec<Face> {
    let (f, count) = m.face_of();
    let mut out: Vec<Face> = (0..count).map(|id| Face { id, degree: 0, darts: Vec::new() }).collect();
    let mut done = vec![false; m.n_darts()];
    for h in 0..m.n_darts() {
        if done[h] {
            continue;
        }
        let id = f[h] as usize;
        let mut x = h as u32;
        while !done[x as usize] {
            done[x as usize] = true;
            out[id].darts.push(x);
            x = m.phi(x);
        }
        out[id].degree = out[id].darts.len();
    }
    out
}

pub fn genus(m: &HalfEdgeMap) -> Result<i64> {
    let (_, f) = m.face_of();
    let chi_defect = 2 - m.n_vertices as i64 + m.n_edges() as i64 - f as i64;
    if chi_defect % 2 != 0 || chi_defect < 0 {
        return Err(Error::Structural(format!("Euler defect {chi_defect} is not a nonnegative even number")));
    }
    Ok(chi_defect / 2)
}

/// Compressed adjacency lists; build once and reuse for many searches.
#[derive(Debug, Clone)]
pub struct Adjacency {
    start: Vec<u32>,
    nbr: Vec<u32>,
}

impl Adjacency {
    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.nbr[self.start[v as usize] as usize..self.start[v as usize + 1] as usize]
    }

    pub fn n_vertices(&self) -> usize {
        self.start.len() - 1
    }

    pub fn bfs(&self, src: u32) -> Vec<u32> {
        let mut dist = vec![UNREACHED; self.n_vertices()];
        let mut queue = Vec::with_capacity(self.n_vertices());
        dist[src as usize] = 0;
        queue.push(src);
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            let dv = dist[v as usize] + 1;
            for &u in self.neighbors(v) {
                if dist[u as usize] == UNREACHED {
                    dist[u as usize] = dv;
                    queue.push(u);
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    pub src: u32,
    pub dist: Vec<u32>,
}

pub fn bfs(m: &HalfEdgeMap, src: u32) -> DistanceField {
    DistanceField { src, dist: m.adjacency().bfs(src) }
}
