//! Seeded Monte Carlo campaigns, the scaling estimators built on them, and lamination rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bdg::{bdg_forward, verify_map};
use crate::bdg2::{sample_bipointed, verify_bipointed};
use crate::error::{Error, Result};
use crate::looptree::{dstar_grid, face_boundary, vertex_identifications, JumpExcursion, ZPath};
use crate::mobile::{sample_labeled_mobile, LabeledMobile};
use crate::rng::{Streams, DOMAIN_MISC};
use crate::weights::{grandchild_law, offspring_laws, GrandchildLaw, TwoTypeOffspring, WeightSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// exact BDG and BDG^{2•} identities on each sample
    Verify,
    /// label-ball volumes around the pointed vertex
    Balls,
    /// distance between two uniform vertices
    Distances,
    /// corner-time bounds d ≤ 𝔷 + 2 and d ≤ D* + 2p
    Coupling,
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verify" => Ok(Experiment::Verify),
            "balls" => Ok(Experiment::Balls),
            "distances" => Ok(Experiment::Distances),
            "coupling" => Ok(Experiment::Coupling),
            _ => Err(Error::Domain(format!("unknown experiment '{s}'"))),
        }
    }
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Verify => "verify",
            Experiment::Balls => "balls",
            Experiment::Distances => "distances",
            Experiment::Coupling => "coupling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyChoice {
    Kazakov,
    /// power-law base k^{−α−1/2} tuned to criticality
    Tuned,
}

impl FromStr for FamilyChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kazakov" => Ok(FamilyChoice::Kazakov),
            "tuned" => Ok(FamilyChoice::Tuned),
            _ => Err(Error::Domain(format!("unknown family '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub experiment: Experiment,
    pub family: FamilyChoice,
    pub alpha: f64,
    pub ns: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub k_max: usize,
    /// r grid size for balls, corner grid size for coupling
    pub grid: usize,
    pub max_attempts: u64,
    /// also run the BDG identity checks on the samples of other experiments
    pub verify: bool,
    pub out: Option<std::path::PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            experiment: Experiment::Verify,
            family: FamilyChoice::Kazakov,
            alpha: 1.5,
            ns: vec![1000],
            samples: 10,
            seed: 1,
            k_max: 10_000,
            grid: 40,
            max_attempts: 10_000_000,
            verify: false,
            out: None,
        }
    }
}

impl CampaignConfig {
    /// Flat `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = CampaignConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Domain(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Domain(format!("bad value '{value}' for {what}"));
        match key {
            "experiment" => self.experiment = value.parse()?,
            "family" => self.family = value.parse()?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("alpha"))?,
            "n" => self.ns = parse_list(value).ok_or_else(|| bad("n"))?,
            "samples" => self.samples = value.parse().map_err(|_| bad("samples"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "kmax" => self.k_max = value.parse().map_err(|_| bad("kmax"))?,
            "grid" => self.grid = value.parse().map_err(|_| bad("grid"))?,
            "max_attempts" => self.max_attempts = value.parse().map_err(|_| bad("max_attempts"))?,
            "verify" => self.verify = value.parse().map_err(|_| bad("verify"))?,
            "out" => self.out = Some(value.into()),
            _ => return Err(Error::Domain(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.iter().any(|&n| n < 3) {
            return Err(Error::Domain("every n must be at least 3".into()));
        }
        if self.samples == 0 || self.k_max == 0 || self.grid == 0 || self.max_attempts == 0 {
            return Err(Error::Domain("counts must be positive".into()));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(Error::Domain(format!("alpha = {} outside (1,2)", self.alpha)));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<WeightSequence> {
        match self.family {
            FamilyChoice::Kazakov => WeightSequence::kazakov(self.alpha),
            FamilyChoice::Tuned => {
                let a = self.alpha;
                WeightSequence::tuned(Arc::new(move |k: usize| if k == 0 { 0.0 } else { (k as f64).powf(-a - 0.5) }), a)
            }
        }
    }
}

pub fn parse_list(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|x| x.trim().replace('_', "").parse::<f64>().ok().filter(|v| *v >= 0.0).map(|v| v as usize)).collect()
}

/// Weight sequence and offspring laws shared by every sample of a campaign.
pub struct Model {
    pub weights: WeightSequence,
    pub offspring: TwoTypeOffspring,
    pub law: GrandchildLaw,
    pub alpha: f64,
    pub s_q: f64,
}

impl Model {
    pub fn new(cfg: &CampaignConfig) -> Result<Self> {
        let weights = cfg.weights()?;
        // the sampler needs the grandchild law up to n − 2
        let k_max = cfg.k_max.max(cfg.ns.iter().copied().max().unwrap_or(0));
        let offspring = offspring_laws(&weights, k_max)?;
        let law = grandchild_law(&offspring, k_max)?;
        let alpha = weights.alpha().unwrap_or(cfg.alpha);
        let s_q = weights.s_q().ok_or_else(|| Error::Domain("weight sequence has no scaling constant".into()))?;
        Ok(Model { weights, offspring, law, alpha, s_q })
    }

    /// (s_q n)^{1/(2α)}, the distance scale of maps with n vertices.
    pub fn distance_scale(&self, n: usize) -> f64 {
        (self.s_q * n as f64).powf(1.0 / (2.0 * self.alpha))
    }

    /// Labeled mobile coding a pointed map with n vertices.
    pub fn mobile(&self, cfg: &CampaignConfig, n: usize, sample: u64) -> Result<LabeledMobile> {
        Ok(sample_labeled_mobile(&self.offspring, &self.law, n, cfg.seed, sample, cfg.max_attempts)?.labeled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub n: usize,
    pub sample: u64,
    pub stats: BTreeMap<String, Value>,
}

impl ExperimentRecord {
    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.stats.get(key).and_then(Value::as_f64)
    }

    pub fn get_array(&self, key: &str) -> Option<Vec<f64>> {
        self.stats.get(key)?.as_array()?.iter().map(Value::as_f64).collect()
    }

    pub fn failed(&self) -> bool {
        self.stats.contains_key("error")
    }
}

fn stats(pairs: Vec<(&str, Value)>) -> BTreeMap<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Default r grid for ball volumes: log-spaced on [0.02, 2].
pub fn ball_radii(points: usize) -> Vec<f64> {
    let (lo, hi) = (0.02f64.ln(), 2.0f64.ln());
    if points == 1 {
        return vec![0.2];
    }
    (0..points).map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp()).collect()
}

fn sample_record(model: &Model, cfg: &CampaignConfig, n: usize, sample: u64) -> Result<BTreeMap<String, Value>> {
    let mut misc = Streams::new(cfg.seed, sample, DOMAIN_MISC).at(n as u64);
    match cfg.experiment {
        Experiment::Verify => {
            let lm = model.mobile(cfg, n, sample)?;
            let eps = if misc.random::<bool>() { 1 } else { -1 };
            let pm = bdg_forward(&lm, eps)?;
            let rep = verify_map(&lm, &pm, 10, 100, 100, &mut misc);
            let bs = sample_bipointed(&model.offspring, &model.law, n, cfg.seed, sample, cfg.max_attempts)?;
            let b2 = verify_bipointed(&bs);
            Ok(stats(vec![
                ("distance_checked", json!(rep.distance_checked)),
                ("distance_violations", json!(rep.distance_violations)),
                ("schaeffer_pairs", json!(rep.schaeffer_pairs)),
                ("schaeffer_violations", json!(rep.schaeffer_violations)),
                ("cactus_tuples", json!(rep.cactus_tuples)),
                ("cactus_violations", json!(rep.cactus_violations)),
                ("geodesic_violations", json!(rep.geodesic_violations)),
                ("structure_ok", json!(rep.structure_ok)),
                ("bdg2_forward_matches", json!(b2.forward_matches)),
                ("bdg2_belt_buckle", json!(b2.belt_buckle_round_trip)),
                ("bdg2_parity", json!(b2.parity_ok)),
                ("bdg2_delay_violations", json!(b2.violations.len())),
                ("d12", json!(bs.d12)),
            ]))
        }
        Experiment::Balls => {
            let lm = model.mobile(cfg, n, sample)?;
            let m = &lm.mobile;
            let min = (0..m.len()).filter(|&v| m.is_white(v as u32)).map(|v| lm.label[v]).min().unwrap_or(0);
            let mut dist: Vec<i64> =
                (0..m.len()).filter(|&v| m.is_white(v as u32)).map(|v| lm.label[v] - min + 1).collect();
            dist.sort_unstable();
            let scale = model.distance_scale(n);
            let radii = ball_radii(cfg.grid);
            // v* itself sits at distance 0
            let volume: Vec<f64> = radii
                .iter()
                .map(|&r| (1 + dist.partition_point(|&d| d as f64 <= r * scale)) as f64 / n as f64)
                .collect();
            Ok(stats(vec![("r", json!(radii)), ("volume", json!(volume)), ("scale", json!(scale))]))
        }
        Experiment::Distances => {
            let lm = model.mobile(cfg, n, sample)?;
            let pm = bdg_forward(&lm, 1)?;
            let v1 = misc.random_range(0..pm.map.n_vertices as u32);
            let v2 = misc.random_range(0..pm.map.n_vertices as u32);
            let d = pm.map.adjacency().bfs(v1)[v2 as usize];
            Ok(stats(vec![
                ("d", json!(d)),
                ("scaled", json!(d as f64 / model.distance_scale(n))),
                ("delays", json!(d.saturating_sub(1))),
            ]))
        }
        Experiment::Coupling => {
            let lm = model.mobile(cfg, n, sample)?;
            let rep = coupling_check(&lm, cfg.grid)?;
            Ok(stats(vec![
                ("pairs", json!(rep.pairs)),
                ("label_violations", json!(rep.label_violations)),
                ("zeta_violations", json!(rep.zeta_violations)),
                ("dstar_violations", json!(rep.dstar_violations)),
                ("refinement_violations", json!(rep.refinement_violations)),
                ("mean_gap", json!(rep.mean_gap)),
            ]))
        }
    }
}

/// Total BDG identity violations on the map the other experiments use for this sample.
fn identity_violations(model: &Model, cfg: &CampaignConfig, n: usize, sample: u64) -> Result<usize> {
    let lm = model.mobile(cfg, n, sample)?;
    let pm = bdg_forward(&lm, 1)?;
    let mut rng = Streams::new(cfg.seed, sample, DOMAIN_MISC).at(u64::MAX);
    let r = verify_map(&lm, &pm, 10, 100, 100, &mut rng);
    Ok(r.distance_violations + r.schaeffer_violations + r.cactus_violations + r.geodesic_violations + usize::from(!r.structure_ok))
}

/// Runs every (n, sample) pair in parallel; records come back in (n, sample) order, so the output
/// only depends on the configuration. A failing sample yields a record with an `error` entry.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let model = Model::new(cfg)?;
    let jobs: Vec<(usize, u64)> = cfg.ns.iter().flat_map(|&n| (0..cfg.samples as u64).map(move |s| (n, s))).collect();
    let work = || {
        jobs.par_iter()
            .map(|&(n, s)| {
                let stats = sample_record(&model, cfg, n, s)
                    .and_then(|mut st| {
                        if cfg.verify && cfg.experiment != Experiment::Verify {
                            st.insert("identity_violations".into(), json!(identity_violations(&model, cfg, n, s)?));
                        }
                        Ok(st)
                    })
                    .unwrap_or_else(|e| BTreeMap::from([("error".to_string(), json!(e.to_string()))]));
                ExperimentRecord { experiment: cfg.experiment.name().to_string(), n, sample: s, stats }
            })
            .collect::<Vec<_>>()
    };
    Ok(thread_pool()?.install(work))
}

/// Pool sized by STABLEMAPS_THREADS when set, else by rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("STABLEMAPS_THREADS") {
        let t: usize = v.parse().map_err(|_| Error::Domain(format!("STABLEMAPS_THREADS = '{v}'")))?;
        b = b.num_threads(t.max(1));
    }
    b.build().map_err(|e| Error::Resource(e.to_string()))
}

pub fn write_jsonl<W: Write>(records: &[ExperimentRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// One row per record; array statistics are joined with ';'.
pub fn write_csv<W: Write>(records: &[ExperimentRecord], mut out: W) -> Result<()> {
    let keys: BTreeSet<&String> = records.iter().flat_map(|r| r.stats.keys()).collect();
    let mut header = String::from("experiment,n,sample");
    for k in &keys {
        write!(header, ",{k}").unwrap();
    }
    writeln!(out, "{header}")?;
    for r in records {
        let mut line = format!("{},{},{}", r.experiment, r.n, r.sample);
        for k in &keys {
            let cell = match r.stats.get(*k) {
                Some(Value::Array(a)) => a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
                Some(Value::String(s)) => s.replace(',', ";"),
                Some(v) => v.to_string(),
                None => String::new(),
            };
            write!(line, ",{cell}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CouplingReport {
    pub pairs: usize,
    pub label_violations: usize,
    pub zeta_violations: usize,
    pub dstar_violations: usize,
    pub refinement_violations: usize,
    /// mean of d − D* over grid pairs
    pub mean_gap: f64,
}

impl CouplingReport {
    pub fn ok(&self) -> bool {
        self.label_violations + self.zeta_violations + self.dstar_violations + self.refinement_violations == 0
    }
}

/// Corner-time coupling checks on the map of one mobile, on an evenly spaced grid of `grid`
/// corners and its refinement by 2.
pub fn coupling_check(lm: &LabeledMobile, grid: usize) -> Result<CouplingReport> {
    let pm = bdg_forward(lm, 1)?;
    let cs = &pm.corners;
    let k = cs.len();
    let g = grid.min(k / 2).max(1);
    let coarse: Vec<usize> = (0..g).map(|i| i * k / g).collect();
    let fine: Vec<usize> = {
        let mut f: BTreeSet<usize> = coarse.iter().copied().collect();
        f.extend((0..g).map(|i| (2 * i + 1) * k / (2 * g)));
        f.into_iter().collect()
    };
    let zp = ZPath::new(cs.label.iter().map(|&l| l as f64).collect());
    let ds = dstar_grid(&zp, &coarse, &vertex_identifications(&cs.vertex, &coarse))?;
    let df = dstar_grid(&zp, &fine, &vertex_identifications(&cs.vertex, &fine))?;
    let adj = pm.map.adjacency();
    let vertex = |c: usize| pm.map_vertex[cs.vertex[c] as usize] as usize;
    let mut rep = CouplingReport::default();
    let mut gap = 0.0;
    for (i, &s) in coarse.iter().enumerate() {
        let dist = adj.bfs(vertex(s) as u32);
        for (j, &t) in coarse.iter().enumerate() {
            let d = dist[vertex(t)] as f64;
            rep.pairs += 1;
            rep.label_violations += usize::from((zp.z[s] - zp.z[t]).abs() > d);
            rep.zeta_violations += usize::from(d > zp.zeta(s, t) + 2.0);
            rep.dstar_violations += usize::from(d > ds.get(i, j) + 2.0 * ds.links(i, j) as f64);
            let (fi, fj) = (fine.binary_search(&s).unwrap(), fine.binary_search(&t).unwrap());
            rep.refinement_violations += usize::from(df.get(fi, fj) > ds.get(i, j));
            gap += d - ds.get(i, j);
        }
    }
    rep.mean_gap = gap / rep.pairs as f64;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub samples: usize,
    /// r values inside the window
    pub points: usize,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slope of log Vol(B(ρ*, r)) against log r for r in `window`, fitted per sample and averaged;
/// the standard error is the spread of the per-sample slopes.
pub fn ball_volume_exponent(records: &[ExperimentRecord], window: (f64, f64)) -> Result<SlopeFit> {
    let mut slopes = Vec::new();
    let mut points = 0;
    for rec in records.iter().filter(|r| !r.failed()) {
        let (Some(r), Some(v)) = (rec.get_array("r"), rec.get_array("volume")) else { continue };
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            r.iter().zip(&v).filter(|(r, v)| **r >= window.0 && **r <= window.1 && **v > 0.0).map(|(r, v)| (r.ln(), v.ln())).unzip();
        let distinct: BTreeSet<u64> = xs.iter().map(|x| x.to_bits()).collect();
        if distinct.len() < 3 {
            return Err(Error::Domain(format!("scaling window {window:?} holds {} radii, need 3", distinct.len())));
        }
        points = xs.len();
        slopes.push(least_squares_slope(&xs, &ys));
    }
    if slopes.len() < 2 {
        return Err(Error::Domain("need at least two ball-volume records".into()));
    }
    let n = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / n;
    let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SlopeFit { slope: mean, stderr: (var / n).sqrt(), samples: slopes.len(), points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceSummary {
    pub n: usize,
    pub count: usize,
    pub median: f64,
    /// 10%, 25%, 75%, 90%
    pub quantiles: [f64; 4],
    /// mean of (d − 1)+, the number of admissible delays
    pub delay_mean: f64,
    pub delay_stderr: f64,
}

pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-n summaries of rescaled two-point distances, in increasing n.
pub fn two_point_scaling(records: &[ExperimentRecord]) -> Vec<DistanceSummary> {
    let mut by_n: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.failed()) {
        if let (Some(s), Some(d)) = (r.get_f64("scaled"), r.get_f64("delays")) {
            let e = by_n.entry(r.n).or_default();
            e.0.push(s);
            e.1.push(d);
        }
    }
    by_n.into_iter()
        .map(|(n, (mut s, delays))| {
            s.sort_by(f64::total_cmp);
            let k = delays.len() as f64;
            let mean = delays.iter().sum::<f64>() / k;
            let var = delays.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            DistanceSummary {
                n,
                count: s.len(),
                median: quantile(&s, 0.5),
                quantiles: [quantile(&s, 0.1), quantile(&s, 0.25), quantile(&s, 0.75), quantile(&s, 0.9)],
                delay_mean: mean,
                delay_stderr: (var / k).sqrt(),
            }
        })
        .collect()
}

/// Chords of the unit disk between times of a discretized path, as indices into `points`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lamination {
    pub points: usize,
    pub chords: BTreeSet<(usize, usize)>,
    pub identification_chords: usize,
    pub face_chords: usize,
}

impl Lamination {
    /// L(X): identified pairs of the excursion, and for each jump of size ≥ `min_jump` the
    /// polygon through consecutive loop images f_r(i/m), m = ⌈Δ⌉ capped at 64.
    pub fn of_excursion(ex: &JumpExcursion, min_jump: f64) -> Self {
        let mut lam = Lamination { points: ex.len(), ..Default::default() };
        for s in 0..ex.len() {
            if let Some(t) = ex.identified_with(s) {
                if lam.chords.insert((s, t)) {
                    lam.identification_chords += 1;
                }
            }
        }
        for &(r, delta) in ex.jumps.iter().filter(|j| j.1 >= min_jump) {
            let m = (delta.ceil() as usize).clamp(1, 64);
            let fr: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
            let Ok(f) = face_boundary(ex, r, &fr) else { continue };
            for w in f.windows(2) {
                if w[0] != w[1] && lam.chords.insert((w[0].min(w[1]), w[0].max(w[1]))) {
                    lam.face_chords += 1;
                }
            }
        }
        lam
    }

    /// L(Z): pairs with 𝔷 = 0, i.e. equal values with Z strictly larger on the arc between them,
    /// taken on the sequence read cyclically from its minimum.
    pub fn of_labels(z: &[f64]) -> Self {
        let n = z.len();
        let mut lam = Lamination { points: n, ..Default::default() };
        if n == 0 {
            return lam;
        }
        let start = (0..n).min_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap();
        let rot: Vec<f64> = (0..=n).map(|i| z[(start + i) % n]).collect();
        // stack of candidate left ends; each pops when the path comes back to its level
        let mut stack: Vec<usize> = Vec::new();
        for j in 0..rot.len() {
            while let Some(&i) = stack.last() {
                if rot[i] > rot[j] {
                    stack.pop();
                } else {
                    break;
                }
            }
            if let Some(&i) = stack.last() {
                if rot[i] == rot[j] && j > i + 1 {
                    let (a, b) = ((start + i) % n, (start + j) % n);
                    if a != b && lam.chords.insert((a.min(b), a.max(b))) {
                        lam.identification_chords += 1;
                    }
                }
                if rot[i] == rot[j] {
                    stack.pop();
                }
            }
            stack.push(j);
        }
        lam
    }

    pub fn to_svg(&self, size: f64) -> String {
        let c = size / 2.0;
        let rad = 0.45 * size;
        let p = |i: usize| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / self.points.max(1) as f64;
            (c + rad * th.cos(), c - rad * th.sin())
        };
        let mut out = String::new();
        writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
        writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#).unwrap();
        writeln!(out, r#"<circle cx="{c}" cy="{c}" r="{rad}" fill="none" stroke="black" stroke-width="1"/>"#).unwrap();
        for &(a, b) in &self.chords {
            let (x1, y1) = p(a);
            let (x2, y2) = p(b);
            writeln!(out, r#"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="steelblue" stroke-width="0.6"/>"#).unwrap();
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: Experiment) -> CampaignConfig {
        CampaignConfig { experiment, ns: vec![300], samples: 4, seed: 3, k_max: 2000, ..Default::default() }
    }

    #[test]
    fn config_parsing() {
        let cfg = CampaignConfig::from_kv("experiment = balls\nalpha=1.4 # comment\nn = 1000, 2e3\nsamples=5\nseed=9\n").unwrap();
        assert_eq!(cfg.experiment, Experiment::Balls);
        assert_eq!(cfg.ns, vec![1000, 2000]);
        assert_eq!(cfg.alpha, 1.4);
        assert!(CampaignConfig::from_kv("colour = red").is_err());
        assert!(CampaignConfig::from_kv("samples = 0").is_err());
    }

    #[test]
    fn campaigns_are_deterministic() {
        let cfg = small(Experiment::Distances);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_jsonl(&run_campaign(&cfg).unwrap(), &mut a).unwrap();
        write_jsonl(&run_campaign(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().starts_with(r#"{"experiment":"distances","n":300,"sample":0,"stats":{"#));
    }

    #[test]
    fn verify_campaign_has_no_violations() {
        let recs = run_campaign(&small(Experiment::Verify)).unwrap();
        for r in &recs {
            assert!(!r.failed(), "{:?}", r.stats);
            for k in ["distance_violations", "schaeffer_violations", "cactus_violations", "geodesic_violations", "bdg2_delay_violations"] {
                assert_eq!(r.get_f64(k), Some(0.0), "{k}");
            }
            for k in ["structure_ok", "bdg2_forward_matches", "bdg2_belt_buckle", "bdg2_parity"] {
                assert_eq!(r.stats[k], json!(true), "{k}");
            }
        }
    }

    #[test]
    fn optional_verify_suite() {
        let recs = run_campaign(&CampaignConfig { verify: true, ..small(Experiment::Balls) }).unwrap();
        assert!(recs.iter().all(|r| r.get_f64("identity_violations") == Some(0.0)));
    }

    #[test]
    fn coupling_campaign() {
        let recs = run_campaign(&CampaignConfig { grid: 32, ..small(Experiment::Coupling) }).unwrap();
        for r in &recs {
            for k in ["label_violations", "zeta_violations", "dstar_violations", "refinement_violations"] {
                assert_eq!(r.get_f64(k), Some(0.0), "{k}");
            }
            assert!(r.get_f64("mean_gap").unwrap() <= 0.0 || r.get_f64("pairs").unwrap() > 0.0);
        }
    }

    #[test]
    fn ball_fit_and_degenerate_window() {
        let recs = run_campaign(&CampaignConfig { samples: 6, ..small(Experiment::Balls) }).unwrap();
        let fit = ball_volume_exponent(&recs, (0.05, 1.0)).unwrap();
        assert!(fit.slope > 0.0 && fit.stderr.is_finite());
        assert!(matches!(ball_volume_exponent(&recs, (0.5, 0.5)), Err(Error::Domain(_))));
        let one = run_campaign(&CampaignConfig { grid: 1, ..small(Experiment::Balls) }).unwrap();
        assert!(ball_volume_exponent(&one, (0.0, 10.0)).is_err());
    }

    #[test]
    fn distance_summaries() {
        let recs = run_campaign(&CampaignConfig { samples: 12, ..small(Experiment::Distances) }).unwrap();
        let s = &two_point_scaling(&recs)[0];
        assert_eq!(s.count, 12);
        assert!(s.quantiles[0] >= 0.0);
        assert!(s.quantiles[0] <= s.quantiles[1] && s.quantiles[1] <= s.median && s.median <= s.quantiles[2]);
        assert!(s.quantiles[2] <= s.quantiles[3]);
        let mut csv = Vec::new();
        write_csv(&recs, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("experiment,n,sample,d,delays,scaled\n"));
    }

    #[test]
    fn laminations() {
        let empty = Lamination::of_labels(&[]);
        let svg = empty.to_svg(200.0);
        assert!(svg.contains("<circle") && !svg.contains("<line"));

        // one jump of size 4 followed by a staircase descent
        let ex = JumpExcursion::new(vec![0.0, 4.0, 4.0, 3.0, 3.0, 2.0, 2.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let lam = Lamination::of_excursion(&ex, 1.0);
        let pairs: Vec<(usize, usize)> = (0..ex.len()).filter_map(|s| ex.identified_with(s).map(|t| (s, t))).collect();
        assert_eq!(lam.identification_chords, pairs.len());
        let f = face_boundary(&ex, 1, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(f, vec![1, 3, 5, 7, 9]);
        for w in f.windows(2) {
            assert!(lam.chords.contains(&(w[0], w[1])));
        }
        // the loop closes through the identification of 1 with 9
        assert!(lam.chords.contains(&(1, 9)));
        assert_eq!(lam.to_svg(100.0).matches("<line").count(), lam.chords.len());

        let z = [0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 0.0];
        let lz = Lamination::of_labels(&z);
        assert!(lz.chords.contains(&(1, 3)));
        assert!(lz.chords.contains(&(0, 4)));
        let zp = ZPath::new(z.to_vec());
        for &(a, b) in &lz.chords {
            assert_eq!(zp.zeta(a, b), 0.0);
        }
    }
}
