//! Peer discovery and hybrid recommendation: an IVF-PQ nearest-neighbour
//! index, ALS matrix factorization of the interaction matrix, and weighted
//! score fusion fitted by cross-validated AUC.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GesaError, Result};
use crate::model::Dataset;
use crate::nn::{auc, sigmoid};

pub const MAGIC: &[u8; 8] = b"GESAIVF1";
pub const PQ_CENTROIDS: usize = 256;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

fn by_distance_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Exhaustive Euclidean scan; ties by ascending id.
pub fn exact_knn(vectors: &[(String, Vec<f64>)], query: &[f64], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<(f64, &str)> = vectors.iter().map(|(id, v)| (sq_dist(v, query), id.as_str())).collect();
    all.sort_by(by_distance_then_id);
    all.into_iter().take(k).map(|(d, id)| Neighbor { id: id.to_string(), distance: d.sqrt() }).collect()
}

/// Seeded Lloyd iterations. Initial centroids are distinct sampled points
/// (cycled when there are fewer points than centroids); an empty cluster
/// keeps its previous centroid. Returns centroids (row-major) and the final
/// assignment.
fn kmeans(points: &[&[f64]], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>) {
    let d = points[0].len();
    let picks = sample(rng, points.len(), k.min(points.len())).into_vec();
    let mut centroids = Vec::with_capacity(k * d);
    for c in 0..k {
        centroids.extend_from_slice(points[picks[c % picks.len()]]);
    }
    let nearest = |centroids: &[f64], p: &[f64]| -> usize {
        let mut best = (f64::INFINITY, 0);
        for c in 0..k {
            let dist = sq_dist(p, &centroids[c * d..(c + 1) * d]);
            if dist < best.0 {
                best = (dist, c);
            }
        }
        best.1
    };
    let mut assign: Vec<usize> = points.par_iter().map(|p| nearest(&centroids, p)).collect();
    for _ in 0..iters {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for t in 0..d {
                    centroids[c * d + t] = sums[c * d + t] / counts[c] as f64;
                }
            }
        }
        assign = points.par_iter().map(|p| nearest(&centroids, p)).collect();
    }
    (centroids, assign)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvfPqConfig {
    /// Defaults to √N rounded.
    pub nlist: Option<usize>,
    pub m: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IvfPqConfig {
    fn default() -> Self {
        Self { nlist: None, m: 8, kmeans_iters: 20, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvfPqIndex {
    pub dim: usize,
    pub m: usize,
    pub nlist: usize,
    pub seed: u64,
    /// `nlist × dim`, row-major.
    pub coarse: Vec<f64>,
    /// `m × 256 × (dim / m)`, row-major.
    pub codebooks: Vec<f64>,
    /// Vector positions per coarse cell.
    pub lists: Vec<Vec<u32>>,
    pub ids: Vec<String>,
    /// `count × m`.
    pub codes: Vec<u8>,
    /// `count × dim`.
    pub raw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub hits: Vec<Neighbor>,
    /// Set when `k` exceeded the indexed count and every vector was returned.
    pub truncated: bool,
}

pub fn build_ivfpq(vectors: &[(String, Vec<f64>)], config: &IvfPqConfig) -> Result<IvfPqIndex> {
    let n = vectors.len();
    if n == 0 {
        return Err(GesaError::Empty("vectors".into()));
    }
    let dim = vectors[0].1.len();
    if let Some((_, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
        return Err(GesaError::DimensionMismatch { expected: dim, actual: v.len() });
    }
    if vectors.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(GesaError::InvalidArgument("non-finite vector entry".into()));
    }
    let m = config.m;
    if m == 0 || dim == 0 || dim % m != 0 {
        return Err(GesaError::InvalidArgument(format!("dimension {dim} is not divisible by m = {m}")));
    }
    let nlist = config.nlist.unwrap_or_else(|| ((n as f64).sqrt().round() as usize).max(1));
    if nlist == 0 || n < nlist {
        return Err(GesaError::InvalidArgument(format!("{n} vectors are too few for nlist = {nlist}")));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some((id, _)) = vectors.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(GesaError::InvalidArgument(format!("duplicate id `{id}`")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points: Vec<&[f64]> = vectors.iter().map(|(_, v)| v.as_slice()).collect();
    let (coarse, assign) = kmeans(&points, nlist, config.kmeans_iters, &mut rng);
    let residuals: Vec<Vec<f64>> = points
        .iter()
        .zip(&assign)
        .map(|(p, &c)| p.iter().zip(&coarse[c * dim..(c + 1) * dim]).map(|(x, y)| x - y).collect())
        .collect();

    let dsub = dim / m;
    let mut codebooks = Vec::with_capacity(m * PQ_CENTROIDS * dsub);
    let mut codes = vec![0u8; n * m];
    for s in 0..m {
        let sub: Vec<&[f64]> = residuals.iter().map(|r| &r[s * dsub..(s + 1) * dsub]).collect();
        let (book, sub_assign) = kmeans(&sub, PQ_CENTROIDS, config.kmeans_iters, &mut rng);
        codebooks.extend(book);
        for (i, &c) in sub_assign.iter().enumerate() {
            codes[i * m + s] = c as u8;
        }
    }
    let mut lists = vec![Vec::new(); nlist];
    for (i, &c) in assign.iter().enumerate() {
        lists[c].push(i as u32);
    }
    Ok(IvfPqIndex {
        dim,
        m,
        nlist,
        seed: config.seed,
        coarse,
        codebooks,
        lists,
        ids: vectors.iter().map(|(id, _)| id.clone()).collect(),
        codes,
        raw: vectors.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
    })
}

impl IvfPqIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    fn codebook(&self, s: usize, c: usize) -> &[f64] {
        let dsub = self.dim / self.m;
        let start = (s * PQ_CENTROIDS + c) * dsub;
        &self.codebooks[start..start + dsub]
    }

    /// Scans the `nprobe` nearest cells with asymmetric PQ distances. With
    /// `rerank`, the best `4k` PQ hits are re-scored exactly on raw vectors.
    pub fn query(&self, query: &[f64], k: usize, nprobe: usize, rerank: bool) -> Result<QueryResult> {
        if query.len() != self.dim {
            return Err(GesaError::DimensionMismatch { expected: self.dim, actual: query.len() });
        }
        if k == 0 {
            return Err(GesaError::InvalidArgument("k must be at least 1".into()));
        }
        if nprobe == 0 || nprobe > self.nlist {
            return Err(GesaError::InvalidArgument(format!("nprobe must lie in 1..={}", self.nlist)));
        }
        let truncated = k > self.len();
        let k = k.min(self.len());
        let mut cells: Vec<(f64, usize)> =
            (0..self.nlist).map(|c| (sq_dist(query, &self.coarse[c * self.dim..(c + 1) * self.dim]), c)).collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let dsub = self.dim / self.m;
        let mut scored: Vec<(f64, &str, usize)> = Vec::new();
        for &(_, cell) in cells.iter().take(nprobe) {
            let centre = &self.coarse[cell * self.dim..(cell + 1) * self.dim];
            let residual: Vec<f64> = query.iter().zip(centre).map(|(q, c)| q - c).collect();
            let table: Vec<f64> = (0..self.m)
                .flat_map(|s| {
                    let r = &residual[s * dsub..(s + 1) * dsub];
                    (0..PQ_CENTROIDS).map(move |c| (s, c, r))
                })
                .map(|(s, c, r)| sq_dist(r, self.codebook(s, c)))
                .collect();
            for &i in &self.lists[cell] {
                let i = i as usize;
                let code = &self.codes[i * self.m..(i + 1) * self.m];
                let d: f64 = code.iter().enumerate().map(|(s, &c)| table[s * PQ_CENTROIDS + c as usize]).sum();
                scored.push((d, self.ids[i].as_str(), i));
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let hits = if rerank {
            let mut exact: Vec<(f64, &str)> = scored
                .iter()
                .take(4 * k)
                .map(|&(_, id, i)| (sq_dist(self.vector(i), query), id))
                .collect();
            exact.sort_by(by_distance_then_id);
            exact.into_iter().take(k).map(|(d, id)| Neighbor { id: id.to_string(), distance: d.sqrt() }).collect()
        } else {
            scored
                .into_iter()
                .take(k)
                .map(|(d, id, _)| Neighbor { id: id.to_string(), distance: d.max(0.0).sqrt() })
                .collect()
        };
        Ok(QueryResult { hits, truncated })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.m as u32)?;
        w.write_u32::<LittleEndian>(self.nlist as u32)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        for &v in self.coarse.iter().chain(&self.codebooks) {
            w.write_f64::<LittleEndian>(v)?;
        }
        for list in &self.lists {
            w.write_u64::<LittleEndian>(list.len() as u64)?;
            for &i in list {
                w.write_u32::<LittleEndian>(i)?;
            }
        }
        for (i, id) in self.ids.iter().enumerate() {
            w.write_u32::<LittleEndian>(id.len() as u32)?;
            w.write_all(id.as_bytes())?;
            w.write_all(&self.codes[i * self.m..(i + 1) * self.m])?;
            for &v in self.vector(i) {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |what: &str| GesaError::Format(format!("index file: {what}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut header = || -> std::io::Result<(usize, usize, usize, usize, u64)> {
            Ok((
                r.read_u32::<LittleEndian>()? as usize,
                r.read_u32::<LittleEndian>()? as usize,
                r.read_u32::<LittleEndian>()? as usize,
                r.read_u64::<LittleEndian>()? as usize,
                r.read_u64::<LittleEndian>()?,
            ))
        };
        let (dim, m, nlist, count, seed) = header().map_err(|_| bad("truncated header"))?;
        if m == 0 || dim == 0 || dim % m != 0 || nlist == 0 || count < nlist || count > u32::MAX as usize {
            return Err(bad("inconsistent header"));
        }
        let body = |r: &mut dyn Read| -> std::io::Result<Self> {
            let mut floats = |n: usize| -> std::io::Result<Vec<f64>> {
                let mut v = vec![0.0; n];
                r.read_f64_into::<LittleEndian>(&mut v)?;
                Ok(v)
            };
            let coarse = floats(nlist * dim)?;
            let codebooks = floats(m * PQ_CENTROIDS * (dim / m))?;
            let mut lists = Vec::with_capacity(nlist);
            for _ in 0..nlist {
                let len = r.read_u64::<LittleEndian>()? as usize;
                if len > count {
                    return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "list longer than count"));
                }
                let mut list = vec![0u32; len];
                r.read_u32_into::<LittleEndian>(&mut list)?;
                lists.push(list);
            }
            let mut ids = Vec::with_capacity(count);
            let mut codes = vec![0u8; count * m];
            let mut raw = vec![0.0; count * dim];
            for i in 0..count {
                let len = r.read_u32::<LittleEndian>()? as usize;
                let mut bytes = vec![0u8; len];
                r.read_exact(&mut bytes)?;
                ids.push(String::from_utf8(bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
                r.read_exact(&mut codes[i * m..(i + 1) * m])?;
                r.read_f64_into::<LittleEndian>(&mut raw[i * dim..(i + 1) * dim])?;
            }
            Ok(Self { dim, m, nlist, seed, coarse, codebooks, lists, ids, codes, raw })
        };
        let index = body(r).map_err(|e| bad(&e.to_string()))?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| bad(&e.to_string()))? != 0 {
            return Err(bad("trailing bytes"));
        }
        let mut seen = vec![false; count];
        for &i in index.lists.iter().flatten() {
            if i as usize >= count || std::mem::replace(&mut seen[i as usize], true) {
                return Err(bad("inverted lists do not partition the vectors"));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("inverted lists do not partition the vectors"));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

pub fn ann_query(index: &IvfPqIndex, query: &[f64], k: usize, nprobe: usize, rerank: bool) -> Result<QueryResult> {
    index.query(query, k, nprobe, rerank)
}

/// Share of the exact top-k ids found in the approximate top-k.
pub fn recall_at(approx: &[Neighbor], exact: &[Neighbor]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let truth: std::collections::HashSet<&str> = exact.iter().map(|n| n.id.as_str()).collect();
    approx.iter().filter(|n| truth.contains(n.id.as_str())).count() as f64 / exact.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub k: usize,
    pub mu: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self { k: 32, mu: 0.1, sweeps: 20, seed: 0 }
    }
}

/// One observed entry of the interaction matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub candidate: String,
    pub role: String,
    pub value: f64,
}

/// Target used for binary outcomes: success maps to `+3`, failure to `−3`,
/// so the logistic of a fitted entry lands near 0.95 or 0.05.
pub const LOGIT_TARGET: f64 = 3.0;

pub fn interaction_ratings(ds: &Dataset) -> Vec<Rating> {
    ds.interactions
        .iter()
        .map(|it| Rating {
            candidate: it.candidate_id.clone(),
            role: it.role_id.clone(),
            value: if it.outcome == 1 { LOGIT_TARGET } else { -LOGIT_TARGET },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub candidate_ids: Vec<String>,
    pub role_ids: Vec<String>,
    /// `N × k`.
    pub u: Array2<f64>,
    /// `M × k`.
    pub v: Array2<f64>,
    pub k: usize,
    pub mu: f64,
    /// Regularized loss after every half-sweep.
    pub loss_history: Vec<f64>,
}

fn regularized_loss(u: &Array2<f64>, v: &Array2<f64>, entries: &[(usize, usize, f64)], mu: f64) -> f64 {
    let fit: f64 = entries.iter().map(|&(i, j, r)| (r - u.row(i).dot(&v.row(j))).powi(2)).sum();
    fit + mu * (u.iter().map(|x| x * x).sum::<f64>() + v.iter().map(|x| x * x).sum::<f64>())
}

/// Exact ridge solve for every row of `target` given the fixed `other`.
fn solve_side(target: &mut Array2<f64>, other: &Array2<f64>, by_row: &[Vec<(usize, f64)>], mu: f64) -> Result<()> {
    let k = other.ncols();
    let rows: Vec<Vec<f64>> = by_row
        .par_iter()
        .map(|obs| {
            if obs.is_empty() {
                return Ok(vec![0.0; k]);
            }
            let mut a = DMatrix::<f64>::identity(k, k) * mu;
            let mut b = DVector::<f64>::zeros(k);
            for &(j, r) in obs {
                let vj = DVector::from_iterator(k, other.row(j).iter().copied());
                a += &vj * vj.transpose();
                b += vj * r;
            }
            a.cholesky()
                .map(|c| c.solve(&b).iter().copied().collect())
                .ok_or_else(|| GesaError::InvalidArgument("singular least-squares system".into()))
        })
        .collect::<Result<_>>()?;
    for (i, row) in rows.into_iter().enumerate() {
        for (t, x) in row.into_iter().enumerate() {
            target[[i, t]] = x;
        }
    }
    Ok(())
}

/// Rescales each column pair so `|U_t| = |V_t|`. The product is unchanged and
/// the penalty can only drop.
fn rebalance(u: &mut Array2<f64>, v: &mut Array2<f64>) {
    for t in 0..u.ncols() {
        let nu = u.column(t).dot(&u.column(t)).sqrt();
        let nv = v.column(t).dot(&v.column(t)).sqrt();
        if nu > 0.0 && nv > 0.0 {
            let c = (nv / nu).sqrt();
            u.column_mut(t).mapv_inplace(|x| x * c);
            v.column_mut(t).mapv_inplace(|x| x / c);
        }
    }
}

/// Alternating least squares on the observed entries with L2 weight `mu`.
/// Ids are indexed in first-seen order.
pub fn train_mf(ratings: &[Rating], config: &MfConfig) -> Result<FactorModel> {
    if ratings.is_empty() {
        return Err(GesaError::Empty("interactions".into()));
    }
    if config.k == 0 || !(config.mu > 0.0) {
        return Err(GesaError::InvalidArgument("k must be positive and mu > 0".into()));
    }
    let mut cidx: HashMap<&str, usize> = HashMap::new();
    let mut ridx: HashMap<&str, usize> = HashMap::new();
    let mut candidate_ids = Vec::new();
    let mut role_ids = Vec::new();
    let mut entries = Vec::with_capacity(ratings.len());
    for r in ratings {
        if !r.value.is_finite() {
            return Err(GesaError::InvalidArgument("non-finite rating".into()));
        }
        let i = *cidx.entry(&r.candidate).or_insert_with(|| {
            candidate_ids.push(r.candidate.clone());
            candidate_ids.len() - 1
        });
        let j = *ridx.entry(&r.role).or_insert_with(|| {
            role_ids.push(r.role.clone());
            role_ids.len() - 1
        });
        entries.push((i, j, r.value));
    }
    let (n, m, k) = (candidate_ids.len(), role_ids.len(), config.k);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = 1.0 / (k as f64).sqrt();
    let mut u = Array2::from_shape_fn((n, k), |_| rng.random_range(-scale..scale));
    let mut v = Array2::from_shape_fn((m, k), |_| rng.random_range(-scale..scale));
    let mut by_candidate = vec![Vec::new(); n];
    let mut by_role = vec![Vec::new(); m];
    for &(i, j, r) in &entries {
        by_candidate[i].push((j, r));
        by_role[j].push((i, r));
    }
    let mut loss_history = Vec::with_capacity(2 * config.sweeps);
    for _ in 0..config.sweeps {
        solve_side(&mut u, &v, &by_candidate, config.mu)?;
        rebalance(&mut u, &mut v);
        loss_history.push(regularized_loss(&u, &v, &entries, config.mu));
        solve_side(&mut v, &u, &by_role, config.mu)?;
        rebalance(&mut u, &mut v);
        loss_history.push(regularized_loss(&u, &v, &entries, config.mu));
    }
    Ok(FactorModel { candidate_ids, role_ids, u, v, k, mu: config.mu, loss_history })
}

impl FactorModel {
    pub fn predict(&self, candidate: &str, role: &str) -> Result<f64> {
        let i = self
            .candidate_ids
            .iter()
            .position(|c| c == candidate)
            .ok_or_else(|| GesaError::ColdStart { kind: "candidate", id: candidate.to_string() })?;
        let j = self
            .role_ids
            .iter()
            .position(|r| r == role)
            .ok_or_else(|| GesaError::ColdStart { kind: "role", id: role.to_string() })?;
        Ok(self.u.row(i).dot(&self.v.row(j)))
    }
}

/// `logistic(U_c · V_r)`; unknown ids yield a cold-start error.
pub fn cf_score(model: &FactorModel, candidate: &str, role: &str) -> Result<f64> {
    model.predict(candidate, role).map(sigmoid)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FusionWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        crate::objectives::check_simplex("fusion weights", &[self.alpha, self.beta, self.gamma])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub content: f64,
    pub collaborative: f64,
    pub graph: f64,
}

pub fn hybrid_score(scores: &ComponentScores, weights: &FusionWeights) -> Result<f64> {
    weights.validate()?;
    let parts = [scores.content, scores.collaborative, scores.graph];
    if parts.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(GesaError::InvalidArgument("component scores must lie in [0, 1]".into()));
    }
    Ok(weights.alpha * scores.content + weights.beta * scores.collaborative + weights.gamma * scores.graph)
}

/// Grid search over the weight simplex maximizing mean held-out AUC across
/// seeded stratified folds. Ties (within 1e-12) go to larger α, then larger β.
pub fn fit_fusion_weights(history: &[(ComponentScores, bool)], folds: usize, step: f64, seed: u64) -> Result<FusionWeights> {
    if folds < 2 {
        return Err(GesaError::InvalidArgument("need at least two folds".into()));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(GesaError::InvalidArgument("grid step must lie in (0, 1]".into()));
    }
    let grid = (1.0 / step).round() as usize;
    if ((grid as f64) * step - 1.0).abs() > 1e-9 {
        return Err(GesaError::InvalidArgument("grid step must divide 1".into()));
    }
    let mut pos: Vec<usize> = (0..history.len()).filter(|&i| history[i].1).collect();
    let mut neg: Vec<usize> = (0..history.len()).filter(|&i| !history[i].1).collect();
    if pos.len() < folds || neg.len() < folds {
        return Err(GesaError::InvalidArgument(format!("need at least {folds} positive and {folds} negative outcomes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold_of = vec![0usize; history.len()];
    for (rank, &i) in pos.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    for (rank, &i) in neg.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    let members: Vec<Vec<usize>> = (0..folds).map(|f| (0..history.len()).filter(|&i| fold_of[i] == f).collect()).collect();

    let mut best: Option<(f64, usize, usize)> = None;
    for a in (0..=grid).rev() {
        for b in (0..=grid - a).rev() {
            let w = [a as f64 / grid as f64, b as f64 / grid as f64, (grid - a - b) as f64 / grid as f64];
            let mean = members
                .iter()
                .map(|idx| {
                    let scores: Vec<f64> = idx
                        .iter()
                        .map(|&i| {
                            let s = &history[i].0;
                            w[0] * s.content + w[1] * s.collaborative + w[2] * s.graph
                        })
                        .collect();
                    let labels: Vec<bool> = idx.iter().map(|&i| history[i].1).collect();
                    auc(&scores, &labels).unwrap_or(0.5)
                })
                .sum::<f64>()
                / folds as f64;
            if best.is_none_or(|(m, _, _)| mean > m + 1e-12) {
                best = Some((mean, a, b));
            }
        }
    }
    let (_, a, b) = best.unwrap();
    FusionWeights::new(a as f64 / grid as f64, b as f64 / grid as f64, (grid - a - b) as f64 / grid as f64)
}
