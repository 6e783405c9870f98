//! Heterogeneous ecosystem graph with attention-based message passing.
//!
//! Six node types and six edge types. Each layer computes, for every node `v`
//!
//! ```text
//! z_v' = ELU( W_type(v) · Σ_τ Σ_{u ∈ N_τ(v)} α_τ(v,u) z_u )
//! α_τ(v,u) = softmax_u LeakyReLU(a_τ · [z_v ‖ z_u])
//! ```
//!
//! with neighborhoods taken in both edge directions. A node with no
//! neighbors of any type passes its own state through `W` instead.
//! Parameters are trained by link prediction: `sigmoid(z_u · z_v)` against
//! observed edges and uniformly sampled non-edges.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingProvider, EmbeddingStore, EmbeddingVector};
use crate::error::{GesaError, Result};
use crate::model::{validate_dataset, Dataset};
use crate::nn::{elu, elu_grad, leaky_relu, sigmoid, softplus, xavier, Adam};

pub const DEFAULT_SKILL_SIM_THRESHOLD: f64 = 0.5;
pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Candidate,
    Role,
    Skill,
    Organization,
    Location,
    Domain,
}

impl NodeType {
    pub const ALL: [NodeType; 6] = [
        NodeType::Candidate,
        NodeType::Role,
        NodeType::Skill,
        NodeType::Organization,
        NodeType::Location,
        NodeType::Domain,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    HasSkill,
    RequiresSkill,
    LocatedIn,
    AffiliatedWith,
    DomainRelated,
    SkillSimilarity,
}

impl EdgeType {
    pub const ALL: [EdgeType; 6] = [
        EdgeType::HasSkill,
        EdgeType::RequiresSkill,
        EdgeType::LocatedIn,
        EdgeType::AffiliatedWith,
        EdgeType::DomainRelated,
        EdgeType::SkillSimilarity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Endpoint types allowed by the schema (`src → dst`).
    pub fn allows(self, src: NodeType, dst: NodeType) -> bool {
        use NodeType::*;
        let entity = matches!(src, Candidate | Role);
        match self {
            EdgeType::HasSkill => src == Candidate && dst == Skill,
            EdgeType::RequiresSkill => src == Role && dst == Skill,
            EdgeType::LocatedIn => entity && dst == Location,
            EdgeType::AffiliatedWith => entity && dst == Organization,
            EdgeType::DomainRelated => entity && dst == Domain,
            EdgeType::SkillSimilarity => src == Skill && dst == Skill,
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        write!(f, "{}", s.as_str().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: String,
    pub node_type: NodeType,
    pub features: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub edge_type: EdgeType,
    pub weight: f64,
}

/// Receiver-grouped neighbor lists for one edge type, both directions.
#[derive(Clone, Debug, Default)]
struct Adjacency {
    receiver: Vec<usize>,
    neighbor: Vec<usize>,
    /// `(v, start, end)` ranges into `neighbor`.
    segments: Vec<(usize, usize, usize)>,
}

#[derive(Clone, Debug, Default)]
pub struct HeteroGraph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    edge_keys: HashSet<(usize, usize, EdgeType)>,
    feature_dim: Option<usize>,
}

impl HeteroGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>, node_type: NodeType, features: Vec<f64>) -> Result<usize> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(GesaError::InvalidArgument(format!("node id `{id}` used twice")));
        }
        match self.feature_dim {
            Some(d) if d != features.len() => {
                return Err(GesaError::DimensionMismatch { expected: d, actual: features.len() })
            }
            None => self.feature_dim = Some(features.len()),
            _ => {}
        }
        let i = self.nodes.len();
        self.index.insert(id.clone(), i);
        self.nodes.push(Node { id, node_type, features });
        Ok(i)
    }

    /// Adds a typed edge; duplicates of the same `(src, dst, type)` are ignored.
    pub fn add_edge(&mut self, src: &str, dst: &str, edge_type: EdgeType, weight: f64) -> Result<()> {
        let s = self.node_index(src)?;
        let d = self.node_index(dst)?;
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(GesaError::InvalidArgument(format!("edge weight {weight} outside (0, 1]")));
        }
        if !edge_type.allows(self.nodes[s].node_type, self.nodes[d].node_type) {
            return Err(GesaError::InvalidArgument(format!(
                "{edge_type} cannot join {:?} → {:?}",
                self.nodes[s].node_type, self.nodes[d].node_type
            )));
        }
        if self.edge_keys.insert((s, d, edge_type)) {
            self.edges.push(Edge { src: s, dst: d, edge_type, weight });
        }
        Ok(())
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GesaError::UnknownId { kind: "node", id: id.to_string() })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim.unwrap_or(0)
    }

    /// Checks every stored edge against the schema and weight range.
    pub fn check_schema(&self) -> Result<()> {
        for e in &self.edges {
            let (s, d) = (self.nodes[e.src].node_type, self.nodes[e.dst].node_type);
            if !e.edge_type.allows(s, d) || !(e.weight > 0.0 && e.weight <= 1.0) {
                return Err(GesaError::InvalidArgument(format!("edge {e:?} breaks the schema")));
            }
        }
        Ok(())
    }

    pub fn count_edges(&self, edge_type: EdgeType) -> usize {
        self.edges.iter().filter(|e| e.edge_type == edge_type).count()
    }

    fn adjacency(&self) -> Vec<Adjacency> {
        let n = self.nodes.len();
        EdgeType::ALL
            .iter()
            .map(|&t| {
                let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
                for e in self.edges.iter().filter(|e| e.edge_type == t) {
                    lists[e.src].push(e.dst);
                    if e.src != e.dst {
                        lists[e.dst].push(e.src);
                    }
                }
                let mut adj = Adjacency::default();
                for (v, list) in lists.into_iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let start = adj.neighbor.len();
                    for u in list {
                        adj.receiver.push(v);
                        adj.neighbor.push(u);
                    }
                    adj.segments.push((v, start, adj.neighbor.len()));
                }
                adj
            })
            .collect()
    }

    /// Undirected neighbor lists over all edge types, with step weights.
    fn undirected(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            out[e.src].push((e.dst, e.weight));
            out[e.dst].push((e.src, e.weight));
        }
        out
    }

    fn step_weight(&self, a: usize, b: usize) -> Option<f64> {
        self.edges
            .iter()
            .filter(|e| (e.src == a && e.dst == b) || (e.src == b && e.dst == a))
            .map(|e| e.weight)
            .reduce(f64::max)
    }
}

fn concat_text(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.trim().is_empty()).copied().collect::<Vec<_>>().join(" ")
}

/// Text used to embed a candidate: free text followed by skill names.
pub fn candidate_text(ds: &Dataset, c: &crate::model::Candidate) -> String {
    let names: Vec<&str> = c.skill_ids.iter().filter_map(|s| ds.skill(s)).map(|s| s.name.as_str()).collect();
    concat_text(&[&c.free_text, &names.join(" ")])
}

/// Text used to embed a role: description followed by required skill names.
pub fn role_text(ds: &Dataset, r: &crate::model::Role) -> String {
    let names: Vec<&str> =
        r.required_skill_ids.iter().filter_map(|s| ds.skill(s)).map(|s| s.name.as_str()).collect();
    concat_text(&[&r.free_text, &names.join(" ")])
}

/// Builds the ecosystem graph from a valid dataset. Reference edges get
/// weight 1; skill pairs with embedding cosine `>= threshold` get a
/// `skill_similarity` edge weighted by that cosine. There are no direct
/// candidate-role edges.
pub fn build_graph(ds: &Dataset, provider: &dyn EmbeddingProvider, threshold: f64) -> Result<HeteroGraph> {
    let report = validate_dataset(ds);
    if !report.is_empty() {
        return Err(GesaError::InvalidDataset(report.len()));
    }
    let mut g = HeteroGraph::new();
    let feat = |id: &str, text: &str| -> Result<Vec<f64>> {
        Ok(provider.embed_entity(id, text)?.into_inner())
    };
    for c in &ds.candidates {
        g.add_node(&c.id, NodeType::Candidate, feat(&c.id, &candidate_text(ds, c))?)?;
    }
    for r in &ds.roles {
        g.add_node(&r.id, NodeType::Role, feat(&r.id, &role_text(ds, r))?)?;
    }
    let mut skill_vecs = Vec::with_capacity(ds.skills.len());
    for s in &ds.skills {
        let text = concat_text(&[&s.name, s.text.as_deref().unwrap_or("")]);
        let v = feat(&s.id, &text)?;
        skill_vecs.push(v.clone());
        g.add_node(&s.id, NodeType::Skill, v)?;
    }
    for (entities, t) in [
        (&ds.organizations, NodeType::Organization),
        (&ds.locations, NodeType::Location),
        (&ds.domains, NodeType::Domain),
    ] {
        for e in entities {
            g.add_node(&e.id, t, feat(&e.id, &e.name)?)?;
        }
    }

    for c in &ds.candidates {
        for s in &c.skill_ids {
            g.add_edge(&c.id, s, EdgeType::HasSkill, 1.0)?;
        }
        g.add_edge(&c.id, &c.location_id, EdgeType::LocatedIn, 1.0)?;
        g.add_edge(&c.id, &c.org_id, EdgeType::AffiliatedWith, 1.0)?;
        g.add_edge(&c.id, &c.domain_id, EdgeType::DomainRelated, 1.0)?;
    }
    for r in &ds.roles {
        for s in &r.required_skill_ids {
            g.add_edge(&r.id, s, EdgeType::RequiresSkill, 1.0)?;
        }
        g.add_edge(&r.id, &r.location_id, EdgeType::LocatedIn, 1.0)?;
        g.add_edge(&r.id, &r.org_id, EdgeType::AffiliatedWith, 1.0)?;
        g.add_edge(&r.id, &r.domain_id, EdgeType::DomainRelated, 1.0)?;
    }
    for i in 0..ds.skills.len() {
        for j in i + 1..ds.skills.len() {
            let sim = cosine(&skill_vecs[i], &skill_vecs[j])?;
            if sim >= threshold && sim > 0.0 {
                g.add_edge(&ds.skills[i].id, &ds.skills[j].id, EdgeType::SkillSimilarity, sim.min(1.0))?;
            }
        }
    }
    Ok(g)
}

/// Node representations at one layer, row `i` belonging to node `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub z: Array2<f64>,
}

impl LayerState {
    pub fn from_features(g: &HeteroGraph) -> Self {
        let d = g.feature_dim();
        let mut z = Array2::zeros((g.node_count(), d));
        for (i, n) in g.nodes.iter().enumerate() {
            z.row_mut(i).assign(&Array1::from(n.features.clone()));
        }
        Self { z }
    }

    pub fn get(&self, g: &HeteroGraph, id: &str) -> Result<Vec<f64>> {
        Ok(self.z.row(g.node_index(id)?).to_vec())
    }

    pub fn to_store(&self, g: &HeteroGraph) -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new();
        for (i, n) in g.nodes.iter().enumerate() {
            store.insert(n.id.clone(), EmbeddingVector::new(self.z.row(i).to_vec())?)?;
        }
        Ok(store)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnLayer {
    /// Per node type, `out × in`.
    pub transforms: Vec<Array2<f64>>,
    /// Per edge type, `2·in`: the first half scores the receiver, the second
    /// half the neighbor.
    pub attention: Vec<Array1<f64>>,
}

impl GnnLayer {
    pub fn input_dim(&self) -> usize {
        self.transforms[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.transforms[0].nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    pub layers: Vec<GnnLayer>,
    pub negative_slope: f64,
}

impl GnnParams {
    pub fn init(input_dim: usize, hidden_dim: usize, layers: usize, negative_slope: f64, seed: u64) -> Result<Self> {
        if layers == 0 || hidden_dim == 0 || input_dim == 0 {
            return Err(GesaError::InvalidArgument("layers and dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..layers)
            .map(|l| {
                let din = if l == 0 { input_dim } else { hidden_dim };
                let limit = (6.0 / (2 * din + 1) as f64).sqrt();
                GnnLayer {
                    transforms: (0..NodeType::ALL.len()).map(|_| xavier(&mut rng, hidden_dim, din)).collect(),
                    attention: (0..EdgeType::ALL.len())
                        .map(|_| Array1::from_shape_fn(2 * din, |_| rng.random_range(-limit..limit)))
                        .collect(),
                }
            })
            .collect();
        Ok(Self { layers, negative_slope })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| GnnLayer {
                    transforms: l.transforms.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
                    attention: l.attention.iter().map(|a| Array1::zeros(a.raw_dim())).collect(),
                })
                .collect(),
            negative_slope: self.negative_slope,
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.transforms.iter().map(|w| w.as_slice().unwrap()));
            out.extend(l.attention.iter().map(|a| a.as_slice().unwrap()));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.transforms.iter_mut().map(|w| w.as_slice_mut().unwrap()));
            out.extend(l.attention.iter_mut().map(|a| a.as_slice_mut().unwrap()));
        }
        out
    }

    fn check_layer(&self, layer: usize, state: &LayerState, g: &HeteroGraph) -> Result<&GnnLayer> {
        let p = self
            .layers
            .get(layer)
            .ok_or_else(|| GesaError::InvalidArgument(format!("no layer {layer}")))?;
        if state.z.nrows() != g.node_count() {
            return Err(GesaError::DimensionMismatch { expected: g.node_count(), actual: state.z.nrows() });
        }
        if state.z.ncols() != p.input_dim() {
            return Err(GesaError::DimensionMismatch { expected: p.input_dim(), actual: state.z.ncols() });
        }
        Ok(p)
    }
}

/// Raw attention logits and softmax weights for one segment.
fn segment_attention(z: &Array2<f64>, a: &Array1<f64>, v: usize, neighbors: &[usize], slope: f64) -> (Vec<f64>, Vec<f64>) {
    let d = z.ncols();
    let (a_recv, a_nb) = (a.slice(ndarray::s![..d]), a.slice(ndarray::s![d..]));
    let sv = z.row(v).dot(&a_recv);
    let raw: Vec<f64> = neighbors.iter().map(|&u| sv + z.row(u).dot(&a_nb)).collect();
    let act: Vec<f64> = raw.iter().map(|&r| leaky_relu(r, slope)).collect();
    let max = act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = act.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (raw, exps.into_iter().map(|e| e / sum).collect())
}

/// Attention weights `α_τ(v, ·)` over the τ-neighborhood of `v` at `layer`.
pub fn attention_weights(
    g: &HeteroGraph,
    params: &GnnParams,
    layer: usize,
    state: &LayerState,
    node: &str,
    edge_type: EdgeType,
) -> Result<Vec<(String, f64)>> {
    let p = params.check_layer(layer, state, g)?;
    let v = g.node_index(node)?;
    let adj = &g.adjacency()[edge_type.index()];
    let (_, start, end) = adj
        .segments
        .iter()
        .copied()
        .find(|s| s.0 == v)
        .ok_or_else(|| GesaError::Empty(format!("`{node}` has no {edge_type} neighbors")))?;
    let neighbors = &adj.neighbor[start..end];
    let (_, alpha) = segment_attention(&state.z, &p.attention[edge_type.index()], v, neighbors, params.negative_slope);
    Ok(neighbors.iter().map(|&u| g.nodes[u].id.clone()).zip(alpha).collect())
}

struct LayerCache {
    input: Array2<f64>,
    msg: Array2<f64>,
    pre: Array2<f64>,
    /// Per edge type: raw logits and weights aligned with `Adjacency::neighbor`.
    raw: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
}

/// Precomputed graph structure reused across epochs.
struct Topology {
    adjacency: Vec<Adjacency>,
    isolated: Vec<usize>,
    rows_by_type: Vec<Vec<usize>>,
}

impl Topology {
    fn new(g: &HeteroGraph) -> Self {
        let adjacency = g.adjacency();
        let mut has_nb = vec![false; g.node_count()];
        for adj in &adjacency {
            for &(v, _, _) in &adj.segments {
                has_nb[v] = true;
            }
        }
        let isolated = (0..g.node_count()).filter(|&v| !has_nb[v]).collect();
        let mut rows_by_type = vec![Vec::new(); NodeType::ALL.len()];
        for (i, n) in g.nodes.iter().enumerate() {
            rows_by_type[n.node_type.index()].push(i);
        }
        Self { adjacency, isolated, rows_by_type }
    }

    fn forward(&self, p: &GnnLayer, slope: f64, z: &Array2<f64>) -> LayerCache {
        let (n, d) = z.dim();
        let mut msg = Array2::<f64>::zeros((n, d));
        let mut raws = Vec::with_capacity(self.adjacency.len());
        let mut alphas = Vec::with_capacity(self.adjacency.len());
        for (t, adj) in self.adjacency.iter().enumerate() {
            let mut raw_t = vec![0.0; adj.neighbor.len()];
            let mut alpha_t = vec![0.0; adj.neighbor.len()];
            for &(v, start, end) in &adj.segments {
                let (raw, alpha) = segment_attention(z, &p.attention[t], v, &adj.neighbor[start..end], slope);
                let mut row = msg.row_mut(v);
                for (k, &u) in adj.neighbor[start..end].iter().enumerate() {
                    row.scaled_add(alpha[k], &z.row(u));
                }
                raw_t[start..end].copy_from_slice(&raw);
                alpha_t[start..end].copy_from_slice(&alpha);
            }
            raws.push(raw_t);
            alphas.push(alpha_t);
        }
        for &v in &self.isolated {
            msg.row_mut(v).assign(&z.row(v));
        }
        let mut pre = Array2::<f64>::zeros((n, p.output_dim()));
        for (t, rows) in self.rows_by_type.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let out = msg.select(Axis(0), rows).dot(&p.transforms[t].t());
            for (k, &r) in rows.iter().enumerate() {
                pre.row_mut(r).assign(&out.row(k));
            }
        }
        LayerCache { input: z.clone(), msg, pre, raw: raws, alpha: alphas }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dz_in`.
    fn backward(&self, p: &GnnLayer, slope: f64, cache: &LayerCache, d_out: &Array2<f64>, grad: &mut GnnLayer) -> Array2<f64> {
        let z = &cache.input;
        let d = z.ncols();
        let mut d_pre = d_out.clone();
        ndarray::Zip::from(&mut d_pre).and(&cache.pre).for_each(|g, &x| *g *= elu_grad(x));
        let mut d_msg = Array2::<f64>::zeros(cache.msg.raw_dim());
        for (t, rows) in self.rows_by_type.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let dp = d_pre.select(Axis(0), rows);
            let m = cache.msg.select(Axis(0), rows);
            grad.transforms[t] += &dp.t().dot(&m);
            let dm = dp.dot(&p.transforms[t]);
            for (k, &r) in rows.iter().enumerate() {
                d_msg.row_mut(r).assign(&dm.row(k));
            }
        }
        let mut d_z = Array2::<f64>::zeros(z.raw_dim());
        for &v in &self.isolated {
            let row = d_msg.row(v).to_owned();
            d_z.row_mut(v).scaled_add(1.0, &row);
        }
        for (t, adj) in self.adjacency.iter().enumerate() {
            let a = &p.attention[t];
            let (a_recv, a_nb) = (a.slice(ndarray::s![..d]), a.slice(ndarray::s![d..]));
            let mut da = Array1::<f64>::zeros(2 * d);
            for &(v, start, end) in &adj.segments {
                let dm = d_msg.row(v).to_owned();
                let alpha = &cache.alpha[t][start..end];
                let raw = &cache.raw[t][start..end];
                let nbs = &adj.neighbor[start..end];
                let d_alpha: Vec<f64> = nbs.iter().map(|&u| dm.dot(&z.row(u))).collect();
                let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
                for (k, &u) in nbs.iter().enumerate() {
                    d_z.row_mut(u).scaled_add(alpha[k], &dm);
                    let de = alpha[k] * (d_alpha[k] - weighted);
                    let draw = de * if raw[k] > 0.0 { 1.0 } else { slope };
                    if draw == 0.0 {
                        continue;
                    }
                    da.slice_mut(ndarray::s![..d]).scaled_add(draw, &z.row(v));
                    da.slice_mut(ndarray::s![d..]).scaled_add(draw, &z.row(u));
                    d_z.row_mut(v).scaled_add(draw, &a_recv);
                    d_z.row_mut(u).scaled_add(draw, &a_nb);
                }
            }
            grad.attention[t] += &da;
        }
        d_z
    }
}

/// One layer of message passing. Nodes with no neighbors of any type use
/// their own state as the aggregate.
pub fn message_pass(g: &HeteroGraph, params: &GnnParams, layer: usize, state: &LayerState) -> Result<LayerState> {
    let p = params.check_layer(layer, state, g)?;
    let cache = Topology::new(g).forward(p, params.negative_slope, &state.z);
    Ok(LayerState { z: cache.pre.mapv(elu) })
}

/// Runs every layer from the initial node features.
pub fn forward_all(g: &HeteroGraph, params: &GnnParams) -> Result<LayerState> {
    let mut state = LayerState::from_features(g);
    for l in 0..params.layers.len() {
        state = message_pass(g, params, l, &state)?;
    }
    Ok(state)
}

/// A labelled node pair for the link-prediction objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSample {
    pub a: usize,
    pub b: usize,
    pub positive: bool,
}

/// Mean binary cross-entropy of `sigmoid(z_a · z_b)` over a fixed sample set.
pub struct LinkObjective<'g> {
    graph: &'g HeteroGraph,
    topology: Topology,
    features: Array2<f64>,
}

impl<'g> LinkObjective<'g> {
    pub fn new(graph: &'g HeteroGraph) -> Self {
        Self { graph, topology: Topology::new(graph), features: LayerState::from_features(graph).z }
    }

    pub fn graph(&self) -> &HeteroGraph {
        self.graph
    }

    fn forward(&self, params: &GnnParams) -> (Vec<LayerCache>, Array2<f64>) {
        let mut caches = Vec::with_capacity(params.layers.len());
        let mut z = self.features.clone();
        for p in &params.layers {
            let cache = self.topology.forward(p, params.negative_slope, &z);
            z = cache.pre.mapv(elu);
            caches.push(cache);
        }
        (caches, z)
    }

    pub fn loss(&self, params: &GnnParams, samples: &[LinkSample]) -> f64 {
        let (_, z) = self.forward(params);
        pair_loss(&z, samples)
    }

    pub fn loss_and_gradient(&self, params: &GnnParams, samples: &[LinkSample]) -> (f64, GnnParams) {
        let (caches, z) = self.forward(params);
        let loss = pair_loss(&z, samples);
        let mut d_z = Array2::<f64>::zeros(z.raw_dim());
        let scale = 1.0 / samples.len() as f64;
        for s in samples {
            let score = z.row(s.a).dot(&z.row(s.b));
            let g = (sigmoid(score) - if s.positive { 1.0 } else { 0.0 }) * scale;
            let (za, zb) = (z.row(s.a).to_owned(), z.row(s.b).to_owned());
            d_z.row_mut(s.a).scaled_add(g, &zb);
            d_z.row_mut(s.b).scaled_add(g, &za);
        }
        let mut grad = params.zeros_like();
        for l in (0..params.layers.len()).rev() {
            d_z = self.topology.backward(&params.layers[l], params.negative_slope, &caches[l], &d_z, &mut grad.layers[l]);
        }
        (loss, grad)
    }
}

fn pair_loss(z: &Array2<f64>, samples: &[LinkSample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let score = z.row(s.a).dot(&z.row(s.b));
            if s.positive {
                softplus(-score)
            } else {
                softplus(score)
            }
        })
        .sum();
    total / samples.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_ratio: usize,
    pub negative_slope: f64,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            hidden_dim: 32,
            epochs: 100,
            learning_rate: 0.01,
            negative_ratio: 1,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
            seed: 0,
        }
    }
}

pub struct TrainedGnn {
    pub params: GnnParams,
    pub embeddings: LayerState,
    pub loss_history: Vec<f64>,
}

impl TrainedGnn {
    pub fn embedding_store(&self, g: &HeteroGraph) -> Result<EmbeddingStore> {
        self.embeddings.to_store(g)
    }

    /// `epoch,loss` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// Positive samples from every edge plus `ratio` uniform non-self pairs each.
fn sample_pairs<R: Rng>(g: &HeteroGraph, ratio: usize, rng: &mut R) -> Vec<LinkSample> {
    let n = g.node_count();
    let mut out: Vec<LinkSample> =
        g.edges.iter().map(|e| LinkSample { a: e.src, b: e.dst, positive: true }).collect();
    for _ in 0..g.edges.len() * ratio {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        out.push(LinkSample { a, b, positive: false });
    }
    out
}

/// Full-batch link-prediction training with Adam. Negatives are resampled
/// every epoch from a seeded stream; `loss_history[e]` is the loss before
/// the update of epoch `e`.
pub fn train_link_prediction(g: &HeteroGraph, config: &GnnConfig) -> Result<TrainedGnn> {
    if g.edges.is_empty() || g.node_count() < 2 {
        return Err(GesaError::Empty("graph has no edges to predict".into()));
    }
    let mut params = GnnParams::init(g.feature_dim(), config.hidden_dim, config.layers, config.negative_slope, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e65_6761_7469_7665);
    let objective = LinkObjective::new(g);
    let mut adam = Adam::new(config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let samples = sample_pairs(g, config.negative_ratio, &mut rng);
        let (loss, grad) = objective.loss_and_gradient(&params, &samples);
        if !loss.is_finite() {
            return Err(GesaError::Diverged { epoch });
        }
        history.push(loss);
        let grads = grad.slices();
        adam.step(&mut params.slices_mut(), &grads);
    }
    let embeddings = forward_all(g, &params)?;
    if embeddings.z.iter().any(|v| !v.is_finite()) {
        return Err(GesaError::Diverged { epoch: config.epochs });
    }
    Ok(TrainedGnn { params, embeddings, loss_history: history })
}

/// Node sequence with the weight of each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<String>,
    pub weights: Vec<f64>,
}

impl Path {
    /// Resolves a node sequence against the graph, following edges in either
    /// direction. Fails on a step that is not an edge.
    pub fn resolve(g: &HeteroGraph, ids: &[&str]) -> Result<Self> {
        if ids.len() < 2 {
            return Err(GesaError::InvalidArgument("a path needs at least two nodes".into()));
        }
        let idx = ids.iter().map(|id| g.node_index(id)).collect::<Result<Vec<_>>>()?;
        let weights = idx
            .windows(2)
            .map(|w| {
                g.step_weight(w[0], w[1]).ok_or_else(|| {
                    GesaError::InvalidArgument(format!(
                        "`{}` → `{}` is not an edge",
                        g.nodes[w[0]].id, g.nodes[w[1]].id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes: ids.iter().map(|s| s.to_string()).collect(), weights })
    }
}

/// Product of step weights.
pub fn path_strength(path: &Path) -> f64 {
    path.weights.iter().product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Maximum number of nodes in a returned path.
    pub max_length: usize,
    pub walks: usize,
    pub seed: u64,
}

/// Seeded simple random walks from `candidate`, kept when they reach `role`
/// within `max_length` nodes. Deduplicated, in order of discovery.
pub fn sample_paths(g: &HeteroGraph, candidate: &str, role: &str, config: &WalkConfig) -> Result<Vec<Path>> {
    let start = g.node_index(candidate)?;
    let target = g.node_index(role)?;
    let nbrs = g.undirected();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..config.walks {
        let mut walk = vec![start];
        let mut weights = Vec::new();
        let mut on_path: HashSet<usize> = HashSet::from([start]);
        while walk.len() < config.max_length {
            let here = *walk.last().unwrap();
            let options: Vec<&(usize, f64)> = nbrs[here].iter().filter(|(u, _)| !on_path.contains(u)).collect();
            if options.is_empty() {
                break;
            }
            let &(next, w) = options[rng.random_range(0..options.len())];
            walk.push(next);
            weights.push(w);
            on_path.insert(next);
            if next == target {
                break;
            }
        }
        if *walk.last().unwrap() == target && walk.len() >= 2 && seen.insert(walk.clone()) {
            out.push(Path { nodes: walk.iter().map(|&i| g.nodes[i].id.clone()).collect(), weights });
        }
    }
    Ok(out)
}

/// Cosine of trained embeddings rescaled from `[-1, 1]` to `[0, 1]`.
pub fn graph_similarity(embeddings: &EmbeddingStore, candidate: &str, role: &str) -> Result<f64> {
    let c = embeddings
        .get(candidate)
        .ok_or_else(|| GesaError::UnknownId { kind: "embedding", id: candidate.to_string() })?;
    let r = embeddings
        .get(role)
        .ok_or_else(|| GesaError::UnknownId { kind: "embedding", id: role.to_string() })?;
    Ok((cosine(c.values(), r.values())? + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::model::fixtures::minimal;
    use crate::model::Skill;

    fn embedder() -> HashEmbedder {
        HashEmbedder::new(16).unwrap()
    }

    #[test]
    fn candidate_with_two_skills_gets_two_has_skill_edges() {
        let mut ds = minimal();
        ds.skills.push(Skill { id: "s2".into(), name: "sql".into(), text: None });
        ds.candidates[0].skill_ids.push("s2".into());
        let g = build_graph(&ds, &embedder(), 0.99).unwrap();
        assert_eq!(g.count_edges(EdgeType::HasSkill), 2);
        g.check_schema().unwrap();
    }

    #[test]
    fn no_direct_candidate_role_edges() {
        let g = build_graph(&minimal(), &embedder(), 0.5).unwrap();
        for e in g.edges() {
            let types = (g.nodes()[e.src].node_type, g.nodes()[e.dst].node_type);
            assert_ne!(types, (NodeType::Candidate, NodeType::Role));
            assert_ne!(types, (NodeType::Role, NodeType::Candidate));
        }
    }

    #[test]
    fn skill_similarity_edge_carries_cosine() {
        let p = HashEmbedder::new(64).unwrap();
        let mut ds = minimal();
        ds.skills = vec![
            Skill { id: "s1".into(), name: "machine learning".into(), text: None },
            Skill { id: "s2".into(), name: "machine learning systems".into(), text: None },
        ];
        let expected = cosine(
            p.embed_text("machine learning").unwrap().values(),
            p.embed_text("machine learning systems").unwrap().values(),
        )
        .unwrap();
        assert!(expected >= 0.5);
        let g = build_graph(&ds, &p, 0.5).unwrap();
        let sims: Vec<_> = g.edges().iter().filter(|e| e.edge_type == EdgeType::SkillSimilarity).collect();
        assert_eq!(sims.len(), 1);
        assert_eq!(sims[0].weight, expected);
        let g = build_graph(&ds, &p, expected + 1e-9).unwrap();
        assert_eq!(g.count_edges(EdgeType::SkillSimilarity), 0);
    }

    #[test]
    fn invalid_dataset_is_rejected() {
        let mut ds = minimal();
        ds.candidates[0].org_id = "missing".into();
        assert!(matches!(build_graph(&ds, &embedder(), 0.5), Err(GesaError::InvalidDataset(1))));
    }

    #[test]
    fn schema_rejects_wrong_endpoints() {
        let mut g = HeteroGraph::new();
        g.add_node("c", NodeType::Candidate, vec![1.0]).unwrap();
        g.add_node("r", NodeType::Role, vec![1.0]).unwrap();
        g.add_node("s", NodeType::Skill, vec![1.0]).unwrap();
        assert!(g.add_edge("r", "s", EdgeType::HasSkill, 1.0).is_err());
        assert!(g.add_edge("c", "s", EdgeType::HasSkill, 0.0).is_err());
        assert!(g.add_edge("c", "s", EdgeType::HasSkill, 1.5).is_err());
        assert!(g.add_node("c", NodeType::Skill, vec![1.0]).is_err());
        assert!(g.add_node("x", NodeType::Skill, vec![1.0, 2.0]).is_err());
    }

    fn star(neighbor_features: &[Vec<f64>]) -> HeteroGraph {
        let mut g = HeteroGraph::new();
        g.add_node("c", NodeType::Candidate, vec![0.3, -0.2]).unwrap();
        for (i, f) in neighbor_features.iter().enumerate() {
            let id = format!("s{i}");
            g.add_node(&id, NodeType::Skill, f.clone()).unwrap();
            g.add_edge("c", &id, EdgeType::HasSkill, 1.0).unwrap();
        }
        g
    }

    #[test]
    fn attention_single_and_symmetric_neighbors() {
        let params = GnnParams::init(2, 2, 1, 0.2, 5).unwrap();
        let g = star(&[vec![1.0, 2.0]]);
        let state = LayerState::from_features(&g);
        let w = attention_weights(&g, &params, 0, &state, "c", EdgeType::HasSkill).unwrap();
        assert_eq!(w, vec![("s0".to_string(), 1.0)]);

        let g = star(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let state = LayerState::from_features(&g);
        let w = attention_weights(&g, &params, 0, &state, "c", EdgeType::HasSkill).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w[0].1 - 0.5).abs() < 1e-15 && (w[1].1 - 0.5).abs() < 1e-15);

        let err = attention_weights(&g, &params, 0, &state, "c", EdgeType::LocatedIn).unwrap_err();
        assert!(matches!(err, GesaError::Empty(_)));
    }

    #[test]
    fn zero_transform_gives_zero_output_and_isolated_node_falls_back() {
        let mut g = star(&[vec![1.0, 2.0]]);
        g.add_node("lonely", NodeType::Domain, vec![0.5, -1.0]).unwrap();
        let mut params = GnnParams::init(2, 3, 1, 0.2, 1).unwrap();
        let state = LayerState::from_features(&g);

        let out = message_pass(&g, &params, 0, &state).unwrap();
        let w = &params.layers[0].transforms[NodeType::Domain.index()];
        let expected = w.dot(&Array1::from(vec![0.5, -1.0])).mapv(elu);
        let got = out.get(&g, "lonely").unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }

        for w in &mut params.layers[0].transforms {
            w.fill(0.0);
        }
        let out = message_pass(&g, &params, 0, &state).unwrap();
        assert!(out.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let g = star(&[vec![1.0, 2.0]]);
        let params = GnnParams::init(3, 2, 1, 0.2, 1).unwrap();
        let state = LayerState::from_features(&g);
        assert!(matches!(message_pass(&g, &params, 0, &state), Err(GesaError::DimensionMismatch { .. })));
    }

    #[test]
    fn path_strength_examples() {
        let mut g = HeteroGraph::new();
        for (id, t) in [("c", NodeType::Candidate), ("s1", NodeType::Skill), ("s2", NodeType::Skill), ("s3", NodeType::Skill), ("r", NodeType::Role)] {
            g.add_node(id, t, vec![1.0]).unwrap();
        }
        g.add_edge("c", "s1", EdgeType::HasSkill, 0.9).unwrap();
        g.add_edge("s1", "s2", EdgeType::SkillSimilarity, 0.9).unwrap();
        g.add_edge("s2", "s3", EdgeType::SkillSimilarity, 0.9).unwrap();
        g.add_edge("r", "s3", EdgeType::RequiresSkill, 1.0).unwrap();
        let p = Path::resolve(&g, &["c", "s1", "s2", "s3"]).unwrap();
        assert!((path_strength(&p) - 0.729).abs() < 1e-12);
        let p = Path::resolve(&g, &["s3", "r"]).unwrap();
        assert_eq!(path_strength(&p), 1.0);
        assert!(Path::resolve(&g, &["c", "s2"]).is_err());
        assert_eq!(path_strength(&Path { nodes: vec![], weights: vec![0.5, 0.4] }), 0.2);
    }

    #[test]
    fn walks_from_isolated_candidate_find_nothing() {
        let mut g = HeteroGraph::new();
        g.add_node("c", NodeType::Candidate, vec![1.0]).unwrap();
        g.add_node("r", NodeType::Role, vec![1.0]).unwrap();
        let cfg = WalkConfig { max_length: 4, walks: 50, seed: 1 };
        assert!(sample_paths(&g, "c", "r", &cfg).unwrap().is_empty());
    }

    #[test]
    fn graph_similarity_rescales() {
        let mut store = EmbeddingStore::new();
        store.insert("a", EmbeddingVector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        store.insert("b", EmbeddingVector::new(vec![2.0, 0.0]).unwrap()).unwrap();
        store.insert("c", EmbeddingVector::new(vec![-1.0, 0.0]).unwrap()).unwrap();
        store.insert("d", EmbeddingVector::new(vec![0.0, 3.0]).unwrap()).unwrap();
        assert_eq!(graph_similarity(&store, "a", "b").unwrap(), 1.0);
        assert_eq!(graph_similarity(&store, "a", "c").unwrap(), 0.0);
        assert_eq!(graph_similarity(&store, "a", "d").unwrap(), 0.5);
        assert!(matches!(graph_similarity(&store, "a", "zz"), Err(GesaError::UnknownId { .. })));
    }

    #[test]
    fn training_rejects_empty_graph() {
        let mut g = HeteroGraph::new();
        g.add_node("c", NodeType::Candidate, vec![1.0]).unwrap();
        assert!(matches!(train_link_prediction(&g, &GnnConfig::default()), Err(GesaError::Empty(_))));
    }
}
