//! Heterogeneous OPF graph data model.
//!
//! A power-grid instance is a typed graph with four node types (bus,
//! generator, load, shunt) and eight relations: two attribute-bearing
//! physical relations between buses (AC lines and transformers) and six
//! featureless device-to-bus links, stored in both directions. Node and
//! edge feature widths are fixed by the schema and checked by
//! [`validate_graph`].

use ndarray::Array2;
use thiserror::Error;

/// Number of node types. Fixed by the schema.
pub const NUM_NODE_TYPES: usize = 4;
/// Number of typed relations. Fixed by the schema.
pub const NUM_RELATIONS: usize = 8;

/// Input-feature width per node type, indexed by `NodeType as usize`.
pub const NODE_FEATURE_DIMS: [usize; NUM_NODE_TYPES] = [4, 11, 2, 2];

/// Typed node classes of the OPF graph. The ordering is part of the
/// serialization contract and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum NodeType {
    Bus = 0,
    Generator = 1,
    Load = 2,
    Shunt = 3,
}

impl NodeType {
    pub const ALL: [NodeType; NUM_NODE_TYPES] = [
        NodeType::Bus,
        NodeType::Generator,
        NodeType::Load,
        NodeType::Shunt,
    ];

    pub fn feature_dim(self) -> usize {
        NODE_FEATURE_DIMS[self as usize]
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Bus => "bus",
            NodeType::Generator => "generator",
            NodeType::Load => "load",
            NodeType::Shunt => "shunt",
        }
    }
}

impl std::fmt::Display for NodeType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The eight typed relations, in canonical (serialization) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Relation {
    /// bus --ac_line--> bus, 9 edge attributes.
    AcLine = 0,
    /// bus --transformer--> bus, 11 edge attributes.
    Transformer = 1,
    /// generator --generator_link--> bus.
    GenToBus = 2,
    /// bus --generator_link--> generator.
    BusToGen = 3,
    /// load --load_link--> bus.
    LoadToBus = 4,
    /// bus --load_link--> load.
    BusToLoad = 5,
    /// shunt --shunt_link--> bus.
    ShuntToBus = 6,
    /// bus --shunt_link--> shunt.
    BusToShunt = 7,
}

impl Relation {
    pub const ALL: [Relation; NUM_RELATIONS] = [
        Relation::AcLine,
        Relation::Transformer,
        Relation::GenToBus,
        Relation::BusToGen,
        Relation::LoadToBus,
        Relation::BusToLoad,
        Relation::ShuntToBus,
        Relation::BusToShunt,
    ];

    pub fn src(self) -> NodeType {
        match self {
            Relation::AcLine | Relation::Transformer => NodeType::Bus,
            Relation::GenToBus => NodeType::Generator,
            Relation::LoadToBus => NodeType::Load,
            Relation::ShuntToBus => NodeType::Shunt,
            Relation::BusToGen | Relation::BusToLoad | Relation::BusToShunt => NodeType::Bus,
        }
    }

    pub fn dst(self) -> NodeType {
        match self {
            Relation::AcLine | Relation::Transformer => NodeType::Bus,
            Relation::GenToBus | Relation::LoadToBus | Relation::ShuntToBus => NodeType::Bus,
            Relation::BusToGen => NodeType::Generator,
            Relation::BusToLoad => NodeType::Load,
            Relation::BusToShunt => NodeType::Shunt,
        }
    }

    /// Relation label shared by both directions of a device link.
    pub fn label(self) -> &'static str {
        match self {
            Relation::AcLine => "ac_line",
            Relation::Transformer => "transformer",
            Relation::GenToBus | Relation::BusToGen => "generator_link",
            Relation::LoadToBus | Relation::BusToLoad => "load_link",
            Relation::ShuntToBus | Relation::BusToShunt => "shunt_link",
        }
    }

    /// Edge-attribute width; 0 means the relation is featureless.
    pub fn attr_dim(self) -> usize {
        match self {
            Relation::AcLine => 9,
            Relation::Transformer => 11,
            _ => 0,
        }
    }

    pub fn has_attrs(self) -> bool {
        self.attr_dim() > 0
    }

    /// The opposite direction of a device link; physical relations have none.
    pub fn mirror(self) -> Option<Relation> {
        match self {
            Relation::GenToBus => Some(Relation::BusToGen),
            Relation::BusToGen => Some(Relation::GenToBus),
            Relation::LoadToBus => Some(Relation::BusToLoad),
            Relation::BusToLoad => Some(Relation::LoadToBus),
            Relation::ShuntToBus => Some(Relation::BusToShunt),
            Relation::BusToShunt => Some(Relation::ShuntToBus),
            Relation::AcLine | Relation::Transformer => None,
        }
    }

    /// `"src__label__dst"`, used for parameter naming and manifests.
    pub fn key(self) -> String {
        format!("{}__{}__{}", self.src().name(), self.label(), self.dst().name())
    }
}

impl std::fmt::Display for Relation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.src(), self.label(), self.dst())
    }
}

/// Edge list and optional attributes for one relation, COO with two
/// parallel u32 index arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationStore {
    pub relation: Relation,
    pub src: Vec<u32>,
    pub dst: Vec<u32>,
    /// Present iff the relation is attribute-bearing; `[num_edges x attr_dim]`.
    pub edge_attr: Option<Array2<f32>>,
}

impl RelationStore {
    pub fn empty(relation: Relation) -> Self {
        let edge_attr = if relation.has_attrs() {
            Some(Array2::zeros((0, relation.attr_dim())))
        } else {
            None
        };
        RelationStore { relation, src: Vec::new(), dst: Vec::new(), edge_attr }
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// One OPF sample: typed node features, the eight relation stores in
/// canonical order, optional graph context, and optional labels.
///
/// Immutable after construction; batching and permutation return new graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    /// Per-type `[n_type x dim]` feature matrices, indexed by `NodeType as usize`.
    pub node_features: [Array2<f32>; NUM_NODE_TYPES],
    /// All eight relations, in `Relation::ALL` order.
    pub relations: [RelationStore; NUM_RELATIONS],
    /// Graph-level context features; empty when the producer supplies none.
    pub context: Vec<f32>,
    /// Bus-level supervised target `[n_bus x 2]`: voltage angle (rad), magnitude (p.u.).
    pub bus_target: Option<Array2<f64>>,
    /// Graph-level feasibility label.
    pub graph_label: Option<bool>,
}

impl HeteroGraph {
    /// A graph with zero nodes everywhere; building block for tests and parsers.
    pub fn empty() -> Self {
        HeteroGraph {
            node_features: std::array::from_fn(|t| Array2::zeros((0, NODE_FEATURE_DIMS[t]))),
            relations: std::array::from_fn(|r| RelationStore::empty(Relation::ALL[r])),
            context: Vec::new(),
            bus_target: None,
            graph_label: None,
        }
    }

    pub fn num_nodes(&self, ty: NodeType) -> usize {
        self.node_features[ty as usize].nrows()
    }

    pub fn features(&self, ty: NodeType) -> &Array2<f32> {
        &self.node_features[ty as usize]
    }

    pub fn relation(&self, rel: Relation) -> &RelationStore {
        &self.relations[rel as usize]
    }

    pub fn num_buses(&self) -> usize {
        self.num_nodes(NodeType::Bus)
    }
}

/// A single schema or consistency violation found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Outcome of graph validation. Empty means every invariant holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, message: String) {
        self.violations.push(Violation { message });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return f.write_str("valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph {graph}: {report}")]
    InvalidGraph { graph: usize, report: ValidationReport },
    #[error("context dimension mismatch: graph {graph} has {got}, expected {expected}")]
    ContextMismatch { graph: usize, got: usize, expected: usize },
    #[error("feature width mismatch for {ty}: graph {graph} has {got}, expected {expected}")]
    DimensionMismatch { graph: usize, ty: NodeType, got: usize, expected: usize },
    #[error("invalid permutation for {ty}: {reason}")]
    InvalidPermutation { ty: NodeType, reason: String },
    #[error("cannot batch zero graphs")]
    EmptyBatch,
}

/// Checks every `HeteroGraph` invariant and reports all violations.
///
/// Report-based by design: callers decide severity.
pub fn validate_graph(g: &HeteroGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    for ty in NodeType::ALL {
        let feats = g.features(ty);
        if feats.ncols() != ty.feature_dim() {
            report.push(format!("{} dim {} != {}", ty, feats.ncols(), ty.feature_dim()));
        }
    }

    for store in &g.relations {
        let rel = store.relation;
        if store.src.len() != store.dst.len() {
            report.push(format!(
                "{} src/dst length mismatch: {} vs {}",
                rel,
                store.src.len(),
                store.dst.len()
            ));
            continue;
        }
        let n_src = g.num_nodes(rel.src());
        let n_dst = g.num_nodes(rel.dst());
        for (e, (&s, &d)) in store.src.iter().zip(&store.dst).enumerate() {
            if s as usize >= n_src {
                report.push(format!("{} edge {}: src index {} out of range (n={})", rel, e, s, n_src));
            }
            if d as usize >= n_dst {
                report.push(format!("{} edge {}: dst index {} out of range (n={})", rel, e, d, n_dst));
            }
        }
        match (&store.edge_attr, rel.has_attrs()) {
            (Some(attr), true) => {
                if attr.ncols() != rel.attr_dim() {
                    report.push(format!("{} attr dim {} != {}", rel, attr.ncols(), rel.attr_dim()));
                }
                if attr.nrows() != store.num_edges() {
                    report.push(format!(
                        "{} attr rows {} != {} edges",
                        rel,
                        attr.nrows(),
                        store.num_edges()
                    ));
                }
            }
            (Some(_), false) => report.push(format!("{} carries attributes but is featureless", rel)),
            (None, true) => report.push(format!("{} is missing its edge attributes", rel)),
            (None, false) => {}
        }
    }

    // Canonical ordering of the relation array.
    for (i, store) in g.relations.iter().enumerate() {
        if store.relation != Relation::ALL[i] {
            report.push(format!(
                "relation slot {} holds {} instead of {}",
                i,
                store.relation,
                Relation::ALL[i]
            ));
        }
    }

    // Device links must be mirror-symmetric and cover every device node.
    for (fwd, name) in [
        (Relation::GenToBus, NodeType::Generator),
        (Relation::LoadToBus, NodeType::Load),
        (Relation::ShuntToBus, NodeType::Shunt),
    ] {
        let rev = fwd.mirror().unwrap();
        let f = g.relation(fwd);
        let r = g.relation(rev);
        if f.src != r.dst || f.dst != r.src {
            report.push(format!("{} and {} are not mirrored", fwd, rev));
        }
        let mut linked = vec![false; g.num_nodes(name)];
        for &s in &f.src {
            if (s as usize) < linked.len() {
                linked[s as usize] = true;
            }
        }
        for (i, seen) in linked.iter().enumerate() {
            if !seen {
                report.push(format!("orphan {} node {}", name, i));
            }
        }
    }

    if let Some(target) = &g.bus_target {
        if target.nrows() != g.num_buses() {
            report.push(format!(
                "bus_target rows {} != {} buses",
                target.nrows(),
                g.num_buses()
            ));
        }
        if target.ncols() != 2 {
            report.push(format!("bus_target cols {} != 2", target.ncols()));
        }
    }

    report
}

/// Disjoint union of graphs plus the bookkeeping needed to undo it.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    /// The merged graph. Its `context` is empty; per-graph contexts live in
    /// [`GraphBatch::contexts`].
    pub merged: HeteroGraph,
    /// Per node type: cumulative node-count offsets, length `num_graphs + 1`.
    pub node_offsets: [Vec<u32>; NUM_NODE_TYPES],
    /// Per node type: source-graph index of each merged node.
    pub membership: [Vec<u32>; NUM_NODE_TYPES],
    /// Per-graph context rows, `[num_graphs x context_dim]`.
    pub contexts: Array2<f32>,
    /// Per-graph feasibility labels.
    pub labels: Vec<Option<bool>>,
    pub num_graphs: usize,
}

impl GraphBatch {
    pub fn context_dim(&self) -> usize {
        self.contexts.ncols()
    }

    pub fn num_nodes(&self, ty: NodeType) -> usize {
        self.merged.num_nodes(ty)
    }
}

/// Merges graphs into one disjoint union.
///
/// All graphs must pass [`validate_graph`] and share one context dimension.
pub fn batch_graphs(graphs: &[HeteroGraph]) -> Result<GraphBatch, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::EmptyBatch);
    }
    for (i, g) in graphs.iter().enumerate() {
        for ty in NodeType::ALL {
            let got = g.features(ty).ncols();
            if got != ty.feature_dim() {
                return Err(GraphError::DimensionMismatch { graph: i, ty, got, expected: ty.feature_dim() });
            }
        }
        let report = validate_graph(g);
        if !report.is_empty() {
            return Err(GraphError::InvalidGraph { graph: i, report });
        }
    }
    let ctx_dim = graphs[0].context.len();
    for (i, g) in graphs.iter().enumerate() {
        if g.context.len() != ctx_dim {
            return Err(GraphError::ContextMismatch { graph: i, got: g.context.len(), expected: ctx_dim });
        }
    }

    let mut node_offsets: [Vec<u32>; NUM_NODE_TYPES] = std::array::from_fn(|_| vec![0u32]);
    let mut membership: [Vec<u32>; NUM_NODE_TYPES] = std::array::from_fn(|_| Vec::new());
    for ty in NodeType::ALL {
        let t = ty as usize;
        let mut total = 0u32;
        for (gi, g) in graphs.iter().enumerate() {
            let n = g.num_nodes(ty) as u32;
            total += n;
            node_offsets[t].push(total);
            membership[t].extend(std::iter::repeat(gi as u32).take(n as usize));
        }
    }

    let node_features: [Array2<f32>; NUM_NODE_TYPES] = std::array::from_fn(|t| {
        let ty = NodeType::ALL[t];
        let total: usize = graphs.iter().map(|g| g.num_nodes(ty)).sum();
        let mut out = Array2::zeros((total, ty.feature_dim()));
        let mut row = 0;
        for g in graphs {
            let f = g.features(ty);
            for r in 0..f.nrows() {
                for c in 0..f.ncols() {
                    out[(row, c)] = f[(r, c)];
                }
                row += 1;
            }
        }
        out
    });

    let relations: [RelationStore; NUM_RELATIONS] = std::array::from_fn(|ri| {
        let rel = Relation::ALL[ri];
        let src_t = rel.src() as usize;
        let dst_t = rel.dst() as usize;
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut attrs: Vec<f32> = Vec::new();
        for (gi, g) in graphs.iter().enumerate() {
            let store = g.relation(rel);
            let so = node_offsets[src_t][gi];
            let doff = node_offsets[dst_t][gi];
            src.extend(store.src.iter().map(|&s| s + so));
            dst.extend(store.dst.iter().map(|&d| d + doff));
            if let Some(a) = &store.edge_attr {
                attrs.extend(a.iter().copied());
            }
        }
        let edge_attr = if rel.has_attrs() {
            Some(Array2::from_shape_vec((src.len(), rel.attr_dim()), attrs).expect("attr shape"))
        } else {
            None
        };
        RelationStore { relation: rel, src, dst, edge_attr }
    });

    let has_targets = graphs.iter().all(|g| g.bus_target.is_some());
    let bus_target = if has_targets {
        let total: usize = graphs.iter().map(HeteroGraph::num_buses).sum();
        let mut t = Array2::zeros((total, 2));
        let mut row = 0;
        for g in graphs {
            let gt = g.bus_target.as_ref().unwrap();
            for r in 0..gt.nrows() {
                t[(row, 0)] = gt[(r, 0)];
                t[(row, 1)] = gt[(r, 1)];
                row += 1;
            }
        }
        Some(t)
    } else {
        None
    };

    let mut contexts = Array2::zeros((graphs.len(), ctx_dim));
    for (gi, g) in graphs.iter().enumerate() {
        for (c, &v) in g.context.iter().enumerate() {
            contexts[(gi, c)] = v;
        }
    }
    let labels = graphs.iter().map(|g| g.graph_label).collect();

    let merged = HeteroGraph {
        node_features,
        relations,
        context: Vec::new(),
        bus_target,
        graph_label: None,
    };
    Ok(GraphBatch {
        merged,
        node_offsets,
        membership,
        contexts,
        labels,
        num_graphs: graphs.len(),
    })
}

/// Recovers the original graphs from a batch, bit-identically.
pub fn unbatch_graphs(batch: &GraphBatch) -> Vec<HeteroGraph> {
    let mut out = Vec::with_capacity(batch.num_graphs);
    for gi in 0..batch.num_graphs {
        let node_features: [Array2<f32>; NUM_NODE_TYPES] = std::array::from_fn(|t| {
            let lo = batch.node_offsets[t][gi] as usize;
            let hi = batch.node_offsets[t][gi + 1] as usize;
            batch.merged.node_features[t].slice(ndarray::s![lo..hi, ..]).to_owned()
        });
        let relations: [RelationStore; NUM_RELATIONS] = std::array::from_fn(|ri| {
            let rel = Relation::ALL[ri];
            let src_t = rel.src() as usize;
            let dst_t = rel.dst() as usize;
            let so = batch.node_offsets[src_t][gi];
            let shi = batch.node_offsets[src_t][gi + 1];
            let doff = batch.node_offsets[dst_t][gi];
            let store = batch.merged.relation(rel);
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let mut rows = Vec::new();
            for (e, &s) in store.src.iter().enumerate() {
                // Within-graph edges never cross offsets, so the src range
                // identifies graph membership.
                if s >= so && s < shi {
                    src.push(s - so);
                    dst.push(store.dst[e] - doff);
                    rows.push(e);
                }
            }
            let edge_attr = store.edge_attr.as_ref().map(|a| {
                let mut sub = Array2::zeros((rows.len(), a.ncols()));
                for (k, &e) in rows.iter().enumerate() {
                    for c in 0..a.ncols() {
                        sub[(k, c)] = a[(e, c)];
                    }
                }
                sub
            });
            RelationStore { relation: rel, src, dst, edge_attr }
        });
        let bus_target = batch.merged.bus_target.as_ref().map(|t| {
            let lo = batch.node_offsets[NodeType::Bus as usize][gi] as usize;
            let hi = batch.node_offsets[NodeType::Bus as usize][gi + 1] as usize;
            t.slice(ndarray::s![lo..hi, ..]).to_owned()
        });
        let context = if batch.contexts.ncols() == 0 {
            Vec::new()
        } else {
            batch.contexts.row(gi).to_vec()
        };
        out.push(HeteroGraph {
            node_features,
            relations,
            context,
            bus_target,
            graph_label: batch.labels[gi],
        });
    }
    out
}

/// Per-type node permutations. `perm[i]` is the new index of node `i`;
/// types absent from the map keep their ordering.
pub type PermMap = [Option<Vec<u32>>; NUM_NODE_TYPES];

fn check_permutation(ty: NodeType, perm: &[u32], n: usize) -> Result<(), GraphError> {
    if perm.len() != n {
        return Err(GraphError::InvalidPermutation {
            ty,
            reason: format!("length {} != {} nodes", perm.len(), n),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p as usize >= n || seen[p as usize] {
            return Err(GraphError::InvalidPermutation {
                ty,
                reason: format!("not a bijection (image {})", p),
            });
        }
        seen[p as usize] = true;
    }
    Ok(())
}

/// Relabels nodes consistently across features, targets, and edges.
pub fn permute_nodes(g: &HeteroGraph, perms: &PermMap) -> Result<HeteroGraph, GraphError> {
    for ty in NodeType::ALL {
        if let Some(p) = &perms[ty as usize] {
            check_permutation(ty, p, g.num_nodes(ty))?;
        }
    }

    let node_features: [Array2<f32>; NUM_NODE_TYPES] = std::array::from_fn(|t| {
        let feats = &g.node_features[t];
        match &perms[t] {
            None => feats.clone(),
            Some(p) => {
                let mut out = Array2::zeros(feats.raw_dim());
                for (old, &new) in p.iter().enumerate() {
                    for c in 0..feats.ncols() {
                        out[(new as usize, c)] = feats[(old, c)];
                    }
                }
                out
            }
        }
    });

    let relations: [RelationStore; NUM_RELATIONS] = std::array::from_fn(|ri| {
        let store = &g.relations[ri];
        let rel = store.relation;
        let map = |ty: NodeType, idx: u32| -> u32 {
            match &perms[ty as usize] {
                None => idx,
                Some(p) => p[idx as usize],
            }
        };
        RelationStore {
            relation: rel,
            src: store.src.iter().map(|&s| map(rel.src(), s)).collect(),
            dst: store.dst.iter().map(|&d| map(rel.dst(), d)).collect(),
            edge_attr: store.edge_attr.clone(),
        }
    });

    let bus_target = g.bus_target.as_ref().map(|t| match &perms[NodeType::Bus as usize] {
        None => t.clone(),
        Some(p) => {
            let mut out = Array2::zeros(t.raw_dim());
            for (old, &new) in p.iter().enumerate() {
                out[(new as usize, 0)] = t[(old, 0)];
                out[(new as usize, 1)] = t[(old, 1)];
            }
            out
        }
    });

    Ok(HeteroGraph {
        node_features,
        relations,
        context: g.context.clone(),
        bus_target,
        graph_label: g.graph_label,
    })
}

/// Inverts a permutation given as `perm[i] = new index of i`.
pub fn invert_permutation(perm: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new as usize] = old as u32;
    }
    inv
}
