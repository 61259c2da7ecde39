//! Parsed physical grid cases and heterogeneous-graph construction.
//!
//! A [`GridCase`] holds the network in engineering units (MW, MVAr, p.u.
//! impedances, degrees). [`build_hetero_graph`] lays it out as a typed
//! graph with the fixed feature contract below; power quantities are
//! normalized by `base_mva` and angles converted to radians exactly once.
//!
//! Feature layout (the wire contract):
//! - bus: `[base_kv, bus_type, vmin, vmax]`
//! - generator: `[pmin, pmax, qmin, qmax, pg, qg, vg, status, c2, c1, c0]`
//! - load: `[pd, qd]`
//! - shunt: `[gs, bs]`
//! - ac_line: `[angmin_rad, angmax_rad, b_fr, b_to, r, x, rate_a, rate_b, rate_c]`
//! - transformer: `[angmin_rad, angmax_rad, r, x, rate_a, rate_b, rate_c, tap, shift_rad, b_fr, b_to]`

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::Array2;
use thiserror::Error;

use crate::graph::{HeteroGraph, NodeType, Relation};
use crate::powerflow::BusState;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error("schema error at key '{key}': {message}")]
    Schema { key: String, message: String },
}

/// MATPOWER bus types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum BusType {
    Pq = 1,
    Pv = 2,
    Ref = 3,
}

impl BusType {
    pub fn from_code(code: i64) -> Option<BusType> {
        match code {
            1 => Some(BusType::Pq),
            2 => Some(BusType::Pv),
            3 => Some(BusType::Ref),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External bus number; need not be consecutive.
    pub id: u32,
    pub bus_type: BusType,
    pub base_kv: f64,
    /// Voltage limits, p.u.
    pub vmin: f64,
    pub vmax: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: u32,
    /// Dispatch setpoints, MW / MVAr.
    pub pg: f64,
    pub qg: f64,
    pub qmax: f64,
    pub qmin: f64,
    /// Voltage setpoint, p.u.
    pub vg: f64,
    pub mbase: f64,
    pub status: bool,
    pub pmax: f64,
    pub pmin: f64,
    /// Polynomial cost coefficients `(c2, c1, c0)`.
    pub cost: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: u32,
    /// Demand, MW / MVAr.
    pub pd: f64,
    pub qd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shunt {
    pub bus: u32,
    /// Injection at 1.0 p.u. voltage, MW / MVAr.
    pub gs: f64,
    pub bs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series impedance and total charging susceptance, p.u.
    pub r: f64,
    pub x: f64,
    pub b: f64,
    /// Thermal ratings, MVA; 0 means unlimited.
    pub rate_a: f64,
    pub rate_b: f64,
    pub rate_c: f64,
    /// Off-nominal turns ratio; 0 marks a plain AC line.
    pub tap: f64,
    /// Phase shift, degrees.
    pub shift: f64,
    pub status: bool,
    /// Angle-difference limits, degrees.
    pub angmin: f64,
    pub angmax: f64,
}

impl Branch {
    /// A branch is a transformer iff it has an off-nominal tap or a shift.
    pub fn is_transformer(&self) -> bool {
        self.tap != 0.0 || self.shift != 0.0
    }
}

/// A parsed physical network in engineering units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub shunts: Vec<Shunt>,
    pub branches: Vec<Branch>,
}

impl GridCase {
    /// Maps external bus ids to 0-based indices.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.pd).sum()
    }

    pub fn total_pmax_mw(&self) -> f64 {
        self.generators.iter().filter(|g| g.status).map(|g| g.pmax).sum()
    }

    /// Checks the GridCase invariants.
    pub fn validate(&self) -> Result<(), CaseError> {
        if self.base_mva <= 0.0 {
            return Err(CaseError::Semantic(format!("base_mva {} must be positive", self.base_mva)));
        }
        let refs = self.buses.iter().filter(|b| b.bus_type == BusType::Ref).count();
        if refs != 1 {
            return Err(CaseError::Semantic(format!("expected exactly one reference bus, found {refs}")));
        }
        let index = self.bus_index();
        if index.len() != self.buses.len() {
            return Err(CaseError::Semantic("duplicate bus ids".into()));
        }
        for b in &self.buses {
            if b.vmin > b.vmax {
                return Err(CaseError::Semantic(format!("bus {}: vmin {} > vmax {}", b.id, b.vmin, b.vmax)));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            if !index.contains_key(&g.bus) {
                return Err(CaseError::Semantic(format!("generator {i} references unknown bus {}", g.bus)));
            }
            if g.pmin > g.pmax {
                return Err(CaseError::Semantic(format!("generator {i}: pmin {} > pmax {}", g.pmin, g.pmax)));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if !index.contains_key(&l.bus) {
                return Err(CaseError::Semantic(format!("load {i} references unknown bus {}", l.bus)));
            }
        }
        for (i, s) in self.shunts.iter().enumerate() {
            if !index.contains_key(&s.bus) {
                return Err(CaseError::Semantic(format!("shunt {i} references unknown bus {}", s.bus)));
            }
        }
        for (i, br) in self.branches.iter().enumerate() {
            if !index.contains_key(&br.from) || !index.contains_key(&br.to) {
                return Err(CaseError::Semantic(format!(
                    "branch {i} references unknown bus ({} -> {})",
                    br.from, br.to
                )));
            }
        }
        Ok(())
    }
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg * PI / 180.0
}

/// Builds the typed graph for a case, normalizing powers by `base_mva`.
///
/// Out-of-service branches are dropped; out-of-service generators stay as
/// nodes with `status = 0`. When `solution` is given it becomes the
/// `[n_bus x 2]` bus target (angle rad, magnitude p.u.).
pub fn build_hetero_graph(
    case: &GridCase,
    solution: Option<&BusState>,
) -> Result<HeteroGraph, CaseError> {
    case.validate()?;
    let index = case.bus_index();
    let sb = case.base_mva;
    let mut g = HeteroGraph::empty();

    let mut bus = Array2::zeros((case.buses.len(), 4));
    for (i, b) in case.buses.iter().enumerate() {
        bus[(i, 0)] = b.base_kv as f32;
        bus[(i, 1)] = b.bus_type as u8 as f32;
        bus[(i, 2)] = b.vmin as f32;
        bus[(i, 3)] = b.vmax as f32;
    }
    g.node_features[NodeType::Bus as usize] = bus;

    let mut gen = Array2::zeros((case.generators.len(), 11));
    for (i, gn) in case.generators.iter().enumerate() {
        gen[(i, 0)] = (gn.pmin / sb) as f32;
        gen[(i, 1)] = (gn.pmax / sb) as f32;
        gen[(i, 2)] = (gn.qmin / sb) as f32;
        gen[(i, 3)] = (gn.qmax / sb) as f32;
        gen[(i, 4)] = (gn.pg / sb) as f32;
        gen[(i, 5)] = (gn.qg / sb) as f32;
        gen[(i, 6)] = gn.vg as f32;
        gen[(i, 7)] = if gn.status { 1.0 } else { 0.0 };
        gen[(i, 8)] = gn.cost[0] as f32;
        gen[(i, 9)] = gn.cost[1] as f32;
        gen[(i, 10)] = gn.cost[2] as f32;
    }
    g.node_features[NodeType::Generator as usize] = gen;

    let mut load = Array2::zeros((case.loads.len(), 2));
    for (i, l) in case.loads.iter().enumerate() {
        load[(i, 0)] = (l.pd / sb) as f32;
        load[(i, 1)] = (l.qd / sb) as f32;
    }
    g.node_features[NodeType::Load as usize] = load;

    let mut shunt = Array2::zeros((case.shunts.len(), 2));
    for (i, s) in case.shunts.iter().enumerate() {
        shunt[(i, 0)] = (s.gs / sb) as f32;
        shunt[(i, 1)] = (s.bs / sb) as f32;
    }
    g.node_features[NodeType::Shunt as usize] = shunt;

    let mut lines: Vec<(u32, u32, Vec<f32>)> = Vec::new();
    let mut xfmrs: Vec<(u32, u32, Vec<f32>)> = Vec::new();
    for br in &case.branches {
        if !br.status {
            continue;
        }
        let f = index[&br.from] as u32;
        let t = index[&br.to] as u32;
        let angmin = deg_to_rad(br.angmin) as f32;
        let angmax = deg_to_rad(br.angmax) as f32;
        // Charging susceptance split equally across the two ends.
        let b_fr = (br.b / 2.0) as f32;
        let b_to = (br.b / 2.0) as f32;
        let rates = [(br.rate_a / sb) as f32, (br.rate_b / sb) as f32, (br.rate_c / sb) as f32];
        if br.is_transformer() {
            let tap = if br.tap == 0.0 { 1.0 } else { br.tap } as f32;
            xfmrs.push((
                f,
                t,
                vec![
                    angmin,
                    angmax,
                    br.r as f32,
                    br.x as f32,
                    rates[0],
                    rates[1],
                    rates[2],
                    tap,
                    deg_to_rad(br.shift) as f32,
                    b_fr,
                    b_to,
                ],
            ));
        } else {
            lines.push((
                f,
                t,
                vec![angmin, angmax, b_fr, b_to, br.r as f32, br.x as f32, rates[0], rates[1], rates[2]],
            ));
        }
    }
    fill_physical(&mut g, Relation::AcLine, &lines);
    fill_physical(&mut g, Relation::Transformer, &xfmrs);

    fill_links(
        &mut g,
        Relation::GenToBus,
        case.generators.iter().map(|gn| index[&gn.bus] as u32),
    );
    fill_links(&mut g, Relation::LoadToBus, case.loads.iter().map(|l| index[&l.bus] as u32));
    fill_links(&mut g, Relation::ShuntToBus, case.shunts.iter().map(|s| index[&s.bus] as u32));

    if let Some(state) = solution {
        if state.va.len() != case.buses.len() {
            return Err(CaseError::Semantic(format!(
                "solution has {} buses, case has {}",
                state.va.len(),
                case.buses.len()
            )));
        }
        let mut target = Array2::zeros((case.buses.len(), 2));
        for i in 0..case.buses.len() {
            target[(i, 0)] = state.va[i];
            target[(i, 1)] = state.vm[i];
        }
        g.bus_target = Some(target);
    }

    Ok(g)
}

fn fill_physical(g: &mut HeteroGraph, rel: Relation, edges: &[(u32, u32, Vec<f32>)]) {
    let store = &mut g.relations[rel as usize];
    let dim = rel.attr_dim();
    let mut attr = Array2::zeros((edges.len(), dim));
    for (e, (f, t, a)) in edges.iter().enumerate() {
        store.src.push(*f);
        store.dst.push(*t);
        debug_assert_eq!(a.len(), dim);
        for (c, &v) in a.iter().enumerate() {
            attr[(e, c)] = v;
        }
    }
    store.edge_attr = Some(attr);
}

/// Emits a device link in both directions: device -> bus and bus -> device.
fn fill_links(g: &mut HeteroGraph, fwd: Relation, device_buses: impl Iterator<Item = u32>) {
    let rev = fwd.mirror().expect("link relation");
    let pairs: Vec<(u32, u32)> = device_buses.enumerate().map(|(d, b)| (d as u32, b)).collect();
    {
        let store = &mut g.relations[fwd as usize];
        for &(d, b) in &pairs {
            store.src.push(d);
            store.dst.push(b);
        }
    }
    let store = &mut g.relations[rev as usize];
    for &(d, b) in &pairs {
        store.src.push(b);
        store.dst.push(d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_graph;
    use crate::matpower::parse_matpower_case;

    #[test]
    fn case14_graph_has_table_dimensions() {
        let case = parse_matpower_case(crate::cases::CASE14).unwrap();
        let g = build_hetero_graph(&case, None).unwrap();
        assert_eq!(g.features(NodeType::Bus).shape(), &[14, 4]);
        assert_eq!(g.features(NodeType::Generator).shape(), &[5, 11]);
        assert_eq!(g.features(NodeType::Load).shape(), &[11, 2]);
        assert_eq!(g.features(NodeType::Shunt).shape(), &[1, 2]);
        assert_eq!(g.relation(Relation::AcLine).edge_attr.as_ref().unwrap().ncols(), 9);
        assert_eq!(g.relation(Relation::Transformer).edge_attr.as_ref().unwrap().ncols(), 11);
        assert_eq!(g.relation(Relation::AcLine).num_edges(), 17);
        assert_eq!(g.relation(Relation::Transformer).num_edges(), 3);
        assert!(validate_graph(&g).is_empty());
    }

    #[test]
    fn zero_shunt_case_builds_empty_type() {
        let mut case = parse_matpower_case(crate::cases::CASE14).unwrap();
        case.shunts.clear();
        let g = build_hetero_graph(&case, None).unwrap();
        assert_eq!(g.features(NodeType::Shunt).shape(), &[0, 2]);
        assert_eq!(g.relation(Relation::ShuntToBus).num_edges(), 0);
        assert!(validate_graph(&g).is_empty());
    }

    #[test]
    fn generator_features_match_normalized_record() {
        let case = parse_matpower_case(crate::cases::CASE14).unwrap();
        let g = build_hetero_graph(&case, None).unwrap();
        let gn = &case.generators[0];
        let sb = case.base_mva;
        let row = g.features(NodeType::Generator).row(0).to_vec();
        let expect = [
            gn.pmin / sb,
            gn.pmax / sb,
            gn.qmin / sb,
            gn.qmax / sb,
            gn.pg / sb,
            gn.qg / sb,
            gn.vg,
            1.0,
            gn.cost[0],
            gn.cost[1],
            gn.cost[2],
        ];
        for (got, want) in row.iter().zip(expect) {
            assert_eq!(*got, want as f32);
        }
    }

    #[test]
    fn line_charging_split_and_radians() {
        let case = parse_matpower_case(crate::cases::CASE14).unwrap();
        let g = build_hetero_graph(&case, None).unwrap();
        let attr = g.relation(Relation::AcLine).edge_attr.as_ref().unwrap();
        // First in-service ac line in case order is 1-2 with b = 0.0528.
        assert!((attr[(0, 2)] - 0.0264).abs() < 1e-7);
        assert!((attr[(0, 3)] - 0.0264).abs() < 1e-7);
        assert!((attr[(0, 0)] - (-2.0 * std::f32::consts::PI)).abs() < 1e-5);
        assert!((attr[(0, 1)] - 2.0 * std::f32::consts::PI).abs() < 1e-5);
        // pd stored per-unit.
        let load0 = g.features(NodeType::Load).row(0)[0];
        assert_eq!(load0, (case.loads[0].pd / case.base_mva) as f32);
    }

    #[test]
    fn out_of_service_branch_is_dropped() {
        let mut case = parse_matpower_case(crate::cases::CASE14).unwrap();
        case.branches[0].status = false;
        let g = build_hetero_graph(&case, None).unwrap();
        assert_eq!(g.relation(Relation::AcLine).num_edges(), 16);
    }

    #[test]
    fn missing_reference_bus_is_rejected() {
        let mut case = parse_matpower_case(crate::cases::CASE14).unwrap();
        case.buses[0].bus_type = BusType::Pq;
        assert!(matches!(build_hetero_graph(&case, None), Err(CaseError::Semantic(_))));
    }
}
