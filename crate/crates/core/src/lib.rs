//! Desk-scale toolkit for training heterogeneous GNN surrogates of AC
//! optimal power flow: typed graph data model, MATPOWER/JSON ingestion,
//! a Newton-Raphson power-flow oracle for label synthesis, a sharded
//! dataset store, a reverse-mode autodiff training core with six
//! heterogeneous architectures, fine-tuning regimes, and fault-tolerant
//! hyperparameter optimization.

pub mod cases;
pub mod fdcheck;
pub mod graph;
pub mod tape;

pub use graph::{GraphBatch, HeteroGraph, NodeType, Relation, RelationStore};
pub use tape::{Mat, Tape, TensorId};
