//! Federated analytics over autonomous data nodes.
//!
//! A coordinator holds a global schema catalog, decomposes analytical queries
//! into node-local sub-queries, merges the partial results, and trains shared
//! linear models with federated averaging. Raw patient rows never leave a node
//! for prediction workloads; only parameter vectors, counts and metrics do.

pub mod catalog;
pub mod datanode;
pub mod federation;
pub mod mlcore;
pub mod queryir;
pub mod synthcohort;
pub mod value;

pub use datanode::{DataNode, NodeDescriptor, NodeError, SubQueryResult};
pub use federation::{fedavg, AggregationMode, Coordinator, FederationConfig, FederationError, GlobalModel, NodeClient, TrainingJob};
pub use catalog::{load_catalog, CatalogStore, GlobalSchema, NodeMapping};
pub use queryir::{parse, plan, AnalyticalQuery, Pattern, QueryPlan};
pub use value::{Comparator, Predicate, Row, Value};
