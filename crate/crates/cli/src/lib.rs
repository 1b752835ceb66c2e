//! HTTP surfaces and wiring for fedlake: the coordinator gateway, the data
//! node server, and an HTTP-backed [`NodeClient`](fedlake_core::NodeClient).

pub mod auth;
pub mod error;
pub mod gateway;
pub mod node_server;
pub mod remote;
