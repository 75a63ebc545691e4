//! Tuning service: durable per-task engine state behind a small
//! line-delimited JSON protocol, plus the `otune` command line.

pub mod cli;
pub mod client;
pub mod error;
pub mod protocol;
pub mod server;
pub mod service;
pub mod store;

pub use client::Client;
pub use error::{Result, ServiceError};
pub use protocol::{handle, handle_line, Request, Response};
pub use server::{serve, ServerHandle};
pub use service::{Best, CreateTask, ObserveAck, Service, StatusReport, TaskSnapshot};
pub use store::{FaultHook, FaultPoint, TaskOptions, TaskSpec};
