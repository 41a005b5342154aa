pub mod config;
pub mod mock;
pub mod paced;
pub mod remote;
pub mod store;
pub mod service;
pub mod cli;
