pub mod basis;
pub mod cli;
pub mod data;
pub mod error;
pub mod gof;
pub mod krr;
pub mod linalg;
pub mod nuisance;
pub mod optim;
pub mod qcqp;
pub mod inference;
pub mod mi;
pub mod sim;
