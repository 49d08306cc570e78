pub mod data;
pub mod error;
pub mod experiment;
pub mod init;
pub mod loss;
pub mod matcore;
pub mod network;
pub mod optim;
pub mod oracle;
pub mod sgd;
pub mod theory;
pub mod trajectory;

pub use error::{Error, Result};
pub use matcore::Matrix;
