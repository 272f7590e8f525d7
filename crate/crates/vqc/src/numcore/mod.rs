pub mod matrix;
pub mod mlp;

pub use matrix::{mse, sq_dist, Matrix};
pub use mlp::{AdamwConfig, LinearLayer, Mlp};
