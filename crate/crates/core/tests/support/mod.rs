#![allow(dead_code)]

pub mod cost;
pub mod dynamics_table;
pub mod equivariance;
pub mod gradients;
pub mod split_law;
