//! Reduced-order modeling of parametrized nonlinear elastodynamics.

pub mod ad;
pub mod bench;
pub mod deim;
pub mod dnn;
pub mod fom;
pub mod io;
pub mod linalg;
pub mod materials;
pub mod mesh;
pub mod newton;
pub mod online;
pub mod pod;
pub mod rom;
