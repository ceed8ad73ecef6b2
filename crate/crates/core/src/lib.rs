pub mod adjoint;
pub mod bundled;
pub mod dsl;
pub mod field_file;
pub mod forward;
pub mod gradient;
pub mod grid;
pub mod linalg;
pub mod network;
pub mod optimizer;
pub mod problem;
pub mod synth;
