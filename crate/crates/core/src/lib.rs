pub mod error;
pub mod harness;
pub mod imex;
pub mod mesh;
pub mod model;
pub mod observables;
pub mod scenario;
pub mod ordinates;
pub mod output;
pub mod runner;
pub mod spatial;
