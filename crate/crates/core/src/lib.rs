//! Reduced-basis parameter estimation for a coupled nonlinear
//! elliptic-parabolic system on an interval.

pub mod error;
pub mod estimators;
pub mod fe;
pub mod fom;
pub mod greedy;
pub mod linalg;
pub mod optim;
pub mod problem;
pub mod rom;

pub use error::{Error, Result};
pub use problem::{InputSignal, Parameter, ParameterBox, ProblemDefinition, ScalarField, TimeGrid};
