//! Numerical laboratory for dissipative Anosov flows on the unit tangent
//! bundle of a genus-2 hyperbolic surface, and for toral suspensions.

pub mod hyperbolic;
pub mod cli;
pub mod dynamics;
pub mod mesh;
pub mod orbits;
pub mod resonance;
pub mod vortex;

pub use hyperbolic::{bolza_group, enumerate_primitive_classes, FuchsianGroup, MobiusMap};
