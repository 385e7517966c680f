//! Numerical building blocks: ODE integration, quadrature, roots, interpolation.

pub mod interp;
pub mod ode;
pub mod quad;
pub mod roots;
pub mod stiff;
