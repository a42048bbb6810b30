pub mod equilibrium;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod sim;
pub mod transient;
