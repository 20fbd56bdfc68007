pub mod backward;
pub mod certify;
pub mod drift;
pub mod error;
pub mod io;
pub mod lyapunov;
pub mod rng;
pub mod solver;
pub mod spectral;
