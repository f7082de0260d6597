//! Small-signal analysis: the linear voltage system with its sufficient
//! stability conditions, and eigenvalue traces of the full closed loop.

pub mod eigen;
pub mod jacobian;
pub mod linear;
pub mod pencil;
pub mod random;
pub mod trace;

pub use eigen::C64;
pub use jacobian::{jacobian_full, Linearization};
pub use linear::{
    build_linear_voltage_system, check_stability_conditions, LinearVoltageSystem, StabilityReport,
};
pub use pencil::pencil_roots;
pub use random::{sufficiency_check, SufficiencyReport};
pub use trace::{eigen_trace, EigenTrace, Gain};
