//! Electromagnetic formation flight (EMFF) library.
//!
//! Satellites carrying 3-axis electromagnetic coils push and torque each
//! other through far-field dipole interactions. This crate implements the
//! pieces needed to simulate and control such a formation:
//!
//! - [`mathkit`]: fixed-size linear algebra, MRP/DCM attitude algebra and a
//!   fixed-step RK4 integrator.
//! - [`magnetics`]: the far-field dipole field/force/torque model, system
//!   wrench sums, and first-order averaging of sine/cosine (AC) dipole drives.
//! - [`dynamics`]: the truth model — relative translational dynamics on a
//!   circular reference orbit, rigid-body attitude dynamics with reaction
//!   wheels, gravity-gradient torque and the tilted geomagnetic dipole.
//! - [`kinematics`]: the angular-momentum constraint A·ζ = 0, its null-space
//!   basis S, and the reduced averaged dynamics (M̄, C̄, B̄, B̄ᵣ⁻¹).
//! - [`control`]: the kinematics control law that distributes wheel momentum
//!   while provably not changing the system's angular momentum, a
//!   conventional sliding-mode baseline and magnetorquer unloading.
//! - [`allocation`]: inversion of commanded wrenches into dipole amplitudes
//!   (power-optimal AC allocation and the torque-minimizing DC baseline).
//! - [`sim`]: scenario configs, presets, the closed-loop executive and
//!   telemetry/metrics output used by the `emff` CLI.

pub mod allocation;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod kinematics;
pub mod magnetics;
pub mod mathkit;
pub mod sim;

pub use error::{Error, Result};
