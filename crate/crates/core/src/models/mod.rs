//! Benchmark plants, noise generators and scripted events.

mod events;
mod holt;
mod noise;
mod power;
mod vehicle;

pub use events::ScenarioEvent;
pub use holt::{holt_transition, HoltParams, HoltState};
pub use noise::{sample_noise, GaussianComponent, NoiseModel};
pub use power::{
    pad_selection, power_jacobian, power_measurement, Branch, PowerGrid, PowerMeasurement, Quantity,
};
pub use vehicle::{
    vehicle_measurement_matrix, vehicle_transition_matrix, VehicleModel, VEHICLE_DT,
};
