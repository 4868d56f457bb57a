//! Benchmark environments.

mod call_admission;
mod finite;
mod puck;

pub use call_admission::{
    AdmissionState, CallAdmissionConfig, CallAdmissionEnv, CallClass, CountingConvention, Event,
    HoldingParameter,
};
pub use finite::{three_state_model, FiniteChainEnv};
pub use puck::{
    mountain_height, mountain_reward, PuckConfig, PuckEnv, PuckState, PuckVariant, PUCK_CONTROLS,
};
