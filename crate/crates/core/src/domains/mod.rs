//! Simulated environments with exact policy-value oracles, and the
//! Warfarin-style dosing setup.

mod synthetic;
mod warfarin;

pub use synthetic::{
    make_abs_error, make_multimodal, make_quadratic, make_quadratic_with_noise, true_value_mc,
    DomainKind, MonteCarloValue, SyntheticDomain, QUADRATIC_FORM,
};
pub use warfarin::{
    warfarin_make_logged, warfarin_reward, warfarin_synthetic, WarfarinData, WarfarinTable,
    WARFARIN_FEATURES,
};
