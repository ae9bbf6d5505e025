//! Comparison click models: the query-independent examination hypothesis and
//! the user browsing model.

mod eh;
mod ubm;

pub use eh::{fit_global_eh, GlobalEhModel};
pub use ubm::{
    fit_ubm, predict_ubm, ubm_click_probabilities, ubm_triple_marginals, HeldOut, UbmError,
    UbmModel, UbmOptions,
};
