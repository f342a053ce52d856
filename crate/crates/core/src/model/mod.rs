//! Negative binomial crime model with ridge-penalized fixed effects and
//! optional Moran-eigenvector spatial effects, sampled by NUTS.

mod fit;
mod nb2;
pub mod nuts;
mod posterior;
mod predict;
mod qr;
mod sample;
mod spec;

pub use fit::{data_fingerprint, fit_model, fit_model_unchecked, ModelFit};
pub use nb2::{nb2_logpmf, nb2_sample};
pub(crate) use nb2::nb2_logpmf_unchecked;
pub use posterior::{
    Layout, ModelData, ModelParams, Posterior, Terms, BSF_RHO_SECOND, BSF_RHO_SHAPE, ESF_NU_MAX, ESF_NU_RATE,
    ESF_NU_SHAPE, PHI_PRIOR_SCALE, RE_ESF_OMEGA_INV_RATE, RE_ESF_OMEGA_INV_SHAPE,
};
pub use predict::{predict, predict_in_sample, Prediction};
pub use qr::QrDecorrelation;
pub use sample::{chain_rng, sample_unchecked, PosteriorSamples};
pub use spec::{ModelSpec, Profile, RhoPriorParam, SamplerSettings, Variant};
