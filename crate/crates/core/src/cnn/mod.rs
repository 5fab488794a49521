//! Depthwise-separable CNN regressor: layers, training and model files.

pub mod gradcheck;
mod io;
mod layers;
mod network;
mod scalar;
mod train;

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_VERSION};
pub use layers::{
    conv_out, AvgPool, BatchNorm, BatchStats, Conv2d, Dense, Depthwise, Dropout, Layer, LayerCache,
    LayerKind, Mode, Pointwise, Shape, Tensor,
};
pub use network::{
    table_one_param_count, ForwardCache, Gradients, InputNorm, LabelNorm, Network, Stage,
    BN_EPS, DEFAULT_KEEP, INPUT_SHAPE,
};
pub use scalar::Scalar;
pub use train::{
    euclidean_loss, euclidean_loss_grad, format_train_log, split_indices, train, TrainConfig,
    TrainLogRow, TrainOutcome,
};

use crate::error::Result;
use crate::featex::FeatureImage;

/// Inference model: single-precision parameters.
pub type Model = Network<f32>;

/// bpm → unit interval with the default 45/240 bpm anchors.
pub fn normalize_label(bpm: f64) -> f64 {
    LabelNorm::default().normalize(bpm)
}

pub fn denormalize_label(v: f64) -> f64 {
    LabelNorm::default().denormalize(v)
}

/// Raw network output → bpm, clamped to the label range.
pub fn output_to_bpm(model: &Model, raw: f64) -> f64 {
    let n = model.label_norm;
    n.denormalize(raw).clamp(n.hr_min, n.hr_max)
}

pub fn predict_hr(model: &Model, x: &FeatureImage) -> Result<f64> {
    let hwc = x.to_hwc();
    let raw = model.predict_raw(&[&hwc])?;
    Ok(output_to_bpm(model, raw[0]))
}

/// Batched [`predict_hr`].
pub fn predict_many(model: &Model, xs: &[FeatureImage]) -> Result<Vec<f64>> {
    let hwc: Vec<Vec<f64>> = xs.iter().map(FeatureImage::to_hwc).collect();
    let refs: Vec<&[f64]> = hwc.iter().map(Vec::as_slice).collect();
    Ok(model
        .predict_raw(&refs)?
        .into_iter()
        .map(|r| output_to_bpm(model, r))
        .collect())
}
