//! Raw wearable streams to labeled, normalized one-minute windows.

pub mod clean;
pub mod label;
pub mod normalize;
pub mod pipeline;
pub mod series;
pub mod smooth;
pub mod split;
pub mod window;

pub use clean::{interpolate_gaps, replace_outliers};
pub use label::{label_window, LabelMode};
pub use normalize::{apply_normalizer, fit_normalizer, NormalizerParams};
pub use pipeline::{preprocess, Partition, PreprocessConfig, PreprocessOutput};
pub use series::{Channel, SignalSeries};
pub use smooth::{savitzky_golay_smooth, SmootherSpec};
pub use split::{split_dataset, stratified_split};
pub use window::{segment_windows, WindowConfig, WindowInstance};
