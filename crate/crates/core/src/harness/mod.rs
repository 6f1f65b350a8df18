//! Synthetic scenes with oracle components, objective metrics, and the
//! staged pipeline driver.

mod metrics;
mod pipeline;
mod scene;

pub use metrics::{
    align, long_term_correlation, measure, sdr_db, snr_db, MetricsReport, ALIGN_WINDOW, DB_CAP,
};
pub use pipeline::{
    run_pipeline, PipelineConfig, PipelineInput, PipelineReport, RescoreStageConfig,
    SseStageConfig, Stage,
};
pub use scene::{
    estimate_t60, exponential_rir, pink_noise, scale_to_snr, speech_like_source, synthesize_scene,
    tonal_source, white_noise, NoiseKind, NoiseSpec, RirSpec, Scene, SceneSpec, SourceSpec,
};
