//! Training, evaluation, ablation and report/map output.

mod config;
mod fit;
mod metrics;
mod render;

pub use config::{context_scale, DataSource, RunConfig};
pub use fit::{
    ablate, ablation_report, ablation_table, evaluate, load_model, predict, run_sessions,
    save_model, train, Prepared, Scene, Trained,
};
pub use metrics::{confusion_csv, parse_report, report_text, EvalReport, SessionsReport};
pub use render::{class_color, color_class, decode_ppm, encode_ppm, write_ppm, PALETTE};
