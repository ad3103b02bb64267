//! Metrics, evaluation reports and the embedding hyperparameter grid.

pub mod grid;
pub mod metrics;
pub mod report;

pub use grid::{
    embedding_columns, embedding_design_matrix, run_grid, select_best, CvSettings, GridEntry,
    GridPoint, GridResult,
};
pub use metrics::{mae, predictive_ratios, r_squared, PrCell};
pub use report::{
    evaluate, render_fit_table, render_pr_table, render_text, EvalSet, EvaluationReport, PrEntry,
    REPORT_SCHEMA,
};
