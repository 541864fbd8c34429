//! First-order optimization shared by the predictor and the tracker.

mod adam;

pub use adam::AdamW;
