//! Document-image translation pipeline: synthetic training data, U-Net text
//! detection, region extraction, an OCR adapter, a from-scratch
//! encoder–decoder Transformer, and machine-translation metrics.

pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod history;
pub mod lang;
pub mod metrics;
pub mod nmtdata;
pub mod ocr;
pub mod pipeline;
pub mod regions;
pub mod synthgen;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
pub use lang::Language;
