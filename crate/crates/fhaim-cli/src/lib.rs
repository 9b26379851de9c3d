//! Library surface of the FHAIM command-line tool: dataset surrogates and
//! the end-to-end run pipeline.

pub mod datagen;
pub mod pipeline;
