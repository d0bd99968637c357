//! Artistic-typography engine: glyph outlines, differentiable soft
//! rasterization, region-constrained semantic optimization, LLM prompt
//! orchestration, pluggable render providers, candidate ranking and the
//! end-to-end design pipeline.

pub mod glyph;
pub mod llm;
pub mod pipeline;
pub mod providers;
pub mod ranker;
pub mod raster;
pub mod semtypo;
pub mod shapes;
