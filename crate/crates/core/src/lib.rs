pub mod align;
pub mod annotation;
pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod eval;
pub mod lexicon;
pub mod notes;
pub mod scalar;
pub mod scorer;
pub mod seed;

/// Double-precision scorer parameters, the training and checkpoint default.
pub type ScorerParamsF64 = scorer::ScorerParams<f64>;
pub type ScorerParamsF32 = scorer::ScorerParams<f32>;
/// Token and sentence vectors are stored in single precision on disk.
pub type EmbeddingTableF32 = embedding::EmbeddingTable<f32>;
pub type EmbeddingTableF64 = embedding::EmbeddingTable<f64>;
pub type AlignmentMapF64 = align::AlignmentMap<f64>;
pub type ExampleF64 = scorer::Example<f64>;
