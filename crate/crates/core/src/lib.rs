pub mod corpus;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod numerics;
pub mod training;
pub mod typed_decoders;
