//! Offline weight compression and the decoder the engine front-end runs.
//!
//! Weights of one output channel are flattened, recoded into bit layers of
//! `(ZRUN, sign)` runs, binarized and arithmetic-coded with a static
//! two-context model. See [`stream`] for the container layout.

pub mod flatten;
pub mod model;
pub mod range_coder;
pub mod rle;
pub mod stream;

pub use flatten::{flatten_index, FlattenOrder};
pub use model::{estimate_model, ProbabilityModel};
pub use rle::{rle_decode_layer, rle_encode_layer, RunSymbol};
pub use stream::{
    ac_decode, ac_encode, compress_fitted, compress_tensor, decode_all, decompress_weights, CompressedWeightStream,
    DecodedPlan, DecodedSymbol, SymbolDecoder,
};
