//! Streaming convolution engine: slice buffer, PE arrays and the layer
//! runners for the multiplier and bit-layer architectures.

pub mod array;
pub mod run;
pub mod slice_buffer;
pub mod tiles;

pub use array::{wrap_to_bits, BlmacArray, MacArray, DEFAULT_ACC_BITS};
pub use run::{run_layer_blmac, run_layer_mac, CycleOverhead, EngineOptions, LayerRunResult};
pub use slice_buffer::{select_window, select_window_into, SliceBuffer, SliceData};
pub use tiles::{arrange_tiles, arrange_tiles_on, ArrayGeometry, TileArrangement};
