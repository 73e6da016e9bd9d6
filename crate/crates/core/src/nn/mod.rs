//! Parameterised layers on top of the tape.

pub mod layers;
pub mod lstm;
pub mod params;

pub use layers::{dropout, Conv2d, ConvBlock, ForwardMode, Linear};
pub use lstm::{LstmCell, LstmState, GATES};
pub use params::{Bound, Init, Param, ParamId, ParamStore};
