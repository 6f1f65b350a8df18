//! Recurrent sequence networks: LSTM with diagonal peepholes, bidirectional
//! LSTM, feed-forward layers, and full back-propagation through time.
//!
//! Sequences are stored column-wise: a `dim × T` matrix holds one frame per
//! column.

mod checkpoint;
mod lstm;
mod network;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use lstm::{blstm_forward, lstm_forward, Gate, LstmParams, LstmState};
pub use network::{
    softmax_columns, Activation, Example, Layer, LayerSpec, SeqInput, SeqTarget, SequenceNetwork,
    Topology,
};
pub use train::{train, TrainConfig, TrainReport};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
