//! Recurrent sequence models with a noisy readout `z_t = h_t + sigma eps`
//! and an affine Gaussian decoder. Noise enters the readout only; the
//! recurrence carries the deterministic `h_t`.

mod cell;
mod checkpoint;
mod loss;
mod model;
mod repr;
mod train;

pub use cell::CellKind;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{
    cpc_loss, cpc_offset_infonce, cpc_offset_param, cpc_param_shapes, ensure_cpc_params, mle_loss,
    LossGraph, LossInputs, Objective, CPC_WU,
};
pub use model::{
    cell_step, decode, decoder_log_density, noisy_readout, param_shapes, readout_log_density,
    run_hidden, RnnConfig, RnnModel, State, DEC_B, DEC_W,
};
pub use repr::{
    collect_representations, generate, generate_with, run_to, sequence_log_likelihood, GenNoise,
    ReprBatch,
};
pub use train::{train, BatchSource, BhoSource, SequencePool, TrainConfig, TrainResult};
