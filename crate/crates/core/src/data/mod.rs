//! Synthetic dataset generation and grid-file persistence.

mod gridfile;
mod synthetic;

pub use gridfile::{
    decode_grid, encode_grid, read_grid_file, split_states, stack_states, write_grid_file,
    GridFileHeader, GRID_MAGIC, GRID_VERSION,
};
pub use synthetic::{
    generate_synthetic, pde_step, solar_forcing, solar_forcing_at, DatasetManifest, Split,
    SyntheticDataset,
};
