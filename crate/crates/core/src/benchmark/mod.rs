//! CSTR benchmark: plant, excitation signal and noisy identification data.

pub mod cstr;
pub mod dataset;
pub mod excitation;

pub use cstr::{cstr_derivative, plant_step, simulate_plant, CstrParams, Formulation};
pub use dataset::{
    generate_dataset, meta_path, monte_carlo_noise_levels, read_dataset, read_dataset_csv, write_dataset, write_dataset_csv,
    DatasetMeta, GeneratedData, SimConfig,
};
pub use excitation::{count_level_changes, generate_input, ExcitationConfig};
