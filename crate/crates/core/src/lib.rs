//! Binary latent factor models with Indian buffet and tree-structured
//! (phylogenetic) Indian buffet priors.
//!
//! ```
//! use pibp_core::experiments::make_sim1_truth;
//! use pibp_core::model::{generate_data, similarity_error, NoiseParams};
//! use pibp_core::sampler::{run_chain, select_map_sample, SamplerConfig};
//! use pibp_core::tree::group_tree;
//!
//! let (z0, labels) = make_sim1_truth(16)?;
//! let x = generate_data(&z0, NoiseParams::new(1.0, 0.5)?, 10, 7)?;
//! let tree = group_tree(&labels, 0.8)?;
//! let config = SamplerConfig { iterations: 50, burn_in: 10, seed: 1, ..Default::default() };
//! let run = run_chain(&x, &tree, &config)?;
//! let map = select_map_sample(&run.samples)?;
//! assert!(similarity_error(&map.z, &z0)? >= 0.0);
//! # Ok::<(), pibp_core::Error>(())
//! ```

pub mod cluster;
pub mod error;
pub mod experiments;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod newick;
pub mod prior;
pub mod sampler;
pub mod tree;

pub use error::{Error, Result};
