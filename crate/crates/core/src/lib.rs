//! Sparse Hierarchical Tucker factorization for sparse, high-order tensors.
//!
//! The factorization samples actual row and column fibers of every
//! matricization along a binary dimension tree (leverage-score CUR with a
//! nesting restriction between parent and child), copies sampled fibers
//! verbatim into sparse leaf factors, and assembles small dense transfer
//! tensors directly from the input entries. No dense intermediate is ever
//! formed.
//!
//! ```no_run
//! use sparse_htucker::{factorize, DimensionTree, FactorizeOptions, Sampling, SparseTensor};
//!
//! let tensor = SparseTensor::load("counts.tns".as_ref())?;
//! let tree = DimensionTree::balanced(tensor.order())?;
//! let opts = FactorizeOptions::new(Sampling::leverage(0.6)?, 42);
//! let (_plan, model) = factorize(&tensor, &tree, &opts)?;
//! println!("{}", model.query_element(&vec![1; tensor.order()])?);
//! # Ok::<(), sparse_htucker::Error>(())
//! ```

pub mod cur;
pub mod error;
pub mod eval;
pub mod factorize;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod tensor;
pub mod tree;

pub use cur::{NodeSampling, Sampling};
pub use error::{Error, Result};
pub use factorize::{assemble, factorize, parameterize, FactorizationPlan, FactorizeOptions};
pub use model::HTuckerModel;
pub use tensor::{ModeSubset, SparseTensor};
pub use tree::{DimensionTree, Linkage};
