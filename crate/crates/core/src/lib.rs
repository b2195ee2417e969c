//! Patch-wise mesh processing: segmentation into ordered patches, per-patch
//! quantization and tokenization, boundary-condition construction, gluing of
//! generated patches back into one mesh, and the geometric metric suite used
//! to score the result.
//!
//! Data-parallel inner loops (nearest-neighbour sweeps, surface sampling,
//! Voronoi assignment, boundary ranking) run on rayon when the `parallel`
//! feature is enabled (the default) and fall back to plain iterators
//! otherwise. Both paths produce bit-identical results; see [`par`].

pub mod assembly;
pub mod boundary;
pub mod error;
pub mod geom;
pub mod mesh;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod quantizer;
pub mod segmentation;
pub mod spatial;
pub mod tokenfile;

pub use error::{Error, Result};
pub use mesh::{Mesh, SurfaceSamples};
pub use quantizer::{PatchFrame, QuantizedPatch, TokenSequence, Vocab};
pub use segmentation::{Patch, Segmentation};
