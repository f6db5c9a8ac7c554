//! Reduced-precision, bit-packed particle storage with AoS/SoA layout
//! operators, an SPH workload that runs over any of the resulting views, and
//! the pipeline variants that compose them.

pub mod arena;
pub mod bench;
pub mod bitpack;
pub mod clock;
pub mod fpcodec;
pub mod layout;
pub mod pipelines;
pub mod schema;
pub mod sph;
pub mod study;
pub mod validate;
