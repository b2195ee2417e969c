//! Spatial indices: a point KD-tree and a triangle BVH.

mod bvh;
mod kdtree;

pub use bvh::{closest_point_on_triangle, TriangleBvh};
pub use kdtree::KdTree;
