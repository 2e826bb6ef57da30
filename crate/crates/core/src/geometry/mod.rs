//! Mesh, transform and spatial-query primitives.

pub mod aabb;
pub mod bvh;
pub mod isosurface;
pub mod kabsch;
pub mod kdtree;
pub mod mesh;
pub mod obj;
pub mod primitives;
pub mod shapes;
pub mod transform;
pub mod volume;

pub use aabb::Aabb;
pub use bvh::{ray_first_hit, segment_mesh_min_distance, ClosestPoint, RayHit, TriangleBvh};
pub use isosurface::{marching_cubes, IsoParams};
pub use kabsch::{kabsch_align, RigidAlignment};
pub use kdtree::KdTree;
pub use mesh::{centroid, SurfaceSample, TopologyReport, TriMesh};
pub use obj::{parse_obj, read_obj, to_obj_string, write_obj};
pub use transform::{axis_angle, rotation_angle_between, AffineTransform};
pub use volume::{read_volume, write_volume, VolumeHeader, VoxelLabelGrid, VoxelType};
