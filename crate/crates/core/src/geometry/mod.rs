//! Camera model, backprojection, Manhattan frame estimation and surface
//! normals.

mod camera;
mod directions;
mod normals;

pub use camera::{
    backproject, point_grad_to_depth, CameraIntrinsics, DepthMap, PointMap, Pose, Vec3,
};
pub use directions::{
    estimate_dominant_directions, vanishing_point_to_direction, DirectionEstimate,
    DominantDirections, LineSegment,
};
pub use normals::{
    compute_normals, compute_normals_with_tape, NormalMap, NormalTape, DEFAULT_RADII,
};

/// Angle between two vectors in degrees, accurate near 0 and 180.
pub fn angle_between_deg(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}
