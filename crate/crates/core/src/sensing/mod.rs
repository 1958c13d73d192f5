//! Synthetic wrist depth cameras, point-cloud fusion, voxelization and the
//! random-shift augmentations applied to image and grid observations.

mod depth;
mod voxel;

pub use depth::{
    fuse_point_clouds, random_shift_2d, render_depth, sample_shift_2d, shift_2d, Camera,
    CameraRig, DepthImage, RayScene, IMAGE_SIZE, MAX_DEPTH, SHIFT_PAD_2D,
};
pub use voxel::{
    random_shift_3d, sample_shift_3d, voxelize, GridSpec, VoxelGrid, GRID_DIMS, SHIFT_PAD_3D,
    VOXEL_SIZE,
};
