//! Domain types and asset I/O: Gaussians, cameras, images, masks, material dictionaries.

pub mod camera;
pub mod gaussian;
pub mod image;
pub mod mask;
pub mod material;
pub mod ply;
pub mod sh;

pub use camera::{load_cameras, AxisConvention, CameraView, Intrinsics};
pub use gaussian::{Gaussian, GaussianCloud, PropertyLabel};
pub use image::{encode_png, load_rgb_png, save_png, Image};
pub use mask::{load_mask_map, MaskMap};
pub use material::{
    load_material_dictionary, CollapseRule, MaterialDictionary, MaterialEntry, PropertyKind,
    PropertyValue,
};
pub use ply::{load_gaussian_ply, save_gaussian_ply};
