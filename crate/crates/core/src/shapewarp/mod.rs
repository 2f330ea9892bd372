//! Landmark shapes, the linear shape model, and the piecewise-affine warp
//! from a source image into the fixed reference frame.

mod jacobian;
mod model;
mod shape;
mod triangulation;
mod warp;

pub use jacobian::{linearize, steepest_descent_images, Linearization};
pub use model::{
    build_shape_model, build_shape_model_with_fill, modes_for_variance, shape_from_params,
    ShapeModel, ShapeModelFile, DEFAULT_FRAME_FILL, ROTATION, SCALE, SIMILARITY_PARAMS,
    TRANSLATE_X, TRANSLATE_Y,
};
pub use shape::{Frame, Shape, WarpParams};
pub use triangulation::{delaunay, Anchor, Triangulation};
pub use warp::{
    image_gradients, normalize_min_max, sample, warp_field, warp_texture, PiecewiseAffine, Sample,
    Texture, WarpField, Warped,
};
