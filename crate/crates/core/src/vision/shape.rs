//! Distance-from-area estimation and the depth-profile shape classifier.

use super::{BBox, Blob, ImagePair, VisionError};
use crate::config::{CameraConfig, ObjectConfig};
use crate::scene::Shape;

/// Blobs smaller than this are too far away for a usable area estimate.
pub const MIN_RELIABLE_PIXELS: usize = 10;

/// Nominal downward viewing angle of the area model when the camera pitch is
/// not supplied.
const NOMINAL_ELEVATION: f64 = 0.6;

/// Projected-area model inverted to get range from a blob's pixel count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceModel {
    pub focal_px: f64,
    pub size: f64,
    pub cylinder_aspect: f64,
    /// Angle below horizontal the object is viewed from, radians.
    pub elevation: f64,
}

impl DistanceModel {
    pub fn new(camera: &CameraConfig, objects: &ObjectConfig) -> Self {
        Self {
            focal_px: camera.focal_px(),
            size: objects.size,
            cylinder_aspect: objects.cylinder_aspect,
            elevation: NOMINAL_ELEVATION,
        }
    }

    pub fn with_elevation(self, elevation: f64) -> Self {
        Self { elevation, ..self }
    }

    /// Silhouette area in square metres under orthographic projection.
    pub fn projected_area(&self, shape: Shape) -> f64 {
        let s = self.size;
        let (sin_e, cos_e) = self.elevation.abs().min(std::f64::consts::FRAC_PI_2).sin_cos();
        match shape {
            Shape::Sphere => std::f64::consts::PI * s * s / 4.0,
            Shape::Cube => s * s * (cos_e + sin_e),
            Shape::Cylinder => {
                let h = s * self.cylinder_aspect;
                s * h * cos_e + std::f64::consts::PI * s * s / 4.0 * sin_e
            }
        }
    }

    /// Camera-to-object distance, strictly decreasing in pixel count.
    pub fn estimate(&self, blob: &Blob, shape: Shape) -> Result<f64, VisionError> {
        if blob.pixel_count < MIN_RELIABLE_PIXELS {
            return Err(VisionError::Unreliable(blob.pixel_count));
        }
        Ok(self.focal_px * (self.projected_area(shape) / blob.pixel_count as f64).sqrt())
    }
}

/// Depth-profile statistics the classifier decides from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFeatures {
    /// Silhouette height over width.
    pub aspect: f64,
    /// Share of interior pixels whose inverse depth bends in either image
    /// direction; planar faces only bend along their creases.
    pub curved_fraction: f64,
    pub pixels: usize,
}

/// Cubes bend only along creases, well under this share of their pixels.
const CURVED_SHARE: f64 = 0.27;
/// Spheres project to near-circles; standing cylinders are at least a third
/// taller than wide from any viewpoint above the horizon and below ~75°.
const TALL: f64 = 1.17;

/// Classifies the object in `region` (the whole frame when `None`) from its
/// depth image alone.
pub fn classify_shape(frame: &ImagePair, region: Option<BBox>) -> Result<Shape, VisionError> {
    let f = shape_features(frame, region)?;
    Ok(if f.curved_fraction < CURVED_SHARE {
        Shape::Cube
    } else if f.aspect < TALL {
        Shape::Sphere
    } else {
        Shape::Cylinder
    })
}

pub fn shape_features(frame: &ImagePair, region: Option<BBox>) -> Result<ShapeFeatures, VisionError> {
    let region = region.unwrap_or(BBox { min_x: 0, min_y: 0, max_x: frame.width - 1, max_y: frame.height - 1 });
    let inside = |x: usize, y: usize| frame.depth_at(x, y).is_finite();

    let mut tight: Option<BBox> = None;
    let mut pixels = 0;
    for y in region.min_y..=region.max_y.min(frame.height - 1) {
        for x in region.min_x..=region.max_x.min(frame.width - 1) {
            if !inside(x, y) {
                continue;
            }
            pixels += 1;
            let b = tight.get_or_insert(BBox { min_x: x, min_y: y, max_x: x, max_y: y });
            b.min_x = b.min_x.min(x);
            b.max_x = b.max_x.max(x);
            b.min_y = b.min_y.min(y);
            b.max_y = b.max_y.max(y);
        }
    }
    let b = tight.ok_or(VisionError::NoForeground)?;
    let aspect = b.height() as f64 / b.width() as f64;
    let curved_fraction = curved_fraction(frame, &b);
    Ok(ShapeFeatures { aspect, curved_fraction, pixels })
}

/// Relative second difference of inverse depth above which a pixel counts
/// as lying on a curved surface.
const BEND: f64 = 2e-4;

fn curved_fraction(frame: &ImagePair, b: &BBox) -> f64 {
    let w = |x: usize, y: usize| 1.0 / frame.depth_at(x, y) as f64;
    let fg = |x: usize, y: usize| frame.depth_at(x, y).is_finite();
    let (mut interior, mut curved) = (0usize, 0usize);
    for y in b.min_y.max(1)..b.max_y.min(frame.height - 2) + 1 {
        for x in b.min_x.max(1)..b.max_x.min(frame.width - 2) + 1 {
            if !(fg(x, y) && fg(x - 1, y) && fg(x + 1, y) && fg(x, y - 1) && fg(x, y + 1)) {
                continue;
            }
            interior += 1;
            let c = w(x, y);
            let bend = (w(x - 1, y) + w(x + 1, y) - 2.0 * c).abs() + (w(x, y - 1) + w(x, y + 1) - 2.0 * c).abs();
            if bend / c > BEND {
                curved += 1;
            }
        }
    }
    if interior == 0 {
        0.0
    } else {
        curved as f64 / interior as f64
    }
}
