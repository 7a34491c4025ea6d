//! Eye-in-hand vision: rendering, colour segmentation, object-of-interest
//! ranking, the AR overlay and depth-based shape classification.

mod render;
mod segment;
mod shape;

use nalgebra::{Isometry3, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::CameraConfig;
use crate::scene::{Color, Shape};

pub use render::render;
pub use segment::{overlay_ar, rank_objects, segment_colors, RankedBlob, AR_GREEN, BACKGROUND_RGB};
pub use shape::{classify_shape, shape_features, DistanceModel, ShapeFeatures, MIN_RELIABLE_PIXELS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VisionError {
    #[error("blob has {0} pixels, too few for a distance estimate")]
    Unreliable(usize),
    #[error("no foreground pixels in the depth region")]
    NoForeground,
    #[error("frame buffer is {got} bytes, expected {expected}")]
    BadFrame { expected: usize, got: usize },
}

/// Pinhole camera placed at an eye-in-hand pose.
///
/// The pose's local x is the optical axis and local z is image-up, matching
/// the tool frame from forward kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: Isometry3<f64>,
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
}

impl Camera {
    pub fn new(pose: Isometry3<f64>, cfg: &CameraConfig) -> Self {
        Self { pose, width: cfg.width, height: cfg.height, focal_px: cfg.focal_px() }
    }

    /// Image centre in pixel-index coordinates, the frame blob centres use.
    pub fn optical_center(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0 - 0.5, self.height as f64 / 2.0 - 0.5)
    }

    /// Point in camera coordinates: (depth along the axis, right, up).
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        let local = self.pose.inverse_transform_point(&Point3::from(*world));
        Vector3::new(local.x, -local.y, local.z)
    }

    /// Projects a world point into pixel-index coordinates; `None` behind the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<Vector2<f64>> {
        let c = self.to_camera(world);
        if c.x <= 1e-9 {
            return None;
        }
        let center = self.optical_center();
        Some(Vector2::new(center.x + self.focal_px * c.y / c.x, center.y - self.focal_px * c.z / c.x))
    }

    /// World-space unit ray through continuous pixel coordinates `(u, v)`
    /// given in pixel-index convention.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let center = self.optical_center();
        let right = (u - center.x) / self.focal_px;
        let up = -(v - center.y) / self.focal_px;
        (self.pose.rotation * Vector3::new(1.0, -right, up)).normalize()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    /// Angle of the optical axis below the horizontal, radians.
    pub fn depression(&self) -> f64 {
        let axis = self.pose.rotation * Vector3::x();
        (-axis.z).clamp(-1.0, 1.0).asin()
    }
}

/// Colour frame plus per-pixel nearest-surface depth (infinite for background).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
}

impl ImagePair {
    pub fn blank(width: usize, height: usize) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&BACKGROUND_RGB);
        }
        Self { width, height, rgb, depth: vec![f32::INFINITY; width * height] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }
}

/// Inclusive pixel-index bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> usize {
        self.max_y - self.min_y + 1
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min_x as f64 && p.x <= self.max_x as f64 && p.y >= self.min_y as f64 && p.y <= self.max_y as f64
    }

    pub fn touches_border(&self, width: usize, height: usize) -> bool {
        self.min_x == 0 || self.min_y == 0 || self.max_x + 1 >= width || self.max_y + 1 >= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub color: Color,
    pub pixel_count: usize,
    /// Midpoint of the min/max pixel extents.
    pub center: Vector2<f64>,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectOfInterest {
    pub blob: Blob,
    pub score: f64,
    /// Camera-to-object distance estimated from the blob's pixel area.
    pub estimated_distance: f64,
}

/// One blob together with the per-frame shape guess and distance estimate
/// the controller works from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub blob: Blob,
    pub shape: Option<Shape>,
    pub estimated_distance: Option<f64>,
}

/// Everything the controller and intent sources learn from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionSummary {
    pub camera: Camera,
    pub observations: Vec<Observation>,
}

impl VisionSummary {
    pub fn from_frame(camera: Camera, frame: &ImagePair, model: &DistanceModel) -> Self {
        let depression = camera.depression();
        let observations = segment_colors(frame)
            .into_iter()
            .map(|blob| {
                let shape = classify_shape(frame, Some(blob.bbox)).ok();
                // Rows below the optical centre are seen from further above.
                let offset = ((blob.center.y - camera.optical_center().y) / camera.focal_px).atan();
                let estimated_distance = model
                    .with_elevation(depression + offset)
                    .estimate(&blob, shape.unwrap_or(Shape::Sphere))
                    .ok();
                Observation { blob, shape, estimated_distance }
            })
            .collect();
        Self { camera, observations }
    }

    pub fn blobs(&self) -> Vec<Blob> {
        self.observations.iter().map(|o| o.blob).collect()
    }

    pub fn observation(&self, color: Color) -> Option<&Observation> {
        self.observations.iter().find(|o| o.blob.color == color)
    }

    /// Pixel offset of a colour's blob centre from the optical centre.
    pub fn centering_error(&self, color: Color) -> Option<Vector2<f64>> {
        self.observation(color).map(|o| o.blob.center - self.camera.optical_center())
    }

    /// Ranks the visible blobs for an optional left/right intent and attaches
    /// the distance estimate of the winner.
    pub fn object_of_interest(&self, intent: Option<crate::riemann::MiClass>) -> Option<ObjectOfInterest> {
        let ranked = rank_objects(&self.blobs(), intent, self.camera.width, self.camera.height)?;
        let obs = self.observation(ranked.blob.color)?;
        Some(ObjectOfInterest {
            blob: ranked.blob,
            score: ranked.score,
            estimated_distance: obs.estimated_distance.unwrap_or(f64::INFINITY),
        })
    }
}

const FRAME_MAGIC: &[u8; 4] = b"MGF1";

/// Raw RGB8 frame with a 16-byte header: magic, width, height (u32 LE) and a
/// reserved channel count.
pub fn encode_raw_frame(frame: &ImagePair) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + frame.rgb.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(frame.width as u32).to_le_bytes());
    out.extend_from_slice(&(frame.height as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    out.extend_from_slice(&frame.rgb);
    out
}

/// Inverse of [`encode_raw_frame`]: `(width, height, rgb)`.
pub fn decode_raw_frame(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), VisionError> {
    if bytes.len() < 16 || &bytes[..4] != FRAME_MAGIC {
        return Err(VisionError::BadFrame { expected: 16, got: bytes.len() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let expected = 16 + w * h * 3;
    if bytes.len() != expected {
        return Err(VisionError::BadFrame { expected, got: bytes.len() });
    }
    Ok((w, h, bytes[16..].to_vec()))
}
