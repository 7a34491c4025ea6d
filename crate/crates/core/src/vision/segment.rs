//! Colour thresholding, object-of-interest ranking and the AR box.

use std::cmp::Ordering;

use nalgebra::Vector2;

use super::{BBox, Blob, ImagePair};
use crate::riemann::MiClass;
use crate::scene::Color;

pub const BACKGROUND_RGB: [u8; 3] = [128, 128, 128];
pub const AR_GREEN: [u8; 3] = [0, 255, 0];

/// Per-channel tolerance around each saturated primary (20% of full scale).
const BAND: i16 = 51;

const PROXIMITY_WEIGHT: f64 = 0.6;
const SIZE_WEIGHT: f64 = 0.4;

fn band_color(px: &[u8]) -> Option<Color> {
    Color::ALL.into_iter().find(|c| {
        c.rgb().iter().zip(px).all(|(&t, &p)| (t as i16 - p as i16).abs() <= BAND)
    })
}

/// One blob per colour present, in colour-enum order.
pub fn segment_colors(frame: &ImagePair) -> Vec<Blob> {
    let mut acc: [Option<(usize, BBox)>; 3] = [None; 3];
    for (i, px) in frame.rgb.chunks_exact(3).enumerate() {
        let Some(color) = band_color(px) else { continue };
        let (x, y) = (i % frame.width, i / frame.width);
        let slot = &mut acc[color as usize];
        match slot {
            None => *slot = Some((1, BBox { min_x: x, min_y: y, max_x: x, max_y: y })),
            Some((n, b)) => {
                *n += 1;
                b.min_x = b.min_x.min(x);
                b.max_x = b.max_x.max(x);
                b.min_y = b.min_y.min(y);
                b.max_y = b.max_y.max(y);
            }
        }
    }
    Color::ALL
        .into_iter()
        .zip(acc)
        .filter_map(|(color, slot)| {
            slot.map(|(pixel_count, bbox)| Blob {
                color,
                pixel_count,
                center: Vector2::new(
                    (bbox.min_x + bbox.max_x) as f64 / 2.0,
                    (bbox.min_y + bbox.max_y) as f64 / 2.0,
                ),
                bbox,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedBlob {
    pub blob: Blob,
    pub score: f64,
}

/// Picks the most likely object of interest. Left/right intent shifts the
/// target point to a quarter of the way in from that side.
pub fn rank_objects(blobs: &[Blob], intent: Option<MiClass>, width: usize, height: usize) -> Option<RankedBlob> {
    let (w, h) = (width as f64, height as f64);
    let target_x = match intent {
        Some(MiClass::Left) => w / 4.0,
        Some(MiClass::Right) => 3.0 * w / 4.0,
        _ => w / 2.0,
    };
    let target = Vector2::new(target_x, h / 2.0);
    let diag = (w * w + h * h).sqrt();
    let total: usize = blobs.iter().map(|b| b.pixel_count).sum();
    blobs
        .iter()
        .map(|b| {
            let proximity = 1.0 - (b.center - target).norm() / diag;
            let share = b.pixel_count as f64 / total as f64;
            RankedBlob { blob: *b, score: PROXIMITY_WEIGHT * proximity + SIZE_WEIGHT * share }
        })
        .min_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.blob.color.cmp(&b.blob.color))
                .then(a.blob.center.x.total_cmp(&b.blob.center.x))
        })
}

/// Draws a 1 px green rectangle on `bbox`, clipped to the frame.
pub fn overlay_ar(frame: &mut ImagePair, bbox: &BBox) {
    let (w, h) = (frame.width, frame.height);
    if w == 0 || h == 0 || bbox.min_x >= w || bbox.min_y >= h {
        return;
    }
    let max_x = bbox.max_x.min(w - 1);
    let max_y = bbox.max_y.min(h - 1);
    let mut paint = |x: usize, y: usize| {
        let i = (y * w + x) * 3;
        frame.rgb[i..i + 3].copy_from_slice(&AR_GREEN);
    };
    for x in bbox.min_x..=max_x {
        if bbox.min_y < h {
            paint(x, bbox.min_y);
        }
        if bbox.max_y < h {
            paint(x, bbox.max_y);
        }
    }
    for y in bbox.min_y..=max_y {
        paint(bbox.min_x, y);
        if bbox.max_x < w {
            paint(bbox.max_x, y);
        }
    }
}
