//! Analytic ray-casting renderer for the eye-in-hand camera.

use nalgebra::Vector3;

use super::{Camera, ImagePair};
use crate::scene::{GraspObject, Shape};

/// Surfaces closer than this to the camera centre are not drawn.
const NEAR: f64 = 1e-3;

/// Renders flat-coloured objects over the neutral background with z-depth
/// (distance along the optical axis) per pixel.
pub fn render(objects: &[GraspObject], camera: &Camera) -> ImagePair {
    let mut frame = ImagePair::blank(camera.width, camera.height);
    let axis = camera.pose.rotation * Vector3::x();
    let origin = camera.position();
    for obj in objects {
        let Some((x0, y0, x1, y1)) = screen_bounds(obj, camera) else { continue };
        let rgb = obj.color.rgb();
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dir = camera.ray(x as f64, y as f64);
                let Some(t) = intersect(obj, &origin, &dir) else { continue };
                let z = (t * dir.dot(&axis)) as f32;
                let i = y * camera.width + x;
                if z < frame.depth[i] {
                    frame.depth[i] = z;
                    frame.rgb[i * 3..i * 3 + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    frame
}

/// Conservative pixel rectangle covering the object's bounding sphere, or
/// `None` when it is entirely behind the camera or off-screen.
fn screen_bounds(obj: &GraspObject, camera: &Camera) -> Option<(usize, usize, usize, usize)> {
    let c = camera.to_camera(&obj.position);
    let r = obj.bounding_radius();
    let (w, h) = (camera.width, camera.height);
    if c.x + r <= NEAR {
        return None;
    }
    if c.x - r <= NEAR {
        return Some((0, 0, w - 1, h - 1));
    }
    let center = camera.optical_center();
    let span = |a: f64| {
        let lo = ((a - r) / (c.x - r)).min((a - r) / (c.x + r));
        let hi = ((a + r) / (c.x - r)).max((a + r) / (c.x + r));
        (lo * camera.focal_px, hi * camera.focal_px)
    };
    let (u_lo, u_hi) = span(c.y);
    let (up_lo, up_hi) = span(c.z);
    let (u_lo, u_hi) = (center.x + u_lo, center.x + u_hi);
    let (v_lo, v_hi) = (center.y - up_hi, center.y - up_lo);
    if u_hi < 0.0 || v_hi < 0.0 || u_lo > (w - 1) as f64 || v_lo > (h - 1) as f64 {
        return None;
    }
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64) as usize;
    Some((clamp(u_lo.floor(), w), clamp(v_lo.floor(), h), clamp(u_hi.ceil(), w), clamp(v_hi.ceil(), h)))
}

/// Nearest positive ray parameter hitting the object's surface.
fn intersect(obj: &GraspObject, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    // Object frame: centred, rotated by -yaw about the vertical.
    let (s, c) = (-obj.yaw).sin_cos();
    let rot = |v: Vector3<f64>| Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);
    let o = rot(origin - obj.position);
    let d = rot(*dir);
    let r = obj.characteristic_size / 2.0;
    match obj.shape {
        Shape::Sphere => hit_sphere(&o, &d, r),
        Shape::Cube => hit_box(&o, &d, Vector3::repeat(r)),
        Shape::Cylinder => hit_cylinder(&o, &d, r, obj.height / 2.0),
    }
}

fn nearest(ts: impl IntoIterator<Item = f64>) -> Option<f64> {
    ts.into_iter().filter(|t| *t > NEAR).min_by(f64::total_cmp)
}

fn hit_sphere(o: &Vector3<f64>, d: &Vector3<f64>, r: f64) -> Option<f64> {
    let b = o.dot(d);
    let disc = b * b - (o.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    nearest([-b - root, -b + root])
}

fn hit_box(o: &Vector3<f64>, d: &Vector3<f64>, half: Vector3<f64>) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - o[k]) / d[k];
        let b = (half[k] - o[k]) / d[k];
        t_near = t_near.max(a.min(b));
        t_far = t_far.min(a.max(b));
    }
    if t_near > t_far {
        return None;
    }
    nearest([t_near, t_far])
}

fn hit_cylinder(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, half_h: f64) -> Option<f64> {
    let mut hits = Vec::with_capacity(4);
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = o.x * d.x + o.y * d.y;
        let disc = b * b - a * (o.x * o.x + o.y * o.y - r * r);
        if disc >= 0.0 {
            let root = disc.sqrt();
            for t in [(-b - root) / a, (-b + root) / a] {
                if (o.z + t * d.z).abs() <= half_h {
                    hits.push(t);
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        for cap in [-half_h, half_h] {
            let t = (cap - o.z) / d.z;
            let (x, y) = (o.x + t * d.x, o.y + t * d.y);
            if x * x + y * y <= r * r {
                hits.push(t);
            }
        }
    }
    nearest(hits)
}
