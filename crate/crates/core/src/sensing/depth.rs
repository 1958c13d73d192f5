use base64::Engine;
use nalgebra::{Rotation3, UnitQuaternion};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::Vec3;

pub const IMAGE_SIZE: usize = 128;
/// Depth readings are clipped to this range (m).
pub const MAX_DEPTH: f64 = 0.20;
/// Pad width of the 2D random-shift augmentation.
pub const SHIFT_PAD_2D: i32 = 4;

/// Anything a camera ray can hit. `dir` is not normalized; the returned
/// parameter `t` is the distance along `dir` in units of its length.
pub trait RayScene {
    fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64>;
}

/// A `size × size` z-depth image in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub camera_id: u8,
    pub size: usize,
    pub pixels: Vec<f32>,
}

impl DepthImage {
    pub fn filled(camera_id: u8, size: usize, value: f32) -> Self {
        DepthImage {
            camera_id,
            size,
            pixels: vec![value; size * size],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.size + col]
    }

    /// Number of pixels closer than the clip distance.
    pub fn valid_count(&self) -> usize {
        self.pixels
            .iter()
            .filter(|&&d| (d as f64) < MAX_DEPTH)
            .count()
    }
}

#[derive(Serialize, Deserialize)]
struct DepthRepr {
    camera_id: u8,
    size: usize,
    /// Little-endian f32 pixels, row-major, base64.
    data: String,
}

impl Serialize for DepthImage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut bytes = Vec::with_capacity(self.pixels.len() * 4);
        for p in &self.pixels {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        DepthRepr {
            camera_id: self.camera_id,
            size: self.size,
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DepthImage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = DepthRepr::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(repr.data)
            .map_err(serde::de::Error::custom)?;
        if bytes.len() != repr.size * repr.size * 4 {
            return Err(serde::de::Error::custom("depth image byte length mismatch"));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(DepthImage {
            camera_id: repr.camera_id,
            size: repr.size,
            pixels,
        })
    }
}

/// Pinhole camera rigidly mounted on the end effector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: u8,
    pub size: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub center: f64,
    /// Camera-to-end-effector transform.
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Camera {
    pub fn from_fov(id: u8, size: usize, fov_deg: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        let half = (fov_deg.to_radians() / 2.0).tan();
        Camera {
            id,
            size,
            focal: (size as f64 / 2.0) / half,
            center: (size as f64 - 1.0) / 2.0,
            rotation,
            translation,
        }
    }

    /// Ray through pixel `(row, col)` in camera coordinates, scaled so its z is 1.
    #[inline]
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vec3 {
        Vec3::new(
            (col as f64 - self.center) / self.focal,
            (row as f64 - self.center) / self.focal,
            1.0,
        )
    }

    /// Back-projects a pixel with z-depth `depth` into the end-effector frame.
    pub fn unproject(&self, row: usize, col: usize, depth: f64) -> Vec3 {
        self.rotation * (self.pixel_ray(row, col) * depth) + self.translation
    }
}

/// Two wrist cameras. Their mounting is a stand-in geometry: 6 cm off the tool
/// axis at ±45° azimuth, 5 cm above the cup tip, pitched 30° toward the axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: [Camera; 2],
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig::mounted(IMAGE_SIZE, 0.06, 0.05, 30.0, 80.0)
    }
}

impl CameraRig {
    pub fn mounted(size: usize, radius: f64, height: f64, pitch_deg: f64, fov_deg: f64) -> Self {
        let make = |id: u8, azimuth_deg: f64| {
            let az = azimuth_deg.to_radians();
            let pitch = pitch_deg.to_radians();
            let radial = Vec3::new(az.cos(), az.sin(), 0.0);
            let position = radial * radius + Vec3::new(0.0, 0.0, height);
            // Optical axis: straight down, tilted toward the tool axis.
            let forward = -radial * pitch.sin() + Vec3::new(0.0, 0.0, -pitch.cos());
            // Image x axis is tangential; y completes a right-handed frame.
            let right = Vec3::new(-az.sin(), az.cos(), 0.0);
            let down = forward.cross(&right);
            let rot = Rotation3::from_basis_unchecked(&[right, down, forward]);
            Camera::from_fov(id, size, fov_deg, UnitQuaternion::from_rotation_matrix(&rot), position)
        };
        CameraRig {
            cameras: [make(0, 45.0), make(1, -45.0)],
        }
    }
}

/// Ray-casts one depth image for an end effector at `(ee_pos, ee_rot)`.
///
/// Misses and hits beyond [`MAX_DEPTH`] read as `MAX_DEPTH`. With `noise`
/// set, zero-mean Gaussian noise of the given std is added to valid pixels
/// before clipping.
pub fn render_depth<S: RayScene + ?Sized, R: Rng + ?Sized>(
    scene: &S,
    ee_pos: &Vec3,
    ee_rot: &UnitQuaternion<f64>,
    camera: &Camera,
    mut noise: Option<(&mut R, f64)>,
) -> DepthImage {
    let cam_rot = ee_rot * camera.rotation;
    let origin = ee_pos + ee_rot * camera.translation;
    let mut img = DepthImage::filled(camera.id, camera.size, MAX_DEPTH as f32);
    let normal = noise
        .as_ref()
        .map(|(_, sigma)| Normal::new(0.0, *sigma).expect("finite noise std"));
    for row in 0..camera.size {
        for col in 0..camera.size {
            let dir = cam_rot * camera.pixel_ray(row, col);
            let Some(mut t) = scene.raycast(&origin, &dir) else {
                continue;
            };
            if t >= MAX_DEPTH {
                continue;
            }
            if let (Some((rng, _)), Some(n)) = (noise.as_mut(), normal.as_ref()) {
                t += n.sample(*rng);
            }
            img.pixels[row * camera.size + col] = t.clamp(0.0, MAX_DEPTH) as f32;
        }
    }
    img
}

/// Unprojects every non-clipped pixel of both images into the end-effector frame.
pub fn fuse_point_clouds(d0: &DepthImage, d1: &DepthImage, rig: &CameraRig) -> Vec<Vec3> {
    let mut points = Vec::with_capacity(d0.valid_count() + d1.valid_count());
    for (img, cam) in [(d0, &rig.cameras[0]), (d1, &rig.cameras[1])] {
        for row in 0..img.size {
            for col in 0..img.size {
                let d = img.at(row, col) as f64;
                if d < MAX_DEPTH {
                    points.push(cam.unproject(row, col, d));
                }
            }
        }
    }
    points
}

/// `out(r, c) = img(clamp(r − dr), clamp(c − dc))`: translation with edge replication.
pub fn shift_2d(img: &DepthImage, shift: [i32; 2]) -> DepthImage {
    let n = img.size as i64;
    let mut out = img.clone();
    for r in 0..n {
        let sr = (r - shift[0] as i64).clamp(0, n - 1) as usize;
        for c in 0..n {
            let sc = (c - shift[1] as i64).clamp(0, n - 1) as usize;
            out.pixels[(r * n + c) as usize] = img.pixels[sr * img.size + sc];
        }
    }
    out
}

pub fn sample_shift_2d<R: Rng + ?Sized>(rng: &mut R) -> [i32; 2] {
    [
        rng.random_range(-SHIFT_PAD_2D..=SHIFT_PAD_2D),
        rng.random_range(-SHIFT_PAD_2D..=SHIFT_PAD_2D),
    ]
}

/// Pads four pixels per side by edge replication and crops back at a random offset.
pub fn random_shift_2d<R: Rng + ?Sized>(img: &DepthImage, rng: &mut R) -> DepthImage {
    shift_2d(img, sample_shift_2d(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Empty;
    impl RayScene for Empty {
        fn raycast(&self, _: &Vec3, _: &Vec3) -> Option<f64> {
            None
        }
    }

    /// Plane `{x : n·x = d}`.
    struct Plane {
        n: Vec3,
        d: f64,
    }
    impl RayScene for Plane {
        fn raycast(&self, o: &Vec3, dir: &Vec3) -> Option<f64> {
            let den = self.n.dot(dir);
            if den.abs() < 1e-12 {
                return None;
            }
            let t = (self.d - self.n.dot(o)) / den;
            (t > 0.0).then_some(t)
        }
    }

    fn no_noise() -> Option<(&'static mut ChaCha8Rng, f64)> {
        None
    }

    #[test]
    fn empty_scene_is_clipped_everywhere() {
        let rig = CameraRig::default();
        let img = render_depth(&Empty, &Vec3::zeros(), &UnitQuaternion::identity(), &rig.cameras[0], no_noise());
        assert!(img.pixels.iter().all(|&p| p == MAX_DEPTH as f32));
    }

    fn fronto_parallel(cam: &Camera, dist: f64) -> Plane {
        let axis = cam.rotation * Vec3::z();
        Plane {
            n: axis,
            d: axis.dot(&cam.translation) + dist,
        }
    }

    #[test]
    fn fronto_parallel_plane_depth() {
        let rig = CameraRig::default();
        let cam = &rig.cameras[0];
        let img = render_depth(&fronto_parallel(cam, 0.10), &Vec3::zeros(), &UnitQuaternion::identity(), cam, no_noise());
        let c = cam.size / 2;
        assert!((img.at(c, c) as f64 - 0.10).abs() < 1e-6);

        let far = render_depth(&fronto_parallel(cam, 0.30), &Vec3::zeros(), &UnitQuaternion::identity(), cam, no_noise());
        assert!(far.pixels.iter().all(|&p| p == MAX_DEPTH as f32));
    }

    #[test]
    fn noisy_render_never_exceeds_clip() {
        let rig = CameraRig::default();
        let cam = &rig.cameras[1];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = render_depth(&fronto_parallel(cam, 0.1995), &Vec3::zeros(), &UnitQuaternion::identity(), cam, Some((&mut rng, 0.001)));
        assert!(img.pixels.iter().all(|&p| (0.0..=MAX_DEPTH as f32).contains(&p)));
    }

    #[test]
    fn single_pixel_unprojects_through_extrinsics() {
        let rig = CameraRig::default();
        let mut d0 = DepthImage::filled(0, IMAGE_SIZE, MAX_DEPTH as f32);
        let d1 = DepthImage::filled(1, IMAGE_SIZE, MAX_DEPTH as f32);
        d0.pixels[10 * IMAGE_SIZE + 100] = 0.125;
        let pts = fuse_point_clouds(&d0, &d1, &rig);
        assert_eq!(pts.len(), 1);
        // Independent route: homogeneous transform matrix applied to the pixel ray.
        let cam = &rig.cameras[0];
        let m = nalgebra::Isometry3::from_parts(cam.translation.into(), cam.rotation).to_homogeneous();
        let ray = nalgebra::Vector4::new(
            (100.0 - cam.center) / cam.focal * 0.125,
            (10.0 - cam.center) / cam.focal * 0.125,
            0.125,
            1.0,
        );
        let expected = m * ray;
        assert!((pts[0] - expected.xyz()).norm() < 1e-12);
    }

    #[test]
    fn both_cameras_concatenate() {
        let rig = CameraRig::default();
        let planes: Vec<_> = rig.cameras.iter().map(|c| fronto_parallel(c, 0.1)).collect();
        let d0 = render_depth(&planes[0], &Vec3::zeros(), &UnitQuaternion::identity(), &rig.cameras[0], no_noise());
        let d1 = render_depth(&planes[1], &Vec3::zeros(), &UnitQuaternion::identity(), &rig.cameras[1], no_noise());
        let pts = fuse_point_clouds(&d0, &d1, &rig);
        assert_eq!(pts.len(), d0.valid_count() + d1.valid_count());
        assert_eq!(pts.len(), 2 * IMAGE_SIZE * IMAGE_SIZE);
    }

    #[test]
    fn shift_2d_examples() {
        let mut img = DepthImage::filled(0, 8, 0.0);
        for r in 0..8 {
            for c in 0..8 {
                img.pixels[r * 8 + c] = (r * 8 + c) as f32;
            }
        }
        assert_eq!(shift_2d(&img, [0, 0]), img);
        let s = shift_2d(&img, [0, 4]);
        for r in 0..8 {
            for c in 0..8usize {
                let src = c.saturating_sub(4);
                assert_eq!(s.at(r, c), img.at(r, src));
            }
        }
        let constant = DepthImage::filled(0, 8, 0.07);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            assert_eq!(random_shift_2d(&constant, &mut rng), constant);
        }
    }

    #[test]
    fn depth_serde_roundtrip() {
        let mut img = DepthImage::filled(1, 4, 0.2);
        img.pixels[3] = 0.0123;
        let json = serde_json::to_string(&img).unwrap();
        let back: DepthImage = serde_json::from_str(&json).unwrap();
        assert_eq!(back, img);
    }
}
