use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::{SymmetryIndex, Vec3};
use crate::{Error, Result};

/// Grid resolution used by the voxel modality.
pub const GRID_DIMS: [usize; 3] = [50, 50, 40];
pub const VOXEL_SIZE: f64 = 0.002;
/// Pad width of the 3D random-shift augmentation.
pub const SHIFT_PAD_3D: i32 = 3;

/// Placement and resolution of a voxel grid in the end-effector frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    /// Corner of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl Default for GridSpec {
    /// 10×10×8 cm around the cup tip, reaching 1 cm above it and 7 cm below.
    fn default() -> Self {
        GridSpec {
            dims: GRID_DIMS,
            voxel_size: VOXEL_SIZE,
            origin: [-0.05, -0.05, -0.07],
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.voxel_size,
            self.dims[1] as f64 * self.voxel_size,
            self.dims[2] as f64 * self.voxel_size,
        ]
    }

    /// Linear index, x-major then y then z.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let z = idx % self.dims[2];
        let xy = idx / self.dims[2];
        [xy / self.dims[1], xy % self.dims[1], z]
    }

    /// Voxel containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let f = ((p[axis] - self.origin[axis]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[axis] as f64) {
                return None;
            }
            out[axis] = f as usize;
        }
        Some(out)
    }
}

/// Binary occupancy grid stored as a bitset.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelGrid {
    spec_dims: [usize; 3],
    voxel_size_bits: u64,
    origin_bits: [u64; 3],
    bits: Vec<u64>,
}

impl std::fmt::Debug for VoxelGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VoxelGrid")
            .field("dims", &self.spec_dims)
            .field("occupied", &self.count())
            .finish()
    }
}

impl VoxelGrid {
    pub fn empty(spec: GridSpec) -> Self {
        VoxelGrid {
            spec_dims: spec.dims,
            voxel_size_bits: spec.voxel_size.to_bits(),
            origin_bits: spec.origin.map(f64::to_bits),
            bits: vec![0; spec.len().div_ceil(64)],
        }
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dims: self.spec_dims,
            voxel_size: f64::from_bits(self.voxel_size_bits),
            origin: self.origin_bits.map(f64::from_bits),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec_dims
    }

    #[inline]
    fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.spec_dims[1] + y) * self.spec_dims[2] + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.get_linear(self.linear(x, y, z))
    }

    #[inline]
    pub fn get_linear(&self, idx: usize) -> bool {
        (self.bits[idx / 64] >> (idx % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize) {
        let idx = self.linear(x, y, z);
        self.bits[idx / 64] |= 1 << (idx % 64);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Occupied linear indices in increasing order.
    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    pub fn occupied_coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [_, ny, nz] = self.spec_dims;
        self.occupied().map(move |i| {
            let z = i % nz;
            let xy = i / nz;
            [xy / ny, xy % ny, z]
        })
    }

    /// Dense `0.0/1.0` copy in linear index order.
    pub fn to_dense(&self) -> Vec<f64> {
        let n: usize = self.spec_dims.iter().product();
        let mut out = vec![0.0; n];
        for i in self.occupied() {
            out[i] = 1.0;
        }
        out
    }

    /// `out(x,y,z) = self(x−s.x, y−s.y, z−s.z)` where in bounds, else empty.
    pub fn shifted(&self, shift: [i32; 3]) -> Self {
        let mut out = VoxelGrid {
            bits: vec![0; self.bits.len()],
            ..self.clone()
        };
        let d = self.spec_dims;
        for [x, y, z] in self.occupied_coords() {
            let nx = x as i64 + shift[0] as i64;
            let ny = y as i64 + shift[1] as i64;
            let nz = z as i64 + shift[2] as i64;
            if nx >= 0
                && ny >= 0
                && nz >= 0
                && (nx as usize) < d[0]
                && (ny as usize) < d[1]
                && (nz as usize) < d[2]
            {
                out.set(nx as usize, ny as usize, nz as usize);
            }
        }
        out
    }

    /// Rotates the grid by `90°·k` about the z axis through its center.
    ///
    /// Requires a square x/y footprint. Cell `(x, y)` moves to `(n−1−y, x)`
    /// for one quarter turn, matching `rotate_z_90` on vectors.
    pub fn rotate_z_90(&self, k: SymmetryIndex) -> Self {
        let [nx, ny, _] = self.spec_dims;
        assert_eq!(nx, ny, "z-rotation needs a square grid footprint");
        if k.get() == 0 {
            return self.clone();
        }
        let n = nx - 1;
        let mut out = VoxelGrid {
            bits: vec![0; self.bits.len()],
            ..self.clone()
        };
        for [x, y, z] in self.occupied_coords() {
            let (rx, ry) = match k.get() {
                1 => (n - y, x),
                2 => (n - x, n - y),
                _ => (y, n - x),
            };
            out.set(rx, ry, z);
        }
        out
    }

    /// Run-length encoding of the occupancy in linear (x, y, z) order.
    ///
    /// Runs alternate empty/occupied, starting with an empty run (possibly of
    /// length zero); each run length is an unsigned LEB128 varint.
    pub fn to_rle(&self) -> Vec<u8> {
        let n: usize = self.spec_dims.iter().product();
        let mut out = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for i in 0..n {
            let v = self.get_linear(i);
            if v == current {
                run += 1;
            } else {
                write_varint(&mut out, run);
                current = v;
                run = 1;
            }
        }
        write_varint(&mut out, run);
        out
    }

    pub fn from_rle(spec: GridSpec, data: &[u8]) -> Result<Self> {
        let mut grid = VoxelGrid::empty(spec);
        let n = spec.len();
        let mut pos = 0usize;
        let mut cursor = 0usize;
        let mut occupied = false;
        while cursor < data.len() {
            let run = read_varint(data, &mut cursor)? as usize;
            if pos + run > n {
                return Err(Error::Format("voxel RLE overruns grid".into()));
            }
            if occupied {
                for i in pos..pos + run {
                    grid.bits[i / 64] |= 1 << (i % 64);
                }
            }
            pos += run;
            occupied = !occupied;
        }
        if pos != n {
            return Err(Error::Format(format!(
                "voxel RLE covers {pos} cells, grid has {n}"
            )));
        }
        Ok(grid)
    }
}

fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn read_varint(data: &[u8], cursor: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    let mut shift = 0;
    loop {
        let Some(&b) = data.get(*cursor) else {
            return Err(Error::Format("truncated varint".into()));
        };
        *cursor += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
        if shift > 63 {
            return Err(Error::Format("varint too long".into()));
        }
    }
}

#[derive(Serialize, Deserialize)]
struct VoxelGridRepr {
    spec: GridSpec,
    rle: String,
}

impl Serialize for VoxelGrid {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VoxelGridRepr {
            spec: self.spec(),
            rle: base64::engine::general_purpose::STANDARD.encode(self.to_rle()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for VoxelGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = VoxelGridRepr::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(repr.rle)
            .map_err(serde::de::Error::custom)?;
        VoxelGrid::from_rle(repr.spec, &bytes).map_err(serde::de::Error::custom)
    }
}

/// Marks every voxel containing at least one point; out-of-bounds points are ignored.
pub fn voxelize(points: &[Vec3], spec: &GridSpec) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(*spec);
    for p in points {
        if let Some([x, y, z]) = spec.cell_of(p) {
            grid.set(x, y, z);
        }
    }
    grid
}

/// Draws a shift uniformly from `{−3..3}³`.
pub fn sample_shift_3d<R: Rng + ?Sized>(rng: &mut R) -> [i32; 3] {
    [
        rng.random_range(-SHIFT_PAD_3D..=SHIFT_PAD_3D),
        rng.random_range(-SHIFT_PAD_3D..=SHIFT_PAD_3D),
        rng.random_range(-SHIFT_PAD_3D..=SHIFT_PAD_3D),
    ]
}

/// Pads by three empty voxels per side and crops back at a random offset.
pub fn random_shift_3d<R: Rng + ?Sized>(grid: &VoxelGrid, rng: &mut R) -> VoxelGrid {
    grid.shifted(sample_shift_3d(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_extent_matches_coverage() {
        let e = GridSpec::default().extent();
        assert!((e[0] - 0.10).abs() < 1e-12);
        assert!((e[1] - 0.10).abs() < 1e-12);
        assert!((e[2] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn voxelize_empty() {
        let g = voxelize(&[], &GridSpec::default());
        assert_eq!(g.count(), 0);
    }

    #[test]
    fn voxelize_single_point_index() {
        let spec = GridSpec {
            origin: [0.0, 0.0, 0.0],
            ..GridSpec::default()
        };
        let g = voxelize(&[Vec3::new(0.051, 0.051, 0.061)], &spec);
        assert_eq!(g.count(), 1);
        assert!(g.get(25, 25, 30));
    }

    #[test]
    fn out_of_bounds_points_ignored() {
        let spec = GridSpec::default();
        let pts = [
            Vec3::new(0.2, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.011),
            Vec3::new(-0.0500001, 0.0, -0.01),
        ];
        assert_eq!(voxelize(&pts, &spec).count(), 0);
    }

    #[test]
    fn shift_examples() {
        let mut g = VoxelGrid::empty(GridSpec::default());
        g.set(25, 25, 20);
        assert_eq!(g.shifted([0, 0, 0]), g);
        let s = g.shifted([3, 0, 0]);
        assert_eq!(s.count(), 1);
        assert!(s.get(28, 25, 20));

        let mut edge = VoxelGrid::empty(GridSpec::default());
        edge.set(49, 25, 20);
        assert_eq!(edge.shifted([3, 0, 0]).count(), 0);
    }

    #[test]
    fn rotate_single_cell() {
        let mut g = VoxelGrid::empty(GridSpec::default());
        g.set(10, 25, 5);
        let r = g.rotate_z_90(SymmetryIndex::new(1).unwrap());
        assert_eq!(r.count(), 1);
        assert!(r.get(24, 10, 5));
        let full = (0..4).fold(g.clone(), |acc, _| acc.rotate_z_90(SymmetryIndex::new(1).unwrap()));
        assert_eq!(full, g);
    }

    #[test]
    fn rle_and_serde_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = VoxelGrid::empty(GridSpec::default());
        for _ in 0..500 {
            g.set(
                rng.random_range(0..50),
                rng.random_range(0..50),
                rng.random_range(0..40),
            );
        }
        let back = VoxelGrid::from_rle(g.spec(), &g.to_rle()).unwrap();
        assert_eq!(back, g);
        let json = serde_json::to_string(&g).unwrap();
        let back: VoxelGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rle_rejects_short_data() {
        let spec = GridSpec::default();
        assert!(VoxelGrid::from_rle(spec, &[5]).is_err());
    }

    #[test]
    fn random_shift_respects_pad() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let s = sample_shift_3d(&mut rng);
            assert!(s.iter().all(|v| (-3..=3).contains(v)));
        }
    }
}
