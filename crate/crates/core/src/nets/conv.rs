//! 2-D and 3-D convolutions (valid padding) via im2col + GEMM, plus a sparse
//! path for binary single-channel voxel input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::gemm;
use super::tensor::{ParamSet, Tensor};
use crate::sensing::VoxelGrid;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub name: String,
    /// Number of spatial dimensions (2 or 3).
    pub spatial: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Index tables mapping (kernel offset, output position) to input offsets.
struct Geometry {
    out_dims: Vec<usize>,
    in_len: usize,
    kernel_offsets: Vec<usize>,
    out_bases: Vec<usize>,
}

impl Conv {
    pub fn new(name: impl Into<String>, spatial: usize, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        assert!(spatial == 2 || spatial == 3, "2-D or 3-D convolution");
        assert!(kernel >= 1 && stride >= 1);
        Conv {
            name: name.into(),
            spatial,
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.pow(self.spatial as u32)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend(std::iter::repeat_n(self.kernel, self.spatial));
        s
    }

    /// He-uniform weights scaled by fan-in, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        let fan_in = (self.in_channels * self.kernel_volume()) as f64;
        params.insert(self.w(), Tensor::uniform(&self.weight_shape(), (6.0 / fan_in).sqrt(), rng));
        params.insert(self.b(), Tensor::zeros(&[self.out_channels]));
    }

    pub fn output_dims(&self, in_dims: &[usize]) -> Result<Vec<usize>> {
        if in_dims.len() != self.spatial || in_dims.iter().any(|&d| d < self.kernel) {
            return Err(Error::ShapeMismatch {
                expected: vec![self.kernel; self.spatial],
                got: in_dims.to_vec(),
            });
        }
        Ok(in_dims.iter().map(|&d| (d - self.kernel) / self.stride + 1).collect())
    }

    fn geometry(&self, in_dims: &[usize]) -> Result<Geometry> {
        let out_dims = self.output_dims(in_dims)?;
        let mut in_strides = vec![1usize; self.spatial];
        for d in (0..self.spatial - 1).rev() {
            in_strides[d] = in_strides[d + 1] * in_dims[d + 1];
        }
        let tuples = |dims: &[usize]| -> Vec<Vec<usize>> {
            let mut out = vec![vec![]];
            for &n in dims {
                out = out
                    .into_iter()
                    .flat_map(|t| {
                        (0..n).map(move |i| {
                            let mut t = t.clone();
                            t.push(i);
                            t
                        })
                    })
                    .collect();
            }
            out
        };
        let kernel_offsets = tuples(&vec![self.kernel; self.spatial])
            .iter()
            .map(|t| t.iter().zip(&in_strides).map(|(a, s)| a * s).sum())
            .collect();
        let out_bases = tuples(&out_dims)
            .iter()
            .map(|t| t.iter().zip(&in_strides).map(|(o, s)| o * self.stride * s).sum())
            .collect();
        Ok(Geometry {
            out_dims,
            in_len: in_dims.iter().product(),
            kernel_offsets,
            out_bases,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape.len() != self.spatial + 2 || x.shape[1] != self.in_channels {
            let mut expected = vec![x.shape.first().copied().unwrap_or(0), self.in_channels];
            expected.extend(std::iter::repeat_n(0, self.spatial));
            return Err(Error::ShapeMismatch {
                expected,
                got: x.shape.clone(),
            });
        }
        Ok(())
    }

    /// Fills columns `[n·P, (n+1)·P)` of the batched column matrix
    /// `[C·K, B·P]` from sample `n`.
    fn im2col(&self, geo: &Geometry, x: &[f64], col: &mut [f64], n: usize, batch: usize) {
        let kv = geo.kernel_offsets.len();
        let p = geo.out_bases.len();
        let width = batch * p;
        for c in 0..self.in_channels {
            let xc = &x[c * geo.in_len..(c + 1) * geo.in_len];
            for (ki, &ko) in geo.kernel_offsets.iter().enumerate() {
                let start = (c * kv + ki) * width + n * p;
                for (dst, &base) in col[start..start + p].iter_mut().zip(&geo.out_bases) {
                    *dst = xc[base + ko];
                }
            }
        }
    }

    /// One GEMM over the whole batch: `Y[o, n·P + p] = Σ_r W[o, r]·col[r, n·P + p]`.
    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let w = p.get(&self.w())?;
        let b = p.get(&self.b())?;
        let geo = self.geometry(&x.shape[2..])?;
        let batch = x.shape[0];
        let rows = self.in_channels * geo.kernel_offsets.len();
        let np = geo.out_bases.len();
        let width = batch * np;
        let mut shape = vec![batch, self.out_channels];
        shape.extend(&geo.out_dims);
        let mut col = vec![0.0; rows * width];
        let in_sample = self.in_channels * geo.in_len;
        for n in 0..batch {
            self.im2col(&geo, &x.data[n * in_sample..(n + 1) * in_sample], &mut col, n, batch);
        }
        let mut yt = vec![0.0; self.out_channels * width];
        gemm(self.out_channels, rows, width, 1.0, &w.data, false, &col, false, 0.0, &mut yt);
        let mut y = Tensor::zeros(&shape);
        let out_sample = self.out_channels * np;
        for n in 0..batch {
            for o in 0..self.out_channels {
                let src = &yt[o * width + n * np..o * width + (n + 1) * np];
                let dst = &mut y.data[n * out_sample + o * np..n * out_sample + (o + 1) * np];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + b.data[o];
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, p: &ParamSet, x: &Tensor, g: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        self.check_input(x)?;
        let w = p.get(&self.w())?;
        let geo = self.geometry(&x.shape[2..])?;
        let batch = x.shape[0];
        let kv = geo.kernel_offsets.len();
        let rows = self.in_channels * kv;
        let np = geo.out_bases.len();
        let width = batch * np;
        let in_sample = self.in_channels * geo.in_len;
        let out_sample = self.out_channels * np;
        let mut col = vec![0.0; rows * width];
        for n in 0..batch {
            self.im2col(&geo, &x.data[n * in_sample..(n + 1) * in_sample], &mut col, n, batch);
        }
        // Output gradient rearranged to [O, B·P].
        let mut gt = vec![0.0; self.out_channels * width];
        let mut db = vec![0.0; self.out_channels];
        for n in 0..batch {
            for o in 0..self.out_channels {
                let src = &g.data[n * out_sample + o * np..n * out_sample + (o + 1) * np];
                db[o] += src.iter().sum::<f64>();
                gt[o * width + n * np..o * width + (n + 1) * np].copy_from_slice(src);
            }
        }
        let mut dw = vec![0.0; self.out_channels * rows];
        gemm(self.out_channels, width, rows, 1.0, &gt, false, &col, true, 0.0, &mut dw);
        let mut dcol = col;
        gemm(rows, self.out_channels, width, 1.0, &w.data, true, &gt, false, 0.0, &mut dcol);
        let mut dx = Tensor::zeros(&x.shape);
        for n in 0..batch {
            let dxn = &mut dx.data[n * in_sample..(n + 1) * in_sample];
            for c in 0..self.in_channels {
                let dxc = &mut dxn[c * geo.in_len..(c + 1) * geo.in_len];
                for (ki, &ko) in geo.kernel_offsets.iter().enumerate() {
                    let start = (c * kv + ki) * width + n * np;
                    for (v, &base) in dcol[start..start + np].iter().zip(&geo.out_bases) {
                        dxc[base + ko] += v;
                    }
                }
            }
        }
        grads.accumulate(&self.w(), &self.weight_shape(), |d| {
            d.iter_mut().zip(&dw).for_each(|(a, b)| *a += b)
        });
        grads.accumulate(&self.b(), &[self.out_channels], |d| {
            d.iter_mut().zip(&db).for_each(|(a, b)| *a += b)
        });
        Ok(dx)
    }

    /// Per-axis tables: for each input coordinate, the (kernel index,
    /// output index) pairs it feeds.
    fn axis_taps(&self, n_in: usize, n_out: usize) -> Vec<Vec<(usize, usize)>> {
        let (k, s) = (self.kernel, self.stride);
        (0..n_in)
            .map(|v| {
                (0..k)
                    .filter(|&i| v >= i && (v - i) % s == 0 && (v - i) / s < n_out)
                    .map(|i| (i, (v - i) / s))
                    .collect()
            })
            .collect()
    }

    /// Calls `f(kernel index, output position)` for every tap of every
    /// occupied voxel.
    fn for_each_tap(&self, grid: &VoxelGrid, tables: &[Vec<Vec<(usize, usize)>>; 3], out_dims: &[usize], mut f: impl FnMut(usize, usize)) {
        let k = self.kernel;
        for [x, y, z] in grid.occupied_coords() {
            for &(i, ox) in &tables[0][x] {
                for &(j, oy) in &tables[1][y] {
                    let kij = (i * k + j) * k;
                    let pxy = (ox * out_dims[1] + oy) * out_dims[2];
                    for &(l, oz) in &tables[2][z] {
                        f(kij + l, pxy + oz);
                    }
                }
            }
        }
    }

    fn sparse_tables(&self, dims: [usize; 3], out_dims: &[usize]) -> [Vec<Vec<(usize, usize)>>; 3] {
        [
            self.axis_taps(dims[0], out_dims[0]),
            self.axis_taps(dims[1], out_dims[1]),
            self.axis_taps(dims[2], out_dims[2]),
        ]
    }

    fn check_sparse(&self) -> Result<()> {
        if self.spatial != 3 || self.in_channels != 1 {
            return Err(Error::ShapeMismatch {
                expected: vec![1, 0, 0, 0],
                got: vec![self.in_channels, self.spatial],
            });
        }
        Ok(())
    }

    /// Same result as [`Conv::forward`] on the dense 0/1 grids, but only
    /// visits occupied voxels.
    pub fn forward_sparse(&self, p: &ParamSet, grids: &[&VoxelGrid]) -> Result<Tensor> {
        self.check_sparse()?;
        let w = p.get(&self.w())?;
        let b = p.get(&self.b())?;
        let dims = grids.first().map(|g| g.dims()).unwrap_or([0, 0, 0]);
        let out_dims = self.output_dims(&dims)?;
        let np: usize = out_dims.iter().product();
        let kv = self.kernel_volume();
        let mut shape = vec![grids.len(), self.out_channels];
        shape.extend(&out_dims);
        let mut y = Tensor::zeros(&shape);
        let out_sample = self.out_channels * np;
        let co = self.out_channels;
        let tables = self.sparse_tables(dims, &out_dims);
        // Weights as [kernel index, out channel] so each tap adds a contiguous row.
        let mut wt = vec![0.0; kv * co];
        for o in 0..co {
            for kidx in 0..kv {
                wt[kidx * co + o] = w.data[o * kv + kidx];
            }
        }
        let mut acc = vec![0.0; np * co];
        for (n, grid) in grids.iter().enumerate() {
            if grid.dims() != dims {
                return Err(Error::ShapeMismatch {
                    expected: dims.to_vec(),
                    got: grid.dims().to_vec(),
                });
            }
            acc.fill(0.0);
            self.for_each_tap(grid, &tables, &out_dims, |kidx, pos| {
                let dst = &mut acc[pos * co..(pos + 1) * co];
                for (d, w) in dst.iter_mut().zip(&wt[kidx * co..(kidx + 1) * co]) {
                    *d += w;
                }
            });
            let out = &mut y.data[n * out_sample..(n + 1) * out_sample];
            for o in 0..co {
                let bo = b.data[o];
                for (pos, v) in out[o * np..(o + 1) * np].iter_mut().enumerate() {
                    *v = bo + acc[pos * co + o];
                }
            }
        }
        Ok(y)
    }

    /// Parameter gradients for [`Conv::forward_sparse`]; the input is data,
    /// so no input gradient is produced.
    pub fn backward_sparse(&self, grids: &[&VoxelGrid], g: &Tensor, grads: &mut ParamSet) -> Result<()> {
        self.check_sparse()?;
        let dims = grids.first().map(|g| g.dims()).unwrap_or([0, 0, 0]);
        let out_dims = self.output_dims(&dims)?;
        let np: usize = out_dims.iter().product();
        let kv = self.kernel_volume();
        let out_sample = self.out_channels * np;
        let co = self.out_channels;
        let tables = self.sparse_tables(dims, &out_dims);
        // Accumulated as [kernel index, out channel], transposed at the end.
        let mut dwt = vec![0.0; kv * co];
        let mut db = vec![0.0; co];
        let mut gt = vec![0.0; np * co];
        for (n, grid) in grids.iter().enumerate() {
            let gn = &g.data[n * out_sample..(n + 1) * out_sample];
            for (o, chunk) in gn.chunks(np).enumerate() {
                db[o] += chunk.iter().sum::<f64>();
                for (pos, v) in chunk.iter().enumerate() {
                    gt[pos * co + o] = *v;
                }
            }
            self.for_each_tap(grid, &tables, &out_dims, |kidx, pos| {
                let dst = &mut dwt[kidx * co..(kidx + 1) * co];
                for (d, v) in dst.iter_mut().zip(&gt[pos * co..(pos + 1) * co]) {
                    *d += v;
                }
            });
        }
        let mut dw = vec![0.0; co * kv];
        for o in 0..co {
            for kidx in 0..kv {
                dw[o * kv + kidx] = dwt[kidx * co + o];
            }
        }
        grads.accumulate(&self.w(), &self.weight_shape(), |d| {
            d.iter_mut().zip(&dw).for_each(|(a, b)| *a += b)
        });
        grads.accumulate(&self.b(), &[self.out_channels], |d| {
            d.iter_mut().zip(&db).for_each(|(a, b)| *a += b)
        });
        Ok(())
    }
}
