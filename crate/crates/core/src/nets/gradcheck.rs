//! Central finite-difference gradient checking.

use rand::Rng;

use super::tensor::{ParamSet, Tensor};

pub const DEFAULT_STEP: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|)`, with a small floor so exact zeros compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
}

fn central(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Compares analytic parameter gradients to central differences of `loss` on
/// `n` randomly chosen coordinates across all tensors.
pub fn check_params<R: Rng + ?Sized>(
    params: &ParamSet,
    analytic: &ParamSet,
    n: usize,
    h: f64,
    rng: &mut R,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> GradCheck {
    let names: Vec<&String> = params.tensors.keys().collect();
    let total: usize = params.num_params();
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for _ in 0..n {
        let mut k = rng.random_range(0..total);
        let mut name = names[0];
        for nm in &names {
            let len = params.tensors[*nm].len();
            if k < len {
                name = nm;
                break;
            }
            k -= len;
        }
        let orig = params.tensors[name].data[k];
        let numeric = central(h, |d| {
            work.tensors.get_mut(name).expect("cloned").data[k] = orig + d;
            loss(&work)
        });
        work.tensors.get_mut(name).expect("cloned").data[k] = orig;
        let a = analytic.tensors.get(name).map_or(0.0, |t| t.data[k]);
        worst = worst.max(relative_error(a, numeric));
    }
    GradCheck {
        checked: n,
        max_rel_error: worst,
    }
}

/// Same check for an input tensor.
pub fn check_input<R: Rng + ?Sized>(
    x: &Tensor,
    analytic: &Tensor,
    n: usize,
    h: f64,
    rng: &mut R,
    mut loss: impl FnMut(&Tensor) -> f64,
) -> GradCheck {
    let mut work = x.clone();
    let mut worst = 0.0f64;
    for _ in 0..n {
        let k = rng.random_range(0..x.len());
        let orig = x.data[k];
        let numeric = central(h, |d| {
            work.data[k] = orig + d;
            loss(&work)
        });
        work.data[k] = orig;
        worst = worst.max(relative_error(analytic.data[k], numeric));
    }
    GradCheck {
        checked: n,
        max_rel_error: worst,
    }
}

/// Finite-difference checks of every differentiable building block for one
/// seed: `(component, result)` pairs, `n` coordinates each.
pub fn layer_suite(seed: u64, n: usize) -> crate::Result<Vec<(&'static str, GradCheck)>> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::conv::Conv;
    use super::encoder::{ConvSpec, Encoder, EncoderInput, EncoderKind, EncoderSpec};
    use super::layers::{Dense, LayerNorm};
    use super::policy;
    use super::softmax::SpatialSoftmax;
    use crate::sensing::{GridSpec, VoxelGrid};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = DEFAULT_STEP;
    let dot = |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
    let mut out = Vec::new();

    // Dense.
    let dense = Dense::new("d", 6, 5);
    let mut p = ParamSet::new();
    dense.init(&mut p, 1.0, &mut rng);
    let x = Tensor::uniform(&[3, 6], 1.0, &mut rng);
    let w = Tensor::uniform(&[3, 5], 1.0, &mut rng);
    let mut g = ParamSet::new();
    let dx = dense.backward(&p, &x, &w, &mut g)?;
    out.push(("dense", check_params(&p, &g, n, h, &mut rng, |q| dot(&dense.forward(q, &x).unwrap(), &w))));
    out.push(("dense input", check_input(&x, &dx, n, h, &mut rng, |x| dot(&dense.forward(&p, x).unwrap(), &w))));

    // Layer norm, with non-trivial gain and bias.
    let ln = LayerNorm::new("n", 8);
    let mut p = ParamSet::new();
    p.insert("n.gain", Tensor::uniform(&[8], 2.0, &mut rng));
    p.insert("n.bias", Tensor::uniform(&[8], 1.0, &mut rng));
    let x = Tensor::uniform(&[4, 8], 2.0, &mut rng);
    let w = Tensor::uniform(&[4, 8], 1.0, &mut rng);
    let (_, xhat, inv) = ln.forward(&p, &x)?;
    let mut g = ParamSet::new();
    let dx = ln.backward(&p, &xhat, &inv, &w, &mut g)?;
    out.push(("layer_norm", check_params(&p, &g, n, h, &mut rng, |q| dot(&ln.forward(q, &x).unwrap().0, &w))));
    out.push(("layer_norm input", check_input(&x, &dx, n, h, &mut rng, |x| dot(&ln.forward(&p, x).unwrap().0, &w))));

    // Conv2d.
    let conv = Conv::new("c", 2, 2, 3, 3, 2);
    let mut p = ParamSet::new();
    conv.init(&mut p, &mut rng);
    p.insert("c.b", Tensor::uniform(&[3], 0.5, &mut rng));
    let x = Tensor::uniform(&[2, 2, 9, 8], 1.0, &mut rng);
    let y = conv.forward(&p, &x)?;
    let w = Tensor::uniform(&y.shape, 1.0, &mut rng);
    let mut g = ParamSet::new();
    let dx = conv.backward(&p, &x, &w, &mut g)?;
    out.push(("conv2d", check_params(&p, &g, n, h, &mut rng, |q| dot(&conv.forward(q, &x).unwrap(), &w))));
    out.push(("conv2d input", check_input(&x, &dx, n, h, &mut rng, |x| dot(&conv.forward(&p, x).unwrap(), &w))));

    // Spatial softmax, 2-D and 3-D.
    for (name, shape) in [("spatial_softmax 2d", vec![2, 3, 5, 4]), ("spatial_softmax 3d", vec![1, 2, 4, 3, 5])] {
        let ss = SpatialSoftmax::new(0.7);
        let x = Tensor::uniform(&shape, 2.0, &mut rng);
        let (y, probs) = ss.forward(&x)?;
        let w = Tensor::uniform(&y.shape, 1.0, &mut rng);
        let dx = ss.backward(&x.shape, &probs, &y, &w)?;
        out.push((name, check_input(&x, &dx, n, h, &mut rng, |x| dot(&ss.forward(x).unwrap().0, &w))));
    }

    // Conv3d encoder (dense path) on a reduced grid: conv → relu → conv → relu → softmax.
    let spec = EncoderSpec {
        kind: EncoderKind::Conv3dVoxel,
        layers: vec![ConvSpec::new(4, 3, 2), ConvSpec::new(5, 3, 1)],
        temperature: 1.0,
    };
    let enc = Encoder::new("e", spec, &[12, 11, 10])?;
    let mut p = ParamSet::new();
    enc.init(&mut p, &mut rng);
    let x = Tensor::uniform(&[2, 1, 12, 11, 10], 1.0, &mut rng);
    let input = EncoderInput::Dense(&x);
    let (y, cache) = enc.forward(&p, &input)?;
    let w = Tensor::uniform(&y.shape, 1.0, &mut rng);
    let mut g = ParamSet::new();
    let dx = enc.backward(&p, &input, &cache, &w, &mut g)?.expect("dense input gradient");
    let f = |q: &ParamSet, x: &Tensor| dot(&enc.forward(q, &EncoderInput::Dense(x)).unwrap().0, &w);
    out.push(("conv3d encoder", check_params(&p, &g, n, h, &mut rng, |q| f(q, &x))));
    out.push(("conv3d encoder input", check_input(&x, &dx, n, h, &mut rng, |x| f(&p, x))));

    // Conv3d encoder on full-size voxel grids through the sparse first layer.
    let enc = EncoderSpec::voxel_desk().build("v")?;
    let mut p = ParamSet::new();
    enc.init(&mut p, &mut rng);
    // Zero biases would put every empty cell exactly on the ReLU kink.
    for name in ["v.conv0.b", "v.conv1.b"] {
        let len = p.get(name)?.len();
        p.insert(name, Tensor::uniform(&[len], 0.5, &mut rng));
    }
    let mut grids = Vec::new();
    for _ in 0..2 {
        let mut gr = VoxelGrid::empty(GridSpec::default());
        let z0 = rng.random_range(5..30);
        for x in 0..50 {
            for y in 0..50 {
                if rng.random_bool(0.6) {
                    gr.set(x, y, z0 + (x + y) / 25);
                }
            }
        }
        grids.push(gr);
    }
    let refs: Vec<&VoxelGrid> = grids.iter().collect();
    let input = EncoderInput::Voxels(&refs);
    let (y, cache) = enc.forward(&p, &input)?;
    let w = Tensor::uniform(&y.shape, 1.0, &mut rng);
    let mut g = ParamSet::new();
    enc.backward(&p, &input, &cache, &w, &mut g)?;
    out.push((
        "conv3d voxel encoder",
        check_params(&p, &g, n, h, &mut rng, |q| dot(&enc.forward(q, &EncoderInput::Voxels(&refs)).unwrap().0, &w)),
    ));

    // Tanh-Gaussian: log-prob of fixed actions, and the reparameterized sample.
    let head = Tensor::uniform(&[3, 14], 1.5, &mut rng);
    let actions = Tensor::uniform(&[3, 7], 0.95, &mut rng);
    let wl: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dh = policy::log_prob_backward(&head, &actions, &wl);
    let lp = |hd: &Tensor| policy::log_prob(hd, &actions).iter().zip(&wl).map(|(a, b)| a * b).sum::<f64>();
    out.push(("tanh_gaussian log_prob", check_input(&head, &dh, n, h, &mut rng, lp)));

    let eps = Tensor::uniform(&[3, 7], 2.0, &mut rng);
    let wa = Tensor::uniform(&[3, 7], 1.0, &mut rng);
    let s = policy::sample(&head, &eps);
    let dh = policy::sample_backward(&head, &s, &wa, &wl);
    let sl = |hd: &Tensor| {
        let s = policy::sample(hd, &eps);
        dot(&s.action, &wa) + s.log_prob.iter().zip(&wl).map(|(a, b)| a * b).sum::<f64>()
    };
    out.push(("tanh_gaussian sample", check_input(&head, &dh, n, h, &mut rng, sl)));
    Ok(out)
}
