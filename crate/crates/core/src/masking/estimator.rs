use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{sigmoid, ActivationKind, Conv2d, Deconv2d, Geometry, InstanceNorm, NormKind, LEAKY_SLOPE};
use crate::numerics::{Rng, Tensor};
use crate::params::{join, Named, NamedMut, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Encoder (and decoder) depth; each stage halves both spatial axes.
    pub stages: usize,
    /// Feature maps after the first encoder stage; doubled per stage.
    pub base_channels: usize,
    pub norm: NormKind,
    pub slope: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            stages: 3,
            base_channels: 16,
            norm: NormKind::default(),
            slope: LEAKY_SLOPE,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stages > 8 || self.base_channels == 0 {
            return Err(Error::config("estimator stages must be in 1..=8 with positive base_channels"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::config("leaky slope must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Spatial sizes are padded up to a multiple of this.
    pub fn multiple(&self) -> usize {
        1 << self.stages
    }
}

fn updown() -> Geometry {
    Geometry::new((4, 4), (2, 2), (1, 1))
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Down(Conv2d),
    Up(Deconv2d),
}

impl Op {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Op::Down(c) => c.forward(x),
            Op::Up(d) => d.forward(x),
        }
    }

    fn backward(&self, x: &Tensor, g: &Tensor, grads: &mut Op) -> Result<Tensor> {
        match (self, grads) {
            (Op::Down(c), Op::Down(gc)) => c.backward(x, g, gc),
            (Op::Up(d), Op::Up(gd)) => d.backward(x, g, gd),
            _ => Err(Error::config("gradient structure differs from model")),
        }
    }

    fn refresh_spectral(&mut self, iters: usize) {
        match self {
            Op::Down(c) => c.refresh_spectral(iters),
            Op::Up(d) => d.refresh_spectral(iters),
        }
    }
}

/// Strided (de)convolution, optional instance norm, leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
struct Stage {
    op: Op,
    norm: Option<InstanceNorm>,
    act: ActivationKind,
}

struct StageTrace {
    input: Tensor,
    pre_norm: Tensor,
    pre_act: Tensor,
}

impl Stage {
    fn new(c_in: usize, c_out: usize, up: bool, cfg: &EstimatorConfig, rng: &mut Rng) -> Result<Self> {
        let spectral = cfg.norm == NormKind::Spectral;
        // instance norm removes any per-channel offset, so a bias would be dead
        let bias = cfg.norm != NormKind::Instance;
        let op = if up {
            Op::Up(Deconv2d::new(c_in, c_out, updown(), bias, spectral, rng)?)
        } else {
            Op::Down(Conv2d::new(c_in, c_out, updown(), bias, spectral, rng)?)
        };
        let norm = (cfg.norm == NormKind::Instance).then(|| InstanceNorm::new(c_out, true));
        Ok(Stage {
            op,
            norm,
            act: ActivationKind::LeakyRelu(cfg.slope),
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, StageTrace)> {
        let pre_norm = self.op.forward(x)?;
        let pre_act = match &self.norm {
            Some(n) => n.forward(&pre_norm)?,
            None => pre_norm.clone(),
        };
        let out = self.act.apply(&pre_act);
        Ok((
            out,
            StageTrace {
                input: x.clone(),
                pre_norm,
                pre_act,
            },
        ))
    }

    fn backward(&self, t: &StageTrace, g: &Tensor, grads: &mut Stage) -> Result<Tensor> {
        let mut g = self.act.backward(&t.pre_act, g)?;
        if let (Some(n), Some(gn)) = (&self.norm, &mut grads.norm) {
            g = n.backward(&t.pre_norm, &g, gn)?;
        }
        self.op.backward(&t.input, &g, &mut grads.op)
    }
}

impl Parameterized for Stage {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        let p = join(prefix, "conv");
        match &self.op {
            Op::Down(c) => c.collect_params(&p, out),
            Op::Up(d) => d.collect_params(&p, out),
        }
        if let Some(n) = &self.norm {
            n.collect_params(&join(prefix, "norm"), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        let p = join(prefix, "conv");
        match &mut self.op {
            Op::Down(c) => c.collect_params_mut(&p, out),
            Op::Up(d) => d.collect_params_mut(&p, out),
        }
        if let Some(n) = &mut self.norm {
            n.collect_params_mut(&join(prefix, "norm"), out);
        }
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        let p = join(prefix, "conv");
        match &self.op {
            Op::Down(c) => c.collect_buffers(&p, out),
            Op::Up(d) => d.collect_buffers(&p, out),
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        let p = join(prefix, "conv");
        match &mut self.op {
            Op::Down(c) => c.collect_buffers_mut(&p, out),
            Op::Up(d) => d.collect_buffers_mut(&p, out),
        }
    }
}

/// Intermediate values of one estimator evaluation.
pub struct EstimatorTrace {
    shape: (usize, usize),
    encoder: Vec<StageTrace>,
    decoder: Vec<StageTrace>,
    head_input: Tensor,
    mask_padded: Tensor,
}

/// U-Net mask estimator over a 2-D feature treated as a one-channel image.
///
/// Encoder stage `i` maps to `base * 2^i` maps at half resolution. Decoder
/// stage `i` upsamples and concatenates the matching encoder output (the
/// last one concatenates the input image). A 1x1 convolution and a sigmoid
/// produce the mask. The head starts at zero, so an untrained estimator
/// outputs 0.5 everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEstimatorNet {
    pub config: EstimatorConfig,
    encoder: Vec<Stage>,
    decoder: Vec<Stage>,
    head: Conv2d,
}

impl MaskEstimatorNet {
    pub fn new(config: EstimatorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let width = |i: usize| config.base_channels << i;
        let l = config.stages;
        let mut encoder = Vec::with_capacity(l);
        for i in 0..l {
            let c_in = if i == 0 { 1 } else { width(i - 1) };
            encoder.push(Stage::new(c_in, width(i), false, &config, rng)?);
        }
        let mut decoder = Vec::with_capacity(l);
        for i in 0..l {
            // level of the encoder output this stage consumes
            let level = l - 1 - i;
            let c_in = if i == 0 { width(level) } else { 2 * width(level) };
            let c_out = if level == 0 { config.base_channels } else { width(level - 1) };
            decoder.push(Stage::new(c_in, c_out, true, &config, rng)?);
        }
        let head_in = config.base_channels + 1;
        let head = Conv2d::from_weights(
            Tensor::zeros(&[1, head_in, 1, 1]),
            Some(Tensor::zeros(&[1])),
            Geometry::new((1, 1), (1, 1), (0, 0)),
        )?;
        Ok(MaskEstimatorNet {
            config,
            encoder,
            decoder,
            head,
        })
    }

    pub fn estimate(&self, feature: &Tensor) -> Result<Tensor> {
        Ok(self.estimate_traced(feature)?.0)
    }

    pub fn estimate_traced(&self, feature: &Tensor) -> Result<(Tensor, EstimatorTrace)> {
        if feature.ndim() != 2 {
            return Err(Error::shape("estimator feature", &[0, 0], feature.shape()));
        }
        let (h, w) = (feature.dim(0), feature.dim(1));
        if h == 0 || w == 0 {
            return Err(Error::ZeroSize);
        }
        let m = self.config.multiple();
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let image = pad_plane(feature, hp, wp);

        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut cur = image.clone();
        for st in &self.encoder {
            let (y, t) = st.forward(&cur)?;
            encoder.push(t);
            skips.push(y.clone());
            cur = y;
        }
        let l = self.encoder.len();
        let mut decoder = Vec::with_capacity(l);
        let mut input = skips[l - 1].clone();
        for (i, st) in self.decoder.iter().enumerate() {
            let (y, t) = st.forward(&input)?;
            decoder.push(t);
            let level = l - 1 - i;
            let skip = if level == 0 { &image } else { &skips[level - 1] };
            input = Tensor::concat_rows(&[&y, skip])?;
        }
        let logits = self.head.forward(&input)?;
        let mask_padded = logits.map(sigmoid);
        let mask = crop_plane(&mask_padded, h, w);
        Ok((
            mask,
            EstimatorTrace {
                shape: (h, w),
                encoder,
                decoder,
                head_input: input,
                mask_padded,
            },
        ))
    }

    /// Gradient with respect to the feature, accumulating parameter
    /// gradients into `grads`.
    pub fn backward(&self, trace: &EstimatorTrace, grad_mask: &Tensor, grads: &mut MaskEstimatorNet) -> Result<Tensor> {
        let (h, w) = trace.shape;
        grad_mask.expect_shape("mask gradient", &[h, w])?;
        let (hp, wp) = (trace.mask_padded.dim(1), trace.mask_padded.dim(2));
        let mut g = pad_plane(grad_mask, hp, wp);
        for (gv, &m) in g.data_mut().iter_mut().zip(trace.mask_padded.data()) {
            *gv *= m * (1.0 - m);
        }
        let mut g = self.head.backward(&trace.head_input, &g, &mut grads.head)?;
        let l = self.encoder.len();
        let mut skip_grads: Vec<Option<Tensor>> = (0..l).map(|_| None).collect();
        let mut image_grad = None;
        for i in (0..l).rev() {
            let level = l - 1 - i;
            let out_c = self.decoder[i].out_channels();
            let skip_c = g.dim(0) - out_c;
            let mut parts = g.split_rows(&[out_c, skip_c])?;
            let gs = parts.pop().unwrap();
            let gy = parts.pop().unwrap();
            if level == 0 {
                image_grad = Some(gs);
            } else {
                skip_grads[level - 1] = Some(gs);
            }
            g = self.decoder[i].backward(&trace.decoder[i], &gy, &mut grads.decoder[i])?;
        }
        // g is now the gradient on the deepest encoder output
        for i in (0..l).rev() {
            if let Some(extra) = skip_grads[i].take() {
                g = g.add(&extra)?;
            }
            g = self.encoder[i].backward(&trace.encoder[i], &g, &mut grads.encoder[i])?;
        }
        if let Some(extra) = image_grad {
            g = g.add(&extra)?;
        }
        Ok(crop_plane(&g, h, w))
    }

    pub fn refresh_spectral(&mut self, iters: usize) {
        for st in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            st.op.refresh_spectral(iters);
        }
    }
}

impl Stage {
    fn out_channels(&self) -> usize {
        match &self.op {
            Op::Down(c) => c.out_channels(),
            Op::Up(d) => d.out_channels(),
        }
    }
}

impl Parameterized for MaskEstimatorNet {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        for (i, s) in self.encoder.iter().enumerate() {
            s.collect_params(&join(prefix, &format!("enc{i}")), out);
        }
        for (i, s) in self.decoder.iter().enumerate() {
            s.collect_params(&join(prefix, &format!("dec{i}")), out);
        }
        self.head.collect_params(&join(prefix, "head"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        for (i, s) in self.encoder.iter_mut().enumerate() {
            s.collect_params_mut(&join(prefix, &format!("enc{i}")), out);
        }
        for (i, s) in self.decoder.iter_mut().enumerate() {
            s.collect_params_mut(&join(prefix, &format!("dec{i}")), out);
        }
        self.head.collect_params_mut(&join(prefix, "head"), out);
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        for (i, s) in self.encoder.iter().enumerate() {
            s.collect_buffers(&join(prefix, &format!("enc{i}")), out);
        }
        for (i, s) in self.decoder.iter().enumerate() {
            s.collect_buffers(&join(prefix, &format!("dec{i}")), out);
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        for (i, s) in self.encoder.iter_mut().enumerate() {
            s.collect_buffers_mut(&join(prefix, &format!("enc{i}")), out);
        }
        for (i, s) in self.decoder.iter_mut().enumerate() {
            s.collect_buffers_mut(&join(prefix, &format!("dec{i}")), out);
        }
    }
}

/// `[H, W]` (or `[1, H, W]`) zero-padded at the bottom/right to `[1, hp, wp]`.
fn pad_plane(x: &Tensor, hp: usize, wp: usize) -> Tensor {
    let (h, w) = (x.dim(x.ndim() - 2), x.dim(x.ndim() - 1));
    let mut out = Tensor::zeros(&[1, hp, wp]);
    for r in 0..h {
        out.data_mut()[r * wp..r * wp + w].copy_from_slice(&x.data()[r * w..(r + 1) * w]);
    }
    out
}

/// Top-left `[h, w]` of a `[1, H, W]` plane.
fn crop_plane(x: &Tensor, h: usize, w: usize) -> Tensor {
    let wp = x.dim(2);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        out.extend_from_slice(&x.data()[r * wp..r * wp + w]);
    }
    Tensor::new(&[h, w], out).expect("crop size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_fill_uniform;

    #[test]
    fn shapes_through_pad_and_crop() {
        let net = MaskEstimatorNet::new(EstimatorConfig::default(), &mut Rng::new(1)).unwrap();
        for (h, w) in [(256, 100), (257, 41), (3, 1)] {
            let f = seeded_fill_uniform(&mut Rng::new(2), &[h, w], -1.0, 1.0).unwrap();
            let m = net.estimate(&f).unwrap();
            assert_eq!(m.shape(), &[h, w]);
            assert!(m.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn outputs_in_open_unit_interval() {
        let mut net = MaskEstimatorNet::new(EstimatorConfig::default(), &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        for (_, p) in net.params_mut() {
            for v in p.data_mut() {
                *v = rng.uniform_range(-3.0, 3.0);
            }
        }
        let f = seeded_fill_uniform(&mut rng, &[16, 24], -50.0, 50.0).unwrap();
        let m = net.estimate(&f).unwrap();
        assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
