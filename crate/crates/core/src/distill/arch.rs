//! VGG-19-shaped teacher up to `relu4_1`, and the slim student encoder/decoder.

use rand::Rng;

use crate::error::{contract, Result};
use crate::numerics::nn::{conv, conv_relu, init_conv, sq_dist};
use crate::numerics::{Adam, ParamSet, Session, Tensor, Var};

pub const VGG_CHANNELS: [usize; 4] = [64, 128, 256, 512];
pub const SLIM_CHANNELS: [usize; 4] = [10, 20, 58, 64];

#[derive(Debug, Clone, Copy)]
enum Layer {
    /// 3×3 conv + relu producing the channel count of the given stage (0-based).
    Conv(&'static str, usize),
    Pool,
}

use Layer::{Conv, Pool};

/// Layers of encoder block `N`, ending at the `reluN_1` tap.
const BLOCKS: [&[Layer]; 4] = [
    &[Conv("conv1_1", 0)],
    &[Conv("conv1_2", 0), Pool, Conv("conv2_1", 1)],
    &[Conv("conv2_2", 1), Pool, Conv("conv3_1", 2)],
    &[Conv("conv3_2", 2), Conv("conv3_3", 2), Conv("conv3_4", 2), Pool, Conv("conv4_1", 3)],
];

/// Input bands and per-stage channel lengths of an encoder with the VGG topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSpec {
    pub bands: usize,
    pub channels: [usize; 4],
}

impl EncoderSpec {
    /// `(block, conv name, c_in, c_out)` for every conv, in forward order.
    pub fn convs(&self) -> Vec<(usize, &'static str, usize, usize)> {
        let mut out = Vec::new();
        let mut cin = self.bands;
        for (b, layers) in BLOCKS.iter().enumerate() {
            for l in layers.iter() {
                if let Conv(name, stage) = *l {
                    out.push((b + 1, name, cin, self.channels[stage]));
                    cin = self.channels[stage];
                }
            }
        }
        out
    }

    /// Spatial downsampling factor at tap `N`.
    pub fn stride_at(n: usize) -> usize {
        1 << (n - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Naming {
    Teacher,
    Student,
}

fn pname(naming: Naming, block: usize, conv: &str) -> String {
    match naming {
        Naming::Teacher => format!("vgg.{conv}"),
        Naming::Student => format!("enc{block}.{conv}"),
    }
}

fn init_encoder<R: Rng>(ps: &mut ParamSet, rng: &mut R, spec: &EncoderSpec, naming: Naming) {
    for (b, name, cin, cout) in spec.convs() {
        init_conv(ps, rng, &pname(naming, b, name), cin, cout, 3);
    }
}

fn run_block(s: &mut Session, naming: Naming, block: usize, mut x: Var) -> Result<Var> {
    for l in BLOCKS[block - 1] {
        x = match *l {
            Conv(name, _) => conv_relu(s, &pname(naming, block, name), x, 1)?,
            Pool => s.max_pool2(x)?,
        };
    }
    Ok(x)
}

fn run_taps(s: &mut Session, naming: Naming, x: Var, from: usize, upto: usize) -> Result<Vec<Var>> {
    let mut taps = Vec::with_capacity(upto + 1 - from);
    let mut h = x;
    for n in from..=upto {
        h = run_block(s, naming, n, h)?;
        taps.push(h);
    }
    Ok(taps)
}

fn check_layer(n: usize) -> Result<()> {
    if !(1..=4).contains(&n) {
        return contract(format!("layer must be in 1..=4, got {n}"));
    }
    Ok(())
}

fn check_image(img: &Tensor, bands: usize) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != bands || s[1] % 8 != 0 || s[2] % 8 != 0 || s[1] == 0 || s[2] == 0 {
        return contract(format!("expected a ({bands}, 8k, 8m) image, got {s:?}"));
    }
    Ok(())
}

/// The source model: VGG-19 convolutions up to `relu4_1`, plus a light mirrored
/// decoder used only to train it briefly as an autoencoder.
#[derive(Debug, Clone)]
pub struct VggEncoder {
    pub spec: EncoderSpec,
    pub params: ParamSet,
}

impl VggEncoder {
    pub fn new<R: Rng>(bands: usize, channels: [usize; 4], rng: &mut R) -> Self {
        let spec = EncoderSpec { bands, channels };
        let mut params = ParamSet::new();
        init_encoder(&mut params, rng, &spec, Naming::Teacher);
        let c = channels;
        init_conv(&mut params, rng, "vggdec.d4", c[3], c[2], 3);
        init_conv(&mut params, rng, "vggdec.d3", c[2], c[1], 3);
        init_conv(&mut params, rng, "vggdec.d2", c[1], c[0], 3);
        init_conv(&mut params, rng, "vggdec.d1", c[0], bands, 3);
        params.set_trainable("", false);
        Self { spec, params }
    }

    pub fn from_params(spec: EncoderSpec, params: ParamSet) -> Self {
        Self { spec, params }
    }

    /// `relu1_1 .. reluN_1` activations on the session.
    pub fn taps(&self, s: &mut Session, x: Var, upto: usize) -> Result<Vec<Var>> {
        check_layer(upto)?;
        run_taps(s, Naming::Teacher, x, 1, upto)
    }

    /// Tap activations of one image, each flattened to `(C_N, H_N·W_N)`.
    pub fn features(&self, img: &Tensor, upto: usize) -> Result<Vec<Tensor>> {
        check_image(img, self.spec.bands)?;
        let mut s = Session::new(&[&self.params]);
        let x = s.leaf(img);
        let taps = self.taps(&mut s, x, upto)?;
        taps.iter().map(|&t| flatten(&s, t)).collect()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params.count_prefix("vgg.")
    }

    fn reconstruct(&self, s: &mut Session, x: Var) -> Result<Var> {
        let f4 = *self.taps(s, x, 4)?.last().unwrap();
        let mut h = conv_relu(s, "vggdec.d4", f4, 1)?;
        for name in ["vggdec.d3", "vggdec.d2"] {
            h = s.upsample_nearest2(h)?;
            h = conv_relu(s, name, h, 1)?;
        }
        h = s.upsample_nearest2(h)?;
        conv(s, "vggdec.d1", h, 1)
    }

    /// Brief autoencoder training on `images`; afterwards every teacher parameter is frozen.
    /// Returns the per-step mean squared reconstruction error.
    pub fn train_autoencoder<R: Rng>(&mut self, images: &[Tensor], steps: usize, batch: usize, lr: f64, rng: &mut R) -> Result<Vec<f64>> {
        if images.is_empty() {
            return contract("teacher training needs at least one image");
        }
        images.iter().try_for_each(|i| check_image(i, self.spec.bands))?;
        self.params.set_trainable("", true);
        let mut opt = Adam::new(lr);
        let mut curve = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut s = Session::new(&[&self.params]);
            let mut total = None;
            for _ in 0..batch.max(1) {
                let img = &images[rng.random_range(0..images.len())];
                let x = s.leaf(img);
                let rec = self.reconstruct(&mut s, x)?;
                let d = sq_dist(&mut s, rec, x)?;
                let d = s.scale(d, 1.0 / (img.len() * batch.max(1)) as f64);
                total = Some(match total {
                    None => d,
                    Some(t) => s.add(t, d)?,
                });
            }
            let (loss, grads) = s.backward(total.unwrap())?;
            self.params.accumulate_grads(grads)?;
            opt.step(&mut self.params)?;
            curve.push(loss);
        }
        self.params.set_trainable("", false);
        Ok(curve)
    }
}

fn flatten(s: &Session, v: Var) -> Result<Tensor> {
    let t = s.to_tensor(v);
    let sh = t.shape().to_vec();
    t.reshape(&[sh[0], sh[1] * sh[2]])
}

/// The target model: encoder blocks `enc_1..enc_4` with reduced channel lengths and
/// decoder blocks `dec_4..dec_1` mirroring them back to the image.
#[derive(Debug, Clone)]
pub struct SlimCoder {
    pub spec: EncoderSpec,
    pub params: ParamSet,
    /// Number of block pairs trained so far, in order.
    pub trained: usize,
}

impl SlimCoder {
    pub fn new<R: Rng>(bands: usize, channels: [usize; 4], rng: &mut R) -> Result<Self> {
        if channels.contains(&0) {
            return contract(format!("channel lengths must be positive, got {channels:?}"));
        }
        let spec = EncoderSpec { bands, channels };
        let mut params = ParamSet::new();
        init_encoder(&mut params, rng, &spec, Naming::Student);
        init_conv(&mut params, rng, "dec1.out", channels[0], bands, 3);
        for n in 2..=4 {
            let (hi, lo) = (channels[n - 1], channels[n - 2]);
            init_conv(&mut params, rng, &format!("dec{n}.reduce"), hi, lo, 3);
            init_conv(&mut params, rng, &format!("dec{n}.refine"), lo, lo, 3);
        }
        params.set_trainable("", false);
        Ok(Self { spec, params, trained: 0 })
    }

    pub fn from_params(spec: EncoderSpec, params: ParamSet, trained: usize) -> Self {
        Self { spec, params, trained }
    }

    /// `relu1_1_e .. reluN_1_e` activations.
    pub fn encode(&self, s: &mut Session, x: Var, upto: usize) -> Result<Vec<Var>> {
        check_layer(upto)?;
        run_taps(s, Naming::Student, x, 1, upto)
    }

    /// `dec_N`: level-`N` features to level `N−1` features (the image for `N = 1`).
    pub fn decode_block(&self, s: &mut Session, n: usize, x: Var) -> Result<Var> {
        check_layer(n)?;
        if n == 1 {
            return conv(s, "dec1.out", x, 1);
        }
        let h = conv_relu(s, &format!("dec{n}.reduce"), x, 1)?;
        let h = s.upsample_nearest2(h)?;
        conv_relu(s, &format!("dec{n}.refine"), h, 1)
    }

    /// Runs `dec_N, …, dec_1` from level-`N` features down to an image.
    pub fn decode_from(&self, s: &mut Session, n: usize, mut x: Var) -> Result<Var> {
        for m in (1..=n).rev() {
            x = self.decode_block(s, m, x)?;
        }
        Ok(x)
    }

    pub fn features(&self, img: &Tensor, upto: usize) -> Result<Vec<Tensor>> {
        check_image(img, self.spec.bands)?;
        let mut s = Session::new(&[&self.params]);
        let x = s.leaf(img);
        let taps = self.encode(&mut s, x, upto)?;
        taps.iter().map(|&t| flatten(&s, t)).collect()
    }

    pub fn encoder_param_count(&self) -> usize {
        (1..=4).map(|n| self.params.count_prefix(&format!("enc{n}."))).sum()
    }
}

/// Number of scalar parameters.
pub fn param_count(params: &ParamSet) -> usize {
    params.count()
}

/// Teacher size over student size.
pub fn compression_ratio(teacher: usize, student: usize) -> Result<f64> {
    if student == 0 {
        return contract("student has no parameters");
    }
    Ok(teacher as f64 / student as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedStream;

    #[test]
    fn tap_shapes_halve() {
        let mut rng = SeedStream::new(1).rng("t");
        let coder = SlimCoder::new(4, SLIM_CHANNELS, &mut rng).unwrap();
        let img = Tensor::zeros(&[4, 16, 16]);
        let f = coder.features(&img, 4).unwrap();
        let shapes: Vec<_> = f.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![10, 256], vec![20, 64], vec![58, 16], vec![64, 4]]);
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let mut rng = SeedStream::new(2).rng("t");
        let coder = SlimCoder::new(4, [3, 5, 6, 7], &mut rng).unwrap();
        let mut s = Session::new(&[&coder.params]);
        let x = s.leaf(&Tensor::zeros(&[4, 16, 16]));
        let f4 = *coder.encode(&mut s, x, 4).unwrap().last().unwrap();
        let rec = coder.decode_from(&mut s, 4, f4).unwrap();
        assert_eq!(s.shape(rec), &[4, 16, 16]);
    }

    #[test]
    fn odd_images_rejected() {
        let mut rng = SeedStream::new(3).rng("t");
        let t = VggEncoder::new(4, [2, 2, 2, 2], &mut rng);
        assert!(t.features(&Tensor::zeros(&[4, 12, 16]), 1).is_err());
        assert!(t.features(&Tensor::zeros(&[3, 16, 16]), 1).is_err());
    }

    #[test]
    fn ratio_of_identical_models_is_one() {
        assert_eq!(compression_ratio(1234, 1234).unwrap(), 1.0);
        assert!(compression_ratio(1, 0).is_err());
    }
}
