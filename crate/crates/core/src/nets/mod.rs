//! Detection and regression networks.
//!
//! The detection network is an encoder-decoder: an input 3×3 convolution,
//! four downsampling and four upsampling blocks, and a 1×1 sigmoid head that
//! emits 12 joint and 8 connection confidence maps. Each block runs two
//! parallel branches on the same input (a 2×2 stride-2 resampling convolution
//! followed by a 3×3 convolution), concatenates them and fuses the result
//! with a 1×1 convolution. Every hidden convolution is followed by batch
//! normalization and ReLU.
//!
//! The regression network takes the depth frame stacked with the 20
//! detection maps and refines them with five 3×3 convolutions and a linear
//! 1×1 head.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::DepthFrame;
use crate::maskgen::{MapKind, MapStack};
use crate::skeleton::NUM_CHANNELS;
use layers::{Conv2d, ConvTranspose2x2, DualBlock, Layer, Param, ParamVisitor, Sequential, Sigmoid};
pub use tensor::{Scalar, Tensor};

const HIDDEN_GAIN: f64 = 6.0;
const HEAD_GAIN: f64 = 3.0;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("input {height}x{width} is not divisible by {multiple}")]
    NotDivisible {
        height: usize,
        width: usize,
        multiple: usize,
    },
    #[error("empty tensor")]
    Empty,
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint architecture {found:?} does not match the expected {expected:?}")]
    ArchMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionArch {
    /// Branch width of the first downsampling block (64 in the full network).
    pub base_width: usize,
    /// Concatenate encoder features into the decoder, U-Net style.
    pub skips: bool,
}

impl Default for DetectionArch {
    fn default() -> Self {
        DetectionArch {
            base_width: 64,
            skips: false,
        }
    }
}

impl DetectionArch {
    /// Spatial dimensions must be multiples of this.
    pub const DIVISOR: usize = 16;

    /// Per-branch widths of blocks 1-8; each block's fused output is twice this.
    pub fn block_widths(&self) -> [usize; 8] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w, 4 * w, 2 * w, w, w / 2]
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.base_width < 2 || self.base_width % 2 != 0 {
            return Err(NetError::Arch(format!(
                "detection base width must be even and at least 2, got {}",
                self.base_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionArch {
    /// Width of the first hidden convolution (64 in the full network).
    pub base_width: usize,
}

impl Default for RegressionArch {
    fn default() -> Self {
        RegressionArch { base_width: 64 }
    }
}

impl RegressionArch {
    pub const IN_CHANNELS: usize = 1 + NUM_CHANNELS;

    pub fn layer_widths(&self) -> [usize; 5] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 4 * w, 4 * w]
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.base_width == 0 {
            return Err(NetError::Arch("regression base width must be positive".into()));
        }
        Ok(())
    }
}

/// Visits every parameter tensor in a fixed order.
pub trait Network<T: Scalar> {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>);

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn num_trainable(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    /// Copies of all parameter values, in visit order.
    fn snapshot(&mut self) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    fn restore(&mut self, snap: &[(String, Vec<T>)]) {
        let mut it = snap.iter();
        self.visit_params(&mut |name, p| {
            let (n, v) = it.next().expect("snapshot too short");
            assert_eq!(n, name, "snapshot order mismatch");
            p.value.copy_from_slice(v);
        });
    }
}

fn down_block<T: Scalar>(in_c: usize, width: usize, rng: &mut ChaCha8Rng) -> DualBlock<T> {
    let branch = |rng: &mut ChaCha8Rng| {
        Sequential::new()
            .conv_bn_relu("down", Conv2d::new(in_c, width, 2, 2, false, HIDDEN_GAIN, rng))
            .conv_bn_relu("conv", Conv2d::new(width, width, 3, 1, false, HIDDEN_GAIN, rng))
    };
    let branch_a = branch(rng);
    let branch_b = branch(rng);
    let fuse = Sequential::new().conv_bn_relu("conv", Conv2d::new(2 * width, 2 * width, 1, 1, false, HIDDEN_GAIN, rng));
    DualBlock {
        branch_a,
        branch_b,
        fuse,
    }
}

fn up_block<T: Scalar>(in_c: usize, width: usize, rng: &mut ChaCha8Rng) -> DualBlock<T> {
    let branch = |rng: &mut ChaCha8Rng| {
        Sequential::new()
            .up_bn_relu("up", ConvTranspose2x2::new(in_c, width, HIDDEN_GAIN, rng))
            .conv_bn_relu("conv", Conv2d::new(width, width, 3, 1, false, HIDDEN_GAIN, rng))
    };
    let branch_a = branch(rng);
    let branch_b = branch(rng);
    let fuse = Sequential::new().conv_bn_relu("conv", Conv2d::new(2 * width, 2 * width, 1, 1, false, HIDDEN_GAIN, rng));
    DualBlock {
        branch_a,
        branch_b,
        fuse,
    }
}

pub struct DetectionNet<T: Scalar = f32> {
    pub arch: DetectionArch,
    stem: Sequential<T>,
    down: Vec<DualBlock<T>>,
    up: Vec<DualBlock<T>>,
    head: Conv2d<T>,
    sigmoid: Sigmoid,
    /// Channel counts of the decoder inputs, recorded for skip splitting.
    decoder_in: Vec<usize>,
}

impl<T: Scalar> DetectionNet<T> {
    pub fn new(arch: DetectionArch, seed: u64) -> Result<Self, NetError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = arch.block_widths();
        let stem_w = arch.base_width;
        let stem = Sequential::new().conv_bn_relu("conv", Conv2d::new(1, stem_w, 3, 1, false, HIDDEN_GAIN, &mut rng));
        // encoder feature channels: stem, then each down block's fused output
        let mut enc = vec![stem_w];
        let mut down = Vec::new();
        for &w in &widths[..4] {
            down.push(down_block(*enc.last().unwrap(), w, &mut rng));
            enc.push(2 * w);
        }
        let mut up = Vec::new();
        let mut decoder_in = Vec::new();
        let mut prev = enc[4];
        for (j, &w) in widths[4..].iter().enumerate() {
            let in_c = if arch.skips && j > 0 { prev + enc[4 - j] } else { prev };
            up.push(up_block(in_c, w, &mut rng));
            decoder_in.push(prev);
            prev = 2 * w;
        }
        decoder_in.push(prev);
        let head_in = if arch.skips { prev + enc[0] } else { prev };
        let head = Conv2d::new(head_in, NUM_CHANNELS, 1, 1, true, HEAD_GAIN, &mut rng);
        Ok(DetectionNet {
            arch,
            stem,
            down,
            up,
            head,
            sigmoid: Sigmoid::new(NUM_CHANNELS),
            decoder_in,
        })
    }

    /// Sets every output bias to the logit of `p`, so an untrained network
    /// predicts the foreground prior `p` everywhere.
    pub fn set_output_prior(&mut self, p: f64) {
        let logit = (p / (1.0 - p)).ln();
        if let Some(b) = self.head.bias.as_mut() {
            b.value.iter_mut().for_each(|v| *v = T::of(logit));
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NetError> {
        if x.c != 1 {
            return Err(NetError::Shape {
                what: "detection input",
                expected: vec![x.n, 1, x.h, x.w],
                got: x.shape().to_vec(),
            });
        }
        let d = DetectionArch::DIVISOR;
        if x.h % d != 0 || x.w % d != 0 || x.h == 0 || x.w == 0 {
            return Err(NetError::NotDivisible {
                height: x.h,
                width: x.w,
                multiple: d,
            });
        }
        Ok(())
    }

    /// Training-mode forward pass (batch statistics, caches activations).
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.check_input(x)?;
        let skips = self.arch.skips;
        let mut enc = vec![self.stem.forward(x)];
        for block in &mut self.down {
            let y = block.forward(enc.last().unwrap());
            enc.push(y);
        }
        let mut u = enc.pop().unwrap();
        for (j, block) in self.up.iter_mut().enumerate() {
            if skips && j > 0 {
                u = Tensor::concat_channels(&u, &enc[4 - j]);
            }
            u = block.forward(&u);
        }
        if skips {
            u = Tensor::concat_channels(&u, &enc[0]);
        }
        let logits = self.head.forward(&u);
        Ok(self.sigmoid.forward(&logits))
    }

    /// Inference-mode forward pass using running statistics.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.check_input(x)?;
        let skips = self.arch.skips;
        let mut enc = vec![self.stem.infer(x)];
        for block in &self.down {
            let y = block.infer(enc.last().unwrap());
            enc.push(y);
        }
        let mut u = enc.pop().unwrap();
        for (j, block) in self.up.iter().enumerate() {
            if skips && j > 0 {
                u = Tensor::concat_channels(&u, &enc[4 - j]);
            }
            u = block.infer(&u);
        }
        if skips {
            u = Tensor::concat_channels(&u, &enc[0]);
        }
        Ok(self.sigmoid.infer(&self.head.infer(&u)))
    }

    /// Backpropagates the gradient of the loss with respect to the output
    /// probabilities, accumulating parameter gradients.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let skips = self.arch.skips;
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..5).map(|_| None).collect();
        let mut g = self.head.backward(&self.sigmoid.backward(grad_out));
        if skips {
            let (gu, gs) = g.split_channels(self.decoder_in[4]);
            skip_grads[0] = Some(gs);
            g = gu;
        }
        for j in (0..4).rev() {
            g = self.up[j].backward(&g);
            if skips && j > 0 {
                let (gu, gs) = g.split_channels(self.decoder_in[j]);
                skip_grads[4 - j] = Some(gs);
                g = gu;
            }
        }
        for i in (0..4).rev() {
            if let Some(sg) = &skip_grads[i + 1] {
                g.add_assign(sg);
            }
            g = self.down[i].backward(&g);
        }
        if let Some(sg) = &skip_grads[0] {
            g.add_assign(sg);
        }
        self.stem.backward(&g)
    }
}

impl<T: Scalar> Network<T> for DetectionNet<T> {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) {
        self.stem.visit("stem", f);
        for (i, b) in self.down.iter_mut().enumerate() {
            b.visit(&format!("block{}", i + 1), f);
        }
        for (i, b) in self.up.iter_mut().enumerate() {
            b.visit(&format!("block{}", i + 5), f);
        }
        self.head.visit("head", f);
    }
}

pub struct RegressionNet<T: Scalar = f32> {
    pub arch: RegressionArch,
    body: Sequential<T>,
}

impl<T: Scalar> RegressionNet<T> {
    pub fn new(arch: RegressionArch, seed: u64) -> Result<Self, NetError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut body = Sequential::new();
        let mut in_c = RegressionArch::IN_CHANNELS;
        for (i, &w) in arch.layer_widths().iter().enumerate() {
            body = body.conv_bn_relu(
                &format!("layer{}", i + 1),
                Conv2d::new(in_c, w, 3, 1, false, HIDDEN_GAIN, &mut rng),
            );
            in_c = w;
        }
        body = body.push("head", Conv2d::new(in_c, NUM_CHANNELS, 1, 1, true, HEAD_GAIN, &mut rng));
        Ok(RegressionNet { arch, body })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NetError> {
        if x.c != RegressionArch::IN_CHANNELS || x.h == 0 || x.w == 0 {
            return Err(NetError::Shape {
                what: "regression input",
                expected: vec![x.n, RegressionArch::IN_CHANNELS, x.h, x.w],
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.check_input(x)?;
        Ok(self.body.forward(x))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.check_input(x)?;
        Ok(self.body.infer(x))
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        self.body.backward(grad_out)
    }
}

impl<T: Scalar> Network<T> for RegressionNet<T> {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) {
        self.body.visit("", f);
    }
}

/// Single-frame detection input tensor `1×1×H×W`.
pub fn frame_tensor<T: Scalar>(frame: &DepthFrame) -> Tensor<T> {
    Tensor::from_vec(
        1,
        1,
        frame.height(),
        frame.width(),
        frame.depth.as_slice().iter().map(|&v| T::of(v as f64)).collect(),
    )
}

/// Regression input: depth in channel 0 followed by the 20 detection maps.
pub fn regression_input<T: Scalar>(frame: &DepthFrame, det: &MapStack) -> Result<Tensor<T>, NetError> {
    if det.height() != frame.height() || det.width() != frame.width() {
        return Err(NetError::Shape {
            what: "detection maps",
            expected: vec![NUM_CHANNELS, frame.height(), frame.width()],
            got: vec![NUM_CHANNELS, det.height(), det.width()],
        });
    }
    let mut data: Vec<T> = Vec::with_capacity((1 + NUM_CHANNELS) * det.height() * det.width());
    data.extend(frame.depth.as_slice().iter().map(|&v| T::of(v as f64)));
    data.extend(det.as_slice().iter().map(|&v| T::of(v as f64)));
    Ok(Tensor::from_vec(1, 1 + NUM_CHANNELS, det.height(), det.width(), data))
}

fn to_stack<T: Scalar>(y: &Tensor<T>, index: usize) -> MapStack {
    let data = y.sample(index).iter().map(|v| v.f64() as f32).collect();
    MapStack::from_vec(MapKind::Prediction, y.h, y.w, data).expect("network output has 20 channels")
}

/// Detection confidence maps for one frame, inference mode.
pub fn detect_forward<T: Scalar>(net: &DetectionNet<T>, frame: &DepthFrame) -> Result<MapStack, NetError> {
    let y = net.infer(&frame_tensor::<T>(frame))?;
    Ok(to_stack(&y, 0))
}

/// Regression maps for one frame from its depth and detection maps, inference mode.
pub fn regress_forward<T: Scalar>(
    net: &RegressionNet<T>,
    frame: &DepthFrame,
    det: &MapStack,
) -> Result<MapStack, NetError> {
    let y = net.infer(&regression_input::<T>(frame, det)?)?;
    Ok(to_stack(&y, 0))
}

/// Detection loss over two map stacks.
pub fn detection_loss(pred: &MapStack, target: &MapStack) -> Result<f64, NetError> {
    check_stacks(pred, target)?;
    Ok(loss::bce_slice(pred.as_slice(), target.as_slice()))
}

pub fn regression_loss(pred: &MapStack, target: &MapStack) -> Result<f64, NetError> {
    check_stacks(pred, target)?;
    Ok(loss::mse_slice(pred.as_slice(), target.as_slice()))
}

fn check_stacks(a: &MapStack, b: &MapStack) -> Result<(), NetError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(NetError::Shape {
            what: "map stack",
            expected: vec![NUM_CHANNELS, a.height(), a.width()],
            got: vec![NUM_CHANNELS, b.height(), b.width()],
        });
    }
    Ok(())
}

/// Parameter values for a network, in visit order; used to compare nets.
pub fn param_values<T: Scalar, N: Network<T>>(net: &mut N) -> Vec<T> {
    let mut out = Vec::new();
    net.visit_params(&mut |_, p: &mut Param<T>| out.extend_from_slice(&p.value));
    out
}
