//! The trainable corner regressor: a small reference CNN with hand-written
//! reverse-mode differentiation, Adam with L2 weight decay, stochastic
//! weight averaging, checkpointing, and the per-light-type training loop.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod swa;
pub mod tensor;
pub mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CornerPrediction, CropPixels, CropSample, LightType};
use crate::{Error, Result};
use layers::{
    col2im_add, conv_backward_col, conv_backward_params, conv_forward, conv_out_extent,
    dense_backward, dense_forward, global_avg_pool, global_avg_pool_backward, im2col,
    tanh_backward_inplace, tanh_inplace,
};
use tensor::{RegressorParams, Tensor};

/// Head output width: four (x, y) corner offsets.
pub const HEAD_OUTPUTS: usize = 8;

/// Channel widths of the four conv blocks.
pub const CONV_WIDTHS: [usize; 4] = [16, 32, 64, 128];
const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;
/// Input channels per block: RGB in, then the conv widths.
const BLOCK_INPUTS: [usize; 4] = [3, CONV_WIDTHS[0], CONV_WIDTHS[1], CONV_WIDTHS[2]];
const LAYER_NAMES: [&str; 4] = ["conv1", "conv2", "conv3", "conv4"];

/// A backbone maps a crop to an 8-value corner prediction and provides the
/// matching gradients; swapping architectures means swapping this
/// implementation. A workspace carries one sample's activations so a
/// backward pass can reuse the state of the forward pass that produced it.
pub trait Backbone {
    type Workspace;

    /// Identifier stored in checkpoints to guard against mixing models.
    fn arch_id(&self) -> &'static str;

    /// Crop side length this instance expects.
    fn input_size(&self) -> u32;

    /// Parameter names and shapes, in canonical order.
    fn param_template(&self) -> Vec<(String, Vec<usize>)>;

    fn new_workspace(&self) -> Self::Workspace;

    /// Draws fresh parameters, consuming `rng` in template order.
    fn init_params(&self, rng: &mut ChaCha8Rng) -> RegressorParams;

    /// Runs the network; leaves activations in `ws` for a following
    /// [`backward`](Backbone::backward) call on the same sample.
    fn forward(
        &self,
        params: &RegressorParams,
        pixels: &CropPixels,
        ws: &mut Self::Workspace,
    ) -> Result<CornerPrediction>;

    /// Accumulates parameter gradients into the `grad` buffers of `params`
    /// for the sample most recently passed through `forward` with this
    /// workspace. Callers must initialize the buffers (see
    /// [`RegressorParams::zero_grads`]) before the first backward of a
    /// batch. `input_grad`, when given, receives the gradient with respect
    /// to the input pixels (overwritten, CHW layout).
    fn backward(
        &self,
        params: &mut RegressorParams,
        ws: &mut Self::Workspace,
        grad_out: &[f64; HEAD_OUTPUTS],
        input_grad: Option<&mut [f64]>,
    ) -> Result<()>;
}

/// Reference backbone: four 3x3 stride-2 conv blocks (widths 16/32/64/128,
/// tanh after each), global average pooling, a dense layer to 8 outputs,
/// and a final tanh that bounds predictions to (-1, 1).
#[derive(Debug, Clone)]
pub struct RefCnn {
    input_size: u32,
    /// Spatial side lengths: the input plus one entry per conv block.
    sides: [usize; 5],
}

impl RefCnn {
    pub fn new(input_size: u32) -> Result<Self> {
        if input_size < 8 {
            return Err(Error::Config(format!(
                "reference CNN needs a crop side of at least 8, got {input_size}"
            )));
        }
        let mut sides = [input_size as usize; 5];
        for i in 0..4 {
            sides[i + 1] = conv_out_extent(sides[i], KERNEL, STRIDE, PAD);
        }
        Ok(RefCnn { input_size, sides })
    }

    /// Feature width after pooling (the last conv block's channel count).
    pub fn feature_dim(&self) -> usize {
        CONV_WIDTHS[3]
    }

    fn patch_len(block: usize) -> usize {
        BLOCK_INPUTS[block] * KERNEL * KERNEL
    }

    /// Output positions (side squared) of conv block `block`.
    fn positions(&self, block: usize) -> usize {
        self.sides[block + 1] * self.sides[block + 1]
    }

    fn check_finite(name: &'static str, buf: &[f64]) -> Result<()> {
        if buf.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(name))
        }
    }

    fn check_params(&self, params: &RegressorParams) -> Result<()> {
        if params.len() != 10 {
            return Err(Error::InvalidInput(format!(
                "expected 10 parameter tensors, got {}",
                params.len()
            )));
        }
        Ok(())
    }
}

/// Per-sample activation and scratch buffers for [`RefCnn`].
pub struct RefCnnWorkspace {
    /// Post-tanh activations per block, each `width x positions`.
    act: [Vec<f64>; 4],
    /// im2col buffers per block, each `patch_len x positions`.
    col: [Vec<f64>; 4],
    pooled: Vec<f64>,
    gpool: Vec<f64>,
    /// Final tanh outputs, kept for the backward pass.
    out: [f64; HEAD_OUTPUTS],
    /// Activation-gradient ping-pong buffers, sized for the largest layer.
    gact_a: Vec<f64>,
    gact_b: Vec<f64>,
    gcol: Vec<f64>,
}

impl Backbone for RefCnn {
    type Workspace = RefCnnWorkspace;

    fn arch_id(&self) -> &'static str {
        "refcnn-3x3s2-16-32-64-128-gap-tanh"
    }

    fn input_size(&self) -> u32 {
        self.input_size
    }

    fn param_template(&self) -> Vec<(String, Vec<usize>)> {
        let mut t = Vec::with_capacity(10);
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            t.push((
                format!("{name}.kernel"),
                vec![CONV_WIDTHS[i], BLOCK_INPUTS[i], KERNEL, KERNEL],
            ));
            t.push((format!("{name}.bias"), vec![CONV_WIDTHS[i]]));
        }
        t.push(("head.weight".into(), vec![HEAD_OUTPUTS, self.feature_dim()]));
        t.push(("head.bias".into(), vec![HEAD_OUTPUTS]));
        t
    }

    fn new_workspace(&self) -> RefCnnWorkspace {
        let act = std::array::from_fn(|i| vec![0.0; CONV_WIDTHS[i] * self.positions(i)]);
        let col = std::array::from_fn(|i| vec![0.0; Self::patch_len(i) * self.positions(i)]);
        let input_len = 3 * self.sides[0] * self.sides[0];
        let max_act = (0..4)
            .map(|i| CONV_WIDTHS[i] * self.positions(i))
            .max()
            .unwrap()
            .max(input_len);
        let max_col = (0..4).map(|i| Self::patch_len(i) * self.positions(i)).max().unwrap();
        RefCnnWorkspace {
            act,
            col,
            pooled: vec![0.0; self.feature_dim()],
            gpool: vec![0.0; self.feature_dim()],
            out: [0.0; HEAD_OUTPUTS],
            gact_a: vec![0.0; max_act],
            gact_b: vec![0.0; max_act],
            gcol: vec![0.0; max_col],
        }
    }

    /// Centered uniform init with fan-in scaling: every value of a layer
    /// (kernel and bias alike) is drawn from U(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)) in parameter order.
    fn init_params(&self, rng: &mut ChaCha8Rng) -> RegressorParams {
        let mut params = RegressorParams::new();
        for (name, shape) in self.param_template() {
            let fan_in = if name.starts_with("head") {
                self.feature_dim()
            } else {
                let block = LAYER_NAMES
                    .iter()
                    .position(|l| name.starts_with(l))
                    .expect("template names follow layer names");
                Self::patch_len(block)
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let numel: usize = shape.iter().product();
            let data: Vec<f64> =
                (0..numel).map(|_| bound * (2.0 * rng.random::<f64>() - 1.0)).collect();
            params
                .push(name, Tensor::from_data(&shape, data).expect("template shape matches data"))
                .expect("template names are unique");
        }
        params
    }

    fn forward(
        &self,
        params: &RegressorParams,
        pixels: &CropPixels,
        ws: &mut RefCnnWorkspace,
    ) -> Result<CornerPrediction> {
        if pixels.size() != self.input_size {
            return Err(Error::InvalidInput(format!(
                "expected a {0}x{0} crop, got {1}x{1}",
                self.input_size,
                pixels.size()
            )));
        }
        self.check_params(params)?;
        for block in 0..4 {
            let side_in = self.sides[block];
            let positions = self.positions(block);
            {
                let (input, channels): (&[f64], usize) = if block == 0 {
                    (pixels.data(), 3)
                } else {
                    (&ws.act[block - 1], CONV_WIDTHS[block - 1])
                };
                im2col(input, channels, side_in, side_in, KERNEL, STRIDE, PAD, &mut ws.col[block]);
            }
            conv_forward(
                &ws.col[block],
                params.tensor(2 * block).data(),
                params.tensor(2 * block + 1).data(),
                CONV_WIDTHS[block],
                Self::patch_len(block),
                positions,
                &mut ws.act[block],
            );
            Self::check_finite(LAYER_NAMES[block], &ws.act[block])?;
            tanh_inplace(&mut ws.act[block]);
        }
        let hw = self.positions(3);
        global_avg_pool(&ws.act[3], CONV_WIDTHS[3], hw, &mut ws.pooled);
        let mut logits = [0.0; HEAD_OUTPUTS];
        dense_forward(
            &ws.pooled,
            params.tensor(8).data(),
            params.tensor(9).data(),
            HEAD_OUTPUTS,
            self.feature_dim(),
            &mut logits,
        );
        Self::check_finite("head", &logits)?;
        for (o, l) in ws.out.iter_mut().zip(logits) {
            *o = l.tanh();
        }
        Ok(CornerPrediction(ws.out))
    }

    fn backward(
        &self,
        params: &mut RegressorParams,
        ws: &mut RefCnnWorkspace,
        grad_out: &[f64; HEAD_OUTPUTS],
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check_params(params)?;
        let mut input_grad = input_grad;
        if let Some(gin) = &input_grad {
            let want = 3 * self.sides[0] * self.sides[0];
            if gin.len() != want {
                return Err(Error::InvalidInput(format!(
                    "input gradient buffer holds {} values, expected {want}",
                    gin.len()
                )));
            }
        }

        // Output tanh: glogits = grad_out * (1 - out^2).
        let mut glogits = *grad_out;
        tanh_backward_inplace(&ws.out, &mut glogits);

        // Dense head: weight data is read for gx while its gradient slice
        // is written; the two live in disjoint buffers of the same tensor.
        let feature_dim = self.feature_dim();
        {
            let (wt, bt) = params.pair_mut(8, 9);
            let (wdata, wgrad) = wt.data_and_grad_mut();
            let (_, bgrad) = bt.data_and_grad_mut();
            dense_backward(
                &ws.pooled,
                wdata,
                &glogits,
                HEAD_OUTPUTS,
                feature_dim,
                wgrad,
                bgrad,
                &mut ws.gpool,
            );
        }

        // Average pool, then the conv blocks deepest first. `cur` always
        // points at the live activation gradient; `next` receives the
        // gradient one layer down.
        let RefCnnWorkspace { act, col, gpool, gact_a, gact_b, gcol, .. } = ws;
        let (mut cur, mut next) = (gact_a, gact_b);
        let hw = self.positions(3);
        global_avg_pool_backward(gpool, CONV_WIDTHS[3], hw, &mut cur[..CONV_WIDTHS[3] * hw]);

        for block in (0..4).rev() {
            let positions = self.positions(block);
            let width = CONV_WIDTHS[block];
            let patch_len = Self::patch_len(block);
            let side_in = self.sides[block];
            let gcur = &mut cur[..width * positions];
            tanh_backward_inplace(&act[block][..width * positions], gcur);
            {
                let (kt, bt) = params.pair_mut(2 * block, 2 * block + 1);
                let (_, gkernel) = kt.data_and_grad_mut();
                let (_, gbias) = bt.data_and_grad_mut();
                conv_backward_params(gcur, &col[block], width, patch_len, positions, gkernel, gbias);
            }
            if block == 0 {
                if let Some(gin) = input_grad.take() {
                    let gcol_b = &mut gcol[..patch_len * positions];
                    conv_backward_col(
                        gcur,
                        params.tensor(0).data(),
                        width,
                        patch_len,
                        positions,
                        gcol_b,
                    );
                    gin.fill(0.0);
                    col2im_add(gcol_b, 3, side_in, side_in, KERNEL, STRIDE, PAD, gin);
                }
            } else {
                let gcol_b = &mut gcol[..patch_len * positions];
                conv_backward_col(
                    gcur,
                    params.tensor(2 * block).data(),
                    width,
                    patch_len,
                    positions,
                    gcol_b,
                );
                let in_len = CONV_WIDTHS[block - 1] * self.positions(block - 1);
                let gin = &mut next[..in_len];
                gin.fill(0.0);
                col2im_add(gcol_b, BLOCK_INPUTS[block], side_in, side_in, KERNEL, STRIDE, PAD, gin);
                std::mem::swap(&mut cur, &mut next);
            }
        }
        Ok(())
    }
}

/// Four independent per-light-type parameter sets sharing one architecture.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    slots: [Option<RegressorParams>; 4],
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the model for `light`, returning any previous one.
    pub fn insert(&mut self, light: LightType, params: RegressorParams) -> Option<RegressorParams> {
        self.slots[light.index()].replace(params)
    }

    pub fn get(&self, light: LightType) -> Result<&RegressorParams> {
        self.slots[light.index()]
            .as_ref()
            .ok_or_else(|| Error::Config(format!("no trained model for light type {}", light.code())))
    }

    pub fn contains(&self, light: LightType) -> bool {
        self.slots[light.index()].is_some()
    }

    /// True when all four light types have a model.
    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    /// Light types that currently have a model, in canonical order.
    pub fn light_types(&self) -> impl Iterator<Item = LightType> + '_ {
        LightType::ALL.into_iter().filter(|l| self.contains(*l))
    }
}

/// Routes `sample` to its light type's model and runs the forward pass.
pub fn predict<B: Backbone>(
    backbone: &B,
    registry: &ModelRegistry,
    sample: &CropSample,
    ws: &mut B::Workspace,
) -> Result<CornerPrediction> {
    let params = registry.get(sample.light_type)?;
    backbone.forward(params, &sample.pixels, ws)
}
