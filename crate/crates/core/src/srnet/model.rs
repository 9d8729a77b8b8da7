//! Model construction and forward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{
    conv_fan_in, kaiming_init, ops, BnMode, BnRunning, Shape, Tape, Tensor, Var,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct ConvPlan {
    weight: usize,
    bias: Option<usize>,
    stride: (usize, usize),
    padding: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct BnPlan {
    gamma: usize,
    beta: usize,
    running: usize,
}

#[derive(Debug, Clone)]
struct BlockPlan {
    conv1: ConvPlan,
    bn1: BnPlan,
    conv2: ConvPlan,
    bn2: BnPlan,
    projection: Option<(ConvPlan, BnPlan)>,
}

#[derive(Debug, Clone)]
struct Plan {
    stem: ConvPlan,
    stem_bn: BnPlan,
    blocks: Vec<BlockPlan>,
    head: ConvPlan,
}

/// The retrieval network: named parameters, batch-norm running
/// statistics, and the layer plan derived from its config.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Tensor<f32>>,
    pub names: Vec<String>,
    pub bn_running: Vec<BnRunning>,
    pub init_seed: u64,
    plan: Plan,
}

struct Builder {
    params: Vec<Tensor<f32>>,
    names: Vec<String>,
    bn_running: Vec<BnRunning>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn conv(
        &mut self,
        name: &str,
        shape: Shape,
        bias: bool,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<ConvPlan> {
        let weight = kaiming_init(shape, conv_fan_in(shape), &mut self.rng)?;
        self.params.push(weight);
        self.names.push(format!("{name}.weight"));
        let w_idx = self.params.len() - 1;
        let b_idx = if bias {
            self.params.push(Tensor::zeros(Shape([1, shape.n(), 1, 1])));
            self.names.push(format!("{name}.bias"));
            Some(self.params.len() - 1)
        } else {
            None
        };
        Ok(ConvPlan {
            weight: w_idx,
            bias: b_idx,
            stride,
            padding,
        })
    }

    fn bn(&mut self, name: &str, channels: usize) -> BnPlan {
        self.params.push(Tensor::full(Shape([1, channels, 1, 1]), 1.0));
        self.names.push(format!("{name}.gamma"));
        let gamma = self.params.len() - 1;
        self.params.push(Tensor::zeros(Shape([1, channels, 1, 1])));
        self.names.push(format!("{name}.beta"));
        let beta = self.params.len() - 1;
        self.bn_running.push(BnRunning::new(channels));
        BnPlan {
            gamma,
            beta,
            running: self.bn_running.len() - 1,
        }
    }
}

/// Construct a model with Kaiming-initialized convolutions. The same
/// seed yields bit-identical parameters.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut b = Builder {
        params: Vec::new(),
        names: Vec::new(),
        bn_running: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let (kh, kw) = config.stem_kernel;
    let stem = b.conv(
        "stem",
        Shape([config.stem_channels, 1, kh, kw]),
        false,
        (2, 1),
        (kh / 2, kw / 2),
    )?;
    let stem_bn = b.bn("stem.bn", config.stem_channels);
    let mut blocks = Vec::new();
    let mut in_channels = config.stem_channels;
    let (bh, bw) = config.block_kernel;
    for (stage, (&n_blocks, &channels)) in config
        .stage_blocks
        .iter()
        .zip(&config.stage_channels)
        .enumerate()
    {
        for block in 0..n_blocks {
            let downsample = stage > 0 && block == 0;
            let stride = if downsample { (2, 1) } else { (1, 1) };
            let name = format!("stage{}.block{}", stage + 1, block);
            let conv1 = b.conv(
                &format!("{name}.conv1"),
                Shape([channels, in_channels, bh, bw]),
                false,
                stride,
                (bh / 2, bw / 2),
            )?;
            let bn1 = b.bn(&format!("{name}.bn1"), channels);
            let conv2 = b.conv(
                &format!("{name}.conv2"),
                Shape([channels, channels, bh, bw]),
                false,
                (1, 1),
                (bh / 2, bw / 2),
            )?;
            let bn2 = b.bn(&format!("{name}.bn2"), channels);
            let projection = if downsample || channels != in_channels {
                let conv = b.conv(
                    &format!("{name}.proj"),
                    Shape([channels, in_channels, 1, 1]),
                    false,
                    stride,
                    (0, 0),
                )?;
                let bn = b.bn(&format!("{name}.proj.bn"), channels);
                Some((conv, bn))
            } else {
                None
            };
            blocks.push(BlockPlan {
                conv1,
                bn1,
                conv2,
                bn2,
                projection,
            });
            in_channels = channels;
        }
    }
    let final_extent = *config.frequency_extents().last().expect("non-empty");
    let head = b.conv(
        "head",
        Shape([1, in_channels, final_extent, 1]),
        true,
        (1, 1),
        (0, 0),
    )?;
    Ok(Model {
        config: config.clone(),
        params: b.params,
        names: b.names,
        bn_running: b.bn_running,
        init_seed: seed,
        plan: Plan {
            stem,
            stem_bn,
            blocks,
            head,
        },
    })
}

impl Model {
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.shape().count()).sum()
    }

    /// Round-trip every running statistic through f32 so the in-memory
    /// model matches its checkpointed form bit-exactly.
    pub fn quantize_running_stats(&mut self) {
        for running in &mut self.bn_running {
            for v in running.mean.iter_mut().chain(running.var.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    fn check_input(&self, x: Shape) -> Result<()> {
        if x.c() != 1 || x.h() != self.config.input_freq {
            return Err(Error::ShapeMismatch(format!(
                "expected (n, 1, {}, w) input, got {x}",
                self.config.input_freq
            )));
        }
        Ok(())
    }

    /// Inference forward using running statistics, no tape. Output is
    /// (n, 1, 1, w) for an (n, 1, 71, w) input; finite outputs are
    /// enforced.
    pub fn forward_eval(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(x.shape())?;
        let p = &self.plan;
        let conv = |c: &ConvPlan, input: &Tensor<f32>| -> Result<Tensor<f32>> {
            ops::conv2d_forward(
                input,
                &self.params[c.weight],
                c.bias.map(|b| &self.params[b]),
                c.stride,
                c.padding,
            )
        };
        let bn = |b: &BnPlan, input: &Tensor<f32>| -> Result<Tensor<f32>> {
            let running = &self.bn_running[b.running];
            ops::bn_eval_forward(
                input,
                &self.params[b.gamma],
                &self.params[b.beta],
                &running.mean,
                &running.var,
                running.eps,
            )
        };
        let mut y = conv(&p.stem, x)?;
        y = bn(&p.stem_bn, &y)?;
        y = ops::relu_forward(&y);
        let (pooled, _) = ops::maxpool2d_forward(&y, (3, 3), (2, 1), (1, 1))?;
        y = pooled;
        for block in &p.blocks {
            let shortcut = match &block.projection {
                Some((pc, pb)) => {
                    let s = conv(pc, &y)?;
                    bn(pb, &s)?
                }
                None => y.clone(),
            };
            let mut z = conv(&block.conv1, &y)?;
            z = bn(&block.bn1, &z)?;
            z = ops::relu_forward(&z);
            z = conv(&block.conv2, &z)?;
            z = bn(&block.bn2, &z)?;
            z = ops::add_forward(&z, &shortcut)?;
            y = ops::relu_forward(&z);
        }
        let out = conv(&p.head, &y)?;
        if !out.all_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok(out)
    }

    /// Training forward on a tape (batch statistics, running-stat
    /// updates). Returns the output var and one var per parameter, in
    /// parameter order.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<f32>,
        x: &Tensor<f32>,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(x.shape())?;
        let param_vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let input = tape.leaf(x.clone());
        let plan = self.plan.clone();
        let conv = |tape: &mut Tape<f32>, c: &ConvPlan, v: Var| -> Result<Var> {
            tape.conv2d(
                v,
                param_vars[c.weight],
                c.bias.map(|b| param_vars[b]),
                c.stride,
                c.padding,
            )
        };
        let mut y = conv(tape, &plan.stem, input)?;
        y = tape.batchnorm2d(
            y,
            param_vars[plan.stem_bn.gamma],
            param_vars[plan.stem_bn.beta],
            &mut self.bn_running[plan.stem_bn.running],
            BnMode::Train,
        )?;
        y = tape.relu(y)?;
        y = tape.maxpool2d(y, (3, 3), (2, 1), (1, 1))?;
        for block in &plan.blocks {
            let shortcut = match &block.projection {
                Some((pc, pb)) => {
                    let s = conv(tape, pc, y)?;
                    tape.batchnorm2d(
                        s,
                        param_vars[pb.gamma],
                        param_vars[pb.beta],
                        &mut self.bn_running[pb.running],
                        BnMode::Train,
                    )?
                }
                None => y,
            };
            let mut z = conv(tape, &block.conv1, y)?;
            z = tape.batchnorm2d(
                z,
                param_vars[block.bn1.gamma],
                param_vars[block.bn1.beta],
                &mut self.bn_running[block.bn1.running],
                BnMode::Train,
            )?;
            z = tape.relu(z)?;
            z = conv(tape, &block.conv2, z)?;
            z = tape.batchnorm2d(
                z,
                param_vars[block.bn2.gamma],
                param_vars[block.bn2.beta],
                &mut self.bn_running[block.bn2.running],
                BnMode::Train,
            )?;
            z = tape.residual_add(z, shortcut)?;
            y = tape.relu(z)?;
        }
        let out = conv(tape, &plan.head, y)?;
        Ok((out, param_vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_forward_shapes_and_width_preservation() {
        let model = build_model(&ModelConfig::desk(), 7).unwrap();
        for width in [64, 128, 540] {
            let x = Tensor::zeros(Shape([1, 1, 71, width]));
            let y = model.forward_eval(&x).unwrap();
            assert_eq!(y.shape(), Shape([1, 1, 1, width]), "width {width}");
            assert!(y.all_finite());
        }
    }

    #[test]
    fn full_forward_output_is_1x540() {
        let model = build_model(&ModelConfig::full(), 7).unwrap();
        let x = Tensor::zeros(Shape([1, 1, 71, 540]));
        let y = model.forward_eval(&x).unwrap();
        assert_eq!(y.shape(), Shape([1, 1, 1, 540]));
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let a = build_model(&ModelConfig::desk(), 42).unwrap();
        let b = build_model(&ModelConfig::desk(), 42).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.names, b.names);
        let c = build_model(&ModelConfig::desk(), 43).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn wrong_input_freq_rejected() {
        let model = build_model(&ModelConfig::desk(), 7).unwrap();
        let x = Tensor::zeros(Shape([1, 1, 64, 100]));
        assert!(model.forward_eval(&x).is_err());
    }

    #[test]
    fn train_forward_matches_eval_after_stat_sync() {
        // after one train pass, eval with the batch's statistics is
        // consistent (finite, same shapes); exact equality is not
        // expected because eval uses running stats
        let mut model = build_model(&ModelConfig::desk(), 3).unwrap();
        let x = Tensor::full(Shape([2, 1, 71, 64]), 0.25);
        let mut tape = Tape::new();
        let (out, _) = model.forward_train(&mut tape, &x).unwrap();
        assert_eq!(tape.value(out).shape(), Shape([2, 1, 1, 64]));
        let y = model.forward_eval(&x).unwrap();
        assert_eq!(y.shape(), Shape([2, 1, 1, 64]));
    }
}
