//! The full autoencoder: 7-stage encoder, 7-stage decoder, complex input
//! lift, sigmoid output head, and the binary checkpoint record format.
//!
//! Default geometry (32x32 input): five stride-2/stride-1 convolutions down
//! to 4x4x64, a linear layer to a 64-dimensional complex latent, then the
//! mirror image with transposed convolutions back to 32x32x1. Conv layers
//! normalize with batch norm, linear layers with layer norm. The output head
//! `f_out` is a 1x1 convolution plus sigmoid applied to output magnitudes.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{BnBuffers, Tape, Var};
use crate::error::{CaeError, Result};
use crate::layers::{
    complex_layer, AblationFlags, ComplexLayerOut, ComplexVar, NormCtx, RealOp,
};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{from_polar, ComplexTensor, RealTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaeConfig {
    pub image_size: usize,
    /// Encoder conv channel widths; the decoder mirrors them.
    pub widths: [usize; 5],
    pub latent_dim: usize,
    pub flags: AblationFlags,
    pub seed: u64,
}

impl Default for CaeConfig {
    fn default() -> Self {
        CaeConfig {
            image_size: 32,
            widths: [32, 32, 64, 64, 64],
            latent_dim: 64,
            flags: AblationFlags::default(),
            seed: 0,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || self.image_size % 8 != 0 {
            return Err(CaeError::Geometry(format!(
                "image size must be a positive multiple of 8, got {}",
                self.image_size
            )));
        }
        if self.widths.iter().any(|&w| w == 0) || self.latent_dim == 0 {
            return Err(CaeError::Geometry("channel widths and latent dim must be positive".into()));
        }
        Ok(())
    }

    fn bottleneck_side(&self) -> usize {
        self.image_size / 8
    }

    fn flat_dim(&self) -> usize {
        self.widths[4] * self.bottleneck_side() * self.bottleneck_side()
    }
}

/// Index of a named parameter tensor in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Flat registry of named trainable tensors. Registration order is the
/// binding, gradient, and checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, RealTensor)>,
}

impl ParamStore {
    fn add(&mut self, name: String, value: RealTensor) -> ParamId {
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn get(&self, id: ParamId) -> &RealTensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut RealTensor {
        &mut self.entries[id.0].1
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    /// Insert every parameter as a tape leaf, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
enum NormKind {
    /// Batch norm with running statistics stored at this buffer index.
    Batch(usize),
    Layer,
}

#[derive(Debug, Clone)]
struct LayerSpec {
    op: RealOp,
    w: ParamId,
    b_m: ParamId,
    b_phi: ParamId,
    gamma: ParamId,
    beta: ParamId,
    norm: NormKind,
    name: String,
}

enum BnAccess<'a> {
    Train(&'a mut [BnBuffers]),
    Eval(&'a [BnBuffers]),
}

impl<'a> BnAccess<'a> {
    fn ctx(&mut self, idx: usize, gamma: Var, beta: Var) -> NormCtx<'_> {
        match self {
            BnAccess::Train(bufs) => NormCtx::BatchTrain {
                gamma,
                beta,
                bufs: &mut bufs[idx],
            },
            BnAccess::Eval(bufs) => NormCtx::BatchEval {
                gamma,
                beta,
                bufs: &bufs[idx],
            },
        }
    }
}

/// Tape handles produced by a forward pass. The phase channels of the
/// latent and output layers are always materialized here.
pub struct ForwardVars {
    pub x_hat: Var,
    pub out_z: ComplexVar,
    pub out_mag: Var,
    pub out_phase: Var,
    pub latent_z: ComplexVar,
    pub latent_mag: Var,
    pub latent_phase: Var,
}

/// Forward results as plain tensors (eval mode).
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub x_hat: RealTensor,
    pub out_mag: RealTensor,
    pub out_phase: RealTensor,
    pub latent_mag: RealTensor,
    pub latent_phase: RealTensor,
}

impl ForwardOutput {
    pub fn z_out(&self) -> ComplexTensor {
        from_polar(&self.out_mag, &self.out_phase).expect("magnitudes are nonnegative")
    }

    pub fn latent(&self) -> ComplexTensor {
        from_polar(&self.latent_mag, &self.latent_phase).expect("magnitudes are nonnegative")
    }
}

#[derive(Debug, Clone)]
pub struct CaeModel {
    pub config: CaeConfig,
    params: ParamStore,
    encoder: Vec<LayerSpec>,
    decoder: Vec<LayerSpec>,
    bn: Vec<BnBuffers>,
    f_out_w: ParamId,
    f_out_b: ParamId,
}

impl CaeModel {
    /// Build a model with fresh parameters drawn from the config seed:
    /// weights and magnitude biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// phase biases zero, scale one, shift zero, running stats (0, 1).
    pub fn build(config: CaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, Stream::Init, 0);
        let mut params = ParamStore::default();
        let mut bn = Vec::new();

        let mut draw = |params: &mut ParamStore, name: String, shape: &[usize], bound: f64| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            params.add(name, RealTensor::from_vec(shape, data).expect("init shape"))
        };

        let mut complex_layer_spec = |params: &mut ParamStore,
                                      bn: &mut Vec<BnBuffers>,
                                      name: &str,
                                      op: RealOp,
                                      w_shape: &[usize],
                                      fan_in: usize,
                                      out_ch: usize|
         -> LayerSpec {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = draw(params, format!("{name}.w"), w_shape, bound);
            let b_m = draw(params, format!("{name}.b_m"), &[out_ch], bound);
            let b_phi = params.add(format!("{name}.b_phi"), RealTensor::zeros(&[out_ch]));
            let gamma = params.add(format!("{name}.gamma"), RealTensor::filled(&[out_ch], 1.0));
            let beta = params.add(format!("{name}.beta"), RealTensor::zeros(&[out_ch]));
            let norm = match op {
                RealOp::Linear => NormKind::Layer,
                _ => {
                    bn.push(BnBuffers::new(out_ch));
                    NormKind::Batch(bn.len() - 1)
                }
            };
            LayerSpec {
                op,
                w,
                b_m,
                b_phi,
                gamma,
                beta,
                norm,
                name: name.to_string(),
            }
        };

        let [c1, c2, c3, c4, c5] = config.widths;
        let mut encoder = Vec::new();
        let enc_conv = [
            ("enc.conv1", 1, c1, 2),
            ("enc.conv2", c1, c2, 1),
            ("enc.conv3", c2, c3, 2),
            ("enc.conv4", c3, c4, 1),
            ("enc.conv5", c4, c5, 2),
        ];
        for (name, cin, cout, stride) in enc_conv {
            encoder.push(complex_layer_spec(
                &mut params,
                &mut bn,
                name,
                RealOp::Conv { stride, pad: 1 },
                &[cout, cin, 3, 3],
                cin * 9,
                cout,
            ));
        }
        encoder.push(complex_layer_spec(
            &mut params,
            &mut bn,
            "enc.lin",
            RealOp::Linear,
            &[config.latent_dim, config.flat_dim()],
            config.flat_dim(),
            config.latent_dim,
        ));

        let mut decoder = Vec::new();
        decoder.push(complex_layer_spec(
            &mut params,
            &mut bn,
            "dec.lin",
            RealOp::Linear,
            &[config.flat_dim(), config.latent_dim],
            config.latent_dim,
            config.flat_dim(),
        ));
        let dec_conv: [(&str, usize, usize, bool); 5] = [
            ("dec.tconv1", c5, c4, true),
            ("dec.conv2", c4, c3, false),
            ("dec.tconv3", c3, c2, true),
            ("dec.conv4", c2, c1, false),
            ("dec.tconv5", c1, 1, true),
        ];
        for (name, cin, cout, transposed) in dec_conv {
            let (op, w_shape) = if transposed {
                (
                    RealOp::ConvTranspose {
                        stride: 2,
                        pad: 1,
                        output_pad: 1,
                    },
                    vec![cin, cout, 3, 3],
                )
            } else {
                (RealOp::Conv { stride: 1, pad: 1 }, vec![cout, cin, 3, 3])
            };
            decoder.push(complex_layer_spec(
                &mut params,
                &mut bn,
                name,
                op,
                &w_shape,
                cin * 9,
                cout,
            ));
        }

        // Output head: 1x1 conv initialized to identity (w = 1, b = 0).
        let f_out_w = params.add("f_out.w".into(), RealTensor::filled(&[1, 1, 1, 1], 1.0));
        let f_out_b = params.add("f_out.b".into(), RealTensor::zeros(&[1]));

        Ok(CaeModel {
            config,
            params,
            encoder,
            decoder,
            bn,
            f_out_w,
            f_out_b,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Redraw every phase bias from U(-pi, pi).
    ///
    /// Rotation equivariance holds for any parameters, but at the training
    /// init (all phase biases zero) every activation sits exactly on the
    /// real axis, where the two phase branches meet and the pixelwise phase
    /// metric amplifies floating-point noise without bound. Measuring at a
    /// generic parameter point checks the same property away from that
    /// degenerate configuration.
    pub fn randomize_phase_biases(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, Stream::Init, 1);
        for id in self.params.ids().collect::<Vec<_>>() {
            if self.params.name(id).ends_with(".b_phi") {
                for v in self.params.get_mut(id).data_mut() {
                    *v = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                }
            }
        }
    }

    /// Parameter ids of the decoder and output head, for decoder-only
    /// fine-tuning.
    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .decoder
            .iter()
            .flat_map(|l| [l.w, l.b_m, l.b_phi, l.gamma, l.beta])
            .collect();
        ids.push(self.f_out_w);
        ids.push(self.f_out_b);
        ids
    }

    fn check_input(&self, x: &RealTensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.config.image_size || s[3] != self.config.image_size {
            return Err(CaeError::ShapeMismatch(format!(
                "input must be [n, 1, {0}, {0}], got {1:?}",
                self.config.image_size, s
            )));
        }
        if x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(CaeError::InvalidArgument(
                "input image values must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Lift a real image to the complex plane with a uniform initial phase.
    /// The magnitude plane is the image itself.
    fn lift(&self, tape: &mut Tape, x: &RealTensor, phase: f64) -> (ComplexVar, Var) {
        let (c, s) = (phase.cos(), phase.sin());
        let z = ComplexVar {
            re: tape.leaf(x.map(|v| v * c)),
            im: tape.leaf(x.map(|v| v * s)),
        };
        (z, tape.leaf(x.clone()))
    }

    #[allow(clippy::too_many_arguments)]
    fn run_layer(
        tape: &mut Tape,
        binding: &[Var],
        spec: &LayerSpec,
        bn: &mut BnAccess<'_>,
        z: &ComplexVar,
        z_mag: Option<Var>,
        want_phase: bool,
        flags: AblationFlags,
    ) -> Result<ComplexLayerOut> {
        let (gamma, beta) = (binding[spec.gamma.0], binding[spec.beta.0]);
        let norm = match spec.norm {
            NormKind::Batch(idx) => bn.ctx(idx, gamma, beta),
            NormKind::Layer => NormCtx::Layer { gamma, beta },
        };
        complex_layer(
            tape,
            spec.op,
            binding[spec.w.0],
            binding[spec.b_m.0],
            binding[spec.b_phi.0],
            norm,
            z,
            z_mag,
            want_phase,
            flags,
        )
    }

    fn encode_impl(
        config: &CaeConfig,
        encoder: &[LayerSpec],
        tape: &mut Tape,
        binding: &[Var],
        bn: &mut BnAccess<'_>,
        z0: ComplexVar,
        z0_mag: Var,
    ) -> Result<ComplexLayerOut> {
        let flags = config.flags;
        let mut z = z0;
        let mut z_mag = Some(z0_mag);
        let mut last = None;
        for (i, spec) in encoder.iter().enumerate() {
            let is_latent = i == encoder.len() - 1;
            if is_latent {
                // Flatten [n, c, h, w] -> [n, c*h*w] before the linear layer.
                let n = tape.value(z.re).shape()[0];
                let flat = [n, config.flat_dim()];
                z = ComplexVar {
                    re: tape.reshape(z.re, &flat)?,
                    im: tape.reshape(z.im, &flat)?,
                };
                z_mag = match z_mag {
                    Some(m) => Some(tape.reshape(m, &flat)?),
                    None => None,
                };
            }
            let out = Self::run_layer(tape, binding, spec, bn, &z, z_mag, is_latent, flags)?;
            z = out.z;
            z_mag = Some(out.z_mag);
            last = Some(out);
        }
        Ok(last.expect("encoder has layers"))
    }

    #[allow(clippy::too_many_arguments)]
    fn decode_impl(
        config: &CaeConfig,
        decoder: &[LayerSpec],
        f_out: (ParamId, ParamId),
        tape: &mut Tape,
        binding: &[Var],
        bn: &mut BnAccess<'_>,
        latent: ComplexVar,
        want_phase: bool,
    ) -> Result<(ComplexLayerOut, Var)> {
        let flags = config.flags;
        let mut z = latent;
        let mut z_mag: Option<Var> = None;
        let mut last = None;
        for (i, spec) in decoder.iter().enumerate() {
            let is_final = i == decoder.len() - 1;
            let out = Self::run_layer(
                tape,
                binding,
                spec,
                bn,
                &z,
                z_mag,
                want_phase && is_final,
                flags,
            )?;
            z = out.z;
            z_mag = Some(out.z_mag);
            if i == 0 {
                // Unflatten [n, c*h*w] -> [n, c, h, w] after the linear layer.
                let n = tape.value(z.re).shape()[0];
                let side = config.bottleneck_side();
                let shape = [n, config.widths[4], side, side];
                z = ComplexVar {
                    re: tape.reshape(z.re, &shape)?,
                    im: tape.reshape(z.im, &shape)?,
                };
                z_mag = Some(tape.reshape(out.z_mag, &shape)?);
            }
            last = Some(out);
        }
        let out = last.expect("decoder has layers");

        let x_hat = if flags.disable_f_out {
            tape.clamp01(out.mag)
        } else {
            let y = tape.conv2d(out.mag, binding[f_out.0 .0], Some(binding[f_out.1 .0]), 1, 0)?;
            tape.sigmoid(y)
        };
        Ok((out, x_hat))
    }

    /// Train-mode forward on an existing tape with a caller-provided
    /// parameter binding; updates batch-norm running statistics.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        binding: &[Var],
        x: &RealTensor,
        phase: f64,
    ) -> Result<ForwardVars> {
        self.check_input(x)?;
        let (z0, z0_mag) = self.lift(tape, x, phase);
        let mut access = BnAccess::Train(&mut self.bn);
        let latent =
            Self::encode_impl(&self.config, &self.encoder, tape, binding, &mut access, z0, z0_mag)?;
        let (output, x_hat) = Self::decode_impl(
            &self.config,
            &self.decoder,
            (self.f_out_w, self.f_out_b),
            tape,
            binding,
            &mut access,
            latent.z,
            true,
        )?;
        Ok(ForwardVars {
            x_hat,
            out_z: output.z,
            out_mag: output.mag,
            out_phase: output.phase.expect("final layer phase requested"),
            latent_z: latent.z,
            latent_mag: latent.mag,
            latent_phase: latent.phase.expect("latent phase requested"),
        })
    }

    /// Eval-mode forward on an existing tape; binds parameters itself and
    /// leaves running statistics untouched.
    pub fn forward_eval_on(
        &self,
        tape: &mut Tape,
        x: &RealTensor,
        phase: f64,
    ) -> Result<ForwardVars> {
        self.check_input(x)?;
        let binding = self.params.bind(tape);
        let (z0, z0_mag) = self.lift(tape, x, phase);
        let mut access = BnAccess::Eval(&self.bn);
        let latent =
            Self::encode_impl(&self.config, &self.encoder, tape, &binding, &mut access, z0, z0_mag)?;
        let (output, x_hat) = Self::decode_impl(
            &self.config,
            &self.decoder,
            (self.f_out_w, self.f_out_b),
            tape,
            &binding,
            &mut access,
            latent.z,
            true,
        )?;
        Ok(ForwardVars {
            x_hat,
            out_z: output.z,
            out_mag: output.mag,
            out_phase: output.phase.expect("final layer phase requested"),
            latent_z: latent.z,
            latent_mag: latent.mag,
            latent_phase: latent.phase.expect("latent phase requested"),
        })
    }

    /// Decoder-only train-mode forward from a caller-built latent.
    pub fn decode_train(
        &mut self,
        tape: &mut Tape,
        binding: &[Var],
        latent: ComplexVar,
    ) -> Result<(ComplexLayerOut, Var)> {
        let mut access = BnAccess::Train(&mut self.bn);
        Self::decode_impl(
            &self.config,
            &self.decoder,
            (self.f_out_w, self.f_out_b),
            tape,
            binding,
            &mut access,
            latent,
            false,
        )
    }

    /// Decoder-only eval-mode forward from a caller-built latent; binds
    /// parameters itself.
    pub fn decode_eval(
        &self,
        tape: &mut Tape,
        latent: ComplexVar,
    ) -> Result<(ComplexLayerOut, Var)> {
        let binding = self.params.bind(tape);
        let mut access = BnAccess::Eval(&self.bn);
        Self::decode_impl(
            &self.config,
            &self.decoder,
            (self.f_out_w, self.f_out_b),
            tape,
            &binding,
            &mut access,
            latent,
            false,
        )
    }

    /// Decode one latent vector (given in rectangular form) to an image.
    pub fn decode_image(&self, re: &RealTensor, im: &RealTensor) -> Result<RealTensor> {
        let mut tape = Tape::new();
        let latent = ComplexVar {
            re: tape.leaf(re.clone()),
            im: tape.leaf(im.clone()),
        };
        let (_, x_hat) = self.decode_eval(&mut tape, latent)?;
        Ok(tape.value(x_hat).clone())
    }

    /// Eval-mode forward returning plain tensors.
    pub fn forward(&self, x: &RealTensor) -> Result<ForwardOutput> {
        self.forward_with_phase(x, 0.0)
    }

    /// Eval-mode forward with a non-default uniform input phase.
    pub fn forward_with_phase(&self, x: &RealTensor, phase: f64) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let vars = self.forward_eval_on(&mut tape, x, phase)?;
        Ok(ForwardOutput {
            x_hat: tape.value(vars.x_hat).clone(),
            out_mag: tape.value(vars.out_mag).clone(),
            out_phase: tape.value(vars.out_phase).clone(),
            latent_mag: tape.value(vars.latent_mag).clone(),
            latent_phase: tape.value(vars.latent_phase).clone(),
        })
    }

    /// Named non-trainable state (running statistics), in a fixed order.
    pub fn buffers(&self) -> Vec<(String, RealTensor)> {
        let mut out = Vec::new();
        for spec in self.encoder.iter().chain(self.decoder.iter()) {
            if let NormKind::Batch(idx) = spec.norm {
                out.push((format!("{}.running_mean", spec.name), self.bn[idx].running_mean.clone()));
                out.push((format!("{}.running_var", spec.name), self.bn[idx].running_var.clone()));
            }
        }
        out
    }

    pub fn set_buffer(&mut self, name: &str, value: RealTensor) -> Result<()> {
        for spec in self.encoder.iter().chain(self.decoder.iter()) {
            if let NormKind::Batch(idx) = spec.norm {
                let (mean_name, var_name) = (
                    format!("{}.running_mean", spec.name),
                    format!("{}.running_var", spec.name),
                );
                let target = if name == mean_name {
                    Some(&mut self.bn[idx].running_mean)
                } else if name == var_name {
                    Some(&mut self.bn[idx].running_var)
                } else {
                    None
                };
                if let Some(buf) = target {
                    if buf.shape() != value.shape() {
                        return Err(CaeError::ShapeMismatch(format!(
                            "buffer {name}: {:?} vs {:?}",
                            buf.shape(),
                            value.shape()
                        )));
                    }
                    *buf = value;
                    return Ok(());
                }
            }
        }
        Err(CaeError::Format(format!("unknown buffer record {name}")))
    }

    /// All model state as named records: configuration echo, parameters,
    /// running statistics.
    pub fn collect_records(&self) -> Vec<(String, RealTensor)> {
        let mut records = config_records(&self.config);
        for (name, t) in self.params.iter() {
            records.push((name.to_string(), t.clone()));
        }
        records.extend(self.buffers());
        records
    }

    /// Restore parameters and buffers from named records (config records are
    /// handled by [`config_from_records`]).
    pub fn apply_records(&mut self, records: &[(String, RealTensor)]) -> Result<()> {
        for (name, value) in records {
            if name.starts_with("cfg.") || name.starts_with("adam.") || name == "step" {
                continue;
            }
            if let Some(id) = self.params.index_of(name) {
                if self.params.get(id).shape() != value.shape() {
                    return Err(CaeError::ShapeMismatch(format!(
                        "parameter {name}: {:?} vs {:?}",
                        self.params.get(id).shape(),
                        value.shape()
                    )));
                }
                *self.params.get_mut(id) = value.clone();
            } else {
                self.set_buffer(name, value.clone())?;
            }
        }
        Ok(())
    }
}

pub fn config_records(cfg: &CaeConfig) -> Vec<(String, RealTensor)> {
    let f = &cfg.flags;
    vec![
        ("cfg.image_size".into(), RealTensor::scalar(cfg.image_size as f64)),
        ("cfg.latent_dim".into(), RealTensor::scalar(cfg.latent_dim as f64)),
        ("cfg.seed".into(), RealTensor::scalar(cfg.seed as f64)),
        (
            "cfg.widths".into(),
            RealTensor::from_vec(&[5], cfg.widths.iter().map(|&w| w as f64).collect()).expect("widths"),
        ),
        (
            "cfg.flags".into(),
            RealTensor::from_vec(
                &[4],
                vec![
                    f.disable_phase_bias as u8 as f64,
                    f.disable_chi as u8 as f64,
                    f.disable_batchnorm as u8 as f64,
                    f.disable_f_out as u8 as f64,
                ],
            )
            .expect("flags"),
        ),
    ]
}

pub fn config_from_records(records: &[(String, RealTensor)]) -> Result<CaeConfig> {
    let find = |name: &str| -> Result<&RealTensor> {
        records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CaeError::Format(format!("checkpoint is missing record {name}")))
    };
    let widths_t = find("cfg.widths")?;
    let flags_t = find("cfg.flags")?;
    if widths_t.len() != 5 || flags_t.len() != 4 {
        return Err(CaeError::Format("malformed configuration records".into()));
    }
    let mut widths = [0usize; 5];
    for (w, &v) in widths.iter_mut().zip(widths_t.iter()) {
        *w = v as usize;
    }
    let fl = flags_t.data();
    Ok(CaeConfig {
        image_size: find("cfg.image_size")?.data()[0] as usize,
        latent_dim: find("cfg.latent_dim")?.data()[0] as usize,
        seed: find("cfg.seed")?.data()[0] as u64,
        widths,
        flags: AblationFlags {
            disable_phase_bias: fl[0] != 0.0,
            disable_chi: fl[1] != 0.0,
            disable_batchnorm: fl[2] != 0.0,
            disable_f_out: fl[3] != 0.0,
        },
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"CAE1";
const CHECKPOINT_VERSION: u32 = 1;

/// Write named records: magic, version, then a count-prefixed list of
/// (u16 name length + UTF-8 name, u8 rank + u64 dims, f64 little-endian
/// payload).
pub fn write_records(path: &Path, records: &[(String, RealTensor)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, tensor) in records {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<(String, RealTensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(CaeError::Format(format!(
                "truncated checkpoint at byte {} (wanted {} more)",
                *pos, n
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(CaeError::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CaeError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| CaeError::Format(format!("record name is not UTF-8: {e}")))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        records.push((name, RealTensor::from_vec(&shape, data)?));
    }
    if pos != bytes.len() {
        return Err(CaeError::Format(format!(
            "trailing bytes in checkpoint after offset {pos}"
        )));
    }
    Ok(records)
}
