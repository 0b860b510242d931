use rand::Rng;

use super::batchnorm::BatchNormCache;
use super::{leaky, BatchNormLayer, ConvLayer, NetworkConfig, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; the cache supports `backward`.
    Train,
    /// Running statistics; pure.
    Eval,
}

/// Weights of the residual denoiser.
///
/// Layer `0` is conv + leaky ReLU, layers `1..depth-1` are conv + BN + leaky
/// ReLU (those convs carry no bias; BN's shift replaces it), and the last
/// layer is a plain conv whose output is added to the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    config: NetworkConfig,
    convs: Vec<ConvLayer>,
    norms: Vec<BatchNormLayer>,
    generation: u64,
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    mode: Mode,
    generation: u64,
    /// Input of every conv layer; `conv_inputs[0]` is the network input.
    conv_inputs: Vec<Tensor>,
    norms: Vec<BatchNormCache>,
}

/// Gradients in `NetworkParams::parameters` order, plus the input gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

pub fn init_network<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<NetworkParams> {
    config.validate()?;
    let (d, f, k) = (config.depth, config.features, config.kernel);
    let mut convs = Vec::with_capacity(d);
    for l in 0..d {
        let cin = if l == 0 { 1 } else { f };
        let cout = if l == d - 1 { 1 } else { f };
        let edge = l == 0 || l == d - 1;
        convs.push(ConvLayer::xavier(cin, cout, k, edge, rng));
    }
    let norms = (1..d - 1).map(|_| BatchNormLayer::new(f)).collect();
    Ok(NetworkParams {
        config: *config,
        convs,
        norms,
        generation: 0,
    })
}

fn leaky_inplace(t: &mut Tensor, slope: f64) {
    for v in t.data_mut() {
        *v = leaky(*v, slope);
    }
}

/// Multiplies `grad` by the leaky-ReLU derivative, read off the activation output.
fn leaky_backward(grad: &mut Tensor, activated: &Tensor, slope: f64) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activated.data()) {
        if a <= 0.0 {
            *g *= slope;
        }
    }
}

impl NetworkParams {
    /// Assembles parameters from stored layers, checking every shape against `config`.
    pub fn from_parts(
        config: NetworkConfig,
        convs: Vec<ConvLayer>,
        norms: Vec<BatchNormLayer>,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.depth;
        if convs.len() != d {
            return Err(Error::dims(d, convs.len()));
        }
        if norms.len() != d - 2 {
            return Err(Error::dims(d - 2, norms.len()));
        }
        for (l, conv) in convs.iter().enumerate() {
            conv.validate()?;
            let cin = if l == 0 { 1 } else { config.features };
            let cout = if l == d - 1 { 1 } else { config.features };
            let edge = l == 0 || l == d - 1;
            if (
                conv.in_channels,
                conv.out_channels,
                conv.kernel,
                conv.bias.is_some(),
            ) != (cin, cout, config.kernel, edge)
            {
                return Err(Error::InvalidArgument(format!(
                    "conv layer {l} does not match the config"
                )));
            }
        }
        for bn in &norms {
            bn.validate()?;
            if bn.channels() != config.features {
                return Err(Error::dims(config.features, bn.channels()));
            }
        }
        Ok(Self {
            config,
            convs,
            norms,
            generation: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn norms(&self) -> &[BatchNormLayer] {
        &self.norms
    }

    /// Trainable parameter slices: each conv's weight then bias, and after
    /// every hidden conv its BN scale then shift.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (l, conv) in self.convs.iter().enumerate() {
            out.push(conv.weight.as_slice());
            if let Some(b) = &conv.bias {
                out.push(b.as_slice());
            }
            if l >= 1 && l < self.convs.len() - 1 {
                let bn = &self.norms[l - 1];
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    /// Mutable view of `parameters`. Invalidates outstanding train caches.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let last = self.convs.len() - 1;
        let mut norms = self.norms.iter_mut();
        let mut out = Vec::new();
        for (l, conv) in self.convs.iter_mut().enumerate() {
            out.push(conv.weight.as_mut_slice());
            if let Some(b) = &mut conv.bias {
                out.push(b.as_mut_slice());
            }
            if l >= 1 && l < last {
                let bn = norms.next().expect("one norm per hidden conv");
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Zeroes the last conv so the network is the identity map.
    pub fn zero_final_layer(&mut self) {
        self.generation += 1;
        let last = self.convs.last_mut().expect("depth >= 2");
        last.weight.fill(0.0);
        if let Some(b) = &mut last.bias {
            b.fill(0.0);
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels() != 1 {
            return Err(Error::dims(1, input.channels()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let cfg = &self.config;
        let last = self.convs.len() - 1;
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut norm_caches = Vec::with_capacity(self.norms.len());
        conv_inputs.push(input.clone());
        for l in 0..last {
            let mut h = self.convs[l].forward(&conv_inputs[l])?;
            if l >= 1 {
                let bn = &self.norms[l - 1];
                h = match mode {
                    Mode::Train => {
                        let (y, c) = bn.forward_train(&h, cfg.bn_eps)?;
                        norm_caches.push(c);
                        y
                    }
                    Mode::Eval => bn.forward_eval(&h, cfg.bn_eps)?,
                };
            }
            leaky_inplace(&mut h, cfg.slope);
            conv_inputs.push(h);
        }
        let mut out = self.convs[last].forward(&conv_inputs[last])?;
        for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
            *o += x;
        }
        Ok((
            out,
            ForwardCache {
                mode,
                generation: self.generation,
                conv_inputs,
                norms: norm_caches,
            },
        ))
    }

    /// Inference in eval mode.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, Mode::Eval)?.0)
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        if cache.mode != Mode::Train || cache.norms.len() != self.norms.len() {
            return Err(Error::StaleCache);
        }
        let momentum = self.config.bn_momentum;
        for (bn, c) in self.norms.iter_mut().zip(&cache.norms) {
            bn.update_running(c, momentum);
        }
        Ok(())
    }

    /// Train-mode forward that also updates running statistics.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let (out, cache) = self.forward(input, Mode::Train)?;
        self.update_running_stats(&cache)?;
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<Gradients> {
        if cache.mode != Mode::Train || cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let input = &cache.conv_inputs[0];
        if grad_output.shape() != input.shape() {
            return Err(Error::dims(input.shape(), grad_output.shape()));
        }
        let slope = self.config.slope;
        let last = self.convs.len() - 1;
        let mut grads: Vec<Vec<f64>> = self
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        // Slot of each conv's weight in `grads`.
        let mut slot = Vec::with_capacity(self.convs.len());
        let mut next = 0;
        for (l, conv) in self.convs.iter().enumerate() {
            slot.push(next);
            next += 1 + usize::from(conv.bias.is_some()) + if l >= 1 && l < last { 2 } else { 0 };
        }

        let mut g = grad_output.clone();
        for l in (0..=last).rev() {
            let conv = &self.convs[l];
            let s = slot[l];
            let (gw, rest) = grads[s..].split_first_mut().expect("weight slot");
            let gb = if conv.bias.is_some() {
                Some(rest[0].as_mut_slice())
            } else {
                None
            };
            g = conv.backward(&cache.conv_inputs[l], &g, gw, gb)?;
            if l == 0 {
                break;
            }
            // g is now the gradient w.r.t. the activation output feeding conv l.
            leaky_backward(&mut g, &cache.conv_inputs[l], slope);
            let src = l - 1;
            if src >= 1 {
                let ws = slot[src];
                let (gamma, beta) = grads[ws + 1..ws + 3].split_at_mut(1);
                g = self.norms[src - 1].backward(
                    &cache.norms[src - 1],
                    &g,
                    &mut gamma[0],
                    &mut beta[0],
                )?;
            }
        }
        for (gi, &go) in g.data_mut().iter_mut().zip(grad_output.data()) {
            *gi += go;
        }
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }
}
