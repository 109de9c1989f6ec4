use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::layout;
use super::graph::{Init, Layout, Op};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients_at, GradCheck, GradCheckReport};
use crate::layers::{
    avg_pool, batch_norm_eval, batch_norm_train, concat_channels, conv2d, depthwise_conv2d, max_pool_2x2, relu,
    softmax_channels, up_conv_2x2, upsample_nearest, BatchStats, Mode, BN_EPS, BN_MOMENTUM,
};
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
}

/// A built network: its layout plus trainable tensors and batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    spec: NetworkSpec,
    layout: Layout,
    params: Vec<Tensor<T>>,
    running: Vec<RunningStats<T>>,
}

/// Result of one forward pass.
pub struct Forward<T> {
    /// Class probabilities `[N, classes, H, W]`.
    pub output: Var,
    /// Batch statistics per batch-norm layer (train mode only).
    pub bn_stats: Vec<Option<BatchStats<T>>>,
    pub taps: Vec<(String, Var)>,
}

impl<T: Real> Network<T> {
    /// Builds the network and draws its initial weights from `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let layout = layout(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .params
            .iter()
            .map(|p| match p.init {
                Init::Zeros => Tensor::zeros(p.shape.clone()),
                Init::Ones => Tensor::ones(p.shape.clone()),
                Init::He { fan_in } => {
                    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    Tensor::from_fn(p.shape.clone(), |_| T::lit(d.sample(&mut rng)))
                }
            })
            .collect();
        let running = layout
            .bns
            .iter()
            .map(|b| RunningStats { mean: vec![T::zero(); b.channels], var: vec![T::one(); b.channels], initialized: false })
            .collect();
        Ok(Self { spec: spec.clone(), layout, params, running })
    }

    pub(crate) fn from_parts(spec: NetworkSpec, params: Vec<Tensor<T>>, running: Vec<RunningStats<T>>) -> Result<Self> {
        let layout = layout(&spec)?;
        if params.len() != layout.params.len() || running.len() != layout.bns.len() {
            return Err(Error::InvalidSpec("parameter collection does not match the spec".into()));
        }
        for (t, p) in params.iter().zip(&layout.params) {
            if t.shape() != p.shape.as_slice() {
                return Err(Error::shape("load parameter", &p.shape, t.shape()));
            }
        }
        Ok(Self { spec, layout, params, running })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.layout.params.iter().map(|p| p.name.as_str())
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    /// Marks every running statistic as usable without a training pass.
    pub fn initialize_running_stats(&mut self) {
        self.running.iter_mut().for_each(|r| r.initialized = true);
    }

    /// Trainable scalars, counted by walking the allocated tensors.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Enumerated counts per layer group, in build order.
    pub fn param_count_by_group(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (info, t) in self.layout.params.iter().zip(&self.params) {
            match out.iter_mut().find(|(g, _)| *g == info.group) {
                Some((_, c)) => *c += t.len(),
                None => out.push((info.group.clone(), t.len())),
            }
        }
        out
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone(), requires_grad)).collect()
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Forward<T>> {
        let params = self.bind(tape, false);
        self.forward_with(tape, &params, x, mode)
    }

    /// Forward pass using parameters already bound on the tape.
    pub fn forward_with(&self, tape: &mut Tape<T>, params: &[Var], x: Var, mode: Mode) -> Result<Forward<T>> {
        let (h, w) = self.spec.input_size;
        let expected = [tape.shape(x).first().copied().unwrap_or(0), self.spec.in_channels, h, w];
        if tape.shape(x).len() != 4 || tape.shape(x)[1..] != expected[1..] {
            return Err(Error::invalid_shape(
                "network input",
                format!("expected [N, {}, {h}, {w}], got {:?}", self.spec.in_channels, tape.shape(x)),
            ));
        }
        if params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!("expected {} bound parameters, got {}", self.params.len(), params.len())));
        }
        let eps = T::lit(BN_EPS);
        let mut bn_stats: Vec<Option<BatchStats<T>>> = vec![None; self.running.len()];
        let mut vals: Vec<Var> = Vec::with_capacity(self.layout.nodes.len());
        for (op, _) in &self.layout.nodes {
            let v = match *op {
                Op::Input => x,
                Op::Conv { x, w, b, geom } => conv2d(tape, vals[x.0], params[w], Some(params[b]), geom)?,
                Op::Depthwise { x, w, geom } => depthwise_conv2d(tape, vals[x.0], params[w], geom)?,
                Op::UpConv { x, w, b } => up_conv_2x2(tape, vals[x.0], params[w], Some(params[b]))?,
                Op::BatchNorm { x, bn } => {
                    let info = &self.layout.bns[bn];
                    let (g, b) = (params[info.gamma], params[info.beta]);
                    match mode {
                        Mode::Train => {
                            let (y, stats) = batch_norm_train(tape, vals[x.0], g, b, eps)?;
                            bn_stats[bn] = Some(stats);
                            y
                        }
                        Mode::Eval => {
                            let r = &self.running[bn];
                            if !r.initialized {
                                return Err(Error::UninitializedStats(info.name.clone()));
                            }
                            batch_norm_eval(tape, vals[x.0], g, b, &r.mean, &r.var, eps)?
                        }
                    }
                }
                Op::Relu(a) => relu(tape, vals[a.0]),
                Op::Add(a, b) => tape.add(vals[a.0], vals[b.0])?,
                Op::MaxPool(a) => max_pool_2x2(tape, vals[a.0])?,
                Op::AvgPool(a, f) => avg_pool(tape, vals[a.0], f)?,
                Op::Upsample(a, f) => upsample_nearest(tape, vals[a.0], f)?,
                Op::Concat(a, b) => concat_channels(tape, vals[a.0], vals[b.0])?,
                Op::Softmax(a) => softmax_channels(tape, vals[a.0])?,
            };
            vals.push(v);
        }
        let taps = self.layout.taps.iter().map(|(n, id)| (n.clone(), vals[id.0])).collect();
        Ok(Forward { output: vals[self.layout.output.0], bn_stats, taps })
    }

    /// Eval-mode class probabilities for a batch `[N, C, H, W]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok(tape.value(f.output).clone())
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[Option<BatchStats<T>>]) {
        let m = T::lit(BN_MOMENTUM);
        let one = T::one();
        for (r, s) in self.running.iter_mut().zip(stats) {
            let Some(s) = s else { continue };
            let unbias = if s.count > 1 { T::lit(s.count as f64 / (s.count - 1) as f64) } else { one };
            for (rm, &b) in r.mean.iter_mut().zip(&s.mean) {
                *rm = m * *rm + (one - m) * b;
            }
            for (rv, &b) in r.var.iter_mut().zip(&s.var) {
                *rv = m * *rv + (one - m) * b * unbias;
            }
            r.initialized = true;
        }
    }

    pub fn set_running_stats(&mut self, running: Vec<RunningStats<T>>) -> Result<()> {
        if running.len() != self.running.len()
            || running.iter().zip(&self.layout.bns).any(|(r, b)| r.mean.len() != b.channels || r.var.len() != b.channels)
        {
            return Err(Error::InvalidArgument("running statistics do not match the layout".into()));
        }
        self.running = running;
        Ok(())
    }
}

/// Finite-difference check of a freshly built `f64` network in train mode with
/// respect to its input and every `stride`-th parameter tensor.
pub fn check_network_gradients(spec: &NetworkSpec, seed: u64, cfg: GradCheck, stride: usize) -> Result<GradCheckReport> {
    let net = Network::<f64>::build(spec, seed)?;
    let (h, w) = spec.input_size;
    let mut inputs = vec![Tensor::<f64>::from_fn([2, spec.in_channels, h, w], |i| ((i * 7919) % 97) as f64 / 97.0 - 0.5)];
    inputs.extend(net.params().iter().cloned());
    let stride = stride.max(1);
    let mask: Vec<bool> = (0..inputs.len()).map(|i| i == 0 || (i - 1) % stride == 0).collect();
    check_gradients_at(inputs, &mask, seed, cfg, |t, v| Ok(net.forward_with(t, &v[1..], v[0], Mode::Train)?.output))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{declared_param_count, Family};

    fn mini(family: Family) -> NetworkSpec {
        NetworkSpec::miniature(family, 2, 4, 16)
    }

    #[test]
    fn enumeration_matches_declared_count() {
        for family in Family::ALL {
            for spec in [mini(family), NetworkSpec::miniature(family, 4, 8, 32), mini(family).with_residual_input(true)] {
                let net = Network::<f32>::build(&spec, 1).unwrap();
                assert_eq!(net.param_count(), declared_param_count(&spec).unwrap(), "{spec:?}");
                let groups: usize = net.param_count_by_group().iter().map(|g| g.1).sum();
                assert_eq!(groups, net.param_count());
                assert_eq!(net.param_count_by_group(), net.layout().declared);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let spec = NetworkSpec::miniature(Family::UXception, 3, 4, 16);
        let a = Network::<f32>::build(&spec, 9).unwrap();
        let b = Network::<f32>::build(&spec, 9).unwrap();
        let c = Network::<f32>::build(&spec, 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_input_gives_normalized_output() {
        for family in Family::ALL {
            let spec = NetworkSpec::miniature(family, 3, 4, 32).with_shrink(2);
            let net = Network::<f32>::build(&spec, 3).unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::zeros([2, 1, 32, 32]));
            let f = net.forward(&mut tape, x, Mode::Train).unwrap();
            let y = tape.value(f.output);
            assert_eq!(y.shape(), &[2, 3, 32, 32]);
            assert!(y.is_finite());
            let hw = 32 * 32;
            for n in 0..2 {
                for p in 0..hw {
                    let s: f32 = (0..3).map(|c| y.data()[(n * 3 + c) * hw + p]).sum();
                    assert!((s - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn wrong_input_size_names_expected() {
        let net = Network::<f32>::build(&mini(Family::UnetBnRl), 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 1, 8, 8]));
        let err = net.forward(&mut tape, x, Mode::Train).err().unwrap().to_string();
        assert!(err.contains("[N, 1, 16, 16]"), "{err}");
    }

    #[test]
    fn eval_requires_running_stats() {
        let mut net = Network::<f32>::build(&mini(Family::UnetBnRl), 0).unwrap();
        let x = Tensor::zeros([1, 1, 16, 16]);
        assert!(matches!(net.predict(&x), Err(Error::UninitializedStats(_))));
        net.initialize_running_stats();
        assert!(net.predict(&x).is_ok());
    }

    #[test]
    fn miniature_families_pass_gradient_check() {
        for family in Family::ALL {
            let spec = mini(family).with_residual_output(true).with_residual_input(true);
            let report = check_network_gradients(&spec, 5, GradCheck::f64().with_rtol(1e-2), 5).unwrap();
            assert!(report.passed(), "{family}: {report}");
        }
    }
}
