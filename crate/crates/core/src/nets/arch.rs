//! The three encoder-decoder families expressed on the graph builder.

use super::graph::{strided_pointwise, Builder, Layout, NodeId};
use super::spec::{Family, NetworkSpec};
use crate::error::Result;

/// Kernel sizes of the factorized convolutions for encoder levels 2, 3, 4.
const INCEPTION_Z: [usize; 3] = [7, 6, 5];
const INCEPTION_BOTTOM_Z: usize = 4;
const XCEPTION_Z: [usize; 3] = [9, 7, 5];
const XCEPTION_BOTTOM_BLOCKS: usize = 4;
const XCEPTION_BOTTOM_K: usize = 5;

/// What replaces one 3x3 convolution of a conv+BN pair.
#[derive(Clone, Copy, Debug)]
enum Unit {
    Full3,
    /// 1x1 reduce to N/2, Zx1, 1xZ, 1x1 expand to N.
    Inception(usize),
    /// Depthwise Zx1, depthwise 1xZ, biased pointwise.
    SepFactor(usize),
    /// Full Zx1 then 1xZ.
    Factor(usize),
    /// Depthwise kxk, biased pointwise.
    Sep(usize),
}

fn unit(b: &mut Builder, x: NodeId, n: usize, u: Unit, name: &str) -> Result<NodeId> {
    b.push_scope(name);
    let y = match u {
        Unit::Full3 => b.conv(x, "conv", n, 3, 3),
        Unit::Inception(z) => {
            let r = b.conv(x, "reduce", n / 2, 1, 1)?;
            let v = b.conv(r, "col", n / 2, z, 1)?;
            let h = b.conv(v, "row", n / 2, 1, z)?;
            b.conv(h, "expand", n, 1, 1)
        }
        Unit::SepFactor(z) => {
            let v = b.depthwise(x, "col", z, 1)?;
            let h = b.depthwise(v, "row", 1, z)?;
            b.conv(h, "pointwise", n, 1, 1)
        }
        Unit::Factor(z) => {
            let v = b.conv(x, "col", n, z, 1)?;
            b.conv(v, "row", n, 1, z)
        }
        Unit::Sep(k) => {
            let d = b.depthwise(x, "depthwise", k, k)?;
            b.conv(d, "pointwise", n, 1, 1)
        }
    };
    b.pop_scope();
    y
}

/// unit -> BN -> ReLU -> unit -> BN -> (+ skip) (+ extra) -> ReLU.
fn residual_pair(b: &mut Builder, x: NodeId, n: usize, u: Unit, extra: Option<NodeId>) -> Result<NodeId> {
    let a = unit(b, x, n, u, "u1")?;
    let a = b.bn(a, "bn1");
    let a = b.relu(a);
    let a = unit(b, a, n, u, "u2")?;
    let a = b.bn(a, "bn2");
    let skip = if b.channels(x) == n { x } else { b.conv(x, "proj", n, 1, 1)? };
    let mut y = b.add(a, skip)?;
    if let Some(e) = extra {
        y = b.add(y, e)?;
    }
    Ok(b.relu(y))
}

fn encoder_unit(spec: &NetworkSpec, k: usize) -> Unit {
    match (spec.family, k) {
        (_, 1) | (Family::UnetBnRl, _) => Unit::Full3,
        (Family::UInception, k) => Unit::Inception(INCEPTION_Z[k - 2]),
        (Family::UXception, k) => Unit::SepFactor(XCEPTION_Z[k - 2]),
    }
}

fn decoder_unit(spec: &NetworkSpec, k: usize) -> Unit {
    match (spec.family, k) {
        (_, 1) | (Family::UnetBnRl, _) => Unit::Full3,
        (Family::UInception, k) => Unit::Inception(INCEPTION_Z[k - 2]),
        (Family::UXception, k) => Unit::Factor(XCEPTION_Z[k - 2]),
    }
}

fn bottom(b: &mut Builder, spec: &NetworkSpec, x: NodeId, n: usize) -> Result<NodeId> {
    match spec.family {
        Family::UnetBnRl => residual_pair(b, x, n, Unit::Full3, None),
        Family::UInception => residual_pair(b, x, n, Unit::Inception(INCEPTION_BOTTOM_Z), None),
        Family::UXception => {
            let mut y = x;
            for i in 1..=XCEPTION_BOTTOM_BLOCKS {
                b.push_scope(format!("block{i}"));
                y = residual_pair(b, y, n, Unit::Sep(XCEPTION_BOTTOM_K), None)?;
                b.pop_scope();
            }
            Ok(y)
        }
    }
}

/// Builds and shape-checks the layer graph of `spec` without allocating weights.
pub fn layout(spec: &NetworkSpec) -> Result<Layout> {
    spec.validate()?;
    let (ih, iw) = spec.input_size;
    let (mut b, input) = Builder::new([spec.in_channels, ih, iw]);
    let levels = spec.levels;

    b.set_group("input");
    let mut x = if spec.shrink_factor > 1 { b.avg_pool(input, spec.shrink_factor)? } else { input };

    let mut enc = Vec::with_capacity(levels);
    for k in 1..=levels {
        b.set_group(format!("enc{k}"));
        let n = spec.features(k);
        if k > 1 {
            let prev = *enc.last().expect("previous level");
            let pooled = b.max_pool(prev)?;
            x = if spec.residual_input {
                let c = b.channels(prev);
                let r = b.conv_geom(prev, "residual_input", c, strided_pointwise())?;
                b.add(pooled, r)?
            } else {
                pooled
            };
        }
        let out = if k == levels { bottom(&mut b, spec, x, n)? } else { residual_pair(&mut b, x, n, encoder_unit(spec, k), None)? };
        b.tap(format!("enc{k}"), out);
        enc.push(out);
    }

    let mut prev = enc[levels - 1];
    for k in (1..levels).rev() {
        b.set_group(format!("dec{k}"));
        let n = spec.features(k);
        let up = b.up_conv(prev, "up")?;
        let cat = b.concat(enc[k - 1], up)?;
        let extra = if spec.residual_output {
            let u = b.upsample(prev, 2);
            Some(b.conv(u, "residual_output", n, 1, 1)?)
        } else {
            None
        };
        prev = residual_pair(&mut b, cat, n, decoder_unit(spec, k), extra)?;
        b.tap(format!("dec{k}"), prev);
    }

    b.set_group("head");
    let logits = b.conv(prev, "classifier", spec.out_classes, 1, 1)?;
    let mut out = b.softmax(logits);
    if spec.shrink_factor > 1 {
        out = b.upsample(out, spec.shrink_factor);
    }
    Ok(b.finish(out))
}

/// Trainable scalar count declared by the builder for `spec`.
pub fn declared_param_count(spec: &NetworkSpec) -> Result<usize> {
    Ok(layout(spec)?.declared_total())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_levels_double_features() {
        for family in Family::ALL {
            let spec = NetworkSpec::full_size(family).with_shrink(2);
            let l = layout(&spec).unwrap();
            for k in 1..=5 {
                let [c, h, _] = l.shape_of(l.tap(&format!("enc{k}")).unwrap());
                assert_eq!(c, 64 << (k - 1), "{family} level {k}");
                assert_eq!(h, 64 >> (k - 1));
            }
            assert_eq!(l.shape_of(l.output), [3, 128, 128]);
        }
    }

    #[test]
    fn residual_output_adds_only_projections() {
        for family in Family::ALL {
            let base = NetworkSpec::full_size(family).with_residual_output(false);
            let with = base.clone().with_residual_output(true);
            let extra: usize = (1..base.levels).map(|k| base.features(k + 1) * base.features(k) + base.features(k)).sum();
            assert_eq!(declared_param_count(&with).unwrap(), declared_param_count(&base).unwrap() + extra, "{family}");
        }
    }

    #[test]
    fn single_conv_count_matches_formula() {
        let (mut b, x) = Builder::new([1, 8, 8]);
        b.set_group("g");
        b.conv(x, "c", 64, 3, 3).unwrap();
        assert_eq!(b.finish(x).declared_total(), 640);
    }
}
