//! Single-file checkpoint: a text manifest followed by a little-endian payload.
//!
//! ```text
//! LVQCKPT1
//! dtype f32
//! spec {"family":"unet_bn_rl",...}
//! param enc1.u1.conv.weight 8,1,3,3 0 72
//! running enc1.bn1 1 288 8
//! end
//! <payload>
//! ```
//! `param` lines give name, shape, byte offset and element count; `running`
//! lines give a batch-norm layer name, its initialized flag, offset and channel
//! count (mean then variance).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::network::{Network, RunningStats};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

const MAGIC: &str = "LVQCKPT1";

fn encode<T: Real>(v: &[T], out: &mut Vec<u8>) {
    for &x in v {
        x.to_le_bytes_vec(out);
    }
}

pub fn to_bytes<T: Real>(net: &Network<T>) -> Result<Vec<u8>> {
    let mut manifest = format!("{MAGIC}\ndtype {}\nspec {}\n", T::DTYPE, serde_json::to_string(net.spec())?);
    let mut payload = Vec::new();
    for (name, t) in net.param_names().zip(net.params()) {
        let shape = t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        manifest += &format!("param {name} {shape} {} {}\n", payload.len(), t.len());
        encode(t.data(), &mut payload);
    }
    for (info, r) in net.layout().bns.iter().zip(net.running_stats()) {
        manifest += &format!("running {} {} {} {}\n", info.name, u8::from(r.initialized), payload.len(), r.mean.len());
        encode(&r.mean, &mut payload);
        encode(&r.var, &mut payload);
    }
    manifest += "end\n";
    let mut out = manifest.into_bytes();
    out.extend(payload);
    Ok(out)
}

pub fn save<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(net)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    from_bytes(&fs::read(path)?)
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let fmt = |offset: usize, detail: String| Error::Format { offset: offset as u64, detail };
    let mut pos = 0usize;
    let mut line = || -> Result<(usize, String)> {
        let start = pos;
        let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| fmt(start, "unterminated manifest line".into()))?;
        pos += end + 1;
        let s = std::str::from_utf8(&bytes[start..start + end]).map_err(|_| fmt(start, "manifest is not UTF-8".into()))?;
        Ok((start, s.to_string()))
    };
    let (at, magic) = line()?;
    if magic != MAGIC {
        return Err(fmt(at, format!("bad magic {magic:?}")));
    }
    let (at, dtype) = line()?;
    if dtype != format!("dtype {}", T::DTYPE) {
        return Err(fmt(at, format!("expected dtype {}, found {dtype:?}", T::DTYPE)));
    }
    let (at, spec_line) = line()?;
    let spec: NetworkSpec = spec_line
        .strip_prefix("spec ")
        .ok_or_else(|| fmt(at, "missing spec line".into()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| fmt(at, e.to_string())))?;

    let mut params_meta: Vec<(usize, Vec<usize>, usize, usize)> = Vec::new();
    let mut running_meta: Vec<(usize, bool, usize, usize)> = Vec::new();
    loop {
        let (at, l) = line()?;
        if l == "end" {
            break;
        }
        let f: Vec<&str> = l.split(' ').collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| fmt(at, format!("bad number {s:?}")));
        match f.as_slice() {
            ["param", _, shape, off, len] => {
                let shape = shape.split(',').map(num).collect::<Result<Vec<_>>>()?;
                params_meta.push((at, shape, num(off)?, num(len)?));
            }
            ["running", _, init, off, c] => running_meta.push((at, *init == "1", num(off)?, num(c)?)),
            _ => return Err(fmt(at, format!("unrecognized manifest line {l:?}"))),
        }
    }
    let base = pos;
    let payload = &bytes[base..];
    let read = |at: usize, off: usize, len: usize| -> Result<Vec<T>> {
        let end = off.checked_add(len * T::BYTES).filter(|&e| e <= payload.len());
        match end {
            Some(e) => Ok(payload[off..e].chunks_exact(T::BYTES).map(T::from_le_slice).collect()),
            None => Err(fmt(base + payload.len(), format!("payload truncated: entry at manifest byte {at} needs {} bytes from {}", len * T::BYTES, base + off))),
        }
    };
    let mut params = Vec::with_capacity(params_meta.len());
    for (at, shape, off, len) in params_meta {
        if shape.iter().product::<usize>() != len {
            return Err(fmt(at, format!("shape {shape:?} does not hold {len} values")));
        }
        params.push(Tensor::new(shape, read(at, off, len)?)?);
    }
    let mut running = Vec::with_capacity(running_meta.len());
    for (at, initialized, off, c) in running_meta {
        let v = read(at, off, 2 * c)?;
        running.push(RunningStats { mean: v[..c].to_vec(), var: v[c..].to_vec(), initialized });
    }
    Network::from_parts(spec, params, running)
}
