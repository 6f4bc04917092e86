//! Binary network checkpoints.
//!
//! Layout (little-endian): magic `RPNN`, `u32` format version, `u32` layer
//! count, then per layer `u32` inputs, `u32` outputs, `u8` activation tag,
//! `inputs·outputs` row-major `f64` weights and `outputs` `f64` biases.
//! Values are stored as raw IEEE-754 bits so reads are bit-exact.

use std::io::{Read, Write};

use super::{Activation, DenseLayer, Matrix, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RPNN";
const FORMAT_VERSION: u32 = 1;
// Guards against allocating absurd buffers from a corrupt header.
const MAX_LAYER_WIDTH: u32 = 1 << 16;

pub fn write_network<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.inputs() as u32).to_le_bytes())?;
        w.write_all(&(layer.outputs() as u32).to_le_bytes())?;
        w.write_all(&[layer.activation.tag()])?;
        for v in layer.weights.data().iter().chain(&layer.biases) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "network checkpoint",
        detail: detail.into(),
    }
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt("truncated"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<R, 4>(r)?))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v = f64::from_le_bytes(read_exact::<R, 8>(r)?);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(corrupt("non-finite parameter"))
            }
        })
        .collect()
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Network> {
    if &read_exact::<R, 4>(r)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let count = read_u32(r)?;
    if count == 0 || count > 64 {
        return Err(corrupt(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let inputs = read_u32(r)?;
        let outputs = read_u32(r)?;
        if inputs == 0 || outputs == 0 || inputs > MAX_LAYER_WIDTH || outputs > MAX_LAYER_WIDTH {
            return Err(corrupt(format!("implausible layer shape {inputs}x{outputs}")));
        }
        let [tag] = read_exact::<R, 1>(r)?;
        let activation =
            Activation::from_tag(tag).ok_or_else(|| corrupt(format!("unknown activation tag {tag}")))?;
        let (inputs, outputs) = (inputs as usize, outputs as usize);
        let weights = Matrix::from_vec(outputs, inputs, read_f64s(r, inputs * outputs)?)?;
        let biases = read_f64s(r, outputs)?;
        layers.push(DenseLayer::new(weights, biases, activation)?);
    }
    Network::new(layers).map_err(|e| corrupt(e.to_string()))
}
