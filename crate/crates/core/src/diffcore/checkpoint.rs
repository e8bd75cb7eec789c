//! Binary network checkpoints.
//!
//! Layout:
//!
//! ```text
//! "UVIREID-NET v1\n"
//! u32 network count
//! per network:
//!   u32 role length, role bytes (UTF-8)
//!   u8  residual flag
//!   u32 layer count
//!   per layer: u32 in, u32 out, u8 activation (0 linear, 1 relu, 2 tanh),
//!              in*out f64 weights (row-major [in][out]), out f64 biases
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use super::network::{Activation, Layer, Network};
use super::tensor::DenseTensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"UVIREID-NET v1\n";

/// A network tagged with its role (`encoder`, `gen_vi`, `critic_v`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedNetwork {
    pub role: String,
    pub net: Network,
}

pub fn write_checkpoint<W: Write>(mut w: W, nets: &[NamedNetwork]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for nn in nets {
        let role = nn.role.as_bytes();
        w.write_all(&(role.len() as u32).to_le_bytes())?;
        w.write_all(role)?;
        w.write_all(&[nn.net.is_residual() as u8])?;
        w.write_all(&(nn.net.layers().len() as u32).to_le_bytes())?;
        for layer in nn.net.layers() {
            w.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
            w.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
            w.write_all(&[layer.activation.tag()])?;
            for v in layer.weight.data().iter().chain(layer.bias.data()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("checkpoint truncated reading {what}: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let b = read_exact(r, n * 8, what)?;
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<NamedNetwork>> {
    let magic = read_exact(&mut r, MAGIC.len(), "header")?;
    if magic != MAGIC {
        return Err(Error::Data("not a UVIREID-NET v1 checkpoint".into()));
    }
    let count = read_u32(&mut r, "network count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let rl = read_u32(&mut r, "role length")? as usize;
        let role = String::from_utf8(read_exact(&mut r, rl, "role")?)
            .map_err(|_| Error::Data("role tag is not UTF-8".into()))?;
        let residual = read_exact(&mut r, 1, "residual flag")?[0] != 0;
        let nl = read_u32(&mut r, "layer count")?;
        let mut layers = Vec::with_capacity(nl as usize);
        for _ in 0..nl {
            let din = read_u32(&mut r, "layer input")? as usize;
            let dout = read_u32(&mut r, "layer output")? as usize;
            let tag = read_exact(&mut r, 1, "activation")?[0];
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| Error::Data(format!("unknown activation tag {tag}")))?;
            let weight = DenseTensor::matrix(din, dout, read_f64s(&mut r, din * dout, "weights")?)?;
            let bias = DenseTensor::vector(read_f64s(&mut r, dout, "biases")?);
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        let net = Network::new(layers, residual)
            .map_err(|e| Error::Data(format!("network '{role}': {e}")))?;
        out.push(NamedNetwork { role, net });
    }
    Ok(out)
}

/// Find a network by role.
pub fn find_role<'a>(nets: &'a [NamedNetwork], role: &str) -> Result<&'a Network> {
    nets.iter()
        .find(|n| n.role == role)
        .map(|n| &n.net)
        .ok_or_else(|| Error::Data(format!("checkpoint has no '{role}' network")))
}
