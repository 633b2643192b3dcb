//! On-disk formats used by the front end.
//!
//! Weight files hold every convolution of the config in layer order. Each
//! layer is `K*K*Z*O` weights in `[o][z][i][j]` nesting (`j` fastest)
//! followed by `O` biases. Float files store both as little-endian `f32`
//! and are quantized with the layer's `frac_bits`/`weight_bits`; integer
//! files store weights as `i8` and biases as little-endian `i32`.
//!
//! A streams directory holds `layer_NNN.blws` (the compressed stream) and
//! `layer_NNN.bias` (little-endian `i32` biases) per convolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use blmac::codec::CompressedWeightStream;
use blmac::network::{ConvWeights, NetworkConfig};
use blmac::tensor::{quantize_weights_uniform, QuantizedWeightTensor};
use blmac::{write_atomic, Error, Result};

pub fn stream_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer_{layer:03}.blws"))
}

pub fn bias_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer_{layer:03}.bias"))
}

pub fn map_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer_{layer:03}.fmap"))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!(
            "weight file too short: {what} needs {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn le_words(bytes: &[u8]) -> impl Iterator<Item = [u8; 4]> + '_ {
    bytes.chunks_exact(4).map(|c| c.try_into().unwrap())
}

/// Parses a weight file against the convolutions of `cfg`.
pub fn parse_weights(cfg: &NetworkConfig, mut bytes: &[u8], int8: bool) -> Result<BTreeMap<usize, QuantizedWeightTensor>> {
    let mut out = BTreeMap::new();
    for (n, shape, conv) in cfg.conv_layers()? {
        let what = format!("layer {n}");
        let tensor = if int8 {
            let w = take(&mut bytes, shape.len(), &what)?;
            let b = take(&mut bytes, 4 * shape.o, &what)?;
            let mut t = QuantizedWeightTensor::new(
                shape,
                w.iter().map(|&v| v as i8 as i32).collect(),
                le_words(b).map(i32::from_le_bytes).collect(),
            )?;
            t.frac_bits = conv.frac_bits;
            t
        } else {
            let w: Vec<f32> = le_words(take(&mut bytes, 4 * shape.len(), &what)?)
                .map(f32::from_le_bytes)
                .collect();
            let b: Vec<f32> = le_words(take(&mut bytes, 4 * shape.o, &what)?)
                .map(f32::from_le_bytes)
                .collect();
            quantize_weights_uniform(shape, &w, &b, conv.frac_bits, conv.weight_bits)?
        };
        out.insert(n, tensor);
    }
    if !bytes.is_empty() {
        return Err(Error::Format(format!(
            "weight file has {} bytes beyond the last layer",
            bytes.len()
        )));
    }
    Ok(out)
}

/// Serializes quantized weights in the integer layout. Weights must fit `i8`.
pub fn int8_weight_bytes(weights: &BTreeMap<usize, QuantizedWeightTensor>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (n, w) in weights {
        for &v in w.weights() {
            let b = i8::try_from(v).map_err(|_| Error::Unsupported(format!("layer {n}: weight {v} exceeds 8 bits")))?;
            out.push(b as u8);
        }
        for &b in w.biases() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_conv(dir: &Path, layer: usize, stream: &CompressedWeightStream, biases: &[i32]) -> Result<()> {
    stream.write_file(stream_path(dir, layer))?;
    let bytes: Vec<u8> = biases.iter().flat_map(|b| b.to_le_bytes()).collect();
    write_atomic(&bias_path(dir, layer), &bytes)
}

pub fn read_conv(dir: &Path, layer: usize) -> Result<ConvWeights> {
    let stream = CompressedWeightStream::read_file(stream_path(dir, layer))?;
    let bytes = std::fs::read(bias_path(dir, layer))?;
    if bytes.len() != 4 * stream.shape().o {
        return Err(Error::Format(format!(
            "bias file for layer {layer} holds {} bytes, expected {}",
            bytes.len(),
            4 * stream.shape().o
        )));
    }
    Ok(ConvWeights {
        stream,
        biases: le_words(&bytes).map(i32::from_le_bytes).collect(),
    })
}
