//! Binary model container. See `docs/model-format.md`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Dense, Head, Network, NetworkSpec};
use super::{SurrogateModel, TrainingMeta};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GFSM";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: NetworkSpec,
    input_norm: (f64, f64),
    output_norm: (f64, f64),
    meta: TrainingMeta,
    /// `(fan_in, fan_out)` per layer in canonical order.
    shapes: Vec<(usize, usize)>,
}

fn expected_shapes(spec: &NetworkSpec) -> Vec<(usize, usize)> {
    let d_in = spec.input_width();
    let extra = if spec.skip_connections { d_in } else { 0 };
    let mut shapes = Vec::new();
    let mut width = d_in;
    for &w in &spec.trunk_widths {
        shapes.push((width, w));
        width = w;
    }
    for _ in 0..spec.num_heads {
        shapes.push((width + extra, spec.head_width));
        shapes.push((spec.head_width + extra, 1));
    }
    shapes
}

pub fn save_model(model: &SurrogateModel, path: impl AsRef<Path>) -> Result<()> {
    let layers = model.network.layers();
    let header = Header {
        spec: model.spec.clone(),
        input_norm: model.input_norm,
        output_norm: model.output_norm,
        meta: model.meta.clone(),
        shapes: layers.iter().map(|l| l.w.dim()).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let n_params: usize = layers.iter().map(|l| l.num_params()).sum();
    let mut buf = Vec::with_capacity(32 + header_bytes.len() + 8 * n_params + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    buf.extend_from_slice(&(n_params as u64).to_le_bytes());
    for layer in layers {
        for x in layer.w.iter().chain(layer.b.iter()) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest[..]);
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SurrogateModel> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let corrupt = |reason: &str| Error::CorruptModel { path: path.to_path_buf(), reason: reason.to_string() };

    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4) != Some(&MAGIC[..]) {
        return Err(corrupt("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| corrupt("truncated version"))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelVersion { found: version, expected: MODEL_FORMAT_VERSION });
    }
    if bytes.len() < DIGEST_LEN + 16 {
        return Err(corrupt("truncated file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body)[..] != *digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut cur = Cursor { bytes: body, pos: 8 };
    let header_len = cur.u64().ok_or_else(|| corrupt("truncated header length"))? as usize;
    let header_bytes = cur.take(header_len).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| corrupt(&format!("header: {e}")))?;
    header.spec.validate().map_err(|e| corrupt(&e.to_string()))?;
    if header.shapes != expected_shapes(&header.spec) {
        return Err(corrupt("layer shapes inconsistent with network spec"));
    }
    if !(header.output_norm.1 > header.output_norm.0) {
        return Err(corrupt("output normalization has max <= min"));
    }
    let n_params = cur.u64().ok_or_else(|| corrupt("truncated parameter count"))? as usize;
    let expected: usize = header.shapes.iter().map(|(i, o)| i * o + o).sum();
    if n_params != expected {
        return Err(corrupt("parameter count does not match shapes"));
    }
    let mut layers = Vec::with_capacity(header.shapes.len());
    for &(fan_in, fan_out) in &header.shapes {
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(cur.f64().ok_or_else(|| corrupt("truncated weights"))?);
        }
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(cur.f64().ok_or_else(|| corrupt("truncated weights"))?);
        }
        layers.push(Dense {
            w: Array2::from_shape_vec((fan_in, fan_out), w).expect("shape checked"),
            b: Array1::from(b),
        });
    }
    if cur.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    let n_trunk = header.spec.trunk_widths.len();
    let mut it = layers.into_iter();
    let trunk: Vec<Dense> = it.by_ref().take(n_trunk).collect();
    let mut heads = Vec::with_capacity(header.spec.num_heads);
    while let (Some(hidden), Some(out)) = (it.next(), it.next()) {
        heads.push(Head { hidden, out });
    }
    Ok(SurrogateModel {
        network: Network::from_parts(trunk, heads, header.spec.skip_connections),
        spec: header.spec,
        input_norm: header.input_norm,
        output_norm: header.output_norm,
        meta: header.meta,
    })
}

/// Load a model and require its architecture to equal `expected`.
pub fn load_model_expecting(path: impl AsRef<Path>, expected: &NetworkSpec) -> Result<SurrogateModel> {
    let model = load_model(path)?;
    if &model.spec != expected {
        return Err(Error::SpecMismatch(format!("file has {:?}, expected {:?}", model.spec, expected)));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{init_model, TrainSettings};
    use ndarray::Array2;

    fn trained() -> SurrogateModel {
        let spec = NetworkSpec { trunk_widths: vec![16, 8], head_width: 4, ..NetworkSpec::vpl(3) };
        let mut m = init_model(&spec, (0.1, 0.9), (-2.5, 3.0), 3).unwrap();
        let mix = [0.3, 0.3, 0.4];
        let lab = [0.1, 0.2, 0.3];
        m.fit(&[&mix[..]; 4], &[0.5; 4], &[&lab[..]; 4], &TrainSettings { epochs: 3, ..Default::default() }).unwrap();
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfsm");
        let m = trained();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(m, back);
        let x = Array2::from_shape_vec((1, 4), vec![0.2, 0.3, 0.5, 0.4]).unwrap();
        assert_eq!(m.forward(x.view()).unwrap(), back.forward(x.view()).unwrap());
        let fpl = init_model(&NetworkSpec::fpl(4), (7.0, 7.0), (0.0, 1.0), 1).unwrap();
        save_model(&fpl, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), fpl);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfsm");
        save_model(&trained(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load_model(&path), Err(Error::CorruptModel { .. })), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfsm");
        save_model(&trained(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let k = bytes.len() - 100;
        bytes[k] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::CorruptModel { .. })));
    }

    #[test]
    fn version_mismatch_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfsm");
        save_model(&trained(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelVersion { found: 99, expected: 1 })));
    }

    #[test]
    fn spec_mismatch_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfsm");
        let m = trained();
        save_model(&m, &path).unwrap();
        assert!(load_model_expecting(&path, &m.spec).is_ok());
        let other = NetworkSpec { skip_connections: false, ..m.spec.clone() };
        assert!(matches!(load_model_expecting(&path, &other), Err(Error::SpecMismatch(_))));
    }
}
