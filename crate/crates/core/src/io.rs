//! File formats: the BEV feature container, mask run-length encoding and the
//! named-tensor weights container.
//!
//! BEV container layout: three little-endian `u32` (H, W, C) followed by
//! `H·W·C` little-endian `f64` in row-major order with channels innermost.

use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BevGrid, GridSpec};

pub fn write_bev<W: Write>(g: &BevGrid, mut w: W) -> Result<()> {
    for v in [g.height(), g.width(), g.channels] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(g.data().len() * 8);
    for v in g.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a container whose H and W must match `spec`.
pub fn read_bev<R: Read>(spec: &GridSpec, mut r: R) -> Result<BevGrid> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("BEV container shorter than its 12-byte header".into()))?;
    let dim = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    if h != spec.height || w != spec.width {
        return Err(Error::Format(format!(
            "BEV container is {h}x{w}, grid expects {}x{}",
            spec.height, spec.width
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = h * w * c * 8;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "BEV payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    BevGrid::from_data(*spec, c, data)
}

/// Run lengths of alternating values, starting with a (possibly empty) run
/// of `false`.
pub fn rle_encode(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut cur = false;
    let mut len = 0u32;
    for &v in mask {
        if v == cur {
            len += 1;
        } else {
            runs.push(len);
            cur = v;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], cells: usize) -> Result<Vec<bool>> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != cells as u64 {
        return Err(Error::Format(format!(
            "mask runs cover {total} cells, expected {cells}"
        )));
    }
    let mut out = Vec::with_capacity(cells);
    for (i, &r) in runs.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Ok(out)
}

pub const WEIGHTS_FORMAT: &str = "roadpainter-weights";
pub const WEIGHTS_VERSION: u32 = 1;

/// One stored tensor: `data` is base64 of little-endian `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl NamedTensor {
    pub fn encode(name: &str, shape: &[usize], values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Weights(format!("{}: {e}", self.name)))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * 8 {
            return Err(Error::Weights(format!(
                "{}: {} bytes for shape {:?}",
                self.name,
                bytes.len(),
                self.shape
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl WeightsFile {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            tensors,
        }
    }

    pub fn check_header(&self) -> Result<()> {
        if self.format != WEIGHTS_FORMAT || self.version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!(
                "expected {WEIGHTS_FORMAT} v{WEIGHTS_VERSION}, got {} v{}",
                self.format, self.version
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bev_round_trip_and_layout() {
        let spec = GridSpec {
            height: 2,
            width: 3,
            resolution: 1.0,
            x_min: 0.0,
            y_min: 0.0,
        };
        let g = BevGrid::from_data(spec, 2, (0..12).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap();
        let mut buf = Vec::new();
        write_bev(&g, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 12 * 8);
        assert_eq!(&buf[..12], &[2, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        // element (r=1, c=0, ch=1) is flat index 7
        assert_eq!(
            f64::from_le_bytes(buf[12 + 7 * 8..12 + 8 * 8].try_into().unwrap()),
            g.cell(1, 0)[1]
        );
        assert_eq!(read_bev(&spec, buf.as_slice()).unwrap(), g);

        assert!(read_bev(&spec, &buf[..buf.len() - 1]).is_err());
        assert!(read_bev(&spec, &buf[..5]).is_err());
        let other = GridSpec { width: 4, ..spec };
        assert!(read_bev(&other, buf.as_slice()).is_err());
    }

    #[test]
    fn tensor_codec() {
        let t = NamedTensor::encode("a.weight", &[2, 2], &[1.0, -2.5, f64::MIN_POSITIVE, 3.0]);
        assert_eq!(t.decode().unwrap(), vec![1.0, -2.5, f64::MIN_POSITIVE, 3.0]);
        let bad = NamedTensor { shape: vec![3], ..t };
        assert!(bad.decode().is_err());
    }

    proptest! {
        #[test]
        fn rle_round_trip(mask in proptest::collection::vec(any::<bool>(), 0..200)) {
            let runs = rle_encode(&mask);
            prop_assert_eq!(rle_decode(&runs, mask.len()).unwrap(), mask);
        }
    }
}
