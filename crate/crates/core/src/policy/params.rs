//! Shared actor parameters and their on-disk format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "VSLPOLv1"
//! version    u32      1
//! width      u8       4 = f32 weights, 8 = f64 weights
//! reserved   3 bytes
//! n_sizes    u32, then n_sizes × u32 layer sizes (input .. output)
//! bounds     6 × f64  v_min v_max o_min o_max a_min a_max
//! n_actions  u32, then n_actions × u16 action mph
//! a_diff     u16
//! max_limit  u16      default maximum limit (downstream default action)
//! meta_len   u32, then meta_len bytes UTF-8 JSON metadata
//! per layer: weights (outputs × inputs, row-major) then bias
//! sha256     32 bytes over everything above
//! ```

use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::mlp::{Dense, Mlp};
use super::observation::NormBounds;
use crate::corridor::SpeedLimit;
use crate::error::PolicyError;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"VSLPOLv1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters<T> {
    pub actor: Mlp<T>,
    pub bounds: NormBounds,
    pub action_set: Vec<SpeedLimit>,
    pub a_diff: u16,
    pub max_limit_default: SpeedLimit,
    /// Free-form JSON recorded alongside the weights (training settings).
    pub metadata: String,
}

/// Hidden layer widths of the actor.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

impl<T: Scalar> PolicyParameters<T> {
    pub fn init(hidden: &[usize], rng: &mut impl Rng) -> Self {
        let action_set = [30, 40, 50, 60, 70].map(SpeedLimit).to_vec();
        let mut sizes = vec![5];
        sizes.extend_from_slice(hidden);
        sizes.push(action_set.len());
        PolicyParameters {
            actor: Mlp::new(&sizes, 0.01, rng),
            bounds: NormBounds::default(),
            action_set,
            a_diff: 10,
            max_limit_default: SpeedLimit(70),
            metadata: String::from("{}"),
        }
    }

    pub fn logits(&self, features: &[T; 5]) -> Vec<T> {
        self.actor.forward(features)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(T::WIDTH);
        b.extend_from_slice(&[0; 3]);
        let sizes = self.actor.sizes();
        b.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            b.extend_from_slice(&(s as u32).to_le_bytes());
        }
        let nb = &self.bounds;
        for x in [nb.v_min, nb.v_max, nb.o_min, nb.o_max, nb.a_min, nb.a_max] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b.extend_from_slice(&(self.action_set.len() as u32).to_le_bytes());
        for a in &self.action_set {
            b.extend_from_slice(&a.0.to_le_bytes());
        }
        b.extend_from_slice(&self.a_diff.to_le_bytes());
        b.extend_from_slice(&self.max_limit_default.0.to_le_bytes());
        b.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        b.extend_from_slice(self.metadata.as_bytes());
        for p in self.actor.params() {
            if T::WIDTH == 4 {
                b.extend_from_slice(&(p.f64() as f32).to_le_bytes());
            } else {
                b.extend_from_slice(&p.f64().to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    /// Hex SHA-256 of the serialised file.
    pub fn sha256_hex(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_bytes()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(PolicyError::Format("file too short".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(PolicyError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(PolicyError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(PolicyError::Format(format!("unsupported version {version}")));
        }
        let width = r.take(4)?[0];
        if width != 4 && width != 8 {
            return Err(PolicyError::Format(format!("bad scalar width {width}")));
        }
        let n_sizes = r.u32()? as usize;
        if !(2..=16).contains(&n_sizes) {
            return Err(PolicyError::Format("bad layer count".into()));
        }
        let sizes = (0..n_sizes).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let mut f = [0.0; 6];
        for x in &mut f {
            *x = r.f64()?;
        }
        let bounds = NormBounds { v_min: f[0], v_max: f[1], o_min: f[2], o_max: f[3], a_min: f[4], a_max: f[5] };
        let n_actions = r.u32()? as usize;
        let action_set = (0..n_actions).map(|_| r.u16().map(SpeedLimit)).collect::<Result<Vec<_>, _>>()?;
        let a_diff = r.u16()?;
        let max_limit_default = SpeedLimit(r.u16()?);
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| PolicyError::Format("metadata is not UTF-8".into()))?;
        if sizes[0] != 5 || *sizes.last().expect("n_sizes >= 2") != action_set.len() {
            return Err(PolicyError::Format("layer sizes do not match observation/action dimensions".into()));
        }
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            let (i, o) = (w[0], w[1]);
            let mut read = |n: usize| -> Result<Vec<T>, PolicyError> {
                (0..n)
                    .map(|_| if width == 4 { r.f32().map(|x| T::of(f64::from(x))) } else { r.f64().map(T::of) })
                    .collect()
            };
            let weights = read(i * o)?;
            let bias = read(o)?;
            layers.push(Dense { inputs: i, outputs: o, weights, bias });
        }
        if r.pos != body.len() {
            return Err(PolicyError::Format("trailing bytes".into()));
        }
        let actor = Mlp { layers };
        if !actor.is_finite() {
            return Err(PolicyError::Format("non-finite weights".into()));
        }
        Ok(PolicyParameters { actor, bounds, action_set, a_diff, max_limit_default, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| PolicyError::Format("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, PolicyError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f32(&mut self) -> Result<f32, PolicyError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64, PolicyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
