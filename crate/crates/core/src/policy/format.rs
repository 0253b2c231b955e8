//! `.pol` files: a little-endian header followed by the flat parameters.
//!
//! ```text
//! magic        8 bytes  "HOVRPOL\0"
//! version      u32
//! obs_dim      u32
//! act_dim      u32
//! hidden_dim   u32
//! obs mean     obs_dim × f64
//! obs std      obs_dim × f64
//! act mean     act_dim × f64
//! act std      act_dim × f64
//! n_params     u64
//! params       n_params × f64
//! ```

use std::path::Path;

use super::{NormStats, Policy};
use crate::error::{Error, Result};

pub const POLICY_MAGIC: &[u8; 8] = b"HOVRPOL\0";
pub const POLICY_FORMAT_VERSION: u32 = 1;

pub fn encode(policy: &Policy) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 8 * (policy.weights.len() + 2 * (policy.obs_dim + policy.act_dim)));
    out.extend_from_slice(POLICY_MAGIC);
    out.extend_from_slice(&POLICY_FORMAT_VERSION.to_le_bytes());
    for d in [policy.obs_dim, policy.act_dim, policy.hidden_dim] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let floats = policy
        .obs_norm
        .mean
        .iter()
        .chain(&policy.obs_norm.std)
        .chain(&policy.act_norm.mean)
        .chain(&policy.act_norm.std);
    for x in floats {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(policy.weights.len() as u64).to_le_bytes());
    for w in &policy.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("policy file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<Policy> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != POLICY_MAGIC {
        return Err(Error::Format("not a policy file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != POLICY_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported policy format version {version}")));
    }
    let obs_dim = r.u32()? as usize;
    let act_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let obs_norm = NormStats {
        mean: r.f64s(obs_dim)?,
        std: r.f64s(obs_dim)?,
    };
    let act_norm = NormStats {
        mean: r.f64s(act_dim)?,
        std: r.f64s(act_dim)?,
    };
    let n = r.u64()? as usize;
    let weights = r.f64s(n)?;
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after policy parameters".into()));
    }
    let policy = Policy {
        obs_dim,
        act_dim,
        hidden_dim,
        weights,
        obs_norm,
        act_norm,
    };
    policy.validate()?;
    Ok(policy)
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    std::fs::write(path, encode(policy)).map_err(|e| Error::io(path, e))
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
