//! Binary checkpoint:
//!
//! ```text
//! magic "ACPPOCKP" | version u32 | fingerprint (u32 len + utf8)
//! | header JSON (u32 len) | array count u32
//! | per array: name (u32 len + utf8), count u64, count × f32 LE
//! | sha256 of everything before
//! ```
//!
//! Integers are little-endian. Writes go through a temporary file and a
//! rename, and loads verify the trailer before decoding anything.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, AdamConfig, Policy, PolicySpec};
use crate::error::{Error, Result};
use crate::train::LagrangeState;

const MAGIC: &[u8; 8] = b"ACPPOCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: Policy,
    pub optimizer: Option<Adam>,
    pub lagrange: Option<LagrangeState>,
    /// Run identity the checkpoint belongs to; defaults to the spec fingerprint.
    pub fingerprint: String,
    /// Training episodes completed when the checkpoint was written.
    pub episodes: u64,
}

impl Checkpoint {
    pub fn new(policy: Policy) -> Self {
        let fingerprint = policy.spec().fingerprint();
        Self {
            policy,
            optimizer: None,
            lagrange: None,
            fingerprint,
            episodes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCheckpoint {
    pub checkpoint: Checkpoint,
    /// Non-fatal findings, e.g. a fingerprint mismatch accepted under `force`.
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: PolicySpec,
    lagrange: Option<LagrangeState>,
    adam: Option<AdamHeader>,
    episodes: u64,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    t: u64,
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend((bytes.len() as u32).to_le_bytes());
    buf.extend(bytes);
}

fn put_array(buf: &mut Vec<u8>, name: &str, values: &[f64]) {
    put_bytes(buf, name.as_bytes());
    buf.extend((values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend((*v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let header = Header {
        spec: ck.policy.spec().clone(),
        lagrange: ck.lagrange,
        adam: ck.optimizer.as_ref().map(|a| AdamHeader {
            config: a.config,
            t: a.t,
        }),
        episodes: ck.episodes,
    };
    let mut buf = Vec::new();
    buf.extend(MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    put_bytes(&mut buf, ck.fingerprint.as_bytes());
    put_bytes(
        &mut buf,
        &serde_json::to_vec(&header).expect("header serializes"),
    );
    let segments = ck.policy.layout().segments();
    let n_arrays = segments.len() + if ck.optimizer.is_some() { 2 } else { 0 };
    buf.extend((n_arrays as u32).to_le_bytes());
    let p = ck.policy.params();
    for (name, range) in segments {
        put_array(&mut buf, &format!("param/{name}"), &p[range.clone()]);
    }
    if let Some(a) = &ck.optimizer {
        put_array(&mut buf, "adam/m", &a.m);
        put_array(&mut buf, "adam/v", &a.v);
    }
    let digest = Sha256::digest(&buf);
    buf.extend(digest);
    buf
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck);
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    fn array(&mut self) -> Result<(String, Vec<f64>)> {
        let name = self.string()?;
        let n = self.u64()? as usize;
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("array too long".into()))?,
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((name, values))
    }
}

/// Decodes a checkpoint. When `expected_fingerprint` is given and differs
/// from the stored one, loading fails unless `force` is set, in which case
/// the mismatch is reported in `warnings`.
pub fn decode_checkpoint(
    bytes: &[u8],
    expected_fingerprint: Option<&str>,
    force: bool,
) -> Result<LoadedCheckpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file or truncated".into(),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint(
            "checksum mismatch (corrupt or truncated)".into(),
        ));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let fingerprint = r.string()?;
    let mut warnings = Vec::new();
    if let Some(expected) = expected_fingerprint {
        if expected != fingerprint {
            if !force {
                return Err(Error::FingerprintMismatch {
                    found: fingerprint,
                    expected: expected.to_string(),
                });
            }
            warnings.push(format!(
                "fingerprint mismatch accepted by force: stored {fingerprint}, expected {expected}"
            ));
        }
    }
    let header: Header = serde_json::from_slice(r.bytes()?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let n_arrays = r.u32()? as usize;
    let mut arrays = std::collections::HashMap::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let (name, values) = r.array()?;
        arrays.insert(name, values);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }

    let shell = Policy::new(header.spec.clone(), 0)?;
    let mut params = vec![0.0; shell.num_params()];
    for (name, range) in shell.layout().segments() {
        let key = format!("param/{name}");
        let values = arrays
            .remove(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {key}")))?;
        if values.len() != range.len() {
            return Err(Error::Checkpoint(format!(
                "array {key}: {} values, expected {}",
                values.len(),
                range.len()
            )));
        }
        params[range.clone()].copy_from_slice(&values);
    }
    let policy = Policy::from_params(header.spec, params)?;
    let optimizer = match header.adam {
        Some(h) => {
            let m = arrays
                .remove("adam/m")
                .ok_or_else(|| Error::Checkpoint("missing adam/m".into()))?;
            let v = arrays
                .remove("adam/v")
                .ok_or_else(|| Error::Checkpoint("missing adam/v".into()))?;
            if m.len() != policy.num_params() || v.len() != policy.num_params() {
                return Err(Error::Checkpoint("optimizer state size mismatch".into()));
            }
            Some(Adam {
                config: h.config,
                m,
                v,
                t: h.t,
            })
        }
        None => None,
    };
    Ok(LoadedCheckpoint {
        checkpoint: Checkpoint {
            policy,
            optimizer,
            lagrange: header.lagrange,
            fingerprint,
            episodes: header.episodes,
        },
        warnings,
    })
}

pub fn load_checkpoint(
    path: &Path,
    expected_fingerprint: Option<&str>,
    force: bool,
) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes, expected_fingerprint, force)
}
