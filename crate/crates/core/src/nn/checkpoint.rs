//! Binary network checkpoints.
//!
//! Layout of a single checkpoint:
//!
//! ```text
//! b"CTDEMLP1"                          8-byte magic
//! u32 LE  manifest length, then that many bytes of UTF-8 `key=value` lines
//! for each layer 0..3:
//!     u64 LE n, n x f64 LE   weights (row-major, out x in)
//!     u64 LE n, n x f64 LE   biases
//! ```
//!
//! Manifest keys: `format`, `layers`, `activation`, `loss`, `heads`
//! (`kind:offset:len` joined by `,`), and free-form `tag.<name>` entries.
//! A bundle (`b"CTDEBDL1"`) holds a tag manifest followed by a count and
//! length-prefixed member checkpoints.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::loss::LossKind;
use crate::nn::mlp::{Activation, Head, HeadKind, MlpPolicy};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CTDEMLP1";
const BUNDLE_MAGIC: &[u8; 8] = b"CTDEBDL1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub policy: MlpPolicy<S>,
    pub loss: LossKind,
    pub tags: BTreeMap<String, String>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(policy: MlpPolicy<S>, loss: LossKind) -> Self {
        Checkpoint { policy, loss, tags: BTreeMap::new() }
    }

    pub fn with_tag(mut self, key: &str, value: impl Into<String>) -> Self {
        self.tags.insert(key.to_string(), value.into());
        self
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    fn manifest(&self) -> String {
        let p = &self.policy;
        let s = p.sizes();
        let heads: Vec<String> =
            p.heads().iter().map(|h| format!("{}:{}:{}", h.kind.tag(), h.offset, h.len)).collect();
        let mut m = String::new();
        m.push_str("format=1\n");
        m.push_str(&format!("layers={},{},{},{}\n", s[0], s[1], s[2], s[3]));
        m.push_str(&format!("activation={}\n", p.activation().tag()));
        m.push_str(&format!("loss={}\n", self.loss.tag()));
        m.push_str(&format!("heads={}\n", heads.join(",")));
        for (k, v) in &self.tags {
            m.push_str(&format!("tag.{k}={v}\n"));
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest();
        let mut out = Vec::with_capacity(16 + manifest.len() + 8 * self.policy.num_params() + 48);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for l in 0..3 {
            let (w, b) = self.policy.layer_ranges(l);
            write_array(&mut out, &self.policy.params()[w]);
            write_array(&mut out, &self.policy.params()[b]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mlen = r.u32()? as usize;
        let manifest = std::str::from_utf8(r.take(mlen)?)
            .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
        let mut fields = BTreeMap::new();
        let mut tags = BTreeMap::new();
        for line in manifest.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("bad manifest line `{line}`")))?;
            if let Some(t) = k.strip_prefix("tag.") {
                tags.insert(t.to_string(), v.to_string());
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{k}`")));
        if get("format")? != "1" {
            return Err(Error::Checkpoint("unsupported format version".into()));
        }
        let sizes: Vec<usize> = get("layers")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Checkpoint("bad layer size".into())))
            .collect::<Result<_>>()?;
        let sizes: [usize; 4] = sizes.try_into().map_err(|_| Error::Checkpoint("need four layer sizes".into()))?;
        let activation =
            Activation::from_tag(get("activation")?).ok_or_else(|| Error::Checkpoint("unknown activation".into()))?;
        let loss = LossKind::from_tag(get("loss")?).ok_or_else(|| Error::Checkpoint("unknown loss kind".into()))?;
        let mut heads = Vec::new();
        for h in get("heads")?.split(',').filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = h.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Checkpoint(format!("bad head `{h}`")));
            }
            let kind = HeadKind::from_tag(parts[0]).ok_or_else(|| Error::Checkpoint(format!("bad head kind `{h}`")))?;
            let offset = parts[1].parse().map_err(|_| Error::Checkpoint(format!("bad head `{h}`")))?;
            let len = parts[2].parse().map_err(|_| Error::Checkpoint(format!("bad head `{h}`")))?;
            heads.push(Head { offset, len, kind });
        }
        let mut params = Vec::new();
        for l in 0..3 {
            let w = r.array()?;
            if w.len() != sizes[l] * sizes[l + 1] {
                return Err(Error::Checkpoint(format!("layer {l} weight count {}", w.len())));
            }
            let b = r.array()?;
            if b.len() != sizes[l + 1] {
                return Err(Error::Checkpoint(format!("layer {l} bias count {}", b.len())));
            }
            params.extend(w.into_iter().chain(b).map(S::lit));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let policy = MlpPolicy::from_params(sizes, activation, heads, params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { policy, loss, tags })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle<S> {
    pub tags: BTreeMap<String, String>,
    pub members: Vec<Checkpoint<S>>,
}

impl<S: Scalar> Bundle<S> {
    pub fn new(members: Vec<Checkpoint<S>>) -> Self {
        Bundle { tags: BTreeMap::new(), members }
    }

    pub fn with_tag(mut self, key: &str, value: impl Into<String>) -> Self {
        self.tags.insert(key.to_string(), value.into());
        self
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest: String = self.tags.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.members.len() as u32).to_le_bytes());
        for m in &self.members {
            let bytes = m.to_bytes();
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != BUNDLE_MAGIC {
            return Err(Error::Checkpoint("bad bundle magic".into()));
        }
        let mlen = r.u32()? as usize;
        let manifest = std::str::from_utf8(r.take(mlen)?)
            .map_err(|_| Error::Checkpoint("bundle manifest is not UTF-8".into()))?;
        let mut tags = BTreeMap::new();
        for line in manifest.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("bad bundle line `{line}`")))?;
            tags.insert(k.to_string(), v.to_string());
        }
        let n = r.u32()? as usize;
        let mut members = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u64()? as usize;
            members.push(Checkpoint::from_bytes(r.take(len)?)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes in bundle".into()));
        }
        Ok(Bundle { tags, members })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_array<S: Scalar>(out: &mut Vec<u8>, xs: &[S]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for &x in xs {
        out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
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

    fn array(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too long".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
