//! Self-describing network archive.
//!
//! A UTF-8 header of `key value` lines, terminated by `end`, followed by the
//! parameters as little-endian `f64` in storage order.

use std::fs;
use std::path::Path;

use serde_json::Value;

use super::{Architecture, Network, INIT_SCHEME};
use crate::error::{PpdeError, Result};

const MAGIC: &str = "ppde-checkpoint";
const VERSION: u32 = 1;
const STORAGE: &str = "weights row-major [fan_in, fan_out], biases [1, fan_out], descriptor order, little-endian f64";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    /// Describes what the network was trained on (encoding, widths, ...).
    pub input: Value,
    /// Free-form provenance such as the config hash.
    pub meta: Value,
}

fn bad(msg: impl Into<String>) -> PpdeError {
    PpdeError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(network: Network, input: Value, meta: Value) -> Self {
        Self { network, input, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = serde_json::to_string(&self.network.arch).expect("architecture serializes");
        let mut header = String::new();
        header.push_str(&format!("{MAGIC} {VERSION}\n"));
        header.push_str(&format!("architecture {arch}\n"));
        header.push_str(&format!("seed {}\n", self.network.seed));
        header.push_str(&format!("storage {STORAGE}\n"));
        header.push_str(&format!("init {INIT_SCHEME}\n"));
        header.push_str(&format!("input {}\n", self.input));
        header.push_str(&format!("meta {}\n", self.meta));
        header.push_str(&format!("params {}\n", self.network.params.len()));
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(self.network.params.len() * 8);
        for p in &self.network.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        loop {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
            fields.push((k.to_string(), v.to_string()));
        }
        let get = |key: &str| {
            fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| bad(format!("missing header field {key}")))
        };
        let version: u32 = get(MAGIC)?.parse().map_err(|_| bad("unreadable version"))?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let arch: Architecture = serde_json::from_str(get("architecture")?).map_err(|e| bad(format!("architecture: {e}")))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("unreadable seed"))?;
        let count: usize = get("params")?.parse().map_err(|_| bad("unreadable parameter count"))?;
        let input: Value = serde_json::from_str(get("input")?).map_err(|e| bad(format!("input: {e}")))?;
        let meta: Value = serde_json::from_str(get("meta")?).map_err(|e| bad(format!("meta: {e}")))?;
        let payload = &bytes[pos..];
        if payload.len() != count * 8 {
            return Err(bad(format!("expected {} payload bytes, found {}", count * 8, payload.len())));
        }
        let params = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let network = Network::from_params(arch, params, seed).map_err(|e| bad(e.to_string()))?;
        Ok(Self { network, input, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
