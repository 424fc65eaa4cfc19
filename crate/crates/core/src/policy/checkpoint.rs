//! Checkpoint files: `XTOMCKPT`, format version (u32 LE), header length
//! (u64 LE), JSON header, then every parameter as f64 LE. A text manifest
//! with the same information sits next to it as `<file>.manifest`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::lstm::{Dims, PolicyParams, TensorSpec};
use super::{Encoder, Explainer, PolicyConfig};
use crate::aog::AogGrammar;
use crate::error::{fail, Error, ErrorCode, Result};

const MAGIC: &[u8; 8] = b"XTOMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub grammar_hash: String,
    pub dims: Dims,
    pub encoder: Encoder,
    pub config: PolicyConfig,
    pub ablated: bool,
    /// Episodes the weights were trained on.
    pub episodes: u64,
    pub tensors: Vec<TensorSpec>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::new(ErrorCode::CheckpointError, msg)
}

pub fn encode_checkpoint(explainer: &Explainer, grammar: &AogGrammar, episodes: u64) -> (Vec<u8>, CheckpointHeader) {
    let dims = explainer.params.dims;
    let header = CheckpointHeader {
        grammar_hash: grammar.hash().to_hex(),
        dims,
        encoder: explainer.encoder,
        config: explainer.config,
        ablated: explainer.ablated,
        episodes,
        tensors: dims.tensors(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * explainer.params.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in &explainer.params.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    (out, header)
}

pub fn decode_checkpoint(bytes: &[u8], grammar: &AogGrammar) -> Result<(Explainer, CheckpointHeader)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize
        .checked_add(hlen)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..body]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.grammar_hash != grammar.hash().to_hex() {
        return fail(
            ErrorCode::GrammarMismatch,
            format!("checkpoint was trained on grammar {}", header.grammar_hash),
        );
    }
    if header.encoder != Encoder::new(grammar) || header.dims != header.encoder.dims(header.dims.hidden) {
        return Err(corrupt("shape manifest does not match the grammar"));
    }
    let n = header.dims.param_count();
    let rest = &bytes[body..];
    if rest.len() != 8 * n {
        return Err(corrupt(format!("expected {n} parameters, found {} bytes", rest.len())));
    }
    let data: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = PolicyParams { dims: header.dims, data };
    if !params.is_finite() {
        return Err(corrupt("non-finite weights"));
    }
    let explainer = Explainer {
        params,
        encoder: header.encoder,
        config: header.config,
        ablated: header.ablated,
    };
    Ok((explainer, header))
}

pub fn manifest_text(header: &CheckpointHeader) -> String {
    let mut s = String::new();
    s.push_str(&format!("format = {CHECKPOINT_VERSION}\n"));
    s.push_str(&format!("grammar = {}\n", header.grammar_hash));
    s.push_str(&format!("input = {}\n", header.dims.input));
    s.push_str(&format!("hidden = {}\n", header.dims.hidden));
    s.push_str(&format!("actions = {}\n", header.dims.actions));
    s.push_str(&format!("ablated = {}\n", header.ablated));
    s.push_str(&format!("episodes = {}\n", header.episodes));
    s.push_str(&format!(
        "config = {}\n",
        serde_json::to_string(&header.config).expect("config serialises")
    ));
    for t in &header.tensors {
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("tensor {} {} @{}\n", t.name, shape.join("x"), t.offset));
    }
    s
}

pub fn save_checkpoint(path: &Path, explainer: &Explainer, grammar: &AogGrammar, episodes: u64) -> Result<()> {
    let (bytes, header) = encode_checkpoint(explainer, grammar, episodes);
    fs::write(path, bytes)?;
    fs::write(manifest_path(path), manifest_text(&header))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, grammar: &AogGrammar) -> Result<(Explainer, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes, grammar)
}
