//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic   8 bytes  "TAMLCKPT"
//! version u32
//! M N D K u64 x 4    (K = 0 for CML)
//! tag     u8         0 conventional, 1 adaptive, 2 cml
//! seed    u64
//! epoch   u64
//! body    f64 row-major: users M x D, items N x D, then for branches
//!         W_a D x D, T_mu K x D, T_sigma K x D
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use taml_core::baselines::CmlParameters;
use taml_core::{BranchParameters, BranchTag};

pub const MAGIC: &[u8; 8] = b"TAMLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Branch(BranchTag),
    Cml,
}

impl CheckpointKind {
    fn code(self) -> u8 {
        match self {
            Self::Branch(BranchTag::Conventional) => 0,
            Self::Branch(BranchTag::Adaptive) => 1,
            Self::Cml => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Self::Branch(BranchTag::Conventional),
            1 => Self::Branch(BranchTag::Adaptive),
            2 => Self::Cml,
            other => bail!("unknown checkpoint tag {other}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub aspects: usize,
    pub kind: CheckpointKind,
    pub seed: u64,
    pub epoch: usize,
}

const HEADER_LEN: usize = 8 + 4 + 4 * 8 + 1 + 8 + 8;

fn encode(header: &Header, tensors: &[&[f64]]) -> Vec<u8> {
    let body: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [header.users, header.items, header.dim, header.aspects] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(header.kind.code());
    out.extend_from_slice(&header.seed.to_le_bytes());
    out.extend_from_slice(&(header.epoch as u64).to_le_bytes());
    for t in tensors {
        for v in *t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    ensure!(bytes.len() >= HEADER_LEN, "checkpoint truncated: {} bytes", bytes.len());
    ensure!(&bytes[..8] == MAGIC, "not a checkpoint file (bad magic)");
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    ensure!(version == VERSION, "unsupported checkpoint version {version} (expected {VERSION})");
    let dims: Vec<usize> = (0..4).map(|i| u64_at(12 + 8 * i) as usize).collect();
    let header = Header {
        users: dims[0],
        items: dims[1],
        dim: dims[2],
        aspects: dims[3],
        kind: CheckpointKind::from_code(bytes[44])?,
        seed: u64_at(45),
        epoch: u64_at(53) as usize,
    };
    let body = &bytes[HEADER_LEN..];
    ensure!(body.len().is_multiple_of(8), "checkpoint body is not a whole number of f64 values");
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

fn split_body(mut values: &[f64], lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
    let expected: usize = lengths.iter().sum();
    ensure!(
        values.len() == expected,
        "checkpoint body holds {} values but the header implies {expected}",
        values.len()
    );
    let mut out = Vec::with_capacity(lengths.len());
    for &n in lengths {
        out.push(values[..n].to_vec());
        values = &values[n..];
    }
    Ok(out)
}

pub fn encode_branch(params: &BranchParameters, seed: u64, epoch: usize) -> Vec<u8> {
    let header = Header {
        users: params.num_users,
        items: params.num_items,
        dim: params.dim,
        aspects: params.aspects,
        kind: CheckpointKind::Branch(params.tag),
        seed,
        epoch,
    };
    encode(&header, &params.tensors())
}

pub fn decode_branch(bytes: &[u8]) -> Result<(Header, BranchParameters)> {
    let (header, values) = decode(bytes)?;
    let CheckpointKind::Branch(tag) = header.kind else {
        bail!("expected a branch checkpoint, found a CML checkpoint");
    };
    let (m, n, d, k) = (header.users, header.items, header.dim, header.aspects);
    let mut parts = split_body(&values, &[m * d, n * d, d * d, k * d, k * d])?.into_iter();
    let mut next = || parts.next().expect("five tensors");
    let params = BranchParameters {
        tag,
        num_users: m,
        num_items: n,
        dim: d,
        aspects: k,
        user_embeddings: next(),
        item_embeddings: next(),
        attention: next(),
        aspect_mean: next(),
        aspect_std: next(),
    };
    Ok((header, params))
}

pub fn encode_cml(params: &CmlParameters, seed: u64, epoch: usize) -> Vec<u8> {
    let header = Header {
        users: params.num_users,
        items: params.num_items,
        dim: params.dim,
        aspects: 0,
        kind: CheckpointKind::Cml,
        seed,
        epoch,
    };
    encode(&header, &[&params.user_embeddings, &params.item_embeddings])
}

pub fn decode_cml(bytes: &[u8]) -> Result<(Header, CmlParameters)> {
    let (header, values) = decode(bytes)?;
    ensure!(header.kind == CheckpointKind::Cml, "expected a CML checkpoint");
    let (m, n, d) = (header.users, header.items, header.dim);
    let mut parts = split_body(&values, &[m * d, n * d])?.into_iter();
    let user_embeddings = parts.next().expect("users");
    let item_embeddings = parts.next().expect("items");
    let params = CmlParameters {
        num_users: m,
        num_items: n,
        dim: d,
        user_embeddings,
        item_embeddings,
    };
    Ok((header, params))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn read_branch(path: &Path) -> Result<(Header, BranchParameters)> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    decode_branch(&bytes).with_context(|| format!("decoding checkpoint {}", path.display()))
}

pub fn read_cml(path: &Path) -> Result<(Header, CmlParameters)> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    decode_cml(&bytes).with_context(|| format!("decoding checkpoint {}", path.display()))
}
