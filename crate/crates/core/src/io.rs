//! File formats: embedding matrices (JSON or raw binary), graph exports and
//! JSON-lines triplet batches.
//!
//! Binary embeddings start with a 16-byte little-endian header:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MGAL"
//! 4       4     u32 rows
//! 8       4     u32 dim
//! 12      4     reserved, written as 0 and ignored on read
//! 16      ...   rows * dim f32 values, row-major
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{pool_embeddings, EmbeddingMatrix, NodeStructure, StructuredGraph};
use crate::multi::ModalityBatch;

pub const MAGIC: &[u8; 4] = b"MGAL";
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingJson {
    pub dim: usize,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl From<&EmbeddingMatrix> for EmbeddingJson {
    fn from(m: &EmbeddingMatrix) -> Self {
        Self { dim: m.dim(), rows: m.rows(), values: m.to_flat() }
    }
}

impl TryFrom<EmbeddingJson> for EmbeddingMatrix {
    type Error = Error;

    fn try_from(j: EmbeddingJson) -> Result<Self> {
        EmbeddingMatrix::from_flat(j.rows, j.dim, j.values)
    }
}

/// Parses either format, chosen by the leading magic bytes.
pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.starts_with(MAGIC) {
        return parse_binary(bytes);
    }
    let j: EmbeddingJson = serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("embedding JSON: {e}")))?;
    j.try_into()
}

fn parse_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("binary header truncated ({} bytes)", bytes.len())));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, dim) = (word(4), word(8));
    let body = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format("binary dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "binary body has {} bytes, header implies {expected} ({rows}x{dim} f32)",
            body.len()
        )));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    EmbeddingMatrix::from_flat(rows, dim, values)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    parse_embeddings(&std::fs::read(path)?)
}

pub fn write_embeddings_json<W: Write>(m: &EmbeddingMatrix, w: W) -> Result<()> {
    serde_json::to_writer(w, &EmbeddingJson::from(m))?;
    Ok(())
}

/// Values are narrowed to f32.
pub fn write_embeddings_binary<W: Write>(m: &EmbeddingMatrix, mut w: W) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("too many rows for binary format".into()))?;
    let dim = u32::try_from(m.dim()).map_err(|_| Error::Format("dimension too large for binary format".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for v in m.view().iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Graph export: node count, edge pairs and optional features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
}

impl GraphExport {
    pub fn from_graph(g: &StructuredGraph, with_features: bool) -> Self {
        Self {
            n: g.node_count(),
            edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
            features: with_features.then(|| g.embedding().to_rows()),
        }
    }

    pub fn into_graph(self) -> Result<StructuredGraph> {
        let rows = self.features.ok_or_else(|| Error::Format("graph export has no features".into()))?;
        if rows.len() != self.n {
            return Err(Error::Format(format!(
                "graph export declares n={} but has {} feature rows",
                self.n,
                rows.len()
            )));
        }
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        StructuredGraph::from_edges(EmbeddingMatrix::from_rows(&rows)?, &edges)
    }
}

/// A field that is either one vector or a list of per-round vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rounds {
    Single(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

impl Rounds {
    pub fn pooled(&self) -> Result<Vec<f64>> {
        match self {
            Rounds::Single(v) => pool_embeddings(std::slice::from_ref(v)),
            Rounds::Many(rounds) => pool_embeddings(rounds),
        }
    }
}

/// One JSON-lines record of a triplet batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: serde_json::Value,
    pub v: Rounds,
    pub a: Rounds,
    pub ae: Rounds,
}

/// Reads a JSON-lines triplet file, pooling multi-round answers. Blank lines
/// are skipped. Returns record ids (as strings) in file order and the batch.
pub fn read_triplets_jsonl<R: BufRead>(reader: R) -> Result<(Vec<String>, ModalityBatch)> {
    let (mut ids, mut v, mut a, mut ae) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TripletRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        ids.push(match &rec.id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        });
        v.push(rec.v.pooled()?);
        a.push(rec.a.pooled()?);
        ae.push(rec.ae.pooled()?);
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let batch = ModalityBatch::triplet(
        EmbeddingMatrix::from_rows(&v)?,
        EmbeddingMatrix::from_rows(&a)?,
        EmbeddingMatrix::from_rows(&ae)?,
    )?;
    Ok((ids, batch))
}

/// Writes one record per batch row with single-vector fields.
pub fn write_triplets_jsonl<W: Write>(batch: &ModalityBatch, mut w: W) -> Result<()> {
    if batch.modality_count() != 3 {
        return Err(Error::shape("triplet files hold exactly three modalities"));
    }
    let views = batch.views();
    for k in 0..batch.size() {
        let rec = TripletRecord {
            id: serde_json::Value::from(k),
            v: Rounds::Single(views[0].row(k).to_vec()),
            a: Rounds::Single(views[1].row(k).to_vec()),
            ae: Rounds::Single(views[2].row(k).to_vec()),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
