use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

const MAGIC: &[u8; 4] = b"REDE";
const VERSION: u16 = 1;

/// Size of the fixed header: magic, version, role, dim, row count.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

/// What a matrix holds. The discriminant is the on-disk role byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TextClaim = 0,
    ImageClaim = 1,
    TextEvidence = 2,
    ImageEvidence = 3,
    /// Permuted evidence slots of assembled bundles.
    EvidenceBundle = 4,
}

impl Role {
    pub const EMBEDDINGS: [Role; 4] =
        [Role::TextClaim, Role::ImageClaim, Role::TextEvidence, Role::ImageEvidence];

    pub fn from_byte(b: u8) -> Option<Role> {
        match b {
            0 => Some(Role::TextClaim),
            1 => Some(Role::ImageClaim),
            2 => Some(Role::TextEvidence),
            3 => Some(Role::ImageEvidence),
            4 => Some(Role::EvidenceBundle),
            _ => None,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Role::TextClaim => "text_claim.rede",
            Role::ImageClaim => "image_claim.rede",
            Role::TextEvidence => "text_evidence.rede",
            Role::ImageEvidence => "image_evidence.rede",
            Role::EvidenceBundle => "bundles.rede",
        }
    }
}

/// Dense `N x dim` f32 rows keyed by opaque string ids.
///
/// Rows are stored exactly as produced by the backbone; nothing here
/// normalizes them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    role: Role,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data, checking every invariant.
    pub fn new(role: Role, dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            bail!(Data, "embedding dim must be positive");
        }
        if data.len() != ids.len() * dim {
            bail!(Data, "expected {} values for {} rows of dim {}, got {}", ids.len() * dim, ids.len(), dim, data.len());
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            bail!(Data, "non-finite value in row '{}' of {:?} matrix", ids[pos / dim], role);
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.as_bytes().contains(&0) {
                bail!(Data, "id {:?} contains a NUL byte", id);
            }
            if positions.insert(id.clone(), i).is_some() {
                bail!(Data, "duplicate id '{}' in {:?} matrix", id, role);
            }
        }
        Ok(EmbeddingMatrix { role, dim, ids, data, positions })
    }

    pub fn empty(role: Role, dim: usize) -> Result<Self> {
        Self::new(role, dim, Vec::new(), Vec::new())
    }

    /// Builds a matrix from `(id, row)` pairs.
    pub fn from_rows<I, S>(role: Role, dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, row) in rows {
            let id = id.into();
            if row.len() != dim {
                bail!(Data, "row '{}' has length {}, expected {}", id, row.len(), dim);
            }
            ids.push(id);
            data.extend_from_slice(&row);
        }
        Self::new(role, dim, ids, data)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    /// Row lookup that fails with a data error naming the missing id.
    pub fn require(&self, id: &str) -> Result<&[f32]> {
        self.get(id)
            .ok_or_else(|| Error::Data(format!("id '{}' not found in {:?} matrix", id, self.role)))
    }

    /// Serializes to the on-disk layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|s| s.len() + 1).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + id_bytes + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.role as u8);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(0);
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the on-disk layout. `expected` rejects files of another role.
    pub fn from_bytes(bytes: &[u8], expected: Option<Role>) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            bail!(Format, "file shorter than the {}-byte header", HEADER_LEN);
        }
        if &bytes[..4] != MAGIC {
            bail!(Format, "bad magic {:?}", &bytes[..4]);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            bail!(Format, "unsupported format version {}", version);
        }
        let role = Role::from_byte(bytes[6]).ok_or_else(|| Error::Format(format!("unknown role byte {}", bytes[6])))?;
        if let Some(expected) = expected {
            if role != expected {
                bail!(Format, "file holds {:?} embeddings, expected {:?}", role, expected);
            }
        }
        let dim = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(bytes[11..19].try_into().unwrap());
        if dim == 0 {
            bail!(Format, "header declares dim 0");
        }
        let n = usize::try_from(n).map_err(|_| Error::Format(format!("row count {} too large", n)))?;

        let mut cursor = HEADER_LEN;
        let mut ids = Vec::with_capacity(n.min(bytes.len()));
        for _ in 0..n {
            let end = bytes[cursor..]
                .iter()
                .position(|&b| b == 0)
                .ok_or_else(|| Error::Format("unterminated id".into()))?;
            let id = std::str::from_utf8(&bytes[cursor..cursor + end])
                .map_err(|e| Error::Format(format!("id is not UTF-8: {}", e)))?;
            ids.push(id.to_owned());
            cursor += end + 1;
        }
        let payload = n
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        if bytes.len() - cursor != payload {
            bail!(Format, "payload is {} bytes, header implies {}", bytes.len() - cursor, payload);
        }
        let data = bytes[cursor..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(role, dim, ids, data)
    }
}

/// Reads and validates an embedding file of the given role.
pub fn load_embeddings(path: impl AsRef<Path>, role: Role) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path)?;
    EmbeddingMatrix::from_bytes(&bytes, Some(role))
}

/// Writes a matrix; the byte layout is a pure function of its contents.
pub fn save_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&matrix.to_bytes())?;
    w.flush()?;
    Ok(())
}

/// The four matrices a dataset draws on.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub text_claim: EmbeddingMatrix,
    pub image_claim: EmbeddingMatrix,
    pub text_evidence: EmbeddingMatrix,
    pub image_evidence: EmbeddingMatrix,
}

impl EmbeddingSet {
    pub fn get(&self, role: Role) -> Option<&EmbeddingMatrix> {
        match role {
            Role::TextClaim => Some(&self.text_claim),
            Role::ImageClaim => Some(&self.image_claim),
            Role::TextEvidence => Some(&self.text_evidence),
            Role::ImageEvidence => Some(&self.image_evidence),
            Role::EvidenceBundle => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingMatrix> {
        [&self.text_claim, &self.image_claim, &self.text_evidence, &self.image_evidence].into_iter()
    }

    pub fn dim(&self) -> usize {
        self.text_claim.dim()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(EmbeddingSet {
            text_claim: load_embeddings(dir.join(Role::TextClaim.file_name()), Role::TextClaim)?,
            image_claim: load_embeddings(dir.join(Role::ImageClaim.file_name()), Role::ImageClaim)?,
            text_evidence: load_embeddings(dir.join(Role::TextEvidence.file_name()), Role::TextEvidence)?,
            image_evidence: load_embeddings(dir.join(Role::ImageEvidence.file_name()), Role::ImageEvidence)?,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for m in self.iter() {
            save_embeddings(m, dir.join(m.role().file_name()))?;
        }
        Ok(())
    }
}
