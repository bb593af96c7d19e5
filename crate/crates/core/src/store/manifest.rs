use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Verdict label: 0 truthful, 1 misinformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Verdict {
    Truthful,
    Misinformation,
}

impl Verdict {
    pub fn as_label(self) -> u8 {
        self as u8
    }

    pub fn from_prediction(misinformation: bool) -> Verdict {
        if misinformation {
            Verdict::Misinformation
        } else {
            Verdict::Truthful
        }
    }
}

impl From<Verdict> for u8 {
    fn from(v: Verdict) -> u8 {
        match v {
            Verdict::Truthful => 0,
            Verdict::Misinformation => 1,
        }
    }
}

impl TryFrom<u8> for Verdict {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Verdict::Truthful),
            1 => Ok(Verdict::Misinformation),
            other => Err(format!("verdict must be 0 or 1, got {}", other)),
        }
    }
}

/// Finer-grained kind of a pair, used by the "True vs OOC" metric on
/// external benchmarks that also contain miscaptioned items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCategory {
    Truthful,
    OutOfContext,
    Miscaptioned,
}

/// A claim (image, text) with its verdict and raw evidence pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationPair {
    pub pair_id: String,
    pub text_id: String,
    pub image_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub candidate_text_evidence: Vec<String>,
    #[serde(default)]
    pub candidate_image_evidence: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    External,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::External];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::External => "external",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split '{}'", s)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub pairs: Vec<VerificationPair>,
    pub dim: usize,
    pub provenance: String,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Reads newline-delimited JSON, one pair per line. Blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<VerificationPair>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("manifest line {}: {}", lineno + 1, e)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_manifest(pairs: &[VerificationPair], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_json_uses_exact_field_names() {
        let line = r#"{"pair_id":"p","text_id":"t","image_id":"i","verdict":1,"candidate_text_evidence":["a"],"candidate_image_evidence":[]}"#;
        let pair: VerificationPair = serde_json::from_str(line).unwrap();
        assert_eq!(pair.verdict, Verdict::Misinformation);
        assert_eq!(serde_json::to_string(&pair).unwrap(), line);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_verdicts() {
        let extra = r#"{"pair_id":"p","text_id":"t","image_id":"i","verdict":0,"extra":1}"#;
        assert!(serde_json::from_str::<VerificationPair>(extra).is_err());
        let bad = r#"{"pair_id":"p","text_id":"t","image_id":"i","verdict":2}"#;
        assert!(serde_json::from_str::<VerificationPair>(bad).is_err());
    }

    #[test]
    fn ndjson_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let pairs = vec![
            VerificationPair {
                pair_id: "p0".into(),
                text_id: "t0".into(),
                image_id: "i0".into(),
                verdict: Verdict::Truthful,
                candidate_text_evidence: vec!["te0".into()],
                candidate_image_evidence: vec![],
            };
            2
        ];
        write_manifest(&pairs, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), pairs);
        fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Format(_))));
    }
}
