//! Output artifacts. CSV files start with `# key: value` metadata lines
//! followed by a header row; JSON files are one object with a
//! `provenance` member and a `result` member.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL_VERSION: &str = concat!("spin-echo ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Metadata embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub mode: String,
}

impl Provenance {
    fn lines(&self) -> [(&'static str, String); 5] {
        [
            ("tool", self.tool.clone()),
            ("subcommand", self.subcommand.clone()),
            ("config_sha256", self.config_sha256.clone()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.clone()),
        ]
    }
}

/// A named file produced by a subcommand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// Render a CSV artifact. `extra` metadata follows the provenance lines.
pub fn csv_artifact(
    name: &str,
    prov: &Provenance,
    extra: &[(&str, String)],
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Artifact, CliError> {
    let mut out = String::new();
    for (k, v) in prov.lines().iter().map(|(k, v)| (*k, v.as_str())).chain(extra.iter().map(|(k, v)| (*k, v.as_str()))) {
        if v.contains(['\n', '\r']) {
            return Err(CliError::Io(format!("metadata value for `{k}` spans lines")));
        }
        out.push_str(&format!("# {k}: {v}\n"));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(columns).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| CliError::Io(e.to_string()))?);
    Ok(Artifact {
        name: name.into(),
        contents: out,
    })
}

#[derive(Serialize)]
struct JsonDoc<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

pub fn json_artifact<T: Serialize>(name: &str, prov: &Provenance, result: &T) -> Result<Artifact, CliError> {
    let mut contents = serde_json::to_string_pretty(&JsonDoc { provenance: prov, result })
        .map_err(|e| CliError::Io(e.to_string()))?;
    contents.push('\n');
    Ok(Artifact {
        name: name.into(),
        contents,
    })
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArtifactError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate metadata key `{0}`")]
    Duplicate(String),
    #[error("missing metadata key `{0}`")]
    Missing(&'static str),
    #[error("no header row")]
    NoHeader,
    #[error("invalid JSON artifact: {0}")]
    Json(String),
}

/// Metadata block and column names of a CSV artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
}

impl ArtifactHeader {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Provenance fields, all of which must be present.
    pub fn provenance(&self) -> Result<Provenance, ArtifactError> {
        let req = |k: &'static str| self.get(k).ok_or(ArtifactError::Missing(k));
        Ok(Provenance {
            tool: req("tool")?.into(),
            subcommand: req("subcommand")?.into(),
            config_sha256: req("config_sha256")?.into(),
            seed: req("seed")?.parse().map_err(|_| ArtifactError::Malformed {
                line: 0,
                reason: "seed is not an unsigned integer".into(),
            })?,
            mode: req("mode")?.into(),
        })
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Parse the metadata lines and header row at the top of a CSV artifact.
pub fn parse_artifact_header(text: &str) -> Result<ArtifactHeader, ArtifactError> {
    let mut metadata: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let malformed = |reason: &str| ArtifactError::Malformed {
                line: line_no,
                reason: reason.into(),
            };
            let rest = rest.strip_prefix(' ').ok_or_else(|| malformed("expected `# key: value`"))?;
            let (k, v) = rest.split_once(": ").ok_or_else(|| malformed("expected `# key: value`"))?;
            if !valid_key(k) {
                return Err(malformed("metadata keys use [A-Za-z0-9_]"));
            }
            if metadata.iter().any(|(m, _)| m == k) {
                return Err(ArtifactError::Duplicate(k.into()));
            }
            metadata.push((k.into(), v.into()));
            continue;
        }
        if line.trim().is_empty() {
            return Err(ArtifactError::Malformed {
                line: line_no,
                reason: "blank line before header".into(),
            });
        }
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
        let rec = r
            .records()
            .next()
            .ok_or(ArtifactError::NoHeader)?
            .map_err(|e| ArtifactError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
        let columns: Vec<String> = rec.iter().map(str::to_owned).collect();
        if columns.iter().any(String::is_empty) {
            return Err(ArtifactError::Malformed {
                line: line_no,
                reason: "empty column name".into(),
            });
        }
        return Ok(ArtifactHeader { metadata, columns });
    }
    Err(ArtifactError::NoHeader)
}

/// Provenance member of a JSON artifact.
pub fn parse_json_provenance(text: &str) -> Result<Provenance, ArtifactError> {
    #[derive(Deserialize)]
    struct Doc {
        provenance: Provenance,
    }
    serde_json::from_str::<Doc>(text)
        .map(|d| d.provenance)
        .map_err(|e| ArtifactError::Json(e.to_string()))
}
