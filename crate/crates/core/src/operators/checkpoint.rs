//! Model checkpoint files: a textual header (architecture descriptors,
//! seed, training-config hash) followed by one little-endian f64 blob per
//! model. Files start with the magic string `FEOL1`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tape::Params;

use super::{Backbone, DeepOnetConfig, DeepOnetModel, FnoConfig, FnoModel, IfolConfig, IfolModel, ModelSet};

const MAGIC: &str = "FEOL1";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchDescriptor {
    Fno(FnoConfig),
    DeepOnet(DeepOnetConfig),
    Ifol(IfolConfig),
}

impl ArchDescriptor {
    pub fn instantiate(&self) -> (Backbone, Params) {
        let mut params = Params::new();
        let backbone = match self {
            ArchDescriptor::Fno(cfg) => {
                let mut m = FnoModel::new(cfg.clone());
                m.register(&mut params);
                Backbone::Fno(m)
            }
            ArchDescriptor::DeepOnet(cfg) => {
                let mut m = DeepOnetModel::new(cfg.clone());
                m.register(&mut params);
                Backbone::DeepOnet(m)
            }
            ArchDescriptor::Ifol(cfg) => {
                let mut m = IfolModel::new(cfg.clone());
                m.register(&mut params);
                Backbone::Ifol(m)
            }
        };
        (backbone, params)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub seed: u64,
    pub config_hash: String,
    pub models: Vec<ArchDescriptor>,
}

/// Write a checkpoint to `path`.
pub fn save_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    params: &[Params],
) -> Result<()> {
    if header.models.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} descriptors for {} parameter sets",
            header.models.len(),
            params.len()
        )));
    }
    let header_text =
        toml::to_string(header).map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{MAGIC}")?;
    writeln!(f, "header {}", header_text.len())?;
    f.write_all(header_text.as_bytes())?;
    for p in params {
        writeln!(f, "blob {}", p.n_params())?;
        for v in &p.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a checkpoint and reinstantiate the model set with its parameters.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelSet, Vec<Params>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {MAGIC}",
            line.trim_end()
        )));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header_len: usize = line
        .trim_end()
        .strip_prefix("header ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing header length".into()))?;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = toml::from_str(
        std::str::from_utf8(&header_bytes)
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?,
    )
    .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;

    let mut models = Vec::new();
    let mut params = Vec::new();
    for desc in &header.models {
        let (backbone, mut p) = desc.instantiate();
        line.clear();
        r.read_line(&mut line)?;
        let n: usize = line
            .trim_end()
            .strip_prefix("blob ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing blob length".into()))?;
        if n != p.n_params() {
            return Err(Error::Checkpoint(format!(
                "blob has {n} values but the architecture needs {}",
                p.n_params()
            )));
        }
        let mut buf = [0u8; 8];
        for i in 0..n {
            r.read_exact(&mut buf)?;
            p.data[i] = f64::from_le_bytes(buf);
        }
        models.push(backbone);
        params.push(p);
    }
    Ok((header, ModelSet { models }, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = FnoConfig {
            dim: 2,
            modes: vec![2, 2],
            width: 3,
            n_stages: 1,
            proj_dim: 4,
            padding: 1,
            output_scale: 1e-3,
            include_coords: true,
            out_fields: 3,
        };
        let mut m = FnoModel::new(cfg.clone());
        let mut p = Params::new();
        m.register(&mut p);
        let set = ModelSet::single(Backbone::Fno(m));
        let params = set.init_params(1234);
        let header = CheckpointHeader {
            seed: 1234,
            config_hash: "sha256:test".into(),
            models: vec![ArchDescriptor::Fno(cfg)],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.feol");
        save_checkpoint(&path, &header, &params).unwrap();
        let (h2, set2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(header, h2);
        assert_eq!(set2.models.len(), 1);
        assert_eq!(params[0].data, params2[0].data);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.feol");
        std::fs::write(&path, b"NOPE\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
