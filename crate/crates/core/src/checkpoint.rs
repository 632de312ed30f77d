//! On-disk model bundles.
//!
//! A checkpoint is a directory with three files: `vocab.txt`, `limits.txt`
//! and `model.ckpt`. The model file starts with a text header (format tag,
//! architecture, table sizes, SHA-256 of the two companion files, free-form
//! metadata) ended by a line `end`, followed by the tensors as
//! `name_len:u32, name, ndim:u32, dims:u64*, data:f32*`, all little-endian.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::featureizer::{digest, FeatureSet, TableSizes, TimeLimits, Vocab};
use crate::model::{Model, ModelConfig, ModelParams, ModelSpec};
use crate::numerics::Tensor;

const MAGIC: &str = "das-checkpoint 1";
pub const MODEL_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LIMITS_FILE: &str = "limits.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocab,
    pub limits: TimeLimits,
    /// Free-form `key=value` pairs, e.g. the session threshold used in training.
    pub meta: BTreeMap<String, String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::file(&tmp, e))?;
    f.sync_all().map_err(|e| Error::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

fn sizes_fields(s: &TableSizes) -> [(&'static str, u32); 10] {
    [
        ("question", s.question),
        ("category", s.category),
        ("hour", s.hour),
        ("weekday", s.weekday),
        ("position", s.position),
        ("session_position", s.session_position),
        ("correctness", s.correctness),
        ("elapsed", s.elapsed),
        ("on_time", s.on_time),
        ("dropout", s.dropout),
    ]
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let mut vocab = Vec::new();
        self.vocab.write(&mut vocab)?;
        let mut limits = Vec::new();
        self.limits.write(&mut limits)?;

        let spec = &self.model.spec;
        let c = &spec.config;
        let mut out = Vec::new();
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "layers={}", c.layers)?;
        writeln!(out, "d_model={}", c.d_model)?;
        writeln!(out, "heads={}", c.heads)?;
        writeln!(out, "seq_size={}", c.seq_size)?;
        writeln!(out, "dropout={}", c.dropout)?;
        writeln!(out, "features={}", spec.features)?;
        for (k, v) in sizes_fields(&spec.sizes) {
            writeln!(out, "sizes.{k}={v}")?;
        }
        writeln!(out, "vocab_sha256={}", digest(&vocab))?;
        writeln!(out, "limits_sha256={}", digest(&limits))?;
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Contract(format!("metadata key `{k}` cannot be stored")));
            }
            writeln!(out, "meta.{k}={v}")?;
        }
        writeln!(out, "tensors={}", self.model.params.len())?;
        writeln!(out, "end")?;
        for (name, t) in self.model.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_atomic(&dir.join(VOCAB_FILE), &vocab)?;
        write_atomic(&dir.join(LIMITS_FILE), &limits)?;
        write_atomic(&dir.join(MODEL_FILE), &out)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::file(&p, e))
        };
        let vocab_bytes = read(VOCAB_FILE)?;
        let limits_bytes = read(LIMITS_FILE)?;
        let path = dir.join(MODEL_FILE);
        let file = File::open(&path).map_err(|e| Error::file(&path, e))?;
        let mut r = BufReader::new(file);

        let mut header = BTreeMap::new();
        let mut meta = BTreeMap::new();
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Compatibility(format!("{} is not a checkpoint", path.display())));
        }
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Compatibility("checkpoint header is truncated".into()));
            }
            let l = line.trim_end();
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Compatibility(format!("bad checkpoint header line `{l}`")))?;
            match k.strip_prefix("meta.") {
                Some(m) => meta.insert(m.to_string(), v.to_string()),
                None => header.insert(k.to_string(), v.to_string()),
            };
        }
        let get = |k: &str| -> Result<&str> {
            header
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Compatibility(format!("checkpoint header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Compatibility(format!("checkpoint `{k}` is not an integer")))
        };

        if get("vocab_sha256")? != digest(&vocab_bytes) {
            return Err(Error::Compatibility("vocab.txt does not match the model".into()));
        }
        if get("limits_sha256")? != digest(&limits_bytes) {
            return Err(Error::Compatibility("limits.txt does not match the model".into()));
        }
        let vocab = Vocab::read(vocab_bytes.as_slice())?;
        let limits = TimeLimits::read(limits_bytes.as_slice())?;

        let config = ModelConfig {
            layers: num("layers")?,
            d_model: num("d_model")?,
            heads: num("heads")?,
            seq_size: num("seq_size")?,
            dropout: get("dropout")?
                .parse()
                .map_err(|_| Error::Compatibility("checkpoint dropout is not a number".into()))?,
        };
        let features = FeatureSet::parse(get("features")?)?;
        let sizes = vocab.sizes(config.seq_size);
        for (k, v) in sizes_fields(&sizes) {
            if num(&format!("sizes.{k}"))? != v as usize {
                return Err(Error::Compatibility(format!("table `{k}` size differs from the vocabulary")));
            }
        }
        let spec = ModelSpec::new(config, features, sizes)?;

        let mut params = ModelParams::new();
        for _ in 0..num("tensors")? {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(Error::Compatibility("corrupt tensor name".into()));
            }
            let mut name = vec![0; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Compatibility("tensor name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.read(&mut [0u8])? != 0 {
            return Err(Error::Compatibility("trailing bytes after the last tensor".into()));
        }
        Ok(Self {
            model: Model::new(spec, params)?,
            vocab,
            limits,
            meta,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes `text` to `path` through a temporary file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    write_atomic(path, text.as_bytes())
}

/// Creates `path` (and its parents) for buffered writing.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::init_params;

    fn sample() -> Checkpoint {
        let vocab = Vocab::build(std::iter::empty());
        let cfg = ModelConfig {
            layers: 1,
            d_model: 8,
            heads: 2,
            seq_size: 3,
            dropout: 0.1,
        };
        let spec = ModelSpec::new(cfg, FeatureSet::full(), vocab.sizes(3)).unwrap();
        let params = init_params(&spec, 5);
        Checkpoint {
            model: Model::new(spec, params).unwrap(),
            vocab,
            limits: TimeLimits::default(),
            meta: [("threshold_secs".to_string(), "3600".to_string())].into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
    }

    #[test]
    fn edited_vocab_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(VOCAB_FILE);
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("# edited\n");
        fs::write(&p, text).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Compatibility(_))));
    }

    #[test]
    fn truncated_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(MODEL_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }
}
