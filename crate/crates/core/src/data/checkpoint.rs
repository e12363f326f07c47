//! Binary checkpoints.
//!
//! Layout (little-endian): magic `IVFL`, `u32` version, `u32` record count,
//! then records of `u32` name length, UTF-8 name, `u8` dtype
//! (0 = f64, 1 = f32, 2 = u8, 3 = u64), `u32` rank, `u64` extents and the
//! raw payload.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::flow::{AdamState, FlowConfig, FlowModel, Trainer};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IVFL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
struct Record {
    name: String,
    shape: Vec<u64>,
    payload: Payload,
}

impl Record {
    fn f64(name: impl Into<String>, shape: &[usize], v: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape: shape.iter().map(|&d| d as u64).collect(),
            payload: Payload::F64(v.to_vec()),
        }
    }

    fn u8(name: impl Into<String>, v: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            shape: vec![v.len() as u64],
            payload: Payload::U8(v),
        }
    }

    fn u64(name: impl Into<String>, v: u64) -> Self {
        Self {
            name: name.into(),
            shape: vec![1],
            payload: Payload::U64(vec![v]),
        }
    }
}

/// Everything read back from a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub adam: Option<AdamState>,
    pub step: u64,
    pub rng: Option<ChaCha8Rng>,
}

impl Checkpoint {
    /// Resumable trainer; missing optimizer or RNG state starts fresh.
    pub fn into_trainer(self) -> Trainer {
        let seed = self.model.config().seed;
        let rng = self.rng.unwrap_or_else(|| ChaCha8Rng::seed_from_u64(seed));
        Trainer::from_parts(self.model, self.adam, self.step, rng)
    }
}

fn model_records(model: &FlowModel) -> Result<Vec<Record>> {
    let config = serde_json::to_vec(model.config()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = vec![
        Record::u8("meta/config_json", config),
        Record::u64("meta/actnorm_initialized", u64::from(model.actnorm_initialized())),
    ];
    let store = model.params();
    for id in store.ids() {
        let e = store.entry(id);
        out.push(Record::f64(format!("param/{}", e.name), &e.shape, store.get(id)));
    }
    Ok(out)
}

fn rng_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut b = rng.get_seed().to_vec();
    b.extend_from_slice(&rng.get_stream().to_le_bytes());
    b.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    b
}

fn rng_from_bytes(b: &[u8]) -> Result<ChaCha8Rng> {
    if b.len() != 56 {
        return Err(Error::Checkpoint(format!("rng state has {} bytes, expected 56", b.len())));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&b[..32]);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(b[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(b[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}

fn encode(records: &[Record]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.write_u32::<LE>(CHECKPOINT_VERSION).expect("vec write");
    b.write_u32::<LE>(records.len() as u32).expect("vec write");
    for r in records {
        b.write_u32::<LE>(r.name.len() as u32).expect("vec write");
        b.extend_from_slice(r.name.as_bytes());
        let dtype = match r.payload {
            Payload::F64(_) => 0u8,
            Payload::U8(_) => 2,
            Payload::U64(_) => 3,
        };
        b.push(dtype);
        b.write_u32::<LE>(r.shape.len() as u32).expect("vec write");
        for &d in &r.shape {
            b.write_u64::<LE>(d).expect("vec write");
        }
        match &r.payload {
            Payload::F64(v) => v.iter().for_each(|x| b.write_f64::<LE>(*x).expect("vec write")),
            Payload::U8(v) => b.extend_from_slice(v),
            Payload::U64(v) => v.iter().for_each(|x| b.write_u64::<LE>(*x).expect("vec write")),
        }
    }
    b
}

fn truncated(c: &Cursor<&[u8]>, need: usize) -> Error {
    Error::Truncated {
        expected: c.position() as usize + need,
        found: c.get_ref().len(),
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    c.read_exact(&mut magic).map_err(|_| truncated(&c, 4))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = c.read_u32::<LE>().map_err(|_| truncated(&c, 4))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = c.read_u32::<LE>().map_err(|_| truncated(&c, 4))?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = c.read_u32::<LE>().map_err(|_| truncated(&c, 4))? as usize;
        let mut name = vec![0u8; len.min(bytes.len())];
        c.read_exact(&mut name).map_err(|_| truncated(&c, len))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let dtype = c.read_u8().map_err(|_| truncated(&c, 1))?;
        let rank = c.read_u32::<LE>().map_err(|_| truncated(&c, 4))? as usize;
        let shape = (0..rank)
            .map(|_| c.read_u64::<LE>().map_err(|_| truncated(&c, 8)))
            .collect::<Result<Vec<u64>>>()?;
        let n = shape
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("record {name} is too large")))? as usize;
        let width = match dtype {
            0 | 3 => 8,
            1 => 4,
            2 => 1,
            d => return Err(Error::Checkpoint(format!("record {name} has unknown dtype {d}"))),
        };
        let remaining = bytes.len() - c.position() as usize;
        if n.saturating_mul(width) > remaining {
            return Err(truncated(&c, n * width));
        }
        let payload = match dtype {
            0 => Payload::F64((0..n).map(|_| c.read_f64::<LE>().expect("length checked")).collect()),
            1 => Payload::F64((0..n).map(|_| f64::from(c.read_f32::<LE>().expect("length checked"))).collect()),
            2 => {
                let mut v = vec![0u8; n];
                c.read_exact(&mut v).expect("length checked");
                Payload::U8(v)
            }
            _ => Payload::U64((0..n).map(|_| c.read_u64::<LE>().expect("length checked")).collect()),
        };
        out.push(Record { name, shape, payload });
    }
    if (c.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last record".into()));
    }
    Ok(out)
}

fn write(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&encode(records)))
        .map_err(|e| Error::io(path, e))
}

/// Parameters and configuration only.
pub fn save_model(model: &FlowModel, path: &Path) -> Result<()> {
    write(path, &model_records(model)?)
}

/// Full training state: model, optimizer moments, step counter and RNG.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let mut records = model_records(&trainer.model)?;
    let n = trainer.adam.m.len();
    records.push(Record::u64("meta/step", trainer.step));
    records.push(Record::u8("meta/rng", rng_bytes(&trainer.rng)));
    records.push(Record::u64("adam/t", trainer.adam.t));
    records.push(Record::f64("adam/m", &[n], &trainer.adam.m));
    records.push(Record::f64("adam/v", &[n], &trainer.adam.v));
    write(path, &records)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = decode(&bytes)?;
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let u8s = |name: &str| match find(name).map(|r| &r.payload) {
        Some(Payload::U8(v)) => Ok(Some(v.clone())),
        None => Ok(None),
        _ => Err(Error::Checkpoint(format!("record {name} has the wrong dtype"))),
    };
    let u64s = |name: &str| match find(name).map(|r| &r.payload) {
        Some(Payload::U64(v)) if v.len() == 1 => Ok(Some(v[0])),
        None => Ok(None),
        _ => Err(Error::Checkpoint(format!("record {name} has the wrong dtype"))),
    };
    let f64s = |name: &str| match find(name).map(|r| (&r.payload, &r.shape)) {
        Some((Payload::F64(v), s)) => Ok(Some((v.clone(), s.clone()))),
        None => Ok(None),
        _ => Err(Error::Checkpoint(format!("record {name} has the wrong dtype"))),
    };

    let config_json = u8s("meta/config_json")?.ok_or_else(|| Error::Checkpoint("missing configuration".into()))?;
    let config: FlowConfig =
        serde_json::from_slice(&config_json).map_err(|e| Error::Checkpoint(format!("configuration: {e}")))?;
    let mut model = FlowModel::identity(&config)?;
    let entries: Vec<_> = model.params().ids().map(|id| (id, model.params().entry(id).clone())).collect();
    for (id, e) in entries {
        let name = format!("param/{}", e.name);
        let (v, shape) = f64s(&name)?.ok_or_else(|| Error::DimensionMismatch(format!("missing parameter {}", e.name)))?;
        let want: Vec<u64> = e.shape.iter().map(|&d| d as u64).collect();
        if shape != want {
            return Err(Error::DimensionMismatch(format!(
                "parameter {} has shape {shape:?}, configuration implies {want:?}",
                e.name
            )));
        }
        model.params_mut().get_mut(id).copy_from_slice(&v);
    }
    let known = records
        .iter()
        .filter(|r| r.name.starts_with("param/"))
        .count();
    if known != model.params().entries().len() {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint has {known} parameters, configuration implies {}",
            model.params().entries().len()
        )));
    }
    model.set_actnorm_initialized(u64s("meta/actnorm_initialized")?.unwrap_or(0) != 0);

    let p = model.params().len();
    let adam = match (u64s("adam/t")?, f64s("adam/m")?, f64s("adam/v")?) {
        (Some(t), Some((m, _)), Some((v, _))) => {
            if m.len() != p || v.len() != p {
                return Err(Error::DimensionMismatch("optimizer state length differs from parameters".into()));
            }
            Some(AdamState { m, v, t })
        }
        (None, None, None) => None,
        _ => return Err(Error::Checkpoint("incomplete optimizer state".into())),
    };
    let rng = u8s("meta/rng")?.map(|b| rng_from_bytes(&b)).transpose()?;
    Ok(Checkpoint {
        model,
        adam,
        step: u64s("meta/step")?.unwrap_or(0),
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ImageTensor;

    fn config() -> FlowConfig {
        let mut c = FlowConfig::new(1, 1, [1, 4, 4]);
        c.hidden_width = 3;
        c.kernel_size = 2;
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = FlowModel::new(&config(), &mut rng).unwrap();
        m.perturb(0.1, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ivfl");
        save_model(&m, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.model, m);
        let x = ImageTensor::random_normal(1, 4, 4, &mut rng);
        assert_eq!(
            back.model.log_prob(&x).unwrap().to_bits(),
            m.log_prob(&x).unwrap().to_bits()
        );
        assert!(back.adam.is_none());
    }

    #[test]
    fn tampered_files_are_rejected() {
        let m = FlowModel::identity(&config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ivfl");
        save_model(&m, &p).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut b = good.clone();
        b[4] = 2;
        std::fs::write(&p, &b).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Version { found: 2, expected: 1 })));

        std::fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Truncated { .. })));

        let mut other = config();
        other.hidden_width = 5;
        let mut recs = model_records(&FlowModel::identity(&other).unwrap()).unwrap();
        recs[0] = Record::u8("meta/config_json", serde_json::to_vec(&config()).unwrap());
        std::fs::write(&p, encode(&recs)).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::DimensionMismatch(_))));

        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
