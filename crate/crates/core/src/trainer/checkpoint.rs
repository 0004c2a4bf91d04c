//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "HRLDASC\0"
//! version   u32      currently 1
//! config    str      JSON of the run configuration
//! vocab     u64 n, then n x str
//! aspects   u64 n, then n x (str name, u64 k, k x str keyword, f64s embedding)
//! params    u64 n, then n x (str name, u64 rows, u64 cols, rows*cols x f64)
//! policies  f64s clause weights, f64 bias, f64s word weights, f64 bias
//! progress  u8 flags (bit 0 word stage done, bit 1 clause stage done),
//!           u64 x 7 counters
//! rng       32-byte seed, u64 stream, u128 word position
//! ```
//!
//! `str` is a u64 byte length followed by UTF-8; `f64s` is a u64 count
//! followed by that many f64 values.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Progress, Trainer};
use crate::config::Config;
use crate::embeddings::{AspectSpec, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, Policies};
use crate::numeric::{Matrix, ParamStore};
use crate::policy::LogisticPolicy;

const MAGIC: &[u8; 8] = b"HRLDASC\0";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::domain(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // every element takes at least one byte
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(Error::domain(format!("checkpoint length {n} at byte {} is implausible", self.pos)));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::domain(format!("checkpoint string at byte {} is not UTF-8", self.pos)))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_policy(w: &mut Writer, p: &LogisticPolicy) {
    w.f64s(&p.weight);
    w.f64(p.bias);
}

fn read_policy(r: &mut Reader<'_>) -> Result<LogisticPolicy> {
    Ok(LogisticPolicy {
        weight: r.f64s()?,
        bias: r.f64()?,
    })
}

impl Trainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&serde_json::to_string(&self.config).expect("config serialises"));

        let m = &self.model;
        w.u64(m.vocab.len() as u64);
        m.vocab.tokens().iter().for_each(|t| w.str(t));
        w.u64(m.aspects.len() as u64);
        for a in &m.aspects {
            w.str(&a.name);
            w.u64(a.keywords.len() as u64);
            a.keywords.iter().for_each(|k| w.str(k));
            w.f64s(&a.embedding);
        }
        w.u64(m.store.len() as u64);
        for (_, name, t) in m.store.iter() {
            w.str(name);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            t.data().iter().for_each(|&x| w.f64(x));
        }
        write_policy(&mut w, &self.policies.high);
        write_policy(&mut w, &self.policies.low);

        let p = &self.progress;
        w.u8(u8::from(p.word_pretrained) | (u8::from(p.clause_pretrained) << 1));
        for c in [
            p.word_epochs,
            p.clause_epochs,
            p.policy_epochs,
            p.fine_tune_epochs,
            p.optimizer_steps,
            p.high_updates,
            p.low_updates,
        ] {
            w.u64(c);
        }
        w.0.extend_from_slice(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.u128(self.rng.get_word_pos());
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(Error::domain("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::domain(format!("unsupported checkpoint version {version}")));
        }
        let config: Config = serde_json::from_str(&r.str()?)
            .map_err(|e| Error::domain(format!("checkpoint config: {e}")))?;

        let n = r.len()?;
        let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(tokens.iter().skip(1).map(String::as_str));
        if vocab.tokens() != tokens.as_slice() {
            return Err(Error::domain("checkpoint vocabulary is not a valid id list"));
        }
        let n = r.len()?;
        let mut aspects = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let k = r.len()?;
            let keywords = (0..k).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
            let embedding = r.f64s()?;
            aspects.push(AspectSpec {
                name,
                keywords,
                embedding,
            });
        }
        let n = r.len()?;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let count = rows
                .checked_mul(cols)
                .filter(|&c| c <= (buf.len() - r.pos) / 8)
                .ok_or_else(|| Error::domain(format!("checkpoint parameter {name} has implausible shape")))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            store.add(name, Matrix::from_vec(rows, cols, data)?);
        }
        let policies = Policies {
            high: read_policy(&mut r)?,
            low: read_policy(&mut r)?,
        };
        let flags = r.u8()?;
        let mut counters = [0u64; 7];
        for c in &mut counters {
            *c = r.u64()?;
        }
        let progress = Progress {
            word_pretrained: flags & 1 != 0,
            clause_pretrained: flags & 2 != 0,
            word_epochs: counters[0],
            clause_epochs: counters[1],
            policy_epochs: counters[2],
            fine_tune_epochs: counters[3],
            optimizer_steps: counters[4],
            high_updates: counters[5],
            low_updates: counters[6],
        };
        let mut rng = ChaCha8Rng::from_seed(r.array()?);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(r.u128()?);
        if r.pos != buf.len() {
            return Err(Error::domain(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
        }
        let model = Model::from_parts(store, vocab, aspects)?;
        Trainer::from_parts(config, model, policies, progress, rng)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Trainer::from_bytes(&buf).map_err(|e| match e {
            Error::Domain(msg) => Error::domain(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
