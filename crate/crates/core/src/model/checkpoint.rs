//! Binary checkpoint container.
//!
//! Layout (all integers u64 little-endian unless noted):
//!
//! ```text
//! magic "MRSRCKPT" | version u32
//! hyperparameters: len + key=value text
//! num_items | relation count, then each name as len + utf8
//! tensor count, then per tensor: name, ndim, dims…, pinned_rows, f64 data
//! optimizer flag u8; if 1: step, then first and second moments per tensor
//! ```

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use super::{ModelDims, ModelParams};
use crate::config::{parse_kv, HyperParams};
use crate::diffkernel::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::trainer::OptimState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MRSRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyper: HyperParams,
    pub relation_names: Vec<String>,
    pub params: ModelParams,
    pub optim: Option<OptimState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.string(&self.hyper.to_kv());
        w.u64(self.params.dims().num_items as u64);
        w.u64(self.relation_names.len() as u64);
        for n in &self.relation_names {
            w.string(n);
        }
        let set = self.params.set();
        w.u64(set.len() as u64);
        for (_, p) in set.iter() {
            w.string(&p.name);
            w.u64(p.value.shape().len() as u64);
            for d in p.value.shape() {
                w.u64(*d as u64);
            }
            w.u64(p.pinned_rows as u64);
            w.doubles(p.value.data());
        }
        match &self.optim {
            None => w.0.push(0),
            Some(o) => {
                w.0.push(1);
                w.u64(o.step);
                for t in o.first.iter().chain(&o.second) {
                    w.doubles(t.data());
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader(bytes);
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let magic = r.take(8).map_err(|_| bad("truncated header"))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(
            r.take(4)
                .map_err(|_| bad("truncated header"))?
                .try_into()
                .unwrap(),
        );
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let trunc = |_| bad("truncated checkpoint");
        let hyper_text = r.string().map_err(trunc)?;
        let kv = parse_kv(&hyper_text, Path::new("<checkpoint>"))?;
        let hyper = HyperParams::from_kv(&kv)?;
        let num_items = r.u64().map_err(trunc)? as usize;
        let n_rel = r.u64().map_err(trunc)? as usize;
        let mut relation_names = Vec::with_capacity(n_rel.min(1024));
        for _ in 0..n_rel {
            relation_names.push(r.string().map_err(trunc)?);
        }
        let dims = ModelDims::new(&hyper, num_items, n_rel);
        let expected = ModelParams::zeros(dims);

        let count = r.u64().map_err(trunc)? as usize;
        if count != expected.set().len() {
            return Err(Error::Checkpoint(format!(
                "tensor count {count} does not match the {} implied by the hyperparameters",
                expected.set().len()
            )));
        }
        let mut set = ParamSet::new();
        for (_, want) in expected.set().iter() {
            let name = r.string().map_err(trunc)?;
            let ndim = r.u64().map_err(trunc)? as usize;
            if ndim > 8 {
                return Err(bad("implausible tensor rank"));
            }
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<io::Result<Vec<_>>>()
                .map_err(trunc)?;
            let pinned = r.u64().map_err(trunc)? as usize;
            if name != want.name || shape != want.value.shape() || pinned != want.pinned_rows {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} {shape:?} does not match expected {:?} {:?}",
                    want.name,
                    want.value.shape()
                )));
            }
            let len = want.value.len();
            let data = r.doubles(len).map_err(trunc)?;
            set.push(name, Tensor::new(shape, data), pinned);
        }
        let params =
            ModelParams::from_parts(set, dims).ok_or_else(|| bad("parameter layout mismatch"))?;

        let flag = r.take(1).map_err(trunc)?[0];
        let optim = match flag {
            0 => None,
            1 => {
                let step = r.u64().map_err(trunc)?;
                let mut moments = Vec::with_capacity(2 * params.set().len());
                for _ in 0..2 {
                    for (_, p) in params.set().iter() {
                        let data = r.doubles(p.value.len()).map_err(trunc)?;
                        moments.push(Tensor::new(p.value.shape().to_vec(), data));
                    }
                }
                let second = moments.split_off(params.set().len());
                Some(OptimState {
                    step,
                    first: moments,
                    second,
                })
            }
            _ => return Err(bad("bad optimizer flag")),
        };
        if !r.0.is_empty() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            hyper,
            relation_names,
            params,
            optim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn doubles(&mut self, data: &[f64]) {
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> io::Result<String> {
        let n = self.u64()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| io::ErrorKind::InvalidData.into())
    }

    fn doubles(&mut self, n: usize) -> io::Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(io::ErrorKind::InvalidData)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample() -> Checkpoint {
        let hyper = HyperParams {
            dim: 4,
            ffn_dim: 6,
            max_len: 3,
            layers: 1,
            heads: 2,
            ..HyperParams::default()
        };
        let dims = ModelDims::new(&hyper, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(dims, 0.1, &mut rng);
        let mut optim = OptimState::new(params.set());
        optim.step = 3;
        optim.first[0].data_mut()[5] = 0.25;
        Checkpoint {
            hyper,
            relation_names: vec!["also_bought".into(), "also_viewed".into()],
            params,
            optim: Some(optim),
        }
    }

    #[test]
    fn roundtrip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut no_optim = ck;
        no_optim.optim = None;
        assert_eq!(
            Checkpoint::from_bytes(&no_optim.to_bytes()).unwrap(),
            no_optim
        );
    }

    #[test]
    fn rejects_version_and_shape_mismatch() {
        let ck = sample();
        let mut bytes = ck.to_bytes();
        bytes[8] = 99;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        // same bytes but hyperparameters claiming a different dimension
        let mut other = sample();
        other.hyper.dim = 8;
        other.hyper.ffn_dim = 8;
        let mut bytes = other.to_bytes();
        let hyper_end = 12 + 8 + other.hyper.to_kv().len();
        let original = ck.to_bytes();
        bytes.truncate(hyper_end);
        bytes.extend_from_slice(&original[12 + 8 + ck.hyper.to_kv().len()..]);
        assert!(Checkpoint::from_bytes(&bytes).is_err());

        let mut truncated = ck.to_bytes();
        truncated.pop();
        assert!(Checkpoint::from_bytes(&truncated).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
    }
}
