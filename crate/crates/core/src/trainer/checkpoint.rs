//! Binary checkpoints. Little-endian throughout:
//!
//! ```text
//! magic "DNACKPT1" | u32 version | config (TOML string) | counters
//! | trainer rng | policy block | value block? | distil adam | π_old?
//! | normalizers | environments | probes | recent returns
//! ```
//!
//! Restoring rebuilds the trainer from the stored config and then
//! overwrites every piece of mutable state, so a resumed run continues
//! bit-for-bit where the original left off.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::DnaConfig;
use super::state::TrainerState;
use crate::env::RunningStat;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParameterBlock};
use crate::noise::NoiseScaleProbe;

const MAGIC: &[u8; 8] = b"DNACKPT1";
const VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }
    fn floats(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for &x in xs {
            self.f64(x);
        }
    }
    fn rng(&mut self, rng: ([u8; 32], u64, u128)) {
        self.buf.extend_from_slice(&rng.0);
        self.u64(rng.1);
        self.u128(rng.2);
    }
    fn adam(&mut self, a: &AdamState) {
        self.floats(&a.m);
        self.floats(&a.v);
        self.u64(a.step_count);
    }
    fn block(&mut self, b: &ParameterBlock) {
        self.floats(&b.params);
        self.adam(&b.adam);
    }
    fn stat(&mut self, s: &RunningStat) {
        self.u64(s.count);
        self.floats(&s.mean);
        self.floats(&s.m2);
    }
    fn probe(&mut self, p: &NoiseScaleProbe) {
        self.f64(p.ema_g2);
        self.f64(p.ema_s);
        self.u8(p.initialized as u8);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt data while reading {what}"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "byte")?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "u32")?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, "u64")?.try_into().expect("8 bytes")))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, "u128")?.try_into().expect("16 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, "f64")?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(corrupt("length prefix"));
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n, "bytes")
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn floats_exact(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let v = self.floats()?;
        if v.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{what}: expected {expected} values, found {}",
                v.len()
            )));
        }
        Ok(v)
    }
    fn rng(&mut self) -> Result<([u8; 32], u64, u128)> {
        let seed: [u8; 32] = self.take(32, "rng seed")?.try_into().expect("32 bytes");
        Ok((seed, self.u64()?, self.u128()?))
    }
    fn adam(&mut self, len: usize, what: &str) -> Result<AdamState> {
        Ok(AdamState {
            m: self.floats_exact(len, what)?,
            v: self.floats_exact(len, what)?,
            step_count: self.u64()?,
        })
    }
    fn block(&mut self, len: usize, what: &str) -> Result<ParameterBlock> {
        let params = self.floats_exact(len, what)?;
        let adam = self.adam(len, what)?;
        Ok(ParameterBlock {
            grads: vec![0.0; len],
            params,
            adam,
        })
    }
    fn stat(&mut self, dim: usize, what: &str) -> Result<RunningStat> {
        Ok(RunningStat {
            count: self.u64()?,
            mean: self.floats_exact(dim, what)?,
            m2: self.floats_exact(dim, what)?,
        })
    }
    fn probe(&mut self, p: &mut NoiseScaleProbe) -> Result<()> {
        p.ema_g2 = self.f64()?;
        p.ema_s = self.f64()?;
        p.initialized = self.u8()? != 0;
        p.last = None;
        Ok(())
    }
}

fn rng_parts(rng: &ChaCha8Rng) -> ([u8; 32], u64, u128) {
    (rng.get_seed(), rng.get_stream(), rng.get_word_pos())
}

fn rng_from_parts((seed, stream, word_pos): ([u8; 32], u64, u128)) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    rng
}

impl TrainerState {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(self.config.to_toml_string().as_bytes());
        w.u64(self.iteration as u64);
        w.u64(self.interactions);
        w.u64(self.warmup_interactions);
        w.u64(self.episodes_completed);
        w.rng(rng_parts(&self.rng));
        w.block(&self.policy);
        match &self.value {
            Some(b) => {
                w.u8(1);
                w.block(b);
            }
            None => w.u8(0),
        }
        w.adam(&self.distil_adam);
        match &self.old_policy {
            Some(s) => {
                w.u8(1);
                w.floats(s.params());
            }
            None => w.u8(0),
        }
        w.stat(&self.venv.obs_norm.stat);
        w.f64(self.venv.rew_norm.gamma);
        w.floats(&self.venv.rew_norm.returns);
        w.stat(&self.venv.rew_norm.stat);
        w.u64(self.venv.envs.len() as u64);
        for env in &self.venv.envs {
            w.floats(&env.state_words());
            w.rng(env.rng_state());
        }
        w.probe(&self.probes.policy);
        w.probe(&self.probes.value);
        w.probe(&self.probes.distil);
        w.floats(&self.recent_returns.iter().copied().collect::<Vec<_>>());
        w.buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let toml = std::str::from_utf8(r.bytes()?).map_err(|_| corrupt("config"))?;
        let config = DnaConfig::from_toml_str(toml)?;
        let mut state = TrainerState::fresh(config)?;
        state.iteration = r.u64()? as usize;
        state.interactions = r.u64()?;
        state.warmup_interactions = r.u64()?;
        state.episodes_completed = r.u64()?;
        state.rng = rng_from_parts(r.rng()?);
        state.policy = r.block(state.policy.len(), "policy block")?;
        let has_value = r.u8()? != 0;
        match (&mut state.value, has_value) {
            (Some(b), true) => *b = r.block(b.len(), "value block")?,
            (None, false) => {}
            _ => return Err(Error::Checkpoint("value network presence does not match mode".into())),
        }
        state.distil_adam = r.adam(state.policy.len(), "distillation optimizer")?;
        state.old_policy = if r.u8()? != 0 {
            Some(r.floats_exact(state.policy.len(), "policy snapshot")?.into())
        } else {
            None
        };
        let obs_dim = state.venv.obs_dim;
        state.venv.obs_norm.stat = r.stat(obs_dim, "observation statistics")?;
        state.venv.rew_norm.gamma = r.f64()?;
        let n_envs = state.venv.envs.len();
        state.venv.rew_norm.returns = r.floats_exact(n_envs, "return accumulators")?;
        state.venv.rew_norm.stat = r.stat(1, "reward statistics")?;
        if r.u64()? as usize != n_envs {
            return Err(Error::Checkpoint("environment count does not match config".into()));
        }
        for env in state.venv.envs.iter_mut() {
            env.load_state_words(&r.floats()?)?;
            let (seed, stream, pos) = r.rng()?;
            env.set_rng_state(seed, stream, pos);
        }
        r.probe(&mut state.probes.policy)?;
        r.probe(&mut state.probes.value)?;
        r.probe(&mut state.probes.distil)?;
        state.recent_returns = r.floats()?.into();
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(state)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}
