//! Versioned little-endian checkpoint of an ensemble and its LQR gains.
//!
//! ```text
//! "HLMC" | u32 version | [u8; 32] config hash
//! f64 × 4 gains | f64 sigma2_h
//! f64 gamma | f64 polyak | u32 batch | f64 target_entropy | f64 init_alpha
//! u32 member count, then per member:
//!   f64 log_alpha
//!   net × 5 (actor, q1, q2, q1_targ, q2_targ): u32 layers+1 | u32 dims.. | f64 params..
//!   adam × 4 (actor, q1, q2, alpha): u64 step | f64 lr, b1, b2, eps | u32 n | f64 m.. | f64 v..
//! u32 CRC32 of everything above
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::lqr::LqrGains;
use crate::nn::{param_count, AdamConfig, AdamState, Mlp};
use crate::sac::{SacAgent, SacConfig};

pub const MAGIC: &[u8; 4] = b"HLMC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub gains: LqrGains,
    pub members: Vec<SacAgent>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
    fn net(&mut self, m: &Mlp) {
        self.u32(m.dims().len() as u32);
        for &d in m.dims() {
            self.u32(d as u32);
        }
        self.f64s(m.params());
    }
    fn adam(&mut self, a: &AdamState) {
        self.u64(a.step);
        self.f64s(&[a.config.lr, a.config.beta1, a.config.beta2, a.config.eps]);
        self.u32(a.m.len() as u32);
        self.f64s(&a.m);
        self.f64s(&a.v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn net(&mut self) -> Result<Mlp> {
        let n = self.u32()? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let dims = (0..n).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = param_count(&dims);
        if count > self.buf.len() / 8 {
            return Err(Error::Checkpoint("network larger than file".into()));
        }
        let params = self.f64s(count)?;
        Mlp::from_params(&dims, params).map_err(|e| Error::Checkpoint(e.to_string()))
    }
    fn adam(&mut self, expect: usize) -> Result<AdamState> {
        let step = self.u64()?;
        let config = AdamConfig { lr: self.f64()?, beta1: self.f64()?, beta2: self.f64()?, eps: self.f64()? };
        let n = self.u32()? as usize;
        if n != expect {
            return Err(Error::Checkpoint(format!("optimizer sized {n}, network has {expect} parameters")));
        }
        Ok(AdamState { config, step, m: self.f64s(n)?, v: self.f64s(n)? })
    }
}

/// Serialized length for `members` agents with the given network shapes.
pub fn encoded_len(members: usize, actor_dims: &[usize], critic_dims: &[usize]) -> usize {
    let net = |d: &[usize]| 4 + 4 * d.len() + 8 * param_count(d);
    let adam = |n: usize| 8 + 32 + 4 + 16 * n;
    let (pa, pc) = (param_count(actor_dims), param_count(critic_dims));
    let member = 8 + net(actor_dims) + 4 * net(critic_dims) + adam(pa) + 2 * adam(pc) + adam(1);
    let header = 4 + 4 + 32 + 40 + (8 + 8 + 4 + 8 + 8) + 4;
    header + members * member + 4
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.0.extend_from_slice(&ck.config_hash);
    w.f64s(&ck.gains.k);
    w.f64(ck.gains.sigma2_h);
    let cfg = ck.members.first().map(|m| m.cfg.clone()).unwrap_or_default();
    w.f64(cfg.gamma);
    w.f64(cfg.polyak);
    w.u32(cfg.batch_size as u32);
    w.f64(cfg.target_entropy);
    w.f64(cfg.init_alpha);
    w.u32(ck.members.len() as u32);
    for m in &ck.members {
        w.f64(m.log_alpha);
        for net in [&m.actor, &m.q1, &m.q2, &m.q1_targ, &m.q2_targ] {
            w.net(net);
        }
        for opt in [&m.actor_opt, &m.q1_opt, &m.q2_opt, &m.alpha_opt] {
            w.adam(opt);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("truncated".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: payload, pos: 8 };
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(r.take(32)?);
    let k = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let gains = LqrGains::new(k, r.f64()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let (gamma, polyak, batch, target_entropy, init_alpha) = (r.f64()?, r.f64()?, r.u32()?, r.f64()?, r.f64()?);
    let count = r.u32()? as usize;
    let mut members = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let log_alpha = r.f64()?;
        let actor = r.net()?;
        let q1 = r.net()?;
        let q2 = r.net()?;
        let q1_targ = r.net()?;
        let q2_targ = r.net()?;
        let actor_opt = r.adam(actor.params().len())?;
        let q1_opt = r.adam(q1.params().len())?;
        let q2_opt = r.adam(q2.params().len())?;
        let alpha_opt = r.adam(1)?;
        let dims = actor.dims();
        let cfg = SacConfig {
            hidden: dims[1..dims.len() - 1].to_vec(),
            adam: actor_opt.config,
            gamma,
            polyak,
            batch_size: batch as usize,
            target_entropy,
            init_alpha,
        };
        if actor.output_dim() != 2
            || q1.input_dim() != actor.input_dim() + 1
            || [&q2, &q1_targ, &q2_targ].iter().any(|n| n.dims() != q1.dims())
        {
            return Err(Error::Checkpoint("inconsistent network shapes".into()));
        }
        members.push(SacAgent {
            cfg,
            actor,
            q1,
            q2,
            q1_targ,
            q2_targ,
            log_alpha,
            actor_opt,
            q1_opt,
            q2_opt,
            alpha_opt,
        });
    }
    if r.pos != payload.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    Ok(Checkpoint { config_hash, gains, members })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ck))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::{ReplayBuffer, Transition};
    use crate::tasks::OBS_DIM;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(m: usize, trained: bool) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut members: Vec<SacAgent> =
            (0..m).map(|_| SacAgent::new(OBS_DIM, SacConfig::default(), &mut rng).unwrap()).collect();
        if trained {
            let mut buf = ReplayBuffer::new(OBS_DIM, 1000);
            for _ in 0..200 {
                let s: Vec<f64> = (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
                buf.push(&Transition { s: s.clone(), a: 0.3, r: 1.0, s_next: s, done: false }).unwrap();
            }
            members[0].update(&buf, 3, &mut rng).unwrap();
        }
        Checkpoint { config_hash: [7; 32], gains: LqrGains::default(), members }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let ck = sample(2, true);
        let bytes = encode(&ck);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn default_ensemble_size_matches_closed_form() {
        let ck = sample(10, false);
        let cfg = SacConfig::default();
        let expected = encoded_len(10, &cfg.actor_dims(OBS_DIM), &cfg.critic_dims(OBS_DIM));
        // Actor 5314 and critic 5313 parameters, per the layout above.
        let per_member = 8 + (20 + 8 * 5314) + 4 * (20 + 8 * 5313) + (44 + 16 * 5314) + 2 * (44 + 16 * 5313) + (44 + 16);
        assert_eq!(expected, 4 + 4 + 32 + 40 + 36 + 4 + 10 * per_member + 4);
        assert_eq!(encode(&ck).len(), expected);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&sample(1, false));
        for pos in [9, 100, bytes.len() / 2, bytes.len() - 5] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))), "byte {pos}");
        }
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"HLMX\x01\0\0\0").is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::Checkpoint(m)) if m.contains("version")));
    }

    #[test]
    fn empty_ensemble_round_trips() {
        let ck = Checkpoint { config_hash: [0; 32], gains: LqrGains::default(), members: vec![] };
        assert_eq!(decode(&encode(&ck)).unwrap(), ck);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let ck = sample(1, false);
        save(&path, &ck).unwrap();
        assert_eq!(load(&path).unwrap(), ck);
    }
}
