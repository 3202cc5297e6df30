use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Executed action after squashing, in `(−1, 1)`.
    pub a: f64,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring of transitions stored column-wise.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    capacity: usize,
    cursor: usize,
    len: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
}

/// A sampled minibatch, row-major.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub size: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub s_next: Vec<f64>,
    pub done: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0 && obs_dim > 0);
        Self {
            obs_dim,
            capacity,
            cursor: 0,
            len: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.s.len() != self.obs_dim || t.s_next.len() != self.obs_dim {
            return Err(Error::Shape(format!("transition observation must have length {}", self.obs_dim)));
        }
        let finite = t.s.iter().chain(&t.s_next).all(|v| v.is_finite()) && t.r.is_finite();
        if !finite {
            return Err(Error::NonFinite("transition".into()));
        }
        if !(t.a > -1.0 && t.a < 1.0) {
            return Err(Error::NonFinite(format!("action {} outside (-1, 1)", t.a)));
        }
        let d = self.obs_dim;
        if self.len < self.capacity && self.cursor == self.len {
            self.states.extend_from_slice(&t.s);
            self.next_states.extend_from_slice(&t.s_next);
            self.actions.push(t.a);
            self.rewards.push(t.r);
            self.dones.push(t.done);
        } else {
            let i = self.cursor;
            self.states[i * d..(i + 1) * d].copy_from_slice(&t.s);
            self.next_states[i * d..(i + 1) * d].copy_from_slice(&t.s_next);
            self.actions[i] = t.a;
            self.rewards[i] = t.r;
            self.dones[i] = t.done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let d = self.obs_dim;
        Some(Transition {
            s: self.states[i * d..(i + 1) * d].to_vec(),
            a: self.actions[i],
            r: self.rewards[i],
            s_next: self.next_states[i * d..(i + 1) * d].to_vec(),
            done: self.dones[i],
        })
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        if self.len == 0 {
            return Err(Error::Usage("cannot sample from an empty buffer".into()));
        }
        let d = self.obs_dim;
        let mut b = Batch {
            size,
            s: Vec::with_capacity(size * d),
            a: Vec::with_capacity(size),
            r: Vec::with_capacity(size),
            s_next: Vec::with_capacity(size * d),
            done: Vec::with_capacity(size),
        };
        for _ in 0..size {
            let i = rng.random_range(0..self.len);
            b.s.extend_from_slice(&self.states[i * d..(i + 1) * d]);
            b.s_next.extend_from_slice(&self.next_states[i * d..(i + 1) * d]);
            b.a.push(self.actions[i]);
            b.r.push(self.rewards[i]);
            b.done.push(self.dones[i]);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagged(tag: f64) -> Transition {
        Transition { s: vec![tag, 0.0], a: 0.0, r: tag, s_next: vec![tag + 1.0, 0.0], done: false }
    }

    #[test]
    fn push_grows_then_overwrites_oldest() {
        let mut b = ReplayBuffer::new(2, 4);
        b.push(&tagged(0.0)).unwrap();
        assert_eq!(b.len(), 1);
        for i in 1..5 {
            b.push(&tagged(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 4);
        let stored: Vec<f64> = (0..4).map(|i| b.get(i).unwrap().r).collect();
        assert!(!stored.contains(&0.0));
        assert_eq!(stored, vec![4.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn samples_only_stored_items() {
        let mut b = ReplayBuffer::new(2, 1000);
        for i in 0..64 {
            b.push(&tagged(100.0 + i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = b.sample(256, &mut rng).unwrap();
        for k in 0..256 {
            let tag = batch.r[k];
            assert!(tag >= 100.0 && tag < 164.0 && tag.fract() == 0.0);
            assert_eq!(batch.s[2 * k], tag);
            assert_eq!(batch.s_next[2 * k], tag + 1.0);
        }
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut b = ReplayBuffer::new(2, 8);
        let mut t = tagged(0.0);
        t.r = f64::NAN;
        assert!(b.push(&t).is_err());
        let mut t = tagged(0.0);
        t.a = 1.0;
        assert!(b.push(&t).is_err());
        let mut t = tagged(0.0);
        t.s.push(0.0);
        assert!(matches!(b.push(&t), Err(Error::Shape(_))));
        assert!(b.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(4, &mut rng).is_err());
    }
}
