use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::SsacError;
use crate::gate::GateSample;

/// One control step of experience.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    /// Torque applied at the start of the interval, N·m.
    pub action: f64,
    /// Reward of `next_state`.
    pub reward: f64,
    pub next_state: State,
    /// True only when the episode was cut short by divergence.
    pub terminal: bool,
    /// Whether the balance controller produced this action.
    pub gate_active: bool,
}

/// Fixed-capacity ring buffer; oldest entries are overwritten first.
#[derive(Debug, Clone)]
pub struct Ring<T> {
    buf: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> Ring<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self {
            buf: Vec::new(),
            capacity,
            next: 0,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.buf.len() < self.capacity {
            self.buf.push(item);
        } else {
            self.buf[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.buf.get(i)
    }

    /// Stored items in slot order (not insertion order once wrapped).
    pub fn as_slice(&self) -> &[T] {
        &self.buf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferKind {
    General,
    Success,
}

/// General buffer of all episodes, success buffer of successful episodes only,
/// and the gate's labeled states.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    general: Ring<Transition>,
    success: Vec<Transition>,
    gate: Ring<GateSample>,
}

pub const DEFAULT_GENERAL_CAPACITY: usize = 1_000_000;
pub const DEFAULT_GATE_CAPACITY: usize = 1_000_000;

impl Default for ReplayStore {
    fn default() -> Self {
        Self::new(DEFAULT_GENERAL_CAPACITY, DEFAULT_GATE_CAPACITY)
    }
}

impl ReplayStore {
    pub fn new(general_capacity: usize, gate_capacity: usize) -> Self {
        Self {
            general: Ring::new(general_capacity),
            success: Vec::new(),
            gate: Ring::new(gate_capacity),
        }
    }

    /// Stores an episode: always in the general buffer, and in the success
    /// buffer as well when `success` holds.
    pub fn push_episode(&mut self, transitions: &[Transition], success: bool) {
        for t in transitions {
            self.general.push(*t);
        }
        if success {
            self.success.extend_from_slice(transitions);
        }
    }

    pub fn push_gate_samples<I: IntoIterator<Item = GateSample>>(&mut self, samples: I) {
        for s in samples {
            self.gate.push(s);
        }
    }

    pub fn general(&self) -> &[Transition] {
        self.general.as_slice()
    }

    pub fn success(&self) -> &[Transition] {
        &self.success
    }

    pub fn gate_samples(&self) -> &[GateSample] {
        self.gate.as_slice()
    }

    pub fn general_len(&self) -> usize {
        self.general.len()
    }

    pub fn success_len(&self) -> usize {
        self.success.len()
    }

    pub fn gate_len(&self) -> usize {
        self.gate.len()
    }

    /// Draws `n` slots: each independently picks the success buffer with
    /// probability `p_success` (falling back to whichever buffer is
    /// nonempty), then a uniform slot within it.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        n: usize,
        p_success: f64,
        rng: &mut R,
    ) -> Result<Vec<(BufferKind, usize)>, SsacError> {
        let (g, s) = (self.general.len(), self.success.len());
        if g == 0 && s == 0 {
            return Err(SsacError::EmptyReplay);
        }
        Ok((0..n)
            .map(|_| {
                let want_success = rng.gen_bool(p_success.clamp(0.0, 1.0));
                let kind = match (want_success, g > 0, s > 0) {
                    (true, _, true) | (false, false, true) => BufferKind::Success,
                    _ => BufferKind::General,
                };
                let len = if kind == BufferKind::Success { s } else { g };
                (kind, rng.gen_range(0..len))
            })
            .collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        p_success: f64,
        rng: &mut R,
    ) -> Result<Vec<Transition>, SsacError> {
        Ok(self
            .sample_indices(n, p_success, rng)?
            .into_iter()
            .map(|(kind, i)| match kind {
                BufferKind::General => self.general.as_slice()[i],
                BufferKind::Success => self.success[i],
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: f64) -> Transition {
        Transition {
            state: State::new(tag, 0.0, 0.0, 0.0),
            action: tag,
            reward: tag,
            next_state: State::default(),
            terminal: false,
            gate_active: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut r = Ring::new(3);
        for i in 0..5 {
            r.push(i);
        }
        assert_eq!(r.len(), 3);
        assert_eq!(r.as_slice(), &[3, 4, 2]);
    }

    #[test]
    fn success_buffer_only_gets_successes() {
        let mut store = ReplayStore::new(100, 100);
        store.push_episode(&[tr(1.0), tr(2.0)], false);
        store.push_episode(&[tr(3.0)], true);
        assert_eq!(store.general_len(), 3);
        assert_eq!(store.success(), &[tr(3.0)]);
    }

    #[test]
    fn empty_store_is_an_error() {
        let store = ReplayStore::new(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(store.sample_batch(4, 0.5, &mut rng), Err(SsacError::EmptyReplay)));
    }

    #[test]
    fn p_one_draws_only_successes() {
        let mut store = ReplayStore::new(100, 10);
        store.push_episode(&[tr(1.0), tr(2.0)], false);
        store.push_episode(&[tr(9.0)], true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = store.sample_batch(500, 1.0, &mut rng).unwrap();
        assert!(batch.iter().all(|t| *t == tr(9.0)));
    }

    #[test]
    fn falls_back_to_nonempty_buffer() {
        let mut store = ReplayStore::new(100, 10);
        store.push_episode(&[tr(1.0)], false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let idx = store.sample_indices(200, 0.9, &mut rng).unwrap();
        assert!(idx.iter().all(|(k, _)| *k == BufferKind::General));
    }

    #[test]
    fn half_of_draws_hit_success_buffer() {
        let mut store = ReplayStore::new(1000, 10);
        store.push_episode(&(0..50).map(|i| tr(i as f64)).collect::<Vec<_>>(), false);
        store.push_episode(&[tr(100.0)], true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let idx = store.sample_indices(n, 0.5, &mut rng).unwrap();
        let frac = idx.iter().filter(|(k, _)| *k == BufferKind::Success).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn p_zero_is_uniform_over_general() {
        // Pearson chi-squared against uniform over 20 slots, 19 dof;
        // the 0.99 quantile is 36.19.
        let mut store = ReplayStore::new(1000, 10);
        store.push_episode(&(0..20).map(|i| tr(i as f64)).collect::<Vec<_>>(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40_000;
        let mut counts = [0usize; 20];
        for (kind, i) in store.sample_indices(n, 0.0, &mut rng).unwrap() {
            assert_eq!(kind, BufferKind::General);
            counts[i] += 1;
        }
        let expected = n as f64 / 20.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 36.19, "chi2 {chi2}");
    }
}
