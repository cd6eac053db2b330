//! Fixed-capacity trajectory buffer ordered by critic score.
//!
//! The buffer is a binary min-heap keyed on `(score, insertion_id)`, so the
//! root is always the lowest-scored trajectory, with the oldest one at the
//! root among score ties. Admission at capacity compares scores alone and is
//! strict: a candidate that merely ties the current minimum is rejected.
//! Scores are critic outputs and go stale when the critic moves, so
//! [`PriorityBuffer::rescore_all`] recomputes every score and rebuilds the
//! heap in place.

use crate::error::{Error, Result};
use crate::rollout::Trajectory;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct BufferItem {
    pub score: f64,
    /// Monotone admission counter; never reused, survives eviction.
    pub insertion_id: u64,
    pub traj: Trajectory,
}

impl BufferItem {
    fn key(&self) -> (f64, u64) {
        (self.score, self.insertion_id)
    }
}

/// What [`PriorityBuffer::offer`] did with a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferOutcome {
    Inserted,
    Replaced,
    Rejected,
}

#[derive(Debug, Clone)]
pub struct PriorityBuffer {
    capacity: usize,
    next_id: u64,
    heap: Vec<BufferItem>,
}

fn key_lt(a: (f64, u64), b: (f64, u64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl PriorityBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("buffer capacity must be at least 1"));
        }
        Ok(PriorityBuffer { capacity, next_id: 0, heap: Vec::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() == self.capacity
    }

    pub fn items(&self) -> &[BufferItem] {
        &self.heap
    }

    /// Score of the trajectory first in line for eviction.
    pub fn min_score(&self) -> Option<f64> {
        self.heap.first().map(|item| item.score)
    }

    pub fn mean_score(&self) -> Option<f64> {
        if self.heap.is_empty() {
            return None;
        }
        Some(self.heap.iter().map(|i| i.score).sum::<f64>() / self.heap.len() as f64)
    }

    /// Every state of every held trajectory, concatenated in heap order.
    pub fn all_states(&self) -> Vec<Vec<f64>> {
        self.heap.iter().flat_map(|i| i.traj.states.iter().cloned()).collect()
    }

    /// Below capacity the candidate is always admitted; at capacity it
    /// replaces the minimum only if its score is strictly greater.
    pub fn offer(&mut self, traj: Trajectory, score: f64) -> Result<OfferOutcome> {
        if !score.is_finite() {
            return Err(Error::numeric(format!("buffer offer with score {score}")));
        }
        let item = BufferItem { score, insertion_id: self.next_id, traj };
        self.next_id += 1;
        if self.heap.len() < self.capacity {
            self.heap.push(item);
            self.sift_up(self.heap.len() - 1);
            return Ok(OfferOutcome::Inserted);
        }
        if score > self.heap[0].score {
            self.heap[0] = item;
            self.sift_down(0);
            return Ok(OfferOutcome::Replaced);
        }
        Ok(OfferOutcome::Rejected)
    }

    /// Recomputes every score under a new scoring function and restores the
    /// heap property. Insertion ids are untouched.
    pub fn rescore_all(&mut self, mut score_fn: impl FnMut(&Trajectory) -> Result<f64>) -> Result<()> {
        for item in &mut self.heap {
            let s = score_fn(&item.traj)?;
            if !s.is_finite() {
                return Err(Error::numeric(format!("rescore produced {s}")));
            }
            item.score = s;
        }
        for i in (0..self.heap.len() / 2).rev() {
            self.sift_down(i);
        }
        Ok(())
    }

    /// True when every parent key is no greater than its children's keys.
    pub fn heap_invariant_holds(&self) -> bool {
        (1..self.heap.len()).all(|i| {
            let parent = (i - 1) / 2;
            !key_lt(self.heap[i].key(), self.heap[parent].key())
        })
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if key_lt(self.heap[i].key(), self.heap[parent].key()) {
                self.heap.swap(i, parent);
                i = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        loop {
            let mut smallest = i;
            for child in [2 * i + 1, 2 * i + 2] {
                if child < self.heap.len() && key_lt(self.heap[child].key(), self.heap[smallest].key()) {
                    smallest = child;
                }
            }
            if smallest == i {
                break;
            }
            self.heap.swap(i, smallest);
            i = smallest;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("buffer v1\ncapacity {}\nnext_id {}\nitems {}\n", self.capacity, self.next_id, self.heap.len());
        for item in &self.heap {
            let sdim = item.traj.states.first().map_or(0, Vec::len);
            let adim = item
                .traj
                .actions
                .as_ref()
                .and_then(|a| a.first())
                .map_or(0, Vec::len);
            let _ = writeln!(
                out,
                "item {} {} {} {sdim} {adim}",
                item.score,
                item.insertion_id,
                item.traj.len()
            );
            for (t, s) in item.traj.states.iter().enumerate() {
                let mut first = true;
                for v in s.iter().chain(item.traj.actions.iter().flat_map(|a| a[t].iter())) {
                    if !first {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v}");
                    first = false;
                }
                out.push('\n');
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| Error::parse("empty buffer checkpoint"))?;
        if magic.trim() != "buffer v1" {
            return Err(Error::parse(format!("bad buffer header `{magic}`")));
        }
        let field = |line: Option<&str>, tag: &str| -> Result<u64> {
            let line = line.ok_or_else(|| Error::parse(format!("missing {tag}")))?;
            line.strip_prefix(tag)
                .and_then(|rest| rest.trim().parse().ok())
                .ok_or_else(|| Error::parse(format!("bad {tag} line `{line}`")))
        };
        let capacity = field(lines.next(), "capacity")? as usize;
        let next_id = field(lines.next(), "next_id")?;
        let n_items = field(lines.next(), "items")? as usize;
        let mut buffer = PriorityBuffer::new(capacity)?;
        buffer.next_id = next_id;
        for _ in 0..n_items {
            let head = lines.next().ok_or_else(|| Error::parse("missing item line"))?;
            let fields: Vec<&str> = head.split_whitespace().collect();
            if fields.len() != 6 || fields[0] != "item" {
                return Err(Error::parse(format!("bad item line `{head}`")));
            }
            let score: f64 = fields[1].parse().map_err(|_| Error::parse("bad item score"))?;
            let insertion_id: u64 = fields[2].parse().map_err(|_| Error::parse("bad item id"))?;
            let n_states: usize = fields[3].parse().map_err(|_| Error::parse("bad item length"))?;
            let sdim: usize = fields[4].parse().map_err(|_| Error::parse("bad state dim"))?;
            let adim: usize = fields[5].parse().map_err(|_| Error::parse("bad action dim"))?;
            let mut states = Vec::with_capacity(n_states);
            let mut actions = Vec::with_capacity(n_states);
            for _ in 0..n_states {
                let row = lines.next().ok_or_else(|| Error::parse("truncated item"))?;
                let mut vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::parse(format!("bad value `{t}`"))))
                    .collect::<Result<_>>()?;
                if vals.len() != sdim + adim {
                    return Err(Error::parse(format!("item row has {} values, expected {}", vals.len(), sdim + adim)));
                }
                let action = vals.split_off(sdim);
                states.push(vals);
                if adim > 0 {
                    actions.push(action);
                }
            }
            let mut traj = Trajectory::from_states(states);
            if adim > 0 {
                traj.actions = Some(actions);
            }
            buffer.heap.push(BufferItem { score, insertion_id, traj });
        }
        if buffer.heap.len() > capacity {
            return Err(Error::parse("buffer checkpoint exceeds its capacity"));
        }
        for i in (0..buffer.heap.len() / 2).rev() {
            buffer.sift_down(i);
        }
        Ok(buffer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj_with_tag(tag: f64) -> Trajectory {
        Trajectory::from_states(vec![vec![tag, -tag], vec![tag + 0.5, tag]])
    }

    fn scores(buffer: &PriorityBuffer) -> Vec<f64> {
        let mut s: Vec<f64> = buffer.items().iter().map(|i| i.score).collect();
        s.sort_by(f64::total_cmp);
        s
    }

    /// Reference semantics without a heap: linear scan for the minimum.
    struct ScanBuffer {
        capacity: usize,
        next_id: u64,
        items: Vec<(f64, u64)>,
    }

    impl ScanBuffer {
        fn new(capacity: usize) -> Self {
            ScanBuffer { capacity, next_id: 0, items: Vec::new() }
        }

        fn offer(&mut self, score: f64) {
            let id = self.next_id;
            self.next_id += 1;
            if self.items.len() < self.capacity {
                self.items.push((score, id));
                return;
            }
            let min_idx = (0..self.items.len())
                .min_by(|&a, &b| {
                    let (sa, ia) = self.items[a];
                    let (sb, ib) = self.items[b];
                    sa.total_cmp(&sb).then(ia.cmp(&ib))
                })
                .unwrap();
            if score > self.items[min_idx].0 {
                self.items[min_idx] = (score, id);
            }
        }
    }

    #[test]
    fn offer_replaces_the_minimum_and_rejects_weak_candidates() {
        let mut buffer = PriorityBuffer::new(3).unwrap();
        for s in [1.0, 2.0, 3.0] {
            assert_eq!(buffer.offer(traj_with_tag(s), s).unwrap(), OfferOutcome::Inserted);
        }
        assert_eq!(buffer.offer(traj_with_tag(2.5), 2.5).unwrap(), OfferOutcome::Replaced);
        assert_eq!(scores(&buffer), vec![2.0, 2.5, 3.0]);
        assert_eq!(buffer.offer(traj_with_tag(0.5), 0.5).unwrap(), OfferOutcome::Rejected);
        assert_eq!(scores(&buffer), vec![2.0, 2.5, 3.0]);
        assert_eq!(buffer.min_score(), Some(2.0));
    }

    #[test]
    fn ties_at_capacity_are_rejected_and_oldest_tie_is_evicted_first() {
        let mut buffer = PriorityBuffer::new(2).unwrap();
        buffer.offer(traj_with_tag(1.0), 1.0).unwrap();
        buffer.offer(traj_with_tag(1.0), 1.0).unwrap();
        // Equal score never displaces an incumbent.
        assert_eq!(buffer.offer(traj_with_tag(1.0), 1.0).unwrap(), OfferOutcome::Rejected);
        // A strictly better score displaces the older of the tied pair.
        assert_eq!(buffer.offer(traj_with_tag(2.0), 2.0).unwrap(), OfferOutcome::Replaced);
        let ids: Vec<u64> = buffer.items().iter().map(|i| i.insertion_id).collect();
        assert!(ids.contains(&1) && ids.contains(&3), "ids {ids:?}");
    }

    #[test]
    fn random_offer_stream_matches_the_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for capacity in [1, 3, 5, 17] {
            let mut buffer = PriorityBuffer::new(capacity).unwrap();
            let mut oracle = ScanBuffer::new(capacity);
            for k in 0..1000 {
                // Coarse scores force frequent ties.
                let score = (rng.gen_range(-20i32..20) as f64) * 0.5;
                buffer.offer(traj_with_tag(k as f64), score).unwrap();
                oracle.offer(score);
                assert!(buffer.heap_invariant_holds(), "capacity {capacity}, offer {k}");
            }
            let mut got: Vec<(f64, u64)> = buffer.items().iter().map(|i| (i.score, i.insertion_id)).collect();
            let mut want = oracle.items.clone();
            got.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            assert_eq!(got, want, "capacity {capacity}");
        }
    }

    #[test]
    fn mean_score_never_decreases_once_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut buffer = PriorityBuffer::new(5).unwrap();
        let mut last_mean = f64::NEG_INFINITY;
        for k in 0..500 {
            buffer.offer(traj_with_tag(k as f64), rng.gen_range(-1.0..1.0)).unwrap();
            if buffer.is_full() {
                let mean = buffer.mean_score().unwrap();
                assert!(mean >= last_mean - 1e-12, "offer {k}: {mean} < {last_mean}");
                last_mean = mean;
            }
        }
    }

    #[test]
    fn rescore_restores_order_under_a_new_scoring_function() {
        let mut buffer = PriorityBuffer::new(4).unwrap();
        for s in [4.0, 1.0, 3.0, 2.0] {
            buffer.offer(traj_with_tag(s), s).unwrap();
        }
        // New score inverts the old ranking via the trajectory's first state.
        buffer.rescore_all(|t| Ok(-t.states[0][0])).unwrap();
        assert!(buffer.heap_invariant_holds());
        assert_eq!(buffer.min_score(), Some(-4.0));
        assert_eq!(scores(&buffer), vec![-4.0, -3.0, -2.0, -1.0]);
        let err = buffer.rescore_all(|_| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn offers_below_capacity_always_insert() {
        let mut buffer = PriorityBuffer::new(3).unwrap();
        assert_eq!(buffer.offer(traj_with_tag(9.0), 9.0).unwrap(), OfferOutcome::Inserted);
        assert_eq!(buffer.offer(traj_with_tag(-9.0), -9.0).unwrap(), OfferOutcome::Inserted);
        assert_eq!(buffer.len(), 2);
        assert!(!buffer.is_full());
        assert!(matches!(buffer.offer(traj_with_tag(0.0), f64::NAN), Err(Error::Numeric(_))));
    }

    #[test]
    fn all_states_concatenates_every_trajectory() {
        let mut buffer = PriorityBuffer::new(2).unwrap();
        buffer.offer(traj_with_tag(1.0), 1.0).unwrap();
        buffer.offer(traj_with_tag(2.0), 2.0).unwrap();
        let states = buffer.all_states();
        assert_eq!(states.len(), 4);
        assert!(states.iter().all(|s| s.len() == 2));
    }

    #[test]
    fn checkpoint_round_trip_preserves_contents_and_admission_state() {
        let mut buffer = PriorityBuffer::new(3).unwrap();
        for s in [0.25, -1.5, 3.75, 2.0] {
            let mut traj = traj_with_tag(s);
            traj.actions = Some(vec![vec![s * 0.1], vec![-s * 0.1]]);
            buffer.offer(traj, s).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buffer.ckpt");
        buffer.save(&path).unwrap();
        let loaded = PriorityBuffer::load(&path).unwrap();
        assert_eq!(loaded.capacity(), 3);
        assert_eq!(loaded.len(), 3);
        assert!(loaded.heap_invariant_holds());
        assert_eq!(scores(&loaded), scores(&buffer));
        let get = |b: &PriorityBuffer, id: u64| -> (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>) {
            let item = b.items().iter().find(|i| i.insertion_id == id).unwrap();
            (item.traj.states.clone(), item.traj.actions.clone())
        };
        for id in [0, 2, 3] {
            assert_eq!(get(&buffer, id), get(&loaded, id));
        }
        // Admission counter continues, never reusing an id.
        let mut loaded = loaded;
        loaded.offer(traj_with_tag(9.0), 9.0).unwrap();
        assert!(loaded.items().iter().any(|i| i.insertion_id == 4));
    }
}
