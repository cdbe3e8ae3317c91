//! Proportional prioritized replay with a NEW-first queue and episode tagging.

mod sum_tree;

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::Rng;

use crate::codec::{Reader, Writer};
use crate::env::Frame;
use crate::error::{Error, Result};
pub use sum_tree::SumTree;

const SNAPSHOT_MAGIC: &[u8; 4] = b"LRRB";
const SNAPSHOT_VERSION: u32 = 1;

/// Stored agent state. Consecutive transitions share their frames.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredState {
    pub frame: Arc<Frame>,
    pub speed: f32,
    pub steering: f32,
}

/// `(s_t, a_t, r_{t+1}, d_{t+1}, s_{t+1})` tagged with its episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: StoredState,
    /// Steering in `[-1, 1]`, speed set-point in km/h.
    pub action: [f32; 2],
    pub reward: f64,
    pub done: bool,
    pub next_state: StoredState,
    pub episode_id: u64,
}

#[derive(Clone, Debug)]
struct Slot {
    item: Experience,
    fresh: bool,
}

pub struct Sampled<'a> {
    pub indices: Vec<usize>,
    pub tuples: Vec<&'a Experience>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    eps_floor: f64,
    slots: Vec<Option<Slot>>,
    tree: SumTree,
    /// Occupied slots, oldest first.
    order: VecDeque<usize>,
    /// Slots still carrying the NEW marker, in insertion order.
    fresh: VecDeque<usize>,
    free: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, eps_floor: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("[agent] replay capacity must be positive"));
        }
        if !(eps_floor > 0.0) {
            return Err(Error::config("[agent] replay priority floor must be positive"));
        }
        Ok(Self {
            capacity,
            eps_floor,
            slots: Vec::new(),
            tree: SumTree::new(capacity),
            order: VecDeque::new(),
            fresh: VecDeque::new(),
            free: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fresh_count(&self) -> usize {
        self.fresh.len()
    }

    pub fn get(&self, index: usize) -> Option<&Experience> {
        self.slots.get(index)?.as_ref().map(|s| &s.item)
    }

    /// Stored tuples, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.order.iter().map(|&i| &self.slots[i].as_ref().expect("ordered slot is occupied").item)
    }

    /// Current priority of a slot; `None` while it still carries the NEW marker.
    pub fn priority(&self, index: usize) -> Option<f64> {
        let slot = self.slots.get(index)?.as_ref()?;
        (!slot.fresh).then(|| self.tree.get(index))
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Stores `item` with the NEW marker, evicting the oldest tuple when full.
    /// Returns the slot used.
    pub fn push(&mut self, item: Experience) -> usize {
        if self.order.len() == self.capacity {
            let oldest = self.order.pop_front().expect("full buffer has an oldest tuple");
            self.vacate(oldest);
        }
        let index = match self.free.pop() {
            Some(i) => i,
            None => {
                self.slots.push(None);
                self.slots.len() - 1
            }
        };
        self.slots[index] = Some(Slot { item, fresh: true });
        self.tree.set(index, 0.0);
        self.order.push_back(index);
        self.fresh.push_back(index);
        index
    }

    fn vacate(&mut self, index: usize) {
        if let Some(slot) = self.slots[index].take() {
            if slot.fresh {
                self.fresh.retain(|&i| i != index);
            }
        }
        self.tree.set(index, 0.0);
        self.free.push(index);
    }

    /// NEW tuples first (oldest first), then proportional draws with replacement.
    /// When every stored priority is zero the remainder is drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Sampled<'_>> {
        if self.is_empty() {
            return Err(Error::contract("sample from an empty replay buffer"));
        }
        let mut indices: Vec<usize> = self.fresh.iter().copied().take(batch).collect();
        let total = self.tree.total();
        while indices.len() < batch {
            let i = if total > 0.0 {
                self.tree.find(rng.random::<f64>() * total)
            } else {
                self.order[rng.random_range(0..self.order.len())]
            };
            indices.push(i);
        }
        let tuples = indices.iter().map(|&i| self.get(i).expect("sampled slot is occupied")).collect();
        Ok(Sampled { indices, tuples })
    }

    /// `priority ← |td| + eps_floor`, clearing the NEW marker.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::contract("indices and TD errors differ in length"));
        }
        for (&i, &td) in indices.iter().zip(td_errors) {
            if !td.is_finite() {
                return Err(Error::contract(format!("non-finite TD error for slot {i}")));
            }
            let slot = self
                .slots
                .get_mut(i)
                .and_then(Option::as_mut)
                .ok_or_else(|| Error::contract(format!("priority update for empty slot {i}")))?;
            if slot.fresh {
                slot.fresh = false;
                self.fresh.retain(|&f| f != i);
            }
            self.tree.set(i, td.abs() + self.eps_floor);
        }
        Ok(())
    }

    /// Removes every tuple of `episode_id`; returns how many were removed.
    pub fn drop_episode(&mut self, episode_id: u64) -> usize {
        let doomed: HashSet<usize> = self
            .order
            .iter()
            .copied()
            .filter(|&i| self.slots[i].as_ref().is_some_and(|s| s.item.episode_id == episode_id))
            .collect();
        if doomed.is_empty() {
            return 0;
        }
        self.order.retain(|i| !doomed.contains(i));
        // Vacate in slot order so the free list is deterministic.
        let mut doomed: Vec<usize> = doomed.into_iter().collect();
        doomed.sort_unstable();
        for &i in &doomed {
            self.vacate(i);
        }
        doomed.len()
    }

    pub fn encode(&self, w: &mut Writer) {
        w.raw(SNAPSHOT_MAGIC);
        w.u32(SNAPSHOT_VERSION);
        w.u64(self.capacity as u64);
        w.f64(self.eps_floor);
        w.u64(self.slots.len() as u64);

        let mut frame_ids: HashMap<*const Frame, u32> = HashMap::new();
        let mut frames: Vec<Arc<Frame>> = Vec::new();
        let mut frame_id = |f: &Arc<Frame>| -> u32 {
            *frame_ids.entry(Arc::as_ptr(f)).or_insert_with(|| {
                frames.push(Arc::clone(f));
                (frames.len() - 1) as u32
            })
        };
        let mut body = Writer::new();
        body.u64(self.order.len() as u64);
        for &i in &self.order {
            let slot = self.slots[i].as_ref().expect("ordered slot is occupied");
            let e = &slot.item;
            body.u64(i as u64);
            body.bool(slot.fresh);
            body.f64(self.tree.get(i));
            for s in [&e.state, &e.next_state] {
                body.u32(frame_id(&s.frame));
                body.f32(s.speed);
                body.f32(s.steering);
            }
            body.f32(e.action[0]);
            body.f32(e.action[1]);
            body.f64(e.reward);
            body.bool(e.done);
            body.u64(e.episode_id);
        }
        for list in [self.fresh.iter().copied().collect::<Vec<_>>(), self.free.clone()] {
            body.u64(list.len() as u64);
            for i in list {
                body.u64(i as u64);
            }
        }

        w.u64(frames.len() as u64);
        for f in frames {
            w.u32(f.width as u32);
            w.u32(f.height as u32);
            w.raw(&f.pixels);
        }
        w.raw(&body.into_bytes());
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        r.expect_magic(SNAPSHOT_MAGIC)?;
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::codec(format!("unsupported replay snapshot version {version}")));
        }
        let capacity = r.u64()? as usize;
        let mut buf = Self::new(capacity, r.f64()?).map_err(|e| Error::codec(e.to_string()))?;
        let n_slots = r.u64()? as usize;
        let n_frames = r.u64()? as usize;
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let width = r.u32()? as usize;
            let height = r.u32()? as usize;
            let pixels = r.take(width * height)?.to_vec();
            frames.push(Arc::new(Frame { width, height, pixels }));
        }
        let frame = |id: u32| {
            frames.get(id as usize).cloned().ok_or_else(|| Error::codec(format!("frame {id} out of range")))
        };
        buf.slots = vec![None; n_slots];
        let n = r.u64()? as usize;
        for _ in 0..n {
            let i = r.u64()? as usize;
            let fresh = r.bool()?;
            let priority = r.f64()?;
            let mut states = Vec::with_capacity(2);
            for _ in 0..2 {
                states.push(StoredState { frame: frame(r.u32()?)?, speed: r.f32()?, steering: r.f32()? });
            }
            let next_state = states.pop().expect("two states");
            let state = states.pop().expect("two states");
            let item = Experience {
                state,
                action: [r.f32()?, r.f32()?],
                reward: r.f64()?,
                done: r.bool()?,
                next_state,
                episode_id: r.u64()?,
            };
            if i >= n_slots || buf.slots[i].is_some() || !(priority >= 0.0) {
                return Err(Error::codec(format!("invalid replay slot {i}")));
            }
            buf.slots[i] = Some(Slot { item, fresh });
            buf.tree.set(i, priority);
            buf.order.push_back(i);
        }
        for k in 0..2 {
            let len = r.u64()? as usize;
            for _ in 0..len {
                let i = r.u64()? as usize;
                if k == 0 {
                    buf.fresh.push_back(i);
                } else {
                    buf.free.push(i);
                }
            }
        }
        Ok(buf)
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let buf = Self::decode(&mut r)?;
        r.finish()?;
        Ok(buf)
    }
}
