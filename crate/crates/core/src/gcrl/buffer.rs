use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Policy,
    Privileged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Latent goal, low level only.
    pub goal: Option<[f64; 2]>,
    pub done: bool,
    pub source: Source,
}

/// FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn from_transitions(transitions: Vec<Transition>) -> Self {
        let mut b = Self::new(transitions.len().max(1));
        for t in transitions {
            b.push(t);
        }
        b
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

/// How privileged transitions are blended into training batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mixing {
    /// Share of each batch drawn from the privileged buffer.
    pub privileged_fraction: f64,
    /// Once the online buffer is this many times larger, sample the union uniformly.
    pub switch_ratio: f64,
}

impl Default for Mixing {
    fn default() -> Self {
        Self {
            privileged_fraction: 0.25,
            switch_ratio: 4.0,
        }
    }
}

impl Mixing {
    /// Number of privileged items in a batch of `n`, or `None` when sampling the union.
    pub fn privileged_count(&self, n: usize, online: usize, privileged: usize) -> Option<usize> {
        if privileged == 0 {
            return Some(0);
        }
        if online as f64 > self.switch_ratio * privileged as f64 {
            return None;
        }
        if online == 0 {
            return Some(n);
        }
        Some((self.privileged_fraction * n as f64).round() as usize)
    }

    pub fn sample<'a, R: Rng + ?Sized>(
        &self,
        online: &'a ReplayBuffer,
        privileged: &'a ReplayBuffer,
        n: usize,
        rng: &mut R,
    ) -> Vec<&'a Transition> {
        match self.privileged_count(n, online.len(), privileged.len()) {
            Some(k) => {
                let mut out = privileged.sample(k, rng);
                out.extend(online.sample(n - k, rng));
                out
            }
            None => {
                let total = online.len() + privileged.len();
                (0..n)
                    .map(|_| {
                        let i = rng.gen_range(0..total);
                        if i < online.len() {
                            &online.items[i]
                        } else {
                            &privileged.items[i - online.len()]
                        }
                    })
                    .collect()
            }
        }
    }
}

const BUFFER_MAGIC: &[u8; 4] = b"HGTB";
const BUFFER_VERSION: u32 = 1;

/// Writes the versioned fixed-width transition file.
///
/// Header: magic `HGTB`, then `u32` version, count, state dim, action dim and
/// goal dim. Each record is state, action, reward, next state, goal (all
/// `f64`), then one `u8` done flag and one `u8` source tag.
pub fn write_transitions<W: Write>(mut w: W, transitions: &[Transition]) -> Result<()> {
    let (sd, ad, gd) = match transitions.first() {
        Some(t) => (t.state.len(), t.action.len(), t.goal.map_or(0, |_| 2)),
        None => (0, 0, 0),
    };
    w.write_all(BUFFER_MAGIC)?;
    for v in [BUFFER_VERSION, transitions.len() as u32, sd as u32, ad as u32, gd as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in transitions {
        if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad || t.goal.map_or(0, |_| 2) != gd {
            return Err(Error::input("all transitions in a file must share dimensions"));
        }
        let goal = t.goal.map(|g| g.to_vec()).unwrap_or_default();
        for v in t.state.iter().chain(&t.action).chain([&t.reward]).chain(&t.next_state).chain(&goal) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[t.done as u8, (t.source == Source::Privileged) as u8])?;
    }
    Ok(())
}

pub fn read_transitions<R: Read>(mut r: R) -> Result<Vec<Transition>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("missing buffer magic".into()))?;
    if &magic != BUFFER_MAGIC {
        return Err(Error::Format("not a transition file".into()));
    }
    let mut header = [0u32; 5];
    for h in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated buffer header".into()))?;
        *h = u32::from_le_bytes(b);
    }
    let [version, count, sd, ad, gd] = header.map(|v| v as usize);
    if version != BUFFER_VERSION as usize {
        return Err(Error::Format(format!("unsupported buffer version {version}")));
    }
    if gd != 0 && gd != 2 {
        return Err(Error::Format(format!("goal dimension {gd} must be 0 or 2")));
    }
    let floats = 2 * sd + ad + 1 + gd;
    let mut rec = vec![0u8; floats * 8 + 2];
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        r.read_exact(&mut rec).map_err(|_| Error::Format("truncated transition record".into()))?;
        let v: Vec<f64> = rec[..floats * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tail = &rec[floats * 8..];
        if tail[0] > 1 || tail[1] > 1 {
            return Err(Error::Format("bad flag byte in transition record".into()));
        }
        out.push(Transition {
            state: v[..sd].to_vec(),
            action: v[sd..sd + ad].to_vec(),
            reward: v[sd + ad],
            next_state: v[sd + ad + 1..2 * sd + ad + 1].to_vec(),
            goal: (gd == 2).then(|| [v[2 * sd + ad + 1], v[2 * sd + ad + 2]]),
            done: tail[0] == 1,
            source: if tail[1] == 1 { Source::Privileged } else { Source::Policy },
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after transitions".into()));
    }
    Ok(out)
}

pub fn save_transitions(path: impl AsRef<Path>, transitions: &[Transition]) -> Result<()> {
    let mut bytes = Vec::new();
    write_transitions(&mut bytes, transitions)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_transitions(path: impl AsRef<Path>) -> Result<Vec<Transition>> {
    read_transitions(fs::read(path)?.as_slice())
}
