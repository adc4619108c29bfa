use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Position of a [`BatchStream`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub epoch: u64,
    pub pos: usize,
}

/// Endless sequence of sample indices, reshuffled every epoch.
///
/// The order of epoch `e` depends only on `(seed, tag, e)`, so a stream can be
/// restored from its [`StreamState`] alone.
#[derive(Debug, Clone)]
pub struct BatchStream {
    len: usize,
    seed: u64,
    state: StreamState,
    order: Vec<usize>,
}

impl BatchStream {
    pub fn new(len: usize, seed: u64, tag: &str) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid(format!("stream '{tag}' has no samples")));
        }
        let seed = seeding::derive(seed, tag);
        let mut stream = BatchStream {
            len,
            seed,
            state: StreamState::default(),
            order: Vec::new(),
        };
        stream.reshuffle();
        Ok(stream)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(self.seed, self.state.epoch));
        self.order.shuffle(&mut rng);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn state(&self) -> StreamState {
        self.state
    }

    pub fn restore(&mut self, state: StreamState) -> Result<()> {
        if state.pos >= self.len {
            return Err(Error::Format(format!("stream position {} beyond length {}", state.pos, self.len)));
        }
        let reshuffle = state.epoch != self.state.epoch;
        self.state = state;
        if reshuffle {
            self.reshuffle();
        }
        Ok(())
    }

    /// Next `size` indices; a batch may span an epoch boundary.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            out.push(self.order[self.state.pos]);
            self.state.pos += 1;
            if self.state.pos == self.len {
                self.state.epoch += 1;
                self.state.pos = 0;
                self.reshuffle();
            }
        }
        out
    }
}

/// One auxiliary batch and the source it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedBatch {
    pub source: usize,
    pub dataset_id: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixState {
    pub draws: u64,
    pub streams: Vec<StreamState>,
}

/// Draws each batch from source `i` with probability `size_i / sum(size)`.
#[derive(Debug, Clone)]
pub struct MixedAuxSource {
    ids: Vec<String>,
    sizes: Vec<usize>,
    seed: u64,
    draws: u64,
    streams: Vec<BatchStream>,
}

impl MixedAuxSource {
    /// `sources` lists `(dataset_id, number of samples)`.
    pub fn new(sources: &[(String, usize)], seed: u64) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("no auxiliary sources"));
        }
        let streams = sources
            .iter()
            .map(|(id, n)| BatchStream::new(*n, seed, &format!("aux.{id}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixedAuxSource {
            ids: sources.iter().map(|(id, _)| id.clone()).collect(),
            sizes: sources.iter().map(|(_, n)| *n).collect(),
            seed: seeding::derive(seed, "aux.mix"),
            draws: 0,
            streams,
        })
    }

    pub fn dataset_ids(&self) -> &[String] {
        &self.ids
    }

    /// Index of the source chosen by the next draw, without consuming it.
    fn pick(&self) -> usize {
        let total: usize = self.sizes.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(self.seed, self.draws));
        let mut u = rng.gen_range(0..total);
        for (i, &n) in self.sizes.iter().enumerate() {
            if u < n {
                return i;
            }
            u -= n;
        }
        unreachable!("draw below total size")
    }

    pub fn next_batch(&mut self, size: usize) -> TaggedBatch {
        let source = if self.sizes.len() == 1 { 0 } else { self.pick() };
        self.draws += 1;
        TaggedBatch {
            source,
            dataset_id: self.ids[source].clone(),
            indices: self.streams[source].next_batch(size),
        }
    }

    pub fn state(&self) -> MixState {
        MixState {
            draws: self.draws,
            streams: self.streams.iter().map(BatchStream::state).collect(),
        }
    }

    pub fn restore(&mut self, state: &MixState) -> Result<()> {
        if state.streams.len() != self.streams.len() {
            return Err(Error::Format("auxiliary stream count changed".into()));
        }
        for (s, st) in self.streams.iter_mut().zip(&state.streams) {
            s.restore(*st)?;
        }
        self.draws = state.draws;
        Ok(())
    }
}
