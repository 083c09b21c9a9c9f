//! Little-endian weight payload.
//!
//! ```text
//! magic "FDTW" | version u32 | layers u32 | weights_only u8 | count u32
//! count × (name_hash u64 | rank u8 | rank × dim u32)
//! [full only: seed u64]
//! count × raw f64 data, in table order
//! [full only: count × m data, count × v data, count × adam_step u64]
//! ```

use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"FDTW";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// FNV-1a 64 of a tensor name.
pub fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name_hash: u64,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

/// Optimizer state carried by full (non weights-only) payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct FullState {
    pub seed: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Per-tensor Adam step counts.
    pub steps: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    pub layers: u32,
    pub entries: Vec<WeightEntry>,
    pub state: Option<FullState>,
}

impl WeightSet {
    pub fn weight_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Byte length of everything before the f64 data.
    pub fn header_len(&self) -> usize {
        header_len(
            self.entries.iter().map(|e| e.dims.len()),
            self.state.is_some(),
        )
    }

    pub fn same_table(&self, other: &WeightSet) -> bool {
        self.layers == other.layers
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name_hash == b.name_hash && a.dims == b.dims)
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.weight_count();
        let extra = if self.state.is_some() {
            2 * n + self.entries.len()
        } else {
            0
        };
        let mut out = Vec::with_capacity(self.header_len() + 8 * (n + extra));
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.layers.to_le_bytes());
        out.push(u8::from(self.state.is_none()));
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.name_hash.to_le_bytes());
            out.push(e.dims.len() as u8);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        if let Some(st) = &self.state {
            out.extend_from_slice(&st.seed.to_le_bytes());
        }
        let mut put = |xs: &[f64]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for e in &self.entries {
            put(&e.data);
        }
        if let Some(st) = &self.state {
            st.m.iter().chain(&st.v).for_each(|xs| put(xs));
            for s in &st.steps {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != WEIGHT_MAGIC {
            return Err(Error::format(
                "weight payload magic",
                "FDTW",
                String::from_utf8_lossy(magic),
            ));
        }
        let version = r.u32()?;
        if version != WEIGHT_FORMAT_VERSION {
            return Err(Error::format(
                "weight format version",
                WEIGHT_FORMAT_VERSION,
                version,
            ));
        }
        let layers = r.u32()?;
        let weights_only = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(Error::format("weights-only flag", "0 or 1", f)),
        };
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let hash = r.u64()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            table.push((hash, dims));
        }
        let seed = if weights_only { None } else { Some(r.u64()?) };
        let mut entries = Vec::with_capacity(table.len());
        for (name_hash, dims) in table {
            let n: usize = dims.iter().map(|&d| d as usize).product();
            let data = r.f64s(n)?;
            entries.push(WeightEntry {
                name_hash,
                dims,
                data,
            });
        }
        let state = match seed {
            None => None,
            Some(seed) => {
                let lens: Vec<usize> = entries.iter().map(|e| e.data.len()).collect();
                let m = lens
                    .iter()
                    .map(|&n| r.f64s(n))
                    .collect::<Result<Vec<_>>>()?;
                let v = lens
                    .iter()
                    .map(|&n| r.f64s(n))
                    .collect::<Result<Vec<_>>>()?;
                let steps = lens.iter().map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                Some(FullState { seed, m, v, steps })
            }
        };
        if r.remaining() != 0 {
            return Err(Error::format("weight payload length", r.pos, bytes.len()));
        }
        Ok(Self {
            layers,
            entries,
            state,
        })
    }
}

pub(crate) fn header_len(ranks: impl Iterator<Item = usize>, full: bool) -> usize {
    4 + 4 + 4 + 1 + 4 + ranks.map(|r| 8 + 1 + 4 * r).sum::<usize>() + if full { 8 } else { 0 }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                "payload length",
                format!("at least {} bytes", self.pos + n),
                self.bytes.len(),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("tensor size", "fits in memory", n))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightSet {
        WeightSet {
            layers: 2,
            entries: vec![
                WeightEntry {
                    name_hash: name_hash("a"),
                    dims: vec![2, 3],
                    data: (0..6).map(|i| i as f64 * 0.5).collect(),
                },
                WeightEntry {
                    name_hash: name_hash("b"),
                    dims: vec![3],
                    data: vec![-1.0, f64::MIN_POSITIVE, 1e300],
                },
            ],
            state: None,
        }
    }

    #[test]
    fn weights_only_length_is_header_plus_data() {
        let ws = sample();
        let bytes = ws.encode();
        assert_eq!(bytes.len(), ws.header_len() + 8 * 9);
        assert_eq!(ws.header_len(), 17 + (9 + 8) + (9 + 4));
        assert_eq!(WeightSet::decode(&bytes).unwrap(), ws);
    }

    #[test]
    fn full_state_round_trips() {
        let mut ws = sample();
        ws.state = Some(FullState {
            seed: 42,
            m: vec![vec![1.0; 6], vec![2.0; 3]],
            v: vec![vec![3.0; 6], vec![4.0; 3]],
            steps: vec![7, 0],
        });
        let bytes = ws.encode();
        assert_eq!(bytes.len(), ws.header_len() + 8 * 9 * 3 + 8 * 2);
        assert_eq!(WeightSet::decode(&bytes).unwrap(), ws);
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let mut bytes = sample().encode();
        let full_len = bytes.len();
        bytes.truncate(full_len - 1);
        assert!(matches!(
            WeightSet::decode(&bytes),
            Err(Error::Format { .. })
        ));
        let mut bytes = sample().encode();
        bytes[0] = b'X';
        match WeightSet::decode(&bytes) {
            Err(Error::Format { what, expected, .. }) => {
                assert!(what.contains("magic"));
                assert_eq!(expected, "FDTW");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(name_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(name_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
