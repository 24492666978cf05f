//! Stable run-seed derivation.
//!
//! A seed is derived from an ordered tuple of parts. Each part is encoded as a
//! sequence of little-endian `u64` words:
//!
//! * `Part::U64(v)` is a tag word `1` followed by `v`.
//! * `Part::Str(s)` is a tag word `2`, a word holding the byte length, then the
//!   UTF-8 bytes packed eight to a word (little-endian, zero padded).
//!
//! The state starts at `0x243F_6A88_85A3_08D3` and absorbs each word `w` as
//! `state = splitmix64(state ^ w)`, where `splitmix64` adds the golden-ratio
//! increment `0x9E37_79B9_7F4A_7C15` and applies the standard SplitMix64
//! finaliser. The final state is the seed.

const INITIAL_STATE: u64 = 0x243F_6A88_85A3_08D3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part<'a> {
    U64(u64),
    Str(&'a str),
}

impl From<u64> for Part<'_> {
    fn from(v: u64) -> Self {
        Part::U64(v)
    }
}

impl<'a> From<&'a str> for Part<'a> {
    fn from(s: &'a str) -> Self {
        Part::Str(s)
    }
}

#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stable_hash(parts: &[Part<'_>]) -> u64 {
    let mut state = INITIAL_STATE;
    let mut absorb = |w: u64| state = splitmix64(state ^ w);
    for part in parts {
        match *part {
            Part::U64(v) => {
                absorb(1);
                absorb(v);
            }
            Part::Str(s) => {
                absorb(2);
                absorb(s.len() as u64);
                for chunk in s.as_bytes().chunks(8) {
                    let mut buf = [0u8; 8];
                    buf[..chunk.len()].copy_from_slice(chunk);
                    absorb(u64::from_le_bytes(buf));
                }
            }
        }
    }
    state
}

/// Child seed for a named sub-stream of `seed`.
pub fn derive(seed: u64, label: &str) -> u64 {
    stable_hash(&[Part::U64(seed), Part::Str(label)])
}
