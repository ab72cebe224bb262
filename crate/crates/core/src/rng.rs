// SPDX-License-Identifier: Apache-2.0

//! Counter-based random streams.
//!
//! Every random quantity in the simulator is drawn from a [`RandomStream`]
//! whose state is a pure function of a [`StreamKey`]. There is no shared
//! generator: two workers asking for the same key see the same numbers, and
//! the order in which keys are visited does not matter. This is what makes
//! parallel and serial runs bit-identical.

use rand_core::{impls, RngCore};
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Distinct domains never share samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Static per-transistor mismatch of an array cell.
    CellMismatch,
    /// Mismatch of a column's native regulating transistor.
    RegulatorMismatch,
    /// Die-to-die corner shift.
    ChipGlobal,
    /// Per-evaluation comparison noise.
    Noise,
    /// Free-form draws used by tests and calibration tooling.
    Auxiliary,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::CellMismatch => 0x6d69_736d_6174_6368,
            Domain::RegulatorMismatch => 0x7265_6775_6c61_746f,
            Domain::ChipGlobal => 0x676c_6f62_616c_5f5f,
            Domain::Noise => 0x6e6f_6973_655f_5f5f,
            Domain::Auxiliary => 0x6175_7869_6c69_6172,
        }
    }
}

/// Identifies one independent stream: `(seed, domain, a, b, c)`.
///
/// The meaning of the three indices depends on the domain, e.g. for cell
/// mismatch they are `(cell, stage, role)` and for noise they are
/// `(cell, session, evaluation)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub domain: Domain,
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

impl StreamKey {
    pub fn new(seed: u64, domain: Domain, a: u64, b: u64, c: u64) -> Self {
        Self { seed, domain, a, b, c }
    }

    fn digest(&self) -> u64 {
        let mut h = mix64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        for word in [self.domain.tag(), self.a, self.b, self.c] {
            h = mix64(h ^ mix64(word.wrapping_add(0xd134_2543_de82_ef95)));
        }
        h
    }
}

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic generator whose `i`-th output is `mix(mix(key + i·φ))`.
///
/// The key digest is computed on first use, so constructing a stream that is
/// never drawn from costs nothing.
#[derive(Clone, Debug)]
pub struct RandomStream {
    key: StreamKey,
    digest: Option<u64>,
    counter: u64,
}

impl RandomStream {
    pub fn new(key: StreamKey) -> Self {
        Self {
            key,
            digest: None,
            counter: 0,
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let key = *self.digest.get_or_insert_with(|| self.key.digest());
        self.counter = self.counter.wrapping_add(1);
        let x = key.wrapping_add(self.counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        mix64(mix64(x) ^ key.rotate_left(17))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
