//! Seeded 64-bit linear congruential generator.
//!
//! Constants are Knuth's MMIX multiplier and increment; outputs are the top
//! 31 bits of the state after each step. The sequence is fixed so corpora can
//! be regenerated bit-for-bit from another language.

pub const MULTIPLIER: u64 = 6364136223846793005;
pub const INCREMENT: u64 = 1442695040888963407;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Lcg {
        Lcg { state: seed }
    }

    /// Next 31-bit output.
    pub fn next_u31(&mut self) -> u32 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        (self.state >> 33) as u32
    }

    pub fn next_byte(&mut self) -> u8 {
        (self.next_u31() >> 23) as u8
    }

    /// Uniform-ish value in `lo..=hi` by modulo reduction.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi);
        let span = hi - lo + 1;
        let wide = ((self.next_u31() as u64) << 31) | self.next_u31() as u64;
        lo + wide % span
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        for b in buf {
            *b = self.next_byte();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range(0, i as u64) as usize;
            items.swap(i, j);
        }
    }
}
