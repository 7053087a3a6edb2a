/// A packed vector of bits, 64 per word, least significant bit first.
///
/// Used both for public bit vectors and for one party's XOR shares of a
/// secret bit vector. Bits past `len` in the last word are always zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PackedBits {
    len: usize,
    words: Vec<u64>,
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl PackedBits {
    pub fn zeros(len: usize) -> Self {
        PackedBits { len, words: vec![0; words_for(len)] }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = PackedBits { len, words: vec![u64::MAX; words_for(len)] };
        b.clear_tail();
        b
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut b = PackedBits::zeros(bits.len());
        for (i, &v) in bits.iter().enumerate() {
            if v {
                b.words[i / 64] |= 1 << (i % 64);
            }
        }
        b
    }

    /// Builds from words, dropping any bits past `len`.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Self {
        words.resize(words_for(len), 0);
        let mut b = PackedBits { len, words };
        b.clear_tail();
        b
    }

    /// Bit `j` of each word in `values`.
    pub fn bit_slice(values: &[u64], j: u32) -> Self {
        let mut b = PackedBits::zeros(values.len());
        for (chunk, w) in values.chunks(64).zip(b.words.iter_mut()) {
            let mut acc = 0u64;
            for (i, v) in chunk.iter().enumerate() {
                acc |= ((v >> j) & 1) << i;
            }
            *w = acc;
        }
        b
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        let m = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &PackedBits) -> PackedBits {
        assert_eq!(self.len, other.len, "bit vector length mismatch");
        PackedBits {
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
        }
    }

    pub fn and(&self, other: &PackedBits) -> PackedBits {
        assert_eq!(self.len, other.len, "bit vector length mismatch");
        PackedBits {
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn not(&self) -> PackedBits {
        let mut b = PackedBits {
            len: self.len,
            words: self.words.iter().map(|w| !w).collect(),
        };
        b.clear_tail();
        b
    }

    pub fn concat(parts: &[&PackedBits]) -> PackedBits {
        let len = parts.iter().map(|p| p.len).sum();
        let mut out = PackedBits::zeros(len);
        let mut off = 0usize;
        for p in parts {
            out.write_at(off, p);
            off += p.len;
        }
        out
    }

    fn write_at(&mut self, off: usize, src: &PackedBits) {
        let shift = off % 64;
        let base = off / 64;
        for (i, &w) in src.words.iter().enumerate() {
            self.words[base + i] |= w << shift;
            if shift != 0 && base + i + 1 < self.words.len() {
                self.words[base + i + 1] |= w >> (64 - shift);
            }
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> PackedBits {
        assert!(start + len <= self.len, "bit slice out of range");
        let mut out = PackedBits::zeros(len);
        let shift = start % 64;
        let base = start / 64;
        for i in 0..out.words.len() {
            let lo = self.words.get(base + i).copied().unwrap_or(0) >> shift;
            let hi = if shift == 0 {
                0
            } else {
                self.words.get(base + i + 1).copied().unwrap_or(0) << (64 - shift)
            };
            out.words[i] = lo | hi;
        }
        out.clear_tail();
        out
    }

    /// Splits into consecutive pieces of the given lengths.
    pub fn split(&self, lens: &[usize]) -> Vec<PackedBits> {
        let mut off = 0;
        lens.iter()
            .map(|&l| {
                let s = self.slice(off, l);
                off += l;
                s
            })
            .collect()
    }
}
