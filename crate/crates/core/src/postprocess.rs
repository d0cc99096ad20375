//! Classical post-processing: error rate of the sifted key, Toeplitz
//! privacy amplification, the multi-photon (PNS) key reduction and the
//! final secure-bit arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Packed bit sequence. Bit `i` lives in word `i / 64` at position `i % 64`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut s = BitString { words: (0..len.div_ceil(64)).map(|_| rng.random()).collect(), len };
        s.clear_tail();
        s
    }

    fn clear_tail(&mut self) {
        if !self.len.is_multiple_of(64) {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (self.len % 64)) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range");
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit {i} out of range");
        let mask = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, bit);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len, "length mismatch");
        BitString { words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(), len: self.len }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// 64 bits starting at bit `start`, zero-filled past the end.
    fn window(&self, start: usize) -> u64 {
        let w = start / 64;
        let s = start % 64;
        let lo = self.words.get(w).copied().unwrap_or(0) >> s;
        if s == 0 {
            lo
        } else {
            lo | self.words.get(w + 1).copied().unwrap_or(0) << (64 - s)
        }
    }

    /// Hex string, most significant bit first within each byte: bit 0 is the
    /// high bit of the first byte. Padding bits are zero.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = (0..self.len.div_ceil(8))
            .map(|k| {
                (0..8).fold(0u8, |acc, b| {
                    let i = 8 * k + b;
                    acc | (u8::from(i < self.len && self.get(i)) << (7 - b))
                })
            })
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(text: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(text.trim()).map_err(|e| Error::KeyEnvelope(e.to_string()))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::KeyEnvelope(format!("{} hex bytes cannot hold exactly {len} bits", bytes.len())));
        }
        let mut s = Self::zeros(len);
        for i in 0..len {
            s.set(i, bytes[i / 8] >> (7 - i % 8) & 1 == 1);
        }
        Ok(s)
    }
}

/// JSON envelope for a bit string: `{"bits": <length>, "hex": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEnvelope {
    pub bits: usize,
    pub hex: String,
}

impl From<&BitString> for KeyEnvelope {
    fn from(b: &BitString) -> Self {
        KeyEnvelope { bits: b.len(), hex: b.to_hex() }
    }
}

impl TryFrom<&KeyEnvelope> for BitString {
    type Error = Error;

    fn try_from(e: &KeyEnvelope) -> Result<Self> {
        BitString::from_hex(&e.hex, e.bits)
    }
}

/// Sifted key bits of both parties.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawKey {
    pub alice: BitString,
    pub bob: BitString,
}

#[derive(Serialize, Deserialize)]
struct RawKeyJson {
    alice: KeyEnvelope,
    bob: KeyEnvelope,
}

impl RawKey {
    pub fn new(alice: BitString, bob: BitString) -> Result<Self> {
        if alice.len() != bob.len() {
            return Err(Error::KeyEnvelope(format!("key lengths differ: {} vs {}", alice.len(), bob.len())));
        }
        Ok(RawKey { alice, bob })
    }

    pub fn push(&mut self, alice: bool, bob: bool) {
        self.alice.push(alice);
        self.bob.push(bob);
    }

    pub fn len(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RawKeyJson { alice: (&self.alice).into(), bob: (&self.bob).into() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RawKeyJson = serde_json::from_str(text)?;
        RawKey::new((&doc.alice).try_into()?, (&doc.bob).try_into()?)
    }
}

/// Fraction of positions where the two keys disagree.
pub fn qber(key: &RawKey) -> Result<f64> {
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    Ok(key.alice.xor(&key.bob).count_ones() as f64 / key.len() as f64)
}

/// `m x n` binary Toeplitz matrix, `T[i][j] = d[i - j]`, stored as its
/// `n + m - 1` diagonal bits.
#[derive(Debug, Clone)]
pub struct ToeplitzMatrix {
    rows: usize,
    cols: usize,
    /// Row `i` of `T` is the window `rev[m-1-i .. m-1-i+n]`.
    rev: BitString,
}

impl ToeplitzMatrix {
    /// From the diagonal bits `s`, where `s[k + n - 1] = d[k]` for
    /// `k` in `-(n-1) ..= m-1`.
    pub fn from_diagonals(rows: usize, cols: usize, s: &BitString) -> Result<Self> {
        let need = (rows + cols).saturating_sub(1);
        if s.len() != need {
            return Err(Error::Config(format!("Toeplitz {rows}x{cols} needs {need} seed bits, got {}", s.len())));
        }
        let mut rev = BitString::zeros(need);
        for k in 0..need {
            rev.set(k, s.get(need - 1 - k));
        }
        Ok(ToeplitzMatrix { rows, cols, rev })
    }

    /// From the first column (length `m`) and first row (length `n`); the
    /// corner bit is taken from the column.
    pub fn from_column_row(column: &BitString, row: &BitString) -> Result<Self> {
        let (m, n) = (column.len(), row.len());
        if m == 0 || n == 0 {
            return Err(Error::Config("empty Toeplitz generator".into()));
        }
        let mut s = BitString::zeros(m + n - 1);
        for i in 0..m {
            s.set(n - 1 + i, column.get(i));
        }
        for j in 1..n {
            s.set(n - 1 - j, row.get(j));
        }
        Self::from_diagonals(m, n, &s)
    }

    /// Diagonal bits drawn from a seeded ChaCha stream.
    pub fn from_seed(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = BitString::random((rows + cols).saturating_sub(1), &mut rng);
        Self::from_diagonals(rows, cols, &s).expect("seed length matches")
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rev.get(self.rows - 1 - i + j)
    }

    /// `T x` over GF(2).
    pub fn apply(&self, x: &BitString) -> Result<BitString> {
        if x.len() != self.cols {
            return Err(Error::Config(format!("input has {} bits, matrix has {} columns", x.len(), self.cols)));
        }
        let mut out = BitString::zeros(self.rows);
        for i in 0..self.rows {
            let offset = self.rows - 1 - i;
            let parity = x
                .words
                .iter()
                .enumerate()
                .fold(0u32, |acc, (k, &w)| acc ^ (self.rev.window(offset + 64 * k) & w).count_ones())
                & 1;
            out.set(i, parity == 1);
        }
        Ok(out)
    }
}

/// Compresses `bits` to `out_len` bits with a seeded Toeplitz hash.
pub fn toeplitz_amplify(bits: &BitString, out_len: usize, seed: u64) -> Result<BitString> {
    if out_len > bits.len() {
        return Err(Error::OutputTooLong { requested: out_len, available: bits.len() });
    }
    if out_len == 0 {
        return Ok(BitString::default());
    }
    ToeplitzMatrix::from_seed(out_len, bits.len(), seed).apply(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnsConfig {
    /// Pulse repetition rate in Hz.
    pub pulse_rate: f64,
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Transmission the adversary could control (e.g. mode coupling).
    pub eta_accessible: f64,
    /// Transmission inside the receiver (filters, optics, detectors).
    pub eta_inaccessible: f64,
    /// Share of multi-photon clicks that end up in the raw key.
    pub key_fraction: f64,
    /// Raw key bits per second.
    pub raw_key_bits: u64,
}

impl PnsConfig {
    /// Free-space bench values: 250 MHz, mu = 0.05, 0.8 / 0.2 split of the
    /// transmission, 10% of clicks in the key, 2e5 raw bits per second.
    pub fn bench() -> Self {
        PnsConfig {
            pulse_rate: 250e6,
            mu: 0.05,
            eta_accessible: 0.8,
            eta_inaccessible: 0.2,
            key_fraction: 0.1,
            raw_key_bits: 200_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_rate > 0.0 && self.pulse_rate.is_finite()) {
            return Err(domain("pulse rate", self.pulse_rate));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(domain("mean photon number", self.mu));
        }
        for (what, v) in [
            ("accessible transmission", self.eta_accessible),
            ("inaccessible transmission", self.eta_inaccessible),
            ("key fraction", self.key_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(domain(what, v));
            }
        }
        if self.raw_key_bits == 0 {
            return Err(domain("raw key bits", 0.0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnsEstimate {
    /// Pulses carrying two or more photons, per second.
    pub multi_photon_rate: f64,
    /// Detector clicks from those pulses after receiver losses, per second.
    pub multi_photon_click_rate: f64,
    /// Raw-key bits per second the adversary may know.
    pub tagged_bits: f64,
    /// Required reduction of the secret key fraction.
    pub fraction_reduction: f64,
}

/// Worst-case accounting for photon-number splitting: every multi-photon
/// pulse that reaches the key is assumed fully known.
pub fn pns_reduction(cfg: &PnsConfig) -> Result<PnsEstimate> {
    cfg.validate()?;
    let mu = cfg.mu;
    let p_multi = -(-mu).exp_m1() - mu * (-mu).exp();
    let multi_photon_rate = cfg.pulse_rate * p_multi.max(0.0);
    let multi_photon_click_rate = multi_photon_rate * cfg.eta_inaccessible;
    let tagged_bits = multi_photon_click_rate * cfg.key_fraction;
    Ok(PnsEstimate {
        multi_photon_rate,
        multi_photon_click_rate,
        tagged_bits,
        fraction_reduction: tagged_bits / cfg.raw_key_bits as f64,
    })
}

/// Secure bits from `raw_bits` at secret fraction `rate` after the PNS
/// reduction: `floor(raw_bits * max(0, rate - reduction))`.
pub fn throughput(raw_bits: u64, rate: f64, pns_reduction: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(domain("secret key fraction", rate));
    }
    let exact = raw_bits as f64 * (rate - pns_reduction).max(0.0);
    // absorb representation error such as 0.25 - 0.03 = 0.21999999999999997
    Ok((exact * (1.0 + 1e-12)).floor() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qber_examples() {
        let a = BitString::from_bools(&[true, false, true, true]);
        let k = RawKey::new(a.clone(), a.clone()).unwrap();
        assert_eq!(qber(&k).unwrap(), 0.0);
        let not_a = BitString::from_bools(&[false, true, false, false]);
        assert_eq!(qber(&RawKey::new(a, not_a).unwrap()).unwrap(), 1.0);

        let alice = BitString::zeros(1000);
        let mut bob = BitString::zeros(1000);
        for i in (0..1000).step_by(40) {
            bob.set(i, true);
        }
        assert_eq!(qber(&RawKey::new(alice, bob).unwrap()).unwrap(), 0.025);
        assert!(matches!(qber(&RawKey::default()), Err(Error::EmptyKey)));
    }

    #[test]
    fn toeplitz_edge_cases() {
        let x = BitString::from_bools(&[true, false, true]);
        assert!(toeplitz_amplify(&x, 0, 1).unwrap().is_empty());
        assert!(matches!(toeplitz_amplify(&x, 4, 1), Err(Error::OutputTooLong { .. })));
    }

    #[test]
    fn toeplitz_identity_generator() {
        let n = 130;
        let mut e1 = BitString::zeros(n);
        e1.set(0, true);
        let t = ToeplitzMatrix::from_column_row(&e1, &e1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = BitString::random(n, &mut rng);
        assert_eq!(t.apply(&x).unwrap(), x);
    }

    #[test]
    fn toeplitz_matches_dense_product() {
        let (m, n) = (37, 150);
        let t = ToeplitzMatrix::from_seed(m, n, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = BitString::random(n, &mut rng);
        let y = t.apply(&x).unwrap();
        for i in 0..m {
            let dense = (0..n).filter(|&j| t.get(i, j) && x.get(j)).count() % 2 == 1;
            assert_eq!(y.get(i), dense, "row {i}");
            // constant along diagonals
            if i > 0 {
                for j in 1..n {
                    assert_eq!(t.get(i, j), t.get(i - 1, j - 1));
                }
            }
        }
    }

    #[test]
    fn toeplitz_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = BitString::random(500, &mut rng);
        assert_eq!(toeplitz_amplify(&x, 200, 42).unwrap(), toeplitz_amplify(&x, 200, 42).unwrap());
        assert_ne!(toeplitz_amplify(&x, 200, 42).unwrap(), toeplitz_amplify(&x, 200, 43).unwrap());
    }

    #[test]
    fn hex_envelope_roundtrip() {
        let b = BitString::from_bools(&[true, false, false, false, false, false, false, true, true, true]);
        assert_eq!(b.to_hex(), "81c0");
        let env = KeyEnvelope::from(&b);
        assert_eq!(BitString::try_from(&env).unwrap(), b);
        assert!(BitString::from_hex("81", 10).is_err());
    }

    #[test]
    fn pns_bench_values() {
        let e = pns_reduction(&PnsConfig::bench()).unwrap();
        assert!((e.multi_photon_rate - 302_276.07).abs() < 0.1);
        assert!((e.multi_photon_click_rate - 60_455.2).abs() < 0.1);
        assert!((e.tagged_bits - 6045.5).abs() < 0.1);
        assert!((e.fraction_reduction - 0.0302).abs() < 1e-4);
    }

    #[test]
    fn pns_limits() {
        let e = pns_reduction(&PnsConfig { mu: 0.0, ..PnsConfig::bench() }).unwrap();
        assert_eq!(e.fraction_reduction, 0.0);
        let e = pns_reduction(&PnsConfig { eta_inaccessible: 1.0, ..PnsConfig::bench() }).unwrap();
        assert_eq!(e.multi_photon_click_rate, e.multi_photon_rate);
        assert!(pns_reduction(&PnsConfig { mu: -1.0, ..PnsConfig::bench() }).is_err());
    }

    #[test]
    fn poisson_tail_matches_quadratic_approximation() {
        let ratio = |mu: f64| {
            let e = pns_reduction(&PnsConfig { mu, ..PnsConfig::bench() }).unwrap();
            e.multi_photon_rate / (250e6 * mu * mu / 2.0)
        };
        for mu in [0.001, 0.01, 0.05, 0.07] {
            assert!((ratio(mu) - 1.0).abs() < 0.05, "mu = {mu}");
        }
        // the quadratic term alone overshoots by about mu/3
        assert!((1.0 / ratio(0.1) - 1.0 - 0.0686).abs() < 1e-3);
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput(200_000, 0.25, 0.0).unwrap(), 50_000);
        assert_eq!(throughput(200_000, 0.25, 0.03).unwrap(), 44_000);
        assert_eq!(throughput(12345, 0.0, 0.1).unwrap(), 0);
        assert!(throughput(10, 1.5, 0.0).is_err());
    }

    #[test]
    fn raw_key_json_roundtrip() {
        let mut k = RawKey::default();
        for i in 0..77 {
            k.push(i % 3 == 0, i % 5 == 0);
        }
        assert_eq!(RawKey::from_json(&k.to_json().unwrap()).unwrap(), k);
    }
}
