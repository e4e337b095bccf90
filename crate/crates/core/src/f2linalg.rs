//! Dense linear algebra over GF(2).
//!
//! Matrices are square and bit-packed row-major into `u64` words. Addition is
//! XOR and multiplication is AND, so every operation here is exact.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Default number of attempts for the rejection samplers below.
pub const DEFAULT_RETRY_BUDGET: usize = 1000;

fn words_for(n: usize) -> usize {
    n.div_ceil(64)
}

/// A vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct F2Vector {
    len: usize,
    words: Vec<u64>,
}

impl F2Vector {
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; words_for(len)] }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    /// Parses a string of `'0'`/`'1'` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::UnknownSymbol(other)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bits(&bits))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Uniform sample from GF(2)^len.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            v.set(i, rng.gen::<bool>());
        }
        v
    }
}

impl fmt::Display for F2Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for F2Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F2Vector({self})")
    }
}

/// Nonzero count and zero fraction of a matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityStats {
    pub nnz: usize,
    pub n: usize,
    /// Fraction of zero entries, `1 - nnz / n^2`.
    pub sparsity: f64,
}

impl SparsityStats {
    pub fn zeros(&self) -> usize {
        self.n * self.n - self.nnz
    }
}

/// Square matrix over GF(2), bit-packed by rows.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct F2Matrix {
    n: usize,
    stride: usize,
    words: Vec<u64>,
}

impl F2Matrix {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension(n));
        }
        let stride = words_for(n);
        Ok(Self { n, stride, words: vec![0; n * stride] })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n)?;
        for i in 0..n {
            m.set(i, i, true);
        }
        Ok(m)
    }

    /// Builds a matrix from rows of 0/1 values.
    pub fn from_rows<T: AsRef<[u8]>>(rows: &[T]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n)?;
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return invalid(format!("row {i} has {} entries, expected {n}", row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => m.set(i, j, true),
                    other => return invalid(format!("entry {other} at ({i},{j}) is not a bit")),
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(i < self.n && j < self.n);
        (self.words[i * self.stride + j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        assert!(i < self.n && j < self.n);
        let mask = 1u64 << (j % 64);
        let w = &mut self.words[i * self.stride + j / 64];
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize, j: usize) {
        assert!(i < self.n && j < self.n);
        self.words[i * self.stride + j / 64] ^= 1u64 << (j % 64);
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.stride..(i + 1) * self.stride]
    }

    /// `y_i = XOR_j (A_ij AND x_j)`.
    pub fn mul_vec(&self, x: &F2Vector) -> Result<F2Vector> {
        if x.len() != self.n {
            return invalid(format!("vector length {} does not match dimension {}", x.len(), self.n));
        }
        let mut y = F2Vector::zeros(self.n);
        for i in 0..self.n {
            let parity = self
                .row(i)
                .iter()
                .zip(&x.words)
                .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones());
            y.set(i, parity & 1 == 1);
        }
        Ok(y)
    }

    pub fn mul(&self, other: &F2Matrix) -> Result<F2Matrix> {
        if self.n != other.n {
            return invalid(format!("dimension mismatch: {} vs {}", self.n, other.n));
        }
        let mut out = F2Matrix::zeros(self.n)?;
        for i in 0..self.n {
            for k in 0..self.n {
                if self.get(i, k) {
                    let src = other.row(k).to_vec();
                    let dst = &mut out.words[i * self.stride..(i + 1) * self.stride];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d ^= s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gauss–Jordan elimination with first-nonzero-row pivoting.
    pub fn invert(&self) -> Result<F2Matrix> {
        let (rank, inverse) = self.eliminate();
        if rank < self.n {
            return Err(Error::Singular { rank, n: self.n });
        }
        Ok(inverse)
    }

    pub fn rank(&self) -> usize {
        self.eliminate().0
    }

    pub fn is_invertible(&self) -> bool {
        self.rank() == self.n
    }

    /// Reduces `[A | I]`; returns the rank of `A` and the right block, which
    /// is `A^-1` whenever the rank is full.
    fn eliminate(&self) -> (usize, F2Matrix) {
        let n = self.n;
        let s = self.stride;
        let mut left = self.words.clone();
        let mut right = F2Matrix::identity(n).expect("n >= 1").words;
        let mut rank = 0;
        for col in 0..n {
            let (w, mask) = (col / 64, 1u64 << (col % 64));
            let Some(pivot) = (rank..n).find(|&r| left[r * s + w] & mask != 0) else {
                continue;
            };
            if pivot != rank {
                for k in 0..s {
                    left.swap(pivot * s + k, rank * s + k);
                    right.swap(pivot * s + k, rank * s + k);
                }
            }
            for r in 0..n {
                if r != rank && left[r * s + w] & mask != 0 {
                    for k in 0..s {
                        left[r * s + k] ^= left[rank * s + k];
                        right[r * s + k] ^= right[rank * s + k];
                    }
                }
            }
            rank += 1;
        }
        (rank, F2Matrix { n, stride: s, words: right })
    }

    pub fn sparsity(&self) -> SparsityStats {
        let nnz: usize = self.words.iter().map(|w| w.count_ones() as usize).sum();
        let total = self.n * self.n;
        SparsityStats {
            nnz,
            n: self.n,
            sparsity: (total - nnz) as f64 / total as f64,
        }
    }

    pub fn nnz(&self) -> usize {
        self.sparsity().nnz
    }

    /// Number of entries in which two equally sized matrices differ.
    pub fn hamming_distance(&self, other: &F2Matrix) -> usize {
        assert_eq!(self.n, other.n);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Row-major 0/1 entries.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    fn flip_flat(&mut self, pos: usize) {
        self.flip(pos / self.n, pos % self.n);
    }
}

impl fmt::Display for F2Matrix {
    /// Text form: `n` on the first line, then one line of `0`/`1` per row.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.n)?;
        for i in 0..self.n {
            for j in 0..self.n {
                f.write_str(if self.get(i, j) { "1" } else { "0" })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl fmt::Debug for F2Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F2Matrix(")?;
        for i in 0..self.n {
            if i > 0 {
                write!(f, "/")?;
            }
            for j in 0..self.n {
                write!(f, "{}", self.get(i, j) as u8)?;
            }
        }
        write!(f, ")")
    }
}

impl FromStr for F2Matrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty matrix text".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::Format(format!("bad dimension line {header:?}")))?;
        let rows = lines
            .map(|l| {
                l.chars()
                    .map(|c| match c {
                        '0' => Ok(0u8),
                        '1' => Ok(1u8),
                        other => Err(Error::UnknownSymbol(other)),
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.len() != n {
            return Err(Error::Format(format!("expected {n} rows, found {}", rows.len())));
        }
        F2Matrix::from_rows(&rows)
    }
}

/// Starts from the identity and flips `k - n` distinct positions (diagonal
/// included), resampling until the result is invertible.
///
/// The realized nonzero count is `k` minus twice the number of diagonal hits.
pub fn gen_sparse_invertible<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<F2Matrix> {
    gen_sparse_invertible_with_budget(n, k, rng, DEFAULT_RETRY_BUDGET)
}

pub fn gen_sparse_invertible_with_budget<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
    budget: usize,
) -> Result<F2Matrix> {
    let base = F2Matrix::identity(n)?;
    if k < n {
        return invalid(format!("target nnz {k} is below the dimension {n}"));
    }
    let flips = k - n;
    if flips > n * n {
        return invalid(format!("cannot flip {flips} distinct entries of a {n}x{n} matrix"));
    }
    flip_until_invertible(&base, flips, rng, budget)
}

/// Flips exactly `e` distinct entries of `m`, resampling the flip set until
/// the result is invertible.
pub fn perturb_invertible<R: Rng + ?Sized>(m: &F2Matrix, e: usize, rng: &mut R) -> Result<F2Matrix> {
    perturb_invertible_with_budget(m, e, rng, DEFAULT_RETRY_BUDGET)
}

pub fn perturb_invertible_with_budget<R: Rng + ?Sized>(
    m: &F2Matrix,
    e: usize,
    rng: &mut R,
    budget: usize,
) -> Result<F2Matrix> {
    let n = m.n();
    if e > n * n {
        return invalid(format!("cannot flip {e} distinct entries of a {n}x{n} matrix"));
    }
    if !m.is_invertible() {
        return invalid("perturb_invertible requires an invertible input");
    }
    flip_until_invertible(m, e, rng, budget)
}

fn flip_until_invertible<R: Rng + ?Sized>(
    base: &F2Matrix,
    flips: usize,
    rng: &mut R,
    budget: usize,
) -> Result<F2Matrix> {
    let n = base.n();
    for _ in 0..budget {
        let mut candidate = base.clone();
        for pos in index::sample(rng, n * n, flips) {
            candidate.flip_flat(pos);
        }
        if candidate.is_invertible() {
            return Ok(candidate);
        }
    }
    Err(Error::GenerationFailure {
        attempts: budget,
        what: format!("no invertible matrix after flipping {flips} entries of a {n}x{n} matrix"),
    })
}

/// One row of a sparsity scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub k: usize,
    pub trials: usize,
    /// Mean realized nnz of the generated matrices.
    pub mean_nnz: f64,
    pub mean_nnz_inverse: f64,
    /// Sample standard deviation (zero for a single trial).
    pub std_nnz_inverse: f64,
}

/// RNG for one trial of a scan. Streams depend only on `(seed, k index,
/// trial)`, so the result does not depend on evaluation order.
pub fn trial_rng(seed: u64, k_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(trial as u64);
    rng
}

/// For each `k`, averages nnz of the inverse over `trials` generated matrices.
pub fn sparsity_scan(n: usize, k_values: &[usize], trials: usize, seed: u64) -> Result<Vec<ScanRow>> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    if let Some(&k) = k_values.iter().find(|&&k| k < n) {
        return invalid(format!("k = {k} is below the dimension {n}"));
    }
    k_values
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let mut nnz = Vec::with_capacity(trials);
            let mut nnz_inv = Vec::with_capacity(trials);
            for t in 0..trials {
                let mut rng = trial_rng(seed, ki, t);
                let a = gen_sparse_invertible(n, k, &mut rng)?;
                nnz.push(a.nnz() as f64);
                nnz_inv.push(a.invert()?.nnz() as f64);
            }
            let (mean_inv, std_inv) = mean_std(&nnz_inv);
            Ok(ScanRow {
                k,
                trials,
                mean_nnz: mean_std(&nnz).0,
                mean_nnz_inverse: mean_inv,
                std_nnz_inverse: std_inv,
            })
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// CSV with header `k,mean_nnz_inverse,std_nnz_inverse,trials`.
pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from("k,mean_nnz_inverse,std_nnz_inverse,trials\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6},{}\n", r.k, r.mean_nnz_inverse, r.std_nnz_inverse, r.trials));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[u8]]) -> F2Matrix {
        F2Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_shapes() {
        assert_eq!(F2Matrix::identity(3).unwrap().to_rows(), vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(F2Matrix::identity(1).unwrap().to_rows(), vec![vec![1]]);
        assert_eq!(F2Matrix::identity(30).unwrap().nnz(), 30);
        assert!(matches!(F2Matrix::identity(0), Err(Error::InvalidDimension(0))));
    }

    #[test]
    fn mat_vec_examples() {
        let i3 = F2Matrix::identity(3).unwrap();
        let x = F2Vector::parse("101").unwrap();
        assert_eq!(i3.mul_vec(&x).unwrap(), x);

        let a = m(&[&[1, 1], &[0, 1]]);
        assert_eq!(a.mul_vec(&F2Vector::parse("10").unwrap()).unwrap().to_string(), "10");
        assert_eq!(a.mul_vec(&F2Vector::parse("01").unwrap()).unwrap().to_string(), "11");
        assert_eq!(a.mul_vec(&F2Vector::zeros(2)).unwrap(), F2Vector::zeros(2));
        assert!(matches!(a.mul_vec(&F2Vector::zeros(3)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mat_mul_examples() {
        let a = m(&[&[1, 1], &[0, 1]]);
        let i2 = F2Matrix::identity(2).unwrap();
        assert_eq!(a.mul(&i2).unwrap(), a);
        assert_eq!(a.mul(&a).unwrap(), i2);
        assert_eq!(i2.mul(&i2).unwrap(), i2);
        assert!(a.mul(&F2Matrix::identity(3).unwrap()).is_err());
    }

    #[test]
    fn invert_examples() {
        let i5 = F2Matrix::identity(5).unwrap();
        assert_eq!(i5.invert().unwrap(), i5);
        let a = m(&[&[1, 1], &[0, 1]]);
        assert_eq!(a.invert().unwrap(), a);
        assert!(matches!(F2Matrix::zeros(2).unwrap().invert(), Err(Error::Singular { rank: 0, n: 2 })));
        let rank1 = m(&[&[1, 1], &[1, 1]]);
        assert!(matches!(rank1.invert(), Err(Error::Singular { rank: 1, n: 2 })));
    }

    #[test]
    fn sparsity_examples() {
        let s = F2Matrix::identity(30).unwrap().sparsity();
        assert_eq!(s.nnz, 30);
        assert!((s.sparsity - (1.0 - 30.0 / 900.0)).abs() < 1e-15);
        let ones = m(&[&[1, 1], &[1, 1]]).sparsity();
        assert_eq!((ones.nnz, ones.sparsity), (4, 0.0));
        let s = m(&[&[1, 1], &[0, 1]]).sparsity();
        assert_eq!((s.nnz, s.sparsity), (3, 0.25));
        assert_eq!(s.nnz + s.zeros(), 4);
    }

    /// Exhaustive over all 2^16 matrices of size 4.
    #[test]
    fn inverse_identities_exhaustive_n4() {
        let i4 = F2Matrix::identity(4).unwrap();
        let mut invertible = 0;
        for bits in 0u32..(1 << 16) {
            let mut a = F2Matrix::zeros(4).unwrap();
            for p in 0..16 {
                if bits >> p & 1 == 1 {
                    a.set(p / 4, p % 4, true);
                }
            }
            match a.invert() {
                Ok(inv) => {
                    invertible += 1;
                    assert_eq!(a.mul(&inv).unwrap(), i4);
                    assert_eq!(inv.mul(&a).unwrap(), i4);
                    assert_eq!(inv.invert().unwrap(), a);
                }
                Err(Error::Singular { rank, .. }) => assert!(rank < 4),
                Err(e) => panic!("{e}"),
            }
        }
        // |GL(4, 2)| = (16-1)(16-2)(16-4)(16-8)
        assert_eq!(invertible, 15 * 14 * 12 * 8);
    }

    #[test]
    fn sparse_generation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(gen_sparse_invertible(2, 2, &mut rng).unwrap(), F2Matrix::identity(2).unwrap());
        assert_eq!(gen_sparse_invertible(7, 7, &mut rng).unwrap(), F2Matrix::identity(7).unwrap());
        for _ in 0..50 {
            let a = gen_sparse_invertible(20, 26, &mut rng).unwrap();
            assert!(a.is_invertible());
            let nnz = a.nnz();
            assert!((20..=26).contains(&nnz), "nnz {nnz}");
            // Each diagonal hit removes one nonzero instead of adding one.
            assert_eq!((26 - nnz) % 2, 0);
        }
        assert!(gen_sparse_invertible(5, 4, &mut rng).is_err());
    }

    #[test]
    fn perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = gen_sparse_invertible(20, 26, &mut rng).unwrap();
        assert_eq!(perturb_invertible(&base, 0, &mut rng).unwrap(), base);
        for e in [1, 4, 6, 50] {
            let p = perturb_invertible(&base, e, &mut rng).unwrap();
            assert_eq!(p.hamming_distance(&base), e);
            assert!(p.invert().is_ok());
        }
        let one = F2Matrix::identity(1).unwrap();
        assert!(matches!(
            perturb_invertible(&one, 1, &mut rng),
            Err(Error::GenerationFailure { attempts: DEFAULT_RETRY_BUDGET, .. })
        ));
        assert!(perturb_invertible(&F2Matrix::zeros(2).unwrap(), 1, &mut rng).is_err());
    }

    #[test]
    fn scan_small_cases() {
        let rows = sparsity_scan(30, &[30], 5, 1).unwrap();
        assert_eq!(rows[0].mean_nnz_inverse, 30.0);
        let rows = sparsity_scan(2, &[2], 10, 1).unwrap();
        assert_eq!(rows[0].mean_nnz_inverse, 2.0);
        assert_eq!(rows[0].std_nnz_inverse, 0.0);
        assert!(sparsity_scan(3, &[2], 1, 0).is_err());
        assert!(sparsity_scan(3, &[3], 0, 0).is_err());
    }

    #[test]
    fn scan_is_deterministic() {
        let a = sparsity_scan(12, &[12, 20, 40], 20, 9).unwrap();
        let b = sparsity_scan(12, &[12, 20, 40], 20, 9).unwrap();
        assert_eq!(a, b);
        let csv = scan_to_csv(&a);
        assert!(csv.starts_with("k,mean_nnz_inverse,std_nnz_inverse,trials\n12,12.000000,0.000000,20\n"));
    }

    #[test]
    fn text_round_trip() {
        let a = m(&[&[1, 1, 0], &[0, 1, 0], &[1, 0, 1]]);
        let text = a.to_string();
        assert_eq!(text, "3\n110\n010\n101\n");
        assert_eq!(text.parse::<F2Matrix>().unwrap(), a);
        assert!("2\n10\n".parse::<F2Matrix>().is_err());
        assert!("2\n10\n0x\n".parse::<F2Matrix>().is_err());
    }

    #[test]
    fn wide_matrices_use_multiple_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = gen_sparse_invertible(70, 200, &mut rng).unwrap();
        let inv = a.invert().unwrap();
        assert_eq!(a.mul(&inv).unwrap(), F2Matrix::identity(70).unwrap());
    }
}
