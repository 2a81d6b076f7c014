//! Standalone check gadgets: Freivalds' product test, quotient/remainder
//! division and the integer square root.

use rand::Rng;

use super::field::Fp;
use crate::error::{Error, Result};

/// Dense row-major matrix over `Fp<P>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMatrix<const P: u64> {
    rows: usize,
    cols: usize,
    data: Vec<Fp<P>>,
}

impl<const P: u64> FieldMatrix<P> {
    pub fn new(rows: usize, cols: usize, data: Vec<Fp<P>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_i64(rows: usize, cols: usize, values: &[i64]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| Fp::from_i64(v)).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Fp::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Fp::one());
        }
        m
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| Fp::random(rng)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Fp<P> {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Fp<P>) {
        self.data[r * self.cols + c] = v;
    }

    /// Schoolbook product, used to build honest instances.
    pub fn matmul(&self, o: &Self) -> Result<Self> {
        if self.cols != o.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                actual: o.rows,
            });
        }
        let mut out = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..o.cols {
                    let v = out.get(i, j) + a * o.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[Fp<P>]) -> Vec<Fp<P>> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .fold(Fp::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }
}

/// Accepts iff `A(Bv) == Cv` for `reps` independent uniform `v`.
pub fn freivalds_check<const P: u64, R: Rng + ?Sized>(
    a: &FieldMatrix<P>,
    b: &FieldMatrix<P>,
    c: &FieldMatrix<P>,
    reps: usize,
    rng: &mut R,
) -> Result<bool> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(Error::Dimension {
            expected: a.rows * b.cols,
            actual: c.rows * c.cols,
        });
    }
    for _ in 0..reps {
        let v: Vec<Fp<P>> = (0..b.cols).map(|_| Fp::random(rng)).collect();
        if a.mul_vec(&b.mul_vec(&v)) != c.mul_vec(&v) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Field multiplications spent by one Freivalds run on `n×k · k×m`.
pub fn freivalds_cost(n: usize, k: usize, m: usize, reps: usize) -> u64 {
    (reps * (k * m + n * k + n * m)) as u64
}

/// Accepts iff `a == q·b + r` with `0 ≤ r < b`, over the integers.
pub fn division_check(a: i128, b: i128, q: i128, r: i128) -> bool {
    if b <= 0 || r < 0 || r >= b {
        return false;
    }
    match q.checked_mul(b).and_then(|qb| qb.checked_add(r)) {
        Some(v) => v == a,
        None => false,
    }
}

/// Floor division with the remainder in `[0, b)`.
pub fn floor_divmod(a: i128, b: i128) -> (i128, i128) {
    (a.div_euclid(b), a.rem_euclid(b))
}

/// Accepts iff `x² ≤ y < (x+1)²`, i.e. `x == ⌊√y⌋`.
pub fn isqrt_check(y: i128, x: i128) -> bool {
    if y < 0 || x < 0 {
        return false;
    }
    match (x.checked_mul(x), (x + 1).checked_mul(x + 1)) {
        (Some(lo), Some(hi)) => lo <= y && y < hi,
        _ => false,
    }
}

/// `⌊√y⌋` for `y ≥ 0`.
pub fn isqrt(y: i128) -> i128 {
    assert!(y >= 0, "isqrt of a negative value");
    let mut x = (y as f64).sqrt() as i128;
    while x * x > y {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= y {
        x += 1;
    }
    x
}
