use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Uniform grid on the unit torus `[0,1)^dim`.
///
/// Sample `i` along an axis sits at `x = i / n`; cells are centred on the
/// samples. Flat indices are row-major with axis 0 slowest. Unused axes
/// (for `dim = 2`) are reported as zero in index/wavevector triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(SimError::InvalidGrid(format!("dim must be 2 or 3, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(SimError::InvalidGrid(format!(
                "n must be a power of two and at least 4, got {n}"
            )));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of samples, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Signed wavenumber of FFT index `j` (Nyquist maps to `-n/2`).
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let n = self.n;
        match self.dim {
            2 => [flat / n, flat % n, 0],
            _ => [flat / (n * n), (flat / n) % n, flat % n],
        }
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        let n = self.n;
        match self.dim {
            2 => idx[0] * n + idx[1],
            _ => (idx[0] * n + idx[1]) * n + idx[2],
        }
    }

    pub fn wavevector(&self, flat: usize) -> [i64; 3] {
        let m = self.multi_index(flat);
        let mut k = [0i64; 3];
        for a in 0..self.dim {
            k[a] = self.wavenumber(m[a]);
        }
        k
    }

    /// True if any axis of this mode sits on the Nyquist plane.
    pub fn is_nyquist(&self, flat: usize) -> bool {
        let m = self.multi_index(flat);
        (0..self.dim).any(|a| m[a] == self.n / 2)
    }

    /// Flat index of the mode `-k`.
    pub fn negated(&self, flat: usize) -> usize {
        let m = self.multi_index(flat);
        let mut neg = [0usize; 3];
        for a in 0..self.dim {
            neg[a] = (self.n - m[a]) % self.n;
        }
        self.flat_index(neg)
    }

    pub fn position(&self, flat: usize) -> [f64; 3] {
        let m = self.multi_index(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = m[a] as f64 * h;
        }
        x
    }

    /// Largest retained wavenumber per axis under the 2/3 rule.
    pub fn dealias_cutoff(&self) -> f64 {
        self.n as f64 / 3.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(GridSpec::new(3, 12).is_err());
        assert!(GridSpec::new(3, 2).is_err());
        assert!(GridSpec::new(1, 16).is_err());
        assert!(GridSpec::new(4, 16).is_err());
        assert!(GridSpec::new(2, 4).is_ok());
    }

    #[test]
    fn index_round_trip_and_negation() {
        for dim in [2, 3] {
            let g = GridSpec::new(dim, 8).unwrap();
            for flat in 0..g.len() {
                assert_eq!(g.flat_index(g.multi_index(flat)), flat);
                let kn = g.wavevector(g.negated(flat));
                let k = g.wavevector(flat);
                if !g.is_nyquist(flat) {
                    for a in 0..dim {
                        assert_eq!(kn[a], -k[a]);
                    }
                }
            }
        }
    }

    #[test]
    fn wavenumbers() {
        let g = GridSpec::new(3, 16).unwrap();
        assert_eq!(g.wavenumber(0), 0);
        assert_eq!(g.wavenumber(7), 7);
        assert_eq!(g.wavenumber(8), -8);
        assert_eq!(g.wavenumber(15), -1);
    }
}
