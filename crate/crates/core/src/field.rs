//! Physical and spectral field representations on the periodic grid, the
//! transforms between them, and the spectral projections shared by the
//! fluid and coupling code.
//!
//! Normalization: the forward transform divides by `n^dim`, so the zero
//! mode of a field is its spatial mean and a physical field is recovered
//! as `f(x) = sum_k F_k exp(2 pi i k.x)`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SimError};
use crate::grid::GridSpec;

/// Real samples of a scalar, vector or tensor field, component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    grid: GridSpec,
    components: usize,
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn zeros(grid: GridSpec, components: usize) -> Self {
        Self {
            grid,
            components,
            values: vec![0.0; components * grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, components: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != components * grid.len() {
            return Err(SimError::MalformedInput(format!(
                "expected {} values, got {}",
                components * grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::MalformedInput("non-finite sample".into()));
        }
        Ok(Self {
            grid,
            components,
            values,
        })
    }

    /// Samples `f(x, component)` at every grid point.
    pub fn from_fn(grid: GridSpec, components: usize, mut f: impl FnMut([f64; 3], usize) -> f64) -> Self {
        let len = grid.len();
        let mut values = vec![0.0; components * len];
        for c in 0..components {
            for i in 0..len {
                values[c * len + i] = f(grid.position(i), c);
            }
        }
        Self {
            grid,
            components,
            values,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.values[c * len..(c + 1) * len]
    }

    /// Spatial mean of one component (domain has unit volume).
    pub fn mean(&self, c: usize) -> f64 {
        self.component(c).iter().sum::<f64>() / self.grid.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L2 inner product `int f.g dx` summed over components.
    pub fn inner(&self, other: &PhysicalField) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        s / self.grid.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Fourier coefficients of a real field; `coeffs[c * len + flat]` is the
/// coefficient of wavevector `grid.wavevector(flat)` for component `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    components: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec, components: usize) -> Self {
        Self {
            grid,
            components,
            coeffs: vec![Complex64::new(0.0, 0.0); components * grid.len()],
        }
    }

    pub fn from_coeffs(grid: GridSpec, components: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != components * grid.len() {
            return Err(SimError::MalformedInput(format!(
                "expected {} coefficients, got {}",
                components * grid.len(),
                coeffs.len()
            )));
        }
        Ok(Self {
            grid,
            components,
            coeffs,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.coeffs[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let len = self.grid.len();
        &mut self.coeffs[c * len..(c + 1) * len]
    }

    /// Sets the coefficient at `k` and its Hermitian partner at `-k`.
    pub fn set_mode(&mut self, c: usize, k: [i64; 3], value: Complex64) {
        let flat = self.mode_index(k);
        let neg = self.grid.negated(flat);
        let len = self.grid.len();
        self.coeffs[c * len + flat] = value;
        self.coeffs[c * len + neg] = value.conj();
    }

    pub fn mode(&self, c: usize, k: [i64; 3]) -> Complex64 {
        self.coeffs[c * self.grid.len() + self.mode_index(k)]
    }

    fn mode_index(&self, k: [i64; 3]) -> usize {
        let n = self.grid.n() as i64;
        let mut idx = [0usize; 3];
        for a in 0..self.grid.dim() {
            idx[a] = k[a].rem_euclid(n) as usize;
        }
        self.grid.flat_index(idx)
    }

    /// `sum_k Re(F_k conj(G_k))`, equal to the physical L2 inner product.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &SpectralField) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest `|F_k - conj(F_{-k})|` over all modes and components.
    pub fn hermitian_defect(&self) -> f64 {
        let len = self.grid.len();
        let mut worst: f64 = 0.0;
        for c in 0..self.components {
            let comp = &self.coeffs[c * len..(c + 1) * len];
            for flat in 0..len {
                let d = (comp[flat] - comp[self.grid.negated(flat)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized multidimensional FFT of one component, in place.
fn fft_nd(data: &mut [Complex64], grid: GridSpec, inverse: bool) {
    let n = grid.n();
    let dim = grid.dim();
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // Last axis is contiguous: rustfft handles the batch directly.
    fft.process_with_scratch(data, &mut scratch);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..dim - 1 {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for base_block in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let start = base_block + offset;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, slot) in line.iter().enumerate() {
                    data[start + j * stride] = *slot;
                }
            }
        }
    }
}

/// Forward transform; the zero mode equals the spatial mean.
pub fn to_spectral(f: &PhysicalField) -> SpectralField {
    let grid = f.grid();
    let len = grid.len();
    let scale = 1.0 / len as f64;
    let mut coeffs = Vec::with_capacity(f.components() * len);
    for c in 0..f.components() {
        let mut buf: Vec<Complex64> = f
            .component(c)
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft_nd(&mut buf, grid, false);
        coeffs.extend(buf.into_iter().map(|z| z * scale));
    }
    SpectralField {
        grid,
        components: f.components(),
        coeffs,
    }
}

/// Inverse transform; fails if the coefficients do not describe a real field.
pub fn to_physical(spec: &SpectralField) -> Result<PhysicalField> {
    let tol = 1e-10 * spec.max_abs().max(1.0);
    let defect = spec.hermitian_defect();
    if defect > tol {
        return Err(SimError::MalformedInput(format!(
            "coefficients violate Hermitian symmetry by {defect:.3e}"
        )));
    }
    Ok(to_physical_unchecked(spec))
}

/// Inverse transform without the symmetry check; the imaginary part is dropped.
pub(crate) fn to_physical_unchecked(spec: &SpectralField) -> PhysicalField {
    let grid = spec.grid();
    let len = grid.len();
    let mut values = Vec::with_capacity(spec.components() * len);
    for c in 0..spec.components() {
        let mut buf = spec.component(c).to_vec();
        fft_nd(&mut buf, grid, true);
        values.extend(buf.into_iter().map(|z| z.re));
    }
    PhysicalField {
        grid,
        components: spec.components(),
        values,
    }
}

/// Leray projection onto mean-free divergence-free fields.
///
/// Removes `k (k.w)/|k|^2` from every mode and zeroes the mean. Modes on a
/// Nyquist plane are dropped: their wavevector sign is ambiguous, so no
/// projection of them keeps the field real.
pub fn leray_project(spec: &SpectralField) -> SpectralField {
    let mut out = spec.clone();
    leray_project_in_place(&mut out);
    out
}

pub fn leray_project_in_place(spec: &mut SpectralField) {
    let grid = spec.grid();
    let dim = grid.dim();
    assert_eq!(spec.components(), dim, "leray projection needs a vector field");
    let len = grid.len();
    for flat in 0..len {
        if flat == 0 || grid.is_nyquist(flat) {
            for c in 0..dim {
                spec.coeffs[c * len + flat] = Complex64::new(0.0, 0.0);
            }
            continue;
        }
        let k = grid.wavevector(flat);
        let k2: f64 = k.iter().map(|&kk| (kk * kk) as f64).sum();
        let mut dot = Complex64::new(0.0, 0.0);
        for c in 0..dim {
            dot += spec.coeffs[c * len + flat] * k[c] as f64;
        }
        let factor = dot / k2;
        for c in 0..dim {
            spec.coeffs[c * len + flat] -= factor * k[c] as f64;
        }
    }
}

/// 2/3-rule truncation: zero every mode with some `|k_j| > n/3`.
pub fn dealias(spec: &SpectralField) -> SpectralField {
    let mut out = spec.clone();
    dealias_in_place(&mut out);
    out
}

pub fn dealias_in_place(spec: &mut SpectralField) {
    let grid = spec.grid();
    let cutoff = grid.dealias_cutoff();
    let len = grid.len();
    for flat in 0..len {
        let k = grid.wavevector(flat);
        if k.iter().any(|&kk| kk.abs() as f64 > cutoff) {
            for c in 0..spec.components() {
                spec.coeffs[c * len + flat] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Spectral multiplier `i 2 pi k_axis`, zero on the Nyquist plane of that axis.
pub(crate) fn derivative_multiplier(grid: GridSpec, flat: usize, axis: usize) -> Complex64 {
    let m = grid.multi_index(flat);
    if m[axis] == grid.n() / 2 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, 2.0 * PI * grid.wavenumber(m[axis]) as f64)
}

/// Partial derivative of one component along `axis`, as a scalar spectral field.
pub fn derivative(spec: &SpectralField, component: usize, axis: usize) -> SpectralField {
    let grid = spec.grid();
    let src = spec.component(component);
    let coeffs = src
        .iter()
        .enumerate()
        .map(|(flat, &z)| z * derivative_multiplier(grid, flat, axis))
        .collect();
    SpectralField {
        grid,
        components: 1,
        coeffs,
    }
}

/// Divergence of a vector field (spectral).
pub fn divergence(spec: &SpectralField) -> SpectralField {
    let grid = spec.grid();
    let dim = grid.dim();
    assert_eq!(spec.components(), dim);
    let len = grid.len();
    let mut out = SpectralField::zeros(grid, 1);
    for flat in 0..len {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..dim {
            acc += spec.coeffs[c * len + flat] * derivative_multiplier(grid, flat, c);
        }
        out.coeffs[flat] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Direct O(N^2) DFT with the same normalization.
    fn direct_dft(f: &PhysicalField, c: usize) -> Vec<Complex64> {
        let grid = f.grid();
        let len = grid.len();
        let vals = f.component(c);
        (0..len)
            .map(|kf| {
                let k = grid.wavevector(kf);
                let mut acc = Complex64::new(0.0, 0.0);
                for (xf, &v) in vals.iter().enumerate() {
                    let x = grid.position(xf);
                    let phase = -2.0 * PI * (0..3).map(|a| k[a] as f64 * x[a]).sum::<f64>();
                    acc += Complex64::from_polar(v, phase);
                }
                acc / len as f64
            })
            .collect()
    }

    fn random_field(grid: GridSpec, components: usize, seed: u64) -> PhysicalField {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        PhysicalField::from_fn(grid, components, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let g = GridSpec::new(3, 8).unwrap();
        let f = PhysicalField::from_fn(g, 1, |_, _| 2.5);
        let s = to_spectral(&f);
        assert_abs_diff_eq!(s.coeffs()[0].re, 2.5, epsilon = 1e-14);
        for z in &s.coeffs()[1..] {
            assert!(z.norm() < 1e-14);
        }
    }

    #[test]
    fn single_harmonic_matches_direct_dft() {
        let g = GridSpec::new(3, 16).unwrap();
        let f = PhysicalField::from_fn(g, 1, |x, _| (2.0 * PI * x[0]).sin());
        let s = to_spectral(&f);
        let oracle = direct_dft(&f, 0);
        for (a, b) in s.coeffs().iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_abs_diff_eq!(s.mode(0, [1, 0, 0]).norm(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.mode(0, [-1, 0, 0]).norm(), 0.5, epsilon = 1e-14);
        let others: f64 = s.norm_sq() - 0.5;
        assert!(others.abs() < 1e-14);
    }

    #[test]
    fn round_trip_random_fields() {
        for dim in [2, 3] {
            let g = GridSpec::new(dim, 8).unwrap();
            let f = random_field(g, 2, 7 + dim as u64);
            let back = to_physical(&to_spectral(&f)).unwrap();
            let scale = f.max_abs();
            for (a, b) in f.values().iter().zip(back.values()) {
                assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn zero_coefficients_give_zero_field() {
        let g = GridSpec::new(2, 8).unwrap();
        let f = to_physical(&SpectralField::zeros(g, 2)).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn imaginary_mode_gives_negative_sine() {
        let g = GridSpec::new(3, 8).unwrap();
        let mut s = SpectralField::zeros(g, 1);
        s.set_mode(0, [0, 1, 0], Complex64::new(0.0, 0.5));
        let f = to_physical(&s).unwrap();
        for i in 0..g.len() {
            let x = g.position(i);
            assert_abs_diff_eq!(f.component(0)[i], -(2.0 * PI * x[1]).sin(), epsilon = 1e-14);
        }
        // the direct DFT recovers the coefficient
        let oracle = direct_dft(&f, 0);
        let idx = g.flat_index([0, 1, 0]);
        assert!((oracle[idx] - Complex64::new(0.0, 0.5)).norm() < 1e-14);
    }

    #[test]
    fn asymmetric_coefficients_are_rejected() {
        let g = GridSpec::new(2, 8).unwrap();
        let mut s = SpectralField::zeros(g, 1);
        s.component_mut(0)[g.flat_index([1, 0, 0])] = Complex64::new(1.0, 0.0);
        assert!(matches!(to_physical(&s), Err(SimError::MalformedInput(_))));
    }

    #[test]
    fn leray_hand_computed_modes() {
        let g = GridSpec::new(3, 8).unwrap();
        let mut s = SpectralField::zeros(g, 3);
        s.set_mode(0, [1, 0, 0], Complex64::new(1.0, 0.0));
        let p = leray_project(&s);
        assert!(p.norm_sq() < 1e-30);

        let mut s = SpectralField::zeros(g, 3);
        s.set_mode(1, [1, 0, 0], Complex64::new(1.0, 0.0));
        let p = leray_project(&s);
        assert_eq!(p, s);
    }

    #[test]
    fn leray_annihilates_gradients() {
        let g = GridSpec::new(3, 8).unwrap();
        let phi = to_spectral(&random_field(g, 1, 3));
        let mut grad = SpectralField::zeros(g, 3);
        for a in 0..3 {
            let d = derivative(&phi, 0, a);
            grad.component_mut(a).copy_from_slice(d.component(0));
        }
        let p = leray_project(&grad);
        assert!(p.norm_sq().sqrt() < 1e-13 * grad.norm_sq().sqrt());
    }

    #[test]
    fn leray_is_idempotent_self_adjoint_and_divergence_free() {
        let g = GridSpec::new(3, 8).unwrap();
        let f = to_spectral(&random_field(g, 3, 11));
        let h = to_spectral(&random_field(g, 3, 12));
        let pf = leray_project(&f);
        let ppf = leray_project(&pf);
        for (a, b) in pf.coeffs().iter().zip(ppf.coeffs()) {
            assert!((a - b).norm() < 1e-14);
        }
        let lhs = pf.inner(&h);
        let rhs = f.inner(&leray_project(&h));
        assert!((lhs - rhs).abs() < 1e-12);
        let len = g.len();
        let scale = pf.max_abs();
        for flat in 0..len {
            let k = g.wavevector(flat);
            let mut dot = Complex64::new(0.0, 0.0);
            for c in 0..3 {
                dot += pf.component(c)[flat] * k[c] as f64;
            }
            assert!(dot.norm() <= 1e-14 * scale);
        }
        for c in 0..3 {
            assert_eq!(pf.component(c)[0], Complex64::new(0.0, 0.0));
        }
        // projected field is real
        assert!(to_physical(&pf).is_ok());
    }

    #[test]
    fn dealias_zeroes_high_modes() {
        let g = GridSpec::new(3, 16).unwrap();
        let mut s = SpectralField::zeros(g, 1);
        s.set_mode(0, [6, 0, 0], Complex64::new(1.0, 0.0));
        s.set_mode(0, [1, 1, 0], Complex64::new(0.3, 0.2));
        let d = dealias(&s);
        assert_eq!(d.mode(0, [6, 0, 0]), Complex64::new(0.0, 0.0));
        assert_eq!(d.mode(0, [1, 1, 0]), Complex64::new(0.3, 0.2));
        assert!(d.norm_sq() <= s.norm_sq());
    }

    #[test]
    fn derivative_of_sine() {
        let g = GridSpec::new(2, 16).unwrap();
        let f = PhysicalField::from_fn(g, 1, |x, _| (2.0 * PI * 2.0 * x[1]).sin());
        let d = to_physical(&derivative(&to_spectral(&f), 0, 1)).unwrap();
        for i in 0..g.len() {
            let x = g.position(i);
            let exact = 4.0 * PI * (4.0 * PI * x[1]).cos();
            assert_abs_diff_eq!(d.component(0)[i], exact, epsilon = 1e-11);
        }
    }

    proptest::proptest! {
        #[test]
        fn prop_round_trip(seed in 0u64..1000) {
            let g = GridSpec::new(3, 4).unwrap();
            let f = random_field(g, 1, seed);
            let back = to_physical(&to_spectral(&f)).unwrap();
            let scale = f.max_abs();
            for (a, b) in f.values().iter().zip(back.values()) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn prop_parseval(seed in 0u64..1000) {
            let g = GridSpec::new(2, 8).unwrap();
            let f = random_field(g, 2, seed);
            let h = random_field(g, 2, seed + 5000);
            let phys = f.inner(&h);
            let spec = to_spectral(&f).inner(&to_spectral(&h));
            proptest::prop_assert!((phys - spec).abs() < 1e-13);
        }
    }
}
