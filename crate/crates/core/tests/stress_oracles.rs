use std::f64::consts::PI;

use kinfluid::field::{leray_project, to_physical, to_spectral};
use kinfluid::fluid::{stress, stress_divergence, sym_gradient};
use kinfluid::{FluidState, GridSpec, PhysicalField, PowerLaw, SpectralField};
use num_complex::Complex64;

// divergence-free modes inside the dealiasing band of an 8^3 grid
fn smooth_modes(grid: GridSpec) -> SpectralField {
    let mut w = SpectralField::zeros(grid, 3);
    w.set_mode(0, [0, 1, 0], Complex64::new(0.3, -0.2));
    w.set_mode(1, [0, 0, 1], Complex64::new(-0.1, 0.25));
    w.set_mode(0, [0, 1, 1], Complex64::new(0.15, 0.05));
    w.set_mode(1, [1, 0, 2], Complex64::new(0.1, 0.0));
    w.set_mode(2, [1, 0, 2], Complex64::new(0.0, 0.0));
    w.set_mode(2, [2, 1, 0], Complex64::new(0.05, -0.1));
    w.set_mode(0, [1, -2, 0], Complex64::new(0.08, 0.04));
    w.set_mode(1, [1, -2, 0], Complex64::new(0.04, 0.02));
    leray_project(&w)
}

fn central_divergence(tau: &PhysicalField) -> PhysicalField {
    let grid = tau.grid();
    let n = grid.n();
    let h = grid.spacing();
    let mut out = PhysicalField::zeros(grid, 3);
    for flat in 0..grid.len() {
        let idx = grid.multi_index(flat);
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                let mut up = idx;
                let mut down = idx;
                up[j] = (idx[j] + 1) % n;
                down[j] = (idx[j] + n - 1) % n;
                let c = tau.component(i * 3 + j);
                acc += (c[grid.flat_index(up)] - c[grid.flat_index(down)]) / (2.0 * h);
            }
            out.component_mut(i)[flat] = acc;
        }
    }
    out
}

fn band_coefficients(spec: &SpectralField, kmax: i64) -> Vec<Complex64> {
    let mut out = vec![];
    for c in 0..3 {
        for a in -kmax..=kmax {
            for b in -kmax..=kmax {
                for d in -kmax..=kmax {
                    out.push(spec.mode(c, [a, b, d]));
                }
            }
        }
    }
    out
}

fn fd_oracle(law: &PowerLaw, n: usize, kmax: i64) -> Vec<Complex64> {
    let fine = GridSpec::new(3, n).unwrap();
    let w = smooth_modes(fine);
    let tau = stress(&sym_gradient(&w, [0.0; 3]), law);
    let div = to_spectral(&central_divergence(&tau));
    let mut band = SpectralField::zeros(fine, 3);
    for c in 0..3 {
        for a in -kmax..=kmax {
            for b in -kmax..=kmax {
                for d in -kmax..=kmax {
                    band.set_mode(c, [a, b, d], div.mode(c, [a, b, d]));
                }
            }
        }
    }
    band_coefficients(&leray_project(&band), kmax)
}

// second-order differences on 32^3 and 64^3 combined by Richardson extrapolation
fn refined_oracle(law: &PowerLaw) -> Vec<Complex64> {
    let coarse = fd_oracle(law, 32, 2);
    let fine = fd_oracle(law, 64, 2);
    coarse.iter().zip(&fine).map(|(a, b)| (4.0 * b - a) / 3.0).collect()
}

fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn newtonian_harmonic_is_an_eigenfunction() {
    let g = GridSpec::new(3, 16).unwrap();
    let mut w = SpectralField::zeros(g, 3);
    w.set_mode(0, [0, 2, 1], Complex64::new(0.4, -0.3));
    let state = FluidState::new(w.clone(), [0.0; 3], 0.0).unwrap();
    let mu = 1.7;
    let law = PowerLaw::new(mu, 2.0, 0.0).unwrap();
    let got = stress_divergence(&state, &law);
    let k2 = 5.0;
    let mut expected = w;
    expected.scale(-mu * (2.0 * PI).powi(2) * k2 / 2.0);
    let mut diff = got;
    diff.axpy(-1.0, &expected);
    assert!(diff.max_abs() <= 1e-10 * expected.max_abs());
}

#[test]
fn stress_is_homogeneous() {
    let g = GridSpec::new(3, 8).unwrap();
    let du = sym_gradient(&smooth_modes(g), [0.0; 3]);
    for p in [1.5, 2.0, 3.0] {
        let law = PowerLaw::new(1.0, p, 0.0).unwrap();
        let base = stress(&du, &law);
        for lambda in [0.1, 3.0, 17.0] {
            let mut scaled = du.clone();
            for c in 0..9 {
                scaled.component_mut(c).iter_mut().for_each(|v| *v *= lambda);
            }
            let got = stress(&scaled, &law);
            let factor = lambda.powf(p - 1.0);
            let scale = base.max_abs() * factor;
            for (a, b) in got.values().iter().zip(base.values()) {
                assert!((a - factor * b).abs() <= 1e-12 * scale, "p = {p}, lambda = {lambda}");
            }
        }
    }
}

#[test]
fn shear_thickening_divergence_matches_refined_differences() {
    let law = PowerLaw::new(1.0, 2.5, 0.0).unwrap();
    let coarse = GridSpec::new(3, 8).unwrap();
    let state = FluidState::new(smooth_modes(coarse), [0.0; 3], 0.0).unwrap();
    let spectral = band_coefficients(&stress_divergence(&state, &law), 2);
    let oracle = refined_oracle(&law);
    let err = rel_l2(&spectral, &oracle);
    assert!(err <= 1e-2, "relative L2 error {err}");
}

#[test]
fn stress_divergence_is_solenoidal_and_dissipative() {
    let g = GridSpec::new(3, 8).unwrap();
    let state = FluidState::new(smooth_modes(g), [0.0; 3], 0.0).unwrap();
    for p in [1.5, 2.0, 2.5, 3.0] {
        let law = PowerLaw::new(1.0, p, 1e-8).unwrap();
        let div = stress_divergence(&state, &law);
        let phys = to_physical(&kinfluid::field::divergence(&div)).unwrap();
        assert!(phys.max_abs() < 1e-12);
        assert!(div.inner(state.w()) < 0.0);
    }
}

