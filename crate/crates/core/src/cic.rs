//! Cloud-in-cell (multilinear) kernel used for both interpolation to
//! particles and deposition onto the grid, so that the two are adjoint.

use crate::fluid::Vec3;
use crate::grid::GridSpec;

/// Grid neighbours and multilinear weights of one particle position.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub len: usize,
}

pub fn stencil(grid: &GridSpec, x: &Vec3) -> Stencil {
    let n = grid.n();
    let nf = n as f64;
    let dim = grid.dim();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dim {
        let s = x[a] * nf;
        let fl = s.floor();
        frac[a] = s - fl;
        let i0 = (fl as i64).rem_euclid(n as i64) as usize;
        lo[a] = i0;
        hi[a] = (i0 + 1) % n;
    }
    let mut st = Stencil {
        idx: [0; 8],
        w: [0.0; 8],
        len: 1 << dim,
    };
    for corner in 0..st.len {
        let mut m = [0usize; 3];
        let mut w = 1.0;
        for a in 0..dim {
            if corner >> a & 1 == 1 {
                m[a] = hi[a];
                w *= frac[a];
            } else {
                m[a] = lo[a];
                w *= 1.0 - frac[a];
            }
        }
        st.idx[corner] = grid.flat_index(m);
        st.w[corner] = w;
    }
    st
}

/// Interpolates a scalar component (given as a flat slice) at a stencil.
#[inline]
pub fn gather(values: &[f64], st: &Stencil) -> f64 {
    let mut acc = 0.0;
    for c in 0..st.len {
        acc += st.w[c] * values[st.idx[c]];
    }
    acc
}

/// Adds `amount` spread over the stencil into a scalar component.
#[inline]
pub fn scatter(values: &mut [f64], st: &Stencil, amount: f64) {
    for c in 0..st.len {
        values[st.idx[c]] += st.w[c] * amount;
    }
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}
