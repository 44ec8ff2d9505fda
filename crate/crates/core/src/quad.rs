//! Adaptive Gauss-Kronrod quadrature (7-15 pair), in one and two dimensions.
//!
//! Panels are subdivided greedily by estimated error until the summed error
//! estimate falls below the requested absolute tolerance. Integrands return
//! `Result` so that nested quadratures can propagate failures.

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};

/// Kronrod abscissae for the 15-point rule (positive half, descending).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights for the embedded 7-point rule; `WG[3]` is the center weight.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Kronrod and Gauss estimates over `[a, b]`.
fn panel_1d<T: Scalar, F>(f: &mut F, a: T, b: T) -> Result<(T, T)>
where
    F: FnMut(T) -> Result<T>,
{
    let half = (b - a) / s(2.0);
    let center = (a + b) / s(2.0);
    let fc = f(center)?;
    let mut kron = s::<T>(WGK[7]) * fc;
    let mut gauss = s::<T>(WG[3]) * fc;
    for i in 0..7 {
        let dx = half * s(XGK[i]);
        let f1 = f(center - dx)?;
        let f2 = f(center + dx)?;
        kron += s::<T>(WGK[i]) * (f1 + f2);
        if i % 2 == 1 {
            gauss += s::<T>(WG[(i - 1) / 2]) * (f1 + f2);
        }
    }
    Ok((kron * half, gauss * half))
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    err: T,
}

/// Adaptive integration of `f` over `[a, b]` to absolute tolerance `abs_tol`.
pub fn integrate<T: Scalar, F>(mut f: F, a: T, b: T, abs_tol: T, max_panels: usize) -> Result<T>
where
    F: FnMut(T) -> Result<T>,
{
    let (value, gauss) = panel_1d(&mut f, a, b)?;
    let mut segs = vec![Segment {
        a,
        b,
        value,
        err: (value - gauss).abs(),
    }];
    loop {
        let total_err = segs.iter().fold(T::zero(), |acc, s| acc + s.err);
        if total_err <= abs_tol {
            return Ok(segs.iter().fold(T::zero(), |acc, s| acc + s.value));
        }
        if segs.len() >= max_panels {
            return Err(Error::QuadratureNonConvergence {
                tol: abs_tol.to_f64_lossy(),
                err: total_err.to_f64_lossy(),
            });
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).expect("finite error"))
            .map(|(i, _)| i)
            .expect("non-empty segment list");
        let seg = segs.swap_remove(worst);
        let mid = (seg.a + seg.b) / s(2.0);
        for (lo, hi) in [(seg.a, mid), (mid, seg.b)] {
            let (v, g) = panel_1d(&mut f, lo, hi)?;
            segs.push(Segment {
                a: lo,
                b: hi,
                value: v,
                err: (v - g).abs(),
            });
        }
    }
}

struct Rect<T> {
    ax: T,
    bx: T,
    ay: T,
    by: T,
    value: T,
    err: T,
}

/// Tensor Kronrod and Gauss estimates over a rectangle.
fn panel_2d<T: Scalar, F>(f: &mut F, ax: T, bx: T, ay: T, by: T) -> Result<(T, T)>
where
    F: FnMut(T, T) -> Result<T>,
{
    let hx = (bx - ax) / s(2.0);
    let cx = (ax + bx) / s(2.0);
    let hy = (by - ay) / s(2.0);
    let cy = (ay + by) / s(2.0);

    // All 15 nodes and both weight sets along one axis. Gauss weight is zero
    // at pure Kronrod nodes, which drops them from the embedded estimate.
    let mut nodes = [(T::zero(), T::zero(), T::zero()); 15];
    for i in 0..7 {
        let x = s::<T>(XGK[i]);
        let wk = s::<T>(WGK[i]);
        let wg = if i % 2 == 1 {
            s::<T>(WG[(i - 1) / 2])
        } else {
            T::zero()
        };
        nodes[i] = (-x, wk, wg);
        nodes[14 - i] = (x, wk, wg);
    }
    nodes[7] = (T::zero(), s::<T>(WGK[7]), s::<T>(WG[3]));

    let mut kron = T::zero();
    let mut gauss = T::zero();
    for &(ux, wkx, wgx) in &nodes {
        let x = cx + hx * ux;
        let mut row_k = T::zero();
        let mut row_g = T::zero();
        for &(uy, wky, wgy) in &nodes {
            let y = cy + hy * uy;
            let fv = f(x, y)?;
            row_k += wky * fv;
            if wgy > T::zero() && wgx > T::zero() {
                row_g += wgy * fv;
            }
        }
        kron += wkx * row_k;
        gauss += wgx * row_g;
    }
    Ok((kron * hx * hy, gauss * hx * hy))
}

/// Adaptive integration of `f` over `[ax, bx] x [ay, by]`.
pub fn integrate_2d<T: Scalar, F>(
    mut f: F,
    x_range: (T, T),
    y_range: (T, T),
    abs_tol: T,
    max_panels: usize,
) -> Result<T>
where
    F: FnMut(T, T) -> Result<T>,
{
    let (ax, bx) = x_range;
    let (ay, by) = y_range;
    let width_x = bx - ax;
    let width_y = by - ay;
    let (value, gauss) = panel_2d(&mut f, ax, bx, ay, by)?;
    let mut rects = vec![Rect {
        ax,
        bx,
        ay,
        by,
        value,
        err: (value - gauss).abs(),
    }];
    loop {
        let total_err = rects.iter().fold(T::zero(), |acc, r| acc + r.err);
        if total_err <= abs_tol {
            return Ok(rects.iter().fold(T::zero(), |acc, r| acc + r.value));
        }
        if rects.len() >= max_panels {
            return Err(Error::QuadratureNonConvergence {
                tol: abs_tol.to_f64_lossy(),
                err: total_err.to_f64_lossy(),
            });
        }
        let worst = rects
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).expect("finite error"))
            .map(|(i, _)| i)
            .expect("non-empty rect list");
        let r = rects.swap_remove(worst);
        // split along the side that is longer relative to the original domain
        let rel_x = (r.bx - r.ax) / width_x;
        let rel_y = (r.by - r.ay) / width_y;
        let children: [(T, T, T, T); 2] = if rel_x >= rel_y {
            let mid = (r.ax + r.bx) / s(2.0);
            [(r.ax, mid, r.ay, r.by), (mid, r.bx, r.ay, r.by)]
        } else {
            let mid = (r.ay + r.by) / s(2.0);
            [(r.ax, r.bx, r.ay, mid), (r.ax, r.bx, mid, r.by)]
        };
        for (cax, cbx, cay, cby) in children {
            let (v, g) = panel_2d(&mut f, cax, cbx, cay, cby)?;
            rects.push(Rect {
                ax: cax,
                bx: cbx,
                ay: cay,
                by: cby,
                value: v,
                err: (v - g).abs(),
            });
        }
    }
}
