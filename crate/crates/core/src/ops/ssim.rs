//! Structural-similarity photometric loss `mean((1 - SSIM) / 2)` with a
//! uniform local window and reflection padding.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Uniform window mean with reflection padding; `radius < min(h, w)`.
/// Computed as a horizontal then a vertical 1-d box pass.
fn box_mean<T: Real>(src: &[T], h: usize, w: usize, radius: usize, out: &mut [T]) {
    let r = radius as isize;
    let norm = T::one() / T::lit(((2 * radius + 1) * (2 * radius + 1)) as f64);
    let mut rows = vec![T::zero(); h * w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = T::zero();
            for dx in -r..=r {
                acc += line[reflect(x as isize + dx, w)];
            }
            rows[y * w + x] = acc;
        }
    }
    for y in 0..h {
        let o = &mut out[y * w..(y + 1) * w];
        o.iter_mut().for_each(|v| *v = T::zero());
        for dy in -r..=r {
            let yy = reflect(y as isize + dy, h);
            o.iter_mut().zip(&rows[yy * w..(yy + 1) * w]).for_each(|(a, &b)| *a += b);
        }
        o.iter_mut().for_each(|v| *v *= norm);
    }
}

/// Adjoint of [`box_mean`], accumulated into `out`.
fn box_mean_adjoint<T: Real>(grad: &[T], h: usize, w: usize, radius: usize, out: &mut [T]) {
    let r = radius as isize;
    let norm = T::one() / T::lit(((2 * radius + 1) * (2 * radius + 1)) as f64);
    let mut cols = vec![T::zero(); h * w];
    for y in 0..h {
        for dy in -r..=r {
            let yy = reflect(y as isize + dy, h);
            let (dst, src) = (yy * w, y * w);
            for x in 0..w {
                cols[dst + x] += grad[src + x] * norm;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let g = cols[y * w + x];
            for dx in -r..=r {
                out[y * w + reflect(x as isize + dx, w)] += g;
            }
        }
    }
}

struct Stats<T> {
    mu_a: Vec<T>,
    mu_b: Vec<T>,
    e_aa: Vec<T>,
    e_bb: Vec<T>,
    e_ab: Vec<T>,
}

fn stats<T: Real>(a: &[T], b: &[T], h: usize, w: usize, radius: usize) -> Stats<T> {
    let hw = h * w;
    let mut s = Stats {
        mu_a: vec![T::zero(); hw],
        mu_b: vec![T::zero(); hw],
        e_aa: vec![T::zero(); hw],
        e_bb: vec![T::zero(); hw],
        e_ab: vec![T::zero(); hw],
    };
    let aa: Vec<T> = a.iter().map(|&v| v * v).collect();
    let bb: Vec<T> = b.iter().map(|&v| v * v).collect();
    let ab: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
    box_mean(a, h, w, radius, &mut s.mu_a);
    box_mean(b, h, w, radius, &mut s.mu_b);
    box_mean(&aa, h, w, radius, &mut s.e_aa);
    box_mean(&bb, h, w, radius, &mut s.e_bb);
    box_mean(&ab, h, w, radius, &mut s.e_ab);
    s
}

/// Per-pixel SSIM map for `planes` planes of size `h x w`.
pub fn ssim_map<T: Real>(
    a: &[T],
    b: &[T],
    planes: usize,
    h: usize,
    w: usize,
    radius: usize,
    c1: T,
    c2: T,
) -> Vec<T> {
    let hw = h * w;
    let two = T::lit(2.0);
    let mut out = vec![T::zero(); planes * hw];
    for pl in 0..planes {
        let r = pl * hw..(pl + 1) * hw;
        let s = stats(&a[r.clone()], &b[r], h, w, radius);
        for p in 0..hw {
            let (ma, mb) = (s.mu_a[p], s.mu_b[p]);
            let va = s.e_aa[p] - ma * ma;
            let vb = s.e_bb[p] - mb * mb;
            let cov = s.e_ab[p] - ma * mb;
            let num = (two * ma * mb + c1) * (two * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            out[pl * hw + p] = num / den;
        }
    }
    out
}

/// Mean of `(1 - SSIM) / 2` over all planes and pixels.
#[allow(clippy::too_many_arguments)]
pub fn loss<T: Real>(
    a: &[T],
    b: &[T],
    planes: usize,
    h: usize,
    w: usize,
    radius: usize,
    c1: T,
    c2: T,
) -> T {
    let map = ssim_map(a, b, planes, h, w, radius, c1, c2);
    let total = T::lit(map.len() as f64);
    map.iter().map(|&s| (T::one() - s) * T::lit(0.5)).sum::<T>() / total
}

/// Gradient of [`loss`] scaled by `upstream`, with respect to both inputs.
#[allow(clippy::too_many_arguments)]
pub fn loss_backward<T: Real>(
    a: &[T],
    b: &[T],
    planes: usize,
    h: usize,
    w: usize,
    radius: usize,
    c1: T,
    c2: T,
    upstream: T,
) -> (Vec<T>, Vec<T>) {
    let hw = h * w;
    let two = T::lit(2.0);
    let g_s = -upstream * T::lit(0.5) / T::lit((planes * hw) as f64);
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    let mut g_mu_a = vec![T::zero(); hw];
    let mut g_mu_b = vec![T::zero(); hw];
    let mut g_e_aa = vec![T::zero(); hw];
    let mut g_e_bb = vec![T::zero(); hw];
    let mut g_e_ab = vec![T::zero(); hw];
    let mut acc = vec![T::zero(); hw];
    for pl in 0..planes {
        let r = pl * hw..(pl + 1) * hw;
        let (pa, pb) = (&a[r.clone()], &b[r.clone()]);
        let s = stats(pa, pb, h, w, radius);
        for p in 0..hw {
            let (ma, mb) = (s.mu_a[p], s.mu_b[p]);
            let va = s.e_aa[p] - ma * ma;
            let vb = s.e_bb[p] - mb * mb;
            let cov = s.e_ab[p] - ma * mb;
            let lum_n = two * ma * mb + c1;
            let con_n = two * cov + c2;
            let lum_d = ma * ma + mb * mb + c1;
            let con_d = va + vb + c2;
            let den = lum_d * con_d;
            let ssim = lum_n * con_n / den;
            let g_lum_n = g_s * con_n / den;
            let g_con_n = g_s * lum_n / den;
            let g_lum_d = -g_s * ssim / lum_d;
            let g_con_d = -g_s * ssim / con_d;
            // cov = e_ab - ma mb, va = e_aa - ma^2, vb = e_bb - mb^2
            let g_cov = two * g_con_n;
            g_mu_a[p] = g_lum_n * two * mb + g_lum_d * two * ma - g_cov * mb - g_con_d * two * ma;
            g_mu_b[p] = g_lum_n * two * ma + g_lum_d * two * mb - g_cov * ma - g_con_d * two * mb;
            g_e_ab[p] = g_cov;
            g_e_aa[p] = g_con_d;
            g_e_bb[p] = g_con_d;
        }
        let ga_pl = &mut ga[r.clone()];
        box_mean_adjoint(&g_mu_a, h, w, radius, ga_pl);
        acc.iter_mut().for_each(|v| *v = T::zero());
        box_mean_adjoint(&g_e_aa, h, w, radius, &mut acc);
        for p in 0..hw {
            ga_pl[p] += two * pa[p] * acc[p];
        }
        acc.iter_mut().for_each(|v| *v = T::zero());
        box_mean_adjoint(&g_e_ab, h, w, radius, &mut acc);
        for p in 0..hw {
            ga_pl[p] += pb[p] * acc[p];
        }
        let gb_pl = &mut gb[r];
        for p in 0..hw {
            gb_pl[p] += pa[p] * acc[p];
        }
        box_mean_adjoint(&g_mu_b, h, w, radius, gb_pl);
        acc.iter_mut().for_each(|v| *v = T::zero());
        box_mean_adjoint(&g_e_bb, h, w, radius, &mut acc);
        for p in 0..hw {
            gb_pl[p] += two * pb[p] * acc[p];
        }
    }
    (ga, gb)
}
