//! Globally adaptive 7/15-point Gauss–Kronrod quadrature for vector-valued
//! integrands on finite intervals.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

struct Segment {
    lo: f64,
    hi: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    worst: f64,
}

fn kronrod<F: FnMut(f64, &mut [f64])>(f: &mut F, lo: f64, hi: f64, len: usize, buf: &mut [f64]) -> Segment {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut k = vec![0.0; len];
    let mut g = vec![0.0; len];
    f(center, buf);
    for i in 0..len {
        k[i] += WGK[7] * buf[i];
        g[i] += WG[3] * buf[i];
    }
    for (j, &x) in XGK[..7].iter().enumerate() {
        for sign in [-1.0, 1.0] {
            f(center + sign * half * x, buf);
            for i in 0..len {
                k[i] += WGK[j] * buf[i];
                if j % 2 == 1 {
                    g[i] += WG[j / 2] * buf[i];
                }
            }
        }
    }
    let mut error = vec![0.0; len];
    let mut worst = 0.0f64;
    for i in 0..len {
        k[i] *= half;
        g[i] *= half;
        error[i] = (k[i] - g[i]).abs();
        worst = worst.max(error[i]);
    }
    Segment { lo, hi, value: k, error, worst }
}

/// Integrates the `len`-component function `f` over `[lo, hi]` until the
/// estimated absolute error of every component is below `tol`, or
/// `max_segments` subintervals have been used. Returns the integral and the
/// largest per-component error estimate.
pub fn integrate_vec<F>(mut f: F, lo: f64, hi: f64, len: usize, tol: f64, max_segments: usize) -> (Vec<f64>, f64)
where
    F: FnMut(f64, &mut [f64]),
{
    let mut buf = vec![0.0; len];
    if hi <= lo || len == 0 {
        return (vec![0.0; len], 0.0);
    }
    let mut segments = vec![kronrod(&mut f, lo, hi, len, &mut buf)];
    loop {
        let mut total_err = vec![0.0; len];
        for s in &segments {
            for (t, e) in total_err.iter_mut().zip(&s.error) {
                *t += e;
            }
        }
        let max_err = total_err.iter().cloned().fold(0.0, f64::max);
        if max_err <= tol || segments.len() >= max_segments {
            let mut value = vec![0.0; len];
            for s in &segments {
                for (v, x) in value.iter_mut().zip(&s.value) {
                    *v += x;
                }
            }
            return (value, max_err);
        }
        let (idx, _) = segments.iter().enumerate().max_by(|a, b| a.1.worst.total_cmp(&b.1.worst)).expect("nonempty");
        let s = segments.swap_remove(idx);
        let mid = 0.5 * (s.lo + s.hi);
        segments.push(kronrod(&mut f, s.lo, mid, len, &mut buf));
        segments.push(kronrod(&mut f, mid, s.hi, len, &mut buf));
    }
}

/// Scalar convenience wrapper.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    integrate_vec(|x, out| out[0] = f(x), lo, hi, 1, tol, 2000).0[0]
}
