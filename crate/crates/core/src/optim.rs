//! One-dimensional minimization.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Result of a bracketed scalar minimization.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMin {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Golden-section search for the minimum of a unimodal function on `[lo, hi]`.
///
/// The endpoints themselves are also compared against the interior optimum,
/// so monotone functions return the correct boundary point. Infinite values
/// are allowed (the dual objectives used here blow up at the ends).
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> ScalarMin
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a) > tol && iterations < 500 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let mut best = if fc <= fd {
        ScalarMin { x: c, value: fc, iterations }
    } else {
        ScalarMin { x: d, value: fd, iterations }
    };
    for x in [lo, hi] {
        let v = f(x);
        if v < best.value {
            best.x = x;
            best.value = v;
        }
    }
    best
}
