//! Double-double accumulation for the signal metrics.
//!
//! Values are unevaluated sums `hi + lo` with `|lo| <= ulp(hi) / 2`, giving
//! roughly 106 bits of precision. Used so that SI-SDR is computed to within
//! about one ulp of the exact value.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) struct Twofold {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Twofold {
    let s = a + b;
    let bb = s - a;
    Twofold {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn fast_two_sum(a: f64, b: f64) -> Twofold {
    let s = a + b;
    Twofold { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Twofold {
    let p = a * b;
    Twofold {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl Twofold {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    pub fn add(self, o: Self) -> Self {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let u = fast_two_sum(s.hi, s.lo + t.hi);
        fast_two_sum(u.hi, u.lo + t.lo)
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(Self { hi: -o.hi, lo: -o.lo })
    }

    pub fn mul(self, o: Self) -> Self {
        let p = two_prod(self.hi, o.hi);
        fast_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }

    /// Quotient rounded to `f64`, with one correction step.
    pub fn div(self, o: Self) -> f64 {
        let q = self.hi / o.hi;
        let r = self.sub(o.mul(Self { hi: q, lo: 0.0 }));
        q + (r.hi + r.lo) / (o.hi + o.lo)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// `sum a_i b_i` accumulated in double-double.
pub(super) fn dot(a: &[f64], b: &[f64]) -> Twofold {
    a.iter()
        .zip(b)
        .fold(Twofold::ZERO, |acc, (&x, &y)| acc.add(two_prod(x, y)))
}

/// `sum (a_i - b_i)^2` with the differences kept exact.
pub(super) fn sq_dist(a: &[f64], b: &[f64]) -> Twofold {
    a.iter().zip(b).fold(Twofold::ZERO, |acc, (&x, &y)| {
        let d = two_sum(x, -y);
        acc.add(d.mul(d))
    })
}
