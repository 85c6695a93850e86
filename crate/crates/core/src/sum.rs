//! Compensated accumulation.

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut k = Kahan::new();
    for x in it {
        k.add(x);
    }
    k.value()
}

/// Unevaluated sum `hi + lo` used for prefix sums whose differences must
/// keep full precision.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    #[inline]
    pub fn add_f64(self, x: f64) -> Self {
        let s = self.hi + x;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (x - bb);
        let lo = self.lo + err;
        let hi = s + lo;
        DoubleDouble { hi, lo: lo - (hi - s) }
    }

    #[inline]
    pub fn sub(self, o: Self) -> f64 {
        (self.hi - o.hi) + (self.lo - o.lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_recovers_small_terms() {
        let mut k = Kahan::new();
        k.add(1.0);
        for _ in 0..1000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-13)).abs() < 1e-28 + 1e-16);
        let naive: f64 = std::iter::once(1.0).chain(std::iter::repeat(1e-16).take(1000)).sum();
        assert_eq!(naive, 1.0);
    }

    #[test]
    fn double_double_difference() {
        let mut acc = DoubleDouble::default();
        let mut prefix = vec![acc];
        for i in 0..100 {
            acc = acc.add_f64(if i == 0 { 1e16 } else { 0.5 });
            prefix.push(acc);
        }
        assert_eq!(prefix[100].sub(prefix[1]), 49.5);
    }
}
