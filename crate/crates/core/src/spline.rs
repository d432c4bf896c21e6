//! Natural cubic splines on unit-spaced knots.

/// Natural cubic spline through `(i, y[i])` for `i = 0..n`.
///
/// Evaluation outside `[0, n-1]` clamps to the boundary value.
#[derive(Debug, Clone)]
pub struct NaturalSpline<'a> {
    y: &'a [f64],
    m: Vec<f64>,
}

impl<'a> NaturalSpline<'a> {
    pub fn new(y: &'a [f64]) -> Self {
        let n = y.len();
        let mut m = vec![0.0; n];
        if n >= 3 {
            // M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]), M[0] = M[n-1] = 0.
            let inner = n - 2;
            let mut c = vec![0.0; inner];
            let mut d = vec![0.0; inner];
            for j in 0..inner {
                let i = j + 1;
                let rhs = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]);
                if j == 0 {
                    c[j] = 1.0 / 4.0;
                    d[j] = rhs / 4.0;
                } else {
                    let denom = 4.0 - c[j - 1];
                    c[j] = 1.0 / denom;
                    d[j] = (rhs - d[j - 1]) / denom;
                }
            }
            m[inner] = d[inner - 1];
            for j in (0..inner - 1).rev() {
                m[j + 1] = d[j] - c[j] * m[j + 2];
            }
        }
        Self { y, m }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.y.len();
        if n == 0 {
            return f64::NAN;
        }
        let last = (n - 1) as f64;
        if n == 1 || t <= 0.0 {
            return self.y[0];
        }
        if t >= last {
            return self.y[n - 1];
        }
        let i = t.floor() as usize;
        let s = t - i as f64;
        if s == 0.0 {
            return self.y[i];
        }
        let r = 1.0 - s;
        r * self.y[i]
            + s * self.y[i + 1]
            + ((r * r * r - r) * self.m[i] + (s * s * s - s) * self.m[i + 1]) / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_at_knots() {
        let y = [1.0, -2.0, 0.5, 3.0, 3.0, -1.0];
        let s = NaturalSpline::new(&y);
        for (i, &v) in y.iter().enumerate() {
            assert_eq!(s.eval(i as f64), v);
        }
    }

    #[test]
    fn reproduces_linear_data() {
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 - 3.0).collect();
        let s = NaturalSpline::new(&y);
        for k in 0..90 {
            let t = k as f64 * 0.1;
            assert!((s.eval(t) - (2.0 * t - 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn clamps_outside_range() {
        let y = [4.0, 5.0, 7.0];
        let s = NaturalSpline::new(&y);
        assert_eq!(s.eval(-3.0), 4.0);
        assert_eq!(s.eval(2.5), 7.0);
    }

    #[test]
    fn natural_boundary_and_smoothness() {
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = NaturalSpline::new(&y);
        assert_eq!(s.m[0], 0.0);
        assert_eq!(s.m[11], 0.0);
        // continuous first derivative across interior knots
        let h = 1e-6;
        for i in 1..11 {
            let t = i as f64;
            let left = (s.eval(t) - s.eval(t - h)) / h;
            let right = (s.eval(t + h) - s.eval(t)) / h;
            assert!((left - right).abs() < 1e-4, "knot {i}");
        }
    }

    #[test]
    fn approximates_smooth_function() {
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.2).sin()).collect();
        let s = NaturalSpline::new(&y);
        for k in 20..360 {
            let t = k as f64 * 0.1;
            assert!((s.eval(t) - (t * 0.2).sin()).abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn offset_commutes(y in proptest::collection::vec(-5.0f64..5.0, 2..30), c in -10.0f64..10.0, t in 0.0f64..30.0) {
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let a = NaturalSpline::new(&y).eval(t) + c;
            let b = NaturalSpline::new(&shifted).eval(t);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
