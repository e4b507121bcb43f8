use crate::error::{invalid, Result};

/// Viscosities (cP) and residual saturations of the water/oil pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluidProps {
    pub mu_w: f64,
    pub mu_o: f64,
    pub s_wc: f64,
    pub s_or: f64,
}

impl Default for FluidProps {
    fn default() -> Self {
        Self {
            mu_w: 1.0,
            mu_o: 1.5,
            s_wc: 0.2,
            s_or: 0.2,
        }
    }
}

impl FluidProps {
    pub fn new(mu_w: f64, mu_o: f64, s_wc: f64, s_or: f64) -> Result<Self> {
        if !(mu_w > 0.0 && mu_o > 0.0) {
            return Err(invalid(format!("viscosities must be positive, got {mu_w}, {mu_o}")));
        }
        if !(s_wc >= 0.0 && s_or >= 0.0 && s_wc + s_or < 1.0) {
            return Err(invalid(format!("residual saturations {s_wc}, {s_or} leave no mobile range")));
        }
        Ok(Self { mu_w, mu_o, s_wc, s_or })
    }

    pub fn s_max(&self) -> f64 {
        1.0 - self.s_or
    }

    pub fn clamp(&self, s: f64) -> f64 {
        s.clamp(self.s_wc, self.s_max())
    }

    /// Normalized saturation `s*` of the clamped value, and whether `s` was
    /// inside the mobile range.
    fn normalized(&self, s: f64) -> (f64, bool) {
        let inside = s > self.s_wc && s < self.s_max();
        ((self.clamp(s) - self.s_wc) / (1.0 - self.s_or - self.s_wc), inside)
    }
}

/// Corey quadratic mobilities `(λ_w, λ_o)` in 1/cP.
pub fn corey_mobilities(s: f64, props: &FluidProps) -> (f64, f64) {
    let (se, _) = props.normalized(s);
    (se * se / props.mu_w, (1.0 - se) * (1.0 - se) / props.mu_o)
}

pub fn total_mobility(s: f64, props: &FluidProps) -> f64 {
    let (lw, lo) = corey_mobilities(s, props);
    lw + lo
}

/// Water fractional flow `f_w = λ_w / (λ_w + λ_o)` and its derivative with
/// respect to `s`. Outside the mobile range the function is constant, so the
/// derivative is zero there.
pub fn fractional_flow(s: f64, props: &FluidProps) -> (f64, f64) {
    let (se, inside) = props.normalized(s);
    let a = se * se / props.mu_w;
    let b = (1.0 - se) * (1.0 - se) / props.mu_o;
    let total = a + b;
    let f = a / total;
    if !inside {
        return (f, 0.0);
    }
    let da = 2.0 * se / props.mu_w;
    let db = -2.0 * (1.0 - se) / props.mu_o;
    let dfdse = (da * b - a * db) / (total * total);
    (f, dfdse / (1.0 - props.s_or - props.s_wc))
}

/// Applies `fractional_flow` elementwise, writing values and derivatives.
pub fn fractional_flow_into(s: &[f64], props: &FluidProps, f: &mut [f64], df: &mut [f64]) {
    for ((si, fi), dfi) in s.iter().zip(f.iter_mut()).zip(df.iter_mut()) {
        let (v, d) = fractional_flow(*si, props);
        *fi = v;
        *dfi = d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mobility_endpoints_and_midpoint() {
        let p = FluidProps::default();
        assert_eq!(corey_mobilities(0.2, &p), (0.0, 1.0 / 1.5));
        assert_eq!(corey_mobilities(0.8, &p), (1.0, 0.0));
        let (lw, lo) = corey_mobilities(0.5, &p);
        assert_relative_eq!(lw, 0.25, epsilon = 1e-12);
        assert_relative_eq!(lo, 0.166667, epsilon = 1e-6);
        // clamped outside the mobile range
        assert_eq!(corey_mobilities(-1.0, &p), corey_mobilities(0.2, &p));
        assert_eq!(corey_mobilities(3.0, &p), corey_mobilities(0.8, &p));
    }

    #[test]
    fn fractional_flow_values() {
        let p = FluidProps::default();
        assert_eq!(fractional_flow(0.2, &p).0, 0.0);
        assert_eq!(fractional_flow(0.8, &p).0, 1.0);
        assert_relative_eq!(fractional_flow(0.5, &p).0, 0.6, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_props() {
        assert!(FluidProps::new(0.0, 1.0, 0.2, 0.2).is_err());
        assert!(FluidProps::new(1.0, 1.0, 0.5, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn derivative_matches_central_difference(s in 0.2001f64..0.7999) {
            let p = FluidProps::default();
            let h = 1e-6;
            let fd = (fractional_flow(s + h, &p).0 - fractional_flow(s - h, &p).0) / (2.0 * h);
            let d = fractional_flow(s, &p).1;
            prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1e-3), "{d} vs {fd}");
        }

        #[test]
        fn monotone_on_mobile_range(a in 0.2f64..0.8, b in 0.2f64..0.8) {
            let p = FluidProps::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fractional_flow(lo, &p).0 <= fractional_flow(hi, &p).0);
            let f = fractional_flow(a, &p).0;
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
