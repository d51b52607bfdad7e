//! Generalization-bound calculator: teacher / hybrid / packet-only bounds,
//! the labeling-cost trade-off, its closed-form optimal DPI fraction, and the
//! outperformance inequality. All big-O constants are taken as 1, so the
//! values are comparable functional forms rather than certified numbers.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// Student training corpus size, flows.
    pub n: u64,
    /// DPI-labeled fraction in (0,1].
    pub lambda: f64,
    /// Distillation learning-rate exponent in [0.5, 1].
    pub alpha: f64,
    /// Capacity of the flow-based (teacher) hypothesis set.
    pub cap_fl: f64,
    /// Capacity of the routing-policy (student) hypothesis set.
    pub cap_rp: f64,
    pub eps_fl: f64,
    pub eps_rp: f64,
    pub eps_pk: f64,
    /// Weight on the bound term in the total cost.
    pub k_weight: f64,
    /// DPI labeling cost per flow.
    pub c_dpi: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n < 1 {
            return fail("n must be >= 1");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return fail("lambda must be in (0,1]");
        }
        if !(0.5..=1.0).contains(&self.alpha) {
            return fail("alpha must be in [0.5, 1]");
        }
        if self.cap_fl <= 0.0 || self.cap_rp <= 0.0 {
            return fail("capacity measures must be positive");
        }
        if self.eps_fl < 0.0 || self.eps_rp < 0.0 || self.eps_pk < 0.0 {
            return fail("approximation errors must be nonnegative");
        }
        if self.k_weight <= 0.0 || self.c_dpi <= 0.0 {
            return fail("K and c_dpi must be positive");
        }
        Ok(())
    }
}

/// Teacher bound: `cap_fl / (n*lambda) + eps_fl` (fast rate, r = 1).
pub fn teacher_bound(p: &BoundParams) -> f64 {
    p.cap_fl / (p.n as f64 * p.lambda) + p.eps_fl
}

/// Hybrid bound: `(lambda^a * cap_rp + cap_fl) / (n*lambda)^a + eps_rp + eps_fl`.
pub fn fphtc_bound(p: &BoundParams) -> f64 {
    fphtc_bound_at(p, p.lambda)
}

fn fphtc_bound_at(p: &BoundParams, lambda: f64) -> f64 {
    let la = lambda.powf(p.alpha);
    let na = (p.n as f64).powf(p.alpha);
    (la * p.cap_rp + p.cap_fl) / (na * la) + p.eps_rp + p.eps_fl
}

/// Packet-only bound: `cap_rp / sqrt(n*lambda) + eps_pk` (slow rate, r = 1/2).
pub fn packet_bound(p: &BoundParams) -> f64 {
    p.cap_rp / (p.n as f64 * p.lambda).sqrt() + p.eps_pk
}

/// Weighted sum of the hybrid bound and the DPI labeling bill at the given
/// fraction: `K * bound_estimation + eps_rp + eps_fl + n*lambda*c_dpi`.
pub fn total_cost(p: &BoundParams, lambda: f64) -> f64 {
    let la = lambda.powf(p.alpha);
    let na = (p.n as f64).powf(p.alpha);
    p.k_weight * (la * p.cap_rp + p.cap_fl) / (na * la)
        + p.eps_rp
        + p.eps_fl
        + p.n as f64 * lambda * p.c_dpi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalLambda {
    pub lambda: f64,
    /// True when the closed form exceeded 1 and was clamped into (0,1].
    pub clamped: bool,
}

/// Closed-form minimizer of [`total_cost`]:
/// `(alpha*K*cap_fl / (n^(1+alpha) * c_dpi))^(1/(1+alpha))`, clamped to (0,1].
pub fn optimal_lambda(p: &BoundParams) -> OptimalLambda {
    let a = p.alpha;
    let radicand = a * p.k_weight * p.cap_fl / ((p.n as f64).powf(1.0 + a) * p.c_dpi);
    let raw = radicand.powf(1.0 / (1.0 + a));
    if raw > 1.0 {
        OptimalLambda {
            lambda: 1.0,
            clamped: true,
        }
    } else {
        OptimalLambda {
            lambda: raw,
            clamped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outperformance {
    pub fphtc_better: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Compares the hybrid bound (lhs) against the packet-only bound (rhs).
pub fn outperformance_check(p: &BoundParams) -> Outperformance {
    let lhs = fphtc_bound(p);
    let rhs = packet_bound(p);
    Outperformance {
        fphtc_better: lhs <= rhs,
        lhs,
        rhs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> BoundParams {
        BoundParams {
            n: 1000,
            lambda: 0.1,
            alpha: 0.5,
            cap_fl: 10.0,
            cap_rp: 1.0,
            eps_fl: 0.01,
            eps_rp: 0.01,
            eps_pk: 0.1,
            k_weight: 1.0,
            c_dpi: 0.001,
        }
    }

    #[test]
    fn teacher_bound_substitution() {
        let p = params();
        assert_relative_eq!(teacher_bound(&p), 10.0 / 100.0 + 0.01);
        let mut hi = p;
        hi.lambda = 1.0;
        assert!(teacher_bound(&hi) < teacher_bound(&p));
        let mut zero = p;
        zero.eps_fl = 0.0;
        zero.cap_fl = 1e-300;
        assert!(teacher_bound(&zero) < 1e-9);
    }

    #[test]
    fn fphtc_bound_substitution() {
        let p = BoundParams {
            n: 100,
            lambda: 1.0,
            alpha: 0.5,
            cap_fl: 10.0,
            cap_rp: 1.0,
            eps_fl: 0.0,
            eps_rp: 0.0,
            eps_pk: 0.0,
            k_weight: 1.0,
            c_dpi: 1.0,
        };
        assert_relative_eq!(fphtc_bound(&p), 1.1);
    }

    #[test]
    fn fphtc_bound_equals_pre_merge_form() {
        let p = params();
        let na = (p.n as f64).powf(p.alpha);
        let student = p.cap_rp / na + p.eps_rp;
        let teacher = p.cap_fl / (na * p.lambda.powf(p.alpha)) + p.eps_fl;
        assert_relative_eq!(fphtc_bound(&p), student + teacher, max_relative = 1e-12);
    }

    #[test]
    fn fphtc_bound_non_increasing_in_lambda() {
        let p = params();
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let mut q = p;
            q.lambda = i as f64 / 100.0;
            let b = fphtc_bound(&q);
            assert!(b <= prev + 1e-12);
            prev = b;
        }
    }

    #[test]
    fn packet_bound_values() {
        let p = BoundParams {
            n: 100,
            lambda: 1.0,
            eps_pk: 0.0,
            ..params()
        };
        assert_relative_eq!(packet_bound(&p), 0.1);
        let q = BoundParams {
            n: 10000,
            lambda: 1.0,
            eps_pk: 0.05,
            ..params()
        };
        assert_relative_eq!(packet_bound(&q), 0.01 + 0.05);
        // scaling n by 4 halves the estimation term
        let mut four = p;
        four.n = 400;
        assert_relative_eq!(packet_bound(&four), 0.05);
    }

    #[test]
    fn total_cost_substitution() {
        let p = BoundParams {
            n: 10,
            lambda: 1.0,
            alpha: 1.0,
            cap_fl: 1.0,
            cap_rp: 1.0,
            eps_fl: 0.0,
            eps_rp: 0.0,
            eps_pk: 0.0,
            k_weight: 1.0,
            c_dpi: 0.1,
        };
        assert_relative_eq!(total_cost(&p, 1.0), 1.2);
    }

    #[test]
    fn optimal_lambda_closed_form() {
        let p = params();
        let opt = optimal_lambda(&p);
        assert!(!opt.clamped);
        assert_relative_eq!(opt.lambda, 0.2924, epsilon = 1e-4);
        // grid argmin agrees
        let grid = 10_000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..=grid {
            let l = i as f64 / grid as f64;
            let c = total_cost(&p, l);
            if c < best.0 {
                best = (c, l);
            }
        }
        assert!((best.1 - opt.lambda).abs() <= 1.0 / grid as f64);
        assert!(total_cost(&p, opt.lambda) <= best.0 + 1e-12);
    }

    #[test]
    fn optimal_lambda_clamps() {
        let mut p = params();
        p.c_dpi = 1e-12;
        let opt = optimal_lambda(&p);
        assert!(opt.clamped);
        assert_eq!(opt.lambda, 1.0);
        // monotone decreasing in c_dpi
        let mut prev = 2.0;
        for c in [1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let mut q = params();
            q.c_dpi = c;
            let l = optimal_lambda(&q).lambda;
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn outperformance_regimes() {
        // eps_pk >> eps_fl + eps_rp with moderate lambda
        let good = BoundParams {
            n: 10_000,
            lambda: 0.1,
            alpha: 0.75,
            cap_fl: 50.0,
            cap_rp: 1.0,
            eps_fl: 0.01,
            eps_rp: 0.01,
            eps_pk: 0.3,
            k_weight: 1.0,
            c_dpi: 0.001,
        };
        let r = outperformance_check(&good);
        assert!(r.fphtc_better, "lhs={} rhs={}", r.lhs, r.rhs);
        assert_relative_eq!(r.lhs, fphtc_bound(&good));
        assert_relative_eq!(r.rhs, packet_bound(&good));

        // huge teacher capacity with no approximation advantage
        let bad = BoundParams {
            lambda: 1.0,
            cap_fl: 1e9,
            eps_pk: 0.02,
            eps_fl: 0.01,
            eps_rp: 0.01,
            ..params()
        };
        assert!(!outperformance_check(&bad).fphtc_better);
    }

    #[test]
    fn validation_ranges() {
        let mut p = params();
        assert!(p.validate().is_ok());
        p.alpha = 0.4;
        assert!(p.validate().is_err());
        p.alpha = 0.5;
        assert!(p.validate().is_ok());
        p.lambda = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn total_cost_convex_in_lambda() {
        let p = params();
        let grid = 1000;
        let f: Vec<f64> = (1..=grid)
            .map(|i| total_cost(&p, i as f64 / grid as f64))
            .collect();
        for w in f.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-9);
        }
    }
}
