use nalgebra::DVector;

use crate::error::{config, Result};
use crate::spaces::{BlockVector, Preconditioner};

/// Catalogue of separable convex functions with closed-form proximity
/// operators and conjugates. Vector-valued parameters are given per block.
#[derive(Clone, Debug, PartialEq)]
pub enum ProxFunction {
    Zero,
    /// `lambda * |y|_1`
    L1 { lambda: f64 },
    /// `(lambda / 2) * |y - center|^2`, with `center = 0` when absent.
    SquaredL2 {
        lambda: f64,
        center: Option<DVector<f64>>,
    },
    /// Indicator of `[lo, hi]^d`.
    Box { lo: f64, hi: f64 },
    /// Indicator of `{ y : |y|_inf <= radius }`.
    LinfBall { radius: f64 },
    /// `<y, c>`
    Affine { c: DVector<f64> },
}

/// Names accepted in configuration files.
pub const FAMILY_NAMES: [&str; 6] = ["zero", "l1", "sq_l2", "box", "linf_ball", "affine"];

pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn interval_normal_distance(y: f64, u: f64, lo: f64, hi: f64) -> f64 {
    if y < lo || y > hi {
        return f64::INFINITY;
    }
    if lo == hi {
        return 0.0;
    }
    if y == lo {
        u.max(0.0)
    } else if y == hi {
        (-u).max(0.0)
    } else {
        u.abs()
    }
}

fn abs_subdiff_distance(y: f64, u: f64, lambda: f64) -> f64 {
    if y > 0.0 {
        (u - lambda).abs()
    } else if y < 0.0 {
        (u + lambda).abs()
    } else {
        (u.abs() - lambda).max(0.0)
    }
}

impl ProxFunction {
    pub fn family_name(&self) -> &'static str {
        match self {
            ProxFunction::Zero => "zero",
            ProxFunction::L1 { .. } => "l1",
            ProxFunction::SquaredL2 { .. } => "sq_l2",
            ProxFunction::Box { .. } => "box",
            ProxFunction::LinfBall { .. } => "linf_ball",
            ProxFunction::Affine { .. } => "affine",
        }
    }

    /// Parameter sanity and per-block vector lengths.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let nonneg = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                config(format!("{}: {name} must be finite and nonnegative, got {v}", self.family_name()))
            }
        };
        match self {
            ProxFunction::Zero => Ok(()),
            ProxFunction::L1 { lambda } => nonneg("lambda", *lambda),
            ProxFunction::SquaredL2 { lambda, center } => {
                nonneg("lambda", *lambda)?;
                match center {
                    Some(c) if c.len() != dim => {
                        config(format!("sq_l2 center has length {}, block has {dim}", c.len()))
                    }
                    _ => Ok(()),
                }
            }
            ProxFunction::Box { lo, hi } => {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    config(format!("box bounds must satisfy lo <= hi, got [{lo}, {hi}]"))
                } else {
                    Ok(())
                }
            }
            ProxFunction::LinfBall { radius } => nonneg("radius", *radius),
            ProxFunction::Affine { c } if c.len() != dim => {
                config(format!("affine vector has length {}, block has {dim}", c.len()))
            }
            ProxFunction::Affine { .. } => Ok(()),
        }
    }

    /// Closed-form conjugate when it stays inside the catalogue.
    pub fn conjugate(&self) -> Option<ProxFunction> {
        match self {
            ProxFunction::L1 { lambda } => Some(ProxFunction::LinfBall { radius: *lambda }),
            ProxFunction::LinfBall { radius } => Some(ProxFunction::L1 { lambda: *radius }),
            _ => None,
        }
    }

    /// `true` when the subdifferential is strongly monotone (demiregular
    /// everywhere). Metadata only.
    pub fn strongly_convex(&self) -> bool {
        matches!(self, ProxFunction::SquaredL2 { lambda, .. } if *lambda > 0.0)
    }

    fn center_at(&self, j: usize) -> f64 {
        match self {
            ProxFunction::SquaredL2 { center: Some(c), .. } => c[j],
            ProxFunction::Affine { c } => c[j],
            _ => 0.0,
        }
    }

    /// `argmin_y f_j(y) + (x - y)^2 / (2 step)` for coordinate `j`.
    pub fn prox_coord(&self, j: usize, x: f64, step: f64) -> f64 {
        match self {
            ProxFunction::Zero => x,
            ProxFunction::L1 { lambda } => soft_threshold(x, lambda * step),
            ProxFunction::SquaredL2 { lambda, .. } => (x + step * lambda * self.center_at(j)) / (1.0 + step * lambda),
            ProxFunction::Box { lo, hi } => x.clamp(*lo, *hi),
            ProxFunction::LinfBall { radius } => x.clamp(-radius, *radius),
            ProxFunction::Affine { .. } => x - step * self.center_at(j),
        }
    }

    /// `argmin_u f*_j(u) + (x - u)^2 / (2 step)`, from the closed-form conjugate.
    pub fn conjugate_prox_coord(&self, j: usize, x: f64, step: f64) -> f64 {
        match self {
            // f* = indicator of {0}
            ProxFunction::Zero => 0.0,
            // f* = indicator of the lambda-ball
            ProxFunction::L1 { lambda } => x.clamp(-lambda, *lambda),
            // f*(u) = <u, c> + |u|^2 / (2 lambda); lambda = 0 gives indicator of {c}
            ProxFunction::SquaredL2 { lambda, .. } => {
                if *lambda == 0.0 {
                    self.center_at(j)
                } else {
                    (x - step * self.center_at(j)) / (1.0 + step / lambda)
                }
            }
            // f* = support function of [lo, hi]
            ProxFunction::Box { lo, hi } => {
                if x > step * hi {
                    x - step * hi
                } else if x < step * lo {
                    x - step * lo
                } else {
                    0.0
                }
            }
            // f* = radius * |u|_1
            ProxFunction::LinfBall { radius } => soft_threshold(x, radius * step),
            // f* = indicator of {c}
            ProxFunction::Affine { .. } => self.center_at(j),
        }
    }

    /// Function value on one block (`+inf` outside an indicator's set).
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match self {
            ProxFunction::Zero => 0.0,
            ProxFunction::L1 { lambda } => lambda * y.iter().map(|v| v.abs()).sum::<f64>(),
            ProxFunction::SquaredL2 { lambda, center } => {
                let d = match center {
                    Some(c) => y - c,
                    None => y.clone(),
                };
                0.5 * lambda * d.norm_squared()
            }
            ProxFunction::Box { lo, hi } => {
                if y.iter().all(|v| v >= lo && v <= hi) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::LinfBall { radius } => {
                if y.iter().all(|v| v.abs() <= *radius) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::Affine { c } => y.dot(c),
        }
    }

    /// Euclidean distance from `u` to `subdiff f(y)`; `+inf` when `y` is
    /// outside the domain.
    pub fn subdiff_distance(&self, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..y.len() {
            let d = match self {
                ProxFunction::Zero => u[j].abs(),
                ProxFunction::L1 { lambda } => abs_subdiff_distance(y[j], u[j], *lambda),
                ProxFunction::SquaredL2 { lambda, .. } => (u[j] - lambda * (y[j] - self.center_at(j))).abs(),
                ProxFunction::Box { lo, hi } => interval_normal_distance(y[j], u[j], *lo, *hi),
                ProxFunction::LinfBall { radius } => interval_normal_distance(y[j], u[j], -radius, *radius),
                ProxFunction::Affine { .. } => (u[j] - self.center_at(j)).abs(),
            };
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Euclidean distance from `u` to `subdiff f*(y)`.
    pub fn conjugate_subdiff_distance(&self, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..y.len() {
            let d = match self {
                ProxFunction::Zero => {
                    if y[j] == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
                ProxFunction::L1 { lambda } => interval_normal_distance(y[j], u[j], -lambda, *lambda),
                ProxFunction::SquaredL2 { lambda, .. } => {
                    if *lambda == 0.0 {
                        if y[j] == self.center_at(j) {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        (u[j] - self.center_at(j) - y[j] / lambda).abs()
                    }
                }
                ProxFunction::Box { lo, hi } => {
                    if y[j] > 0.0 {
                        (u[j] - hi).abs()
                    } else if y[j] < 0.0 {
                        (u[j] - lo).abs()
                    } else {
                        (lo - u[j]).max(u[j] - hi).max(0.0)
                    }
                }
                ProxFunction::LinfBall { radius } => abs_subdiff_distance(y[j], u[j], *radius),
                ProxFunction::Affine { .. } => {
                    if y[j] == self.center_at(j) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
            };
            acc += d * d;
        }
        acc.sqrt()
    }
}

fn blockwise(
    x: &BlockVector,
    metric: &Preconditioner,
    rule: impl Fn(usize, f64, f64) -> f64,
    step_is_weight: bool,
) -> Result<BlockVector> {
    metric.check_compatible(&x.dims())?;
    let blocks = x
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            DVector::from_fn(b.len(), |j, _| {
                let w = metric.weight(i, j);
                rule(j, b[j], if step_is_weight { w } else { 1.0 / w })
            })
        })
        .collect();
    Ok(BlockVector::from_blocks(blocks))
}

fn validate_blocks(f: &ProxFunction, x: &BlockVector) -> Result<()> {
    for d in x.dims() {
        f.validate(d)?;
    }
    Ok(())
}

/// `argmin_y f(y) + 1/2 |x - y|^2_metric`, with `f` applied to every block.
pub fn prox_weighted(f: &ProxFunction, metric: &Preconditioner, x: &BlockVector) -> Result<BlockVector> {
    validate_blocks(f, x)?;
    blockwise(x, metric, |j, v, w| f.prox_coord(j, v, w), false)
}

/// `prox_{g*}` in the metric induced by `metric^{-1}`, i.e. the resolvent of
/// `metric * subdiff g*`, from the closed-form conjugate.
pub fn prox_conjugate(g: &ProxFunction, metric: &Preconditioner, x: &BlockVector) -> Result<BlockVector> {
    validate_blocks(g, x)?;
    blockwise(x, metric, |j, v, w| g.conjugate_prox_coord(j, v, w), true)
}

/// Same operator as [`prox_conjugate`] through the generalized Moreau
/// decomposition `x - W prox_g^W(W^{-1} x)`.
pub fn prox_conjugate_via_decomposition(
    g: &ProxFunction,
    metric: &Preconditioner,
    x: &BlockVector,
) -> Result<BlockVector> {
    let scaled = metric.apply_inverse(x);
    let p = prox_weighted(g, metric, &scaled)?;
    let mut out = x.clone();
    out.axpy(-1.0, &metric.apply(&p));
    Ok(out)
}

/// `|prox_f(x) + prox_{f*}(x) - x|` in the unit metric.
pub fn moreau_check(f: &ProxFunction, x: &BlockVector) -> Result<f64> {
    let id = Preconditioner::identity();
    let p = prox_weighted(f, &id, x)?;
    let q = prox_conjugate(f, &id, x)?;
    let mut r = &p + &q;
    r.axpy(-1.0, x);
    Ok(r.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_argmin(obj: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        // coarse scan then local refinement
        let mut best = lo;
        let mut best_val = f64::INFINITY;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..6 {
            let n = 2000;
            for k in 0..=n {
                let t = a + (b - a) * k as f64 / n as f64;
                let v = obj(t);
                if v < best_val {
                    best_val = v;
                    best = t;
                }
            }
            let h = (b - a) / n as f64;
            a = best - 2.0 * h;
            b = best + 2.0 * h;
        }
        best
    }

    #[test]
    fn zero_prox_is_identity() {
        let x = BlockVector::single(vec![3.0, -1.0]);
        assert_eq!(prox_weighted(&ProxFunction::Zero, &Preconditioner::identity(), &x).unwrap(), x);
    }

    #[test]
    fn box_prox_projects() {
        let x = BlockVector::single(vec![2.0, -0.5]);
        let f = ProxFunction::Box { lo: -1.0, hi: 1.0 };
        let p = prox_weighted(&f, &Preconditioner::identity(), &x).unwrap();
        assert_eq!(p, BlockVector::single(vec![1.0, -0.5]));
    }

    #[test]
    fn weighted_l1_prox_matches_grid_search() {
        let f = ProxFunction::L1 { lambda: 1.0 };
        let metric = Preconditioner::diagonal(vec![vec![2.0]]).unwrap();
        let x = BlockVector::single(vec![3.0]);
        let p = prox_weighted(&f, &metric, &x).unwrap();
        let oracle = grid_argmin(|y| y.abs() + 0.5 * 2.0 * (3.0 - y).powi(2), -5.0, 5.0);
        assert!((p.block(0)[0] - 2.5).abs() < 1e-15);
        assert!((p.block(0)[0] - oracle).abs() < 1e-6);
    }

    #[test]
    fn conjugate_of_l1_is_ball_projection() {
        let g = ProxFunction::L1 { lambda: 1.0 };
        let id = Preconditioner::identity();
        let inside = prox_conjugate(&g, &id, &BlockVector::single(vec![0.3])).unwrap();
        assert_eq!(inside.block(0)[0], 0.3);
        let clamped = prox_conjugate(&g, &id, &BlockVector::single(vec![5.0])).unwrap();
        assert_eq!(clamped.block(0)[0], 1.0);
    }

    #[test]
    fn squared_l2_conjugate_paths_agree() {
        let g = ProxFunction::SquaredL2 { lambda: 1.0, center: None };
        let metric = Preconditioner::scalar(0.37, 1).unwrap();
        let x = BlockVector::single(vec![1.3, -2.2, 0.05, 7.0]);
        let a = prox_conjugate(&g, &metric, &x).unwrap();
        let b = prox_conjugate_via_decomposition(&g, &metric, &x).unwrap();
        assert!((&a - &b).norm() <= 1e-10);
    }

    #[test]
    fn moreau_examples() {
        let f = ProxFunction::L1 { lambda: 1.0 };
        assert_eq!(moreau_check(&f, &BlockVector::single(vec![0.3])).unwrap(), 0.0);
        assert_eq!(moreau_check(&f, &BlockVector::single(vec![3.0])).unwrap(), 0.0);
    }

    #[test]
    fn conjugate_pairs() {
        assert_eq!(
            ProxFunction::L1 { lambda: 2.0 }.conjugate(),
            Some(ProxFunction::LinfBall { radius: 2.0 })
        );
        assert_eq!(ProxFunction::Zero.conjugate(), None);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(ProxFunction::L1 { lambda: -1.0 }.validate(3).is_err());
        assert!(ProxFunction::Box { lo: 1.0, hi: 0.0 }.validate(3).is_err());
        assert!(ProxFunction::Affine { c: DVector::zeros(2) }.validate(3).is_err());
    }

    #[test]
    fn subdiff_distance_of_l1_at_kink() {
        let f = ProxFunction::L1 { lambda: 1.0 };
        let y = DVector::from_vec(vec![0.0, 2.0]);
        let u = DVector::from_vec(vec![0.5, 1.0]);
        assert_eq!(f.subdiff_distance(&y, &u), 0.0);
        let u = DVector::from_vec(vec![1.5, 1.0]);
        assert!((f.subdiff_distance(&y, &u) - 0.5).abs() < 1e-15);
    }
}
