//! Noise and inertia schedules and the stochastic forward oracle.
//!
//! Unbiasedness holds by construction: additive noise is zero-mean Gaussian
//! drawn independently at each step, and minibatches are uniform draws with
//! replacement rescaled to the full sum.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::operators::CocoerciveMap;
use crate::spaces::BlockVector;

/// Violation label for non-summable conditional variance.
pub const SUMMABLE_VARIANCE: &str = "condition (ii): summable conditional variance";
/// Violation label for non-summable inertia.
pub const SUMMABLE_INERTIA: &str = "condition (iii): summable inertia";

/// Riemann zeta for `s > 1` by Euler-Maclaurin summation.
pub fn zeta(s: f64) -> f64 {
    if s <= 1.0 {
        return f64::INFINITY;
    }
    const N: usize = 32;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    let n = N as f64;
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    sum += s * n.powf(-s - 1.0) / 12.0;
    sum -= s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0;
    sum += s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * n.powf(-s - 5.0) / 30240.0;
    sum
}

/// Standard deviation of the additive noise, per coordinate, at step `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
pub enum NoiseSchedule {
    /// `sigma0 * (n + 1)^(-theta)`
    #[serde(rename = "poly")]
    Polynomial { sigma0: f64, theta: f64 },
    /// `sigma0 * rho^n`
    #[serde(rename = "geometric")]
    Geometric { sigma0: f64, rho: f64 },
    #[serde(rename = "zero")]
    Zero,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::Zero
    }
}

impl NoiseSchedule {
    pub fn sigma(&self, n: usize) -> f64 {
        match *self {
            NoiseSchedule::Polynomial { sigma0, theta } => sigma0 * ((n + 1) as f64).powf(-theta),
            NoiseSchedule::Geometric { sigma0, rho } => sigma0 * rho.powi(n as i32),
            NoiseSchedule::Zero => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            NoiseSchedule::Polynomial { sigma0, .. } | NoiseSchedule::Geometric { sigma0, .. } => sigma0 == 0.0,
            NoiseSchedule::Zero => true,
        }
    }

    /// Whether `sum_n sigma_n^2` is finite.
    pub fn summable_variance(&self) -> bool {
        self.is_zero()
            || match *self {
                NoiseSchedule::Polynomial { theta, .. } => 2.0 * theta > 1.0,
                NoiseSchedule::Geometric { rho, .. } => rho < 1.0,
                NoiseSchedule::Zero => true,
            }
    }

    /// `sum_{n >= 0} sigma_n^2`, infinite when the series diverges.
    pub fn variance_series_limit(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        match *self {
            NoiseSchedule::Polynomial { sigma0, theta } => sigma0 * sigma0 * zeta(2.0 * theta),
            NoiseSchedule::Geometric { sigma0, rho } if rho < 1.0 => sigma0 * sigma0 / (1.0 - rho * rho),
            _ => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSchedule::Polynomial { sigma0, theta } => {
                if !(sigma0 >= 0.0 && sigma0.is_finite() && theta.is_finite()) {
                    return config(format!("polynomial noise needs finite sigma0 >= 0 and theta, got {sigma0}, {theta}"));
                }
            }
            NoiseSchedule::Geometric { sigma0, rho } => {
                if !(sigma0 >= 0.0 && sigma0.is_finite() && rho >= 0.0 && rho.is_finite()) {
                    return config(format!("geometric noise needs finite sigma0 >= 0 and rho >= 0, got {sigma0}, {rho}"));
                }
            }
            NoiseSchedule::Zero => {}
        }
        Ok(())
    }
}

/// Extrapolation weights `alpha_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
pub enum InertiaSchedule {
    /// `alpha0 * (n + 1)^(-q)`
    #[serde(rename = "poly")]
    Polynomial { alpha0: f64, q: f64 },
    /// `alpha0 * rho^n`
    #[serde(rename = "geometric")]
    Geometric { alpha0: f64, rho: f64 },
    #[serde(rename = "zero")]
    Zero,
}

impl Default for InertiaSchedule {
    fn default() -> Self {
        InertiaSchedule::Zero
    }
}

impl InertiaSchedule {
    pub fn alpha(&self, n: usize) -> f64 {
        match *self {
            InertiaSchedule::Polynomial { alpha0, q } => alpha0 * ((n + 1) as f64).powf(-q),
            InertiaSchedule::Geometric { alpha0, rho } => alpha0 * rho.powi(n as i32),
            InertiaSchedule::Zero => 0.0,
        }
    }

    /// Largest value the schedule takes.
    pub fn sup(&self) -> f64 {
        match *self {
            InertiaSchedule::Polynomial { alpha0, q } if q < 0.0 => {
                if alpha0 == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            InertiaSchedule::Geometric { alpha0, rho } if rho > 1.0 => {
                if alpha0 == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            InertiaSchedule::Polynomial { alpha0, .. } | InertiaSchedule::Geometric { alpha0, .. } => alpha0,
            InertiaSchedule::Zero => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup() == 0.0
    }

    /// Whether `sum_n alpha_n` is finite.
    pub fn summable(&self) -> bool {
        self.is_zero()
            || match *self {
                InertiaSchedule::Polynomial { q, .. } => q > 1.0,
                InertiaSchedule::Geometric { rho, .. } => rho < 1.0,
                InertiaSchedule::Zero => true,
            }
    }

    /// `sum_{n >= 0} alpha_n`, infinite when the series diverges.
    pub fn series_limit(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        match *self {
            InertiaSchedule::Polynomial { alpha0, q } => alpha0 * zeta(q),
            InertiaSchedule::Geometric { alpha0, rho } if rho < 1.0 => alpha0 / (1.0 - rho),
            _ => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InertiaSchedule::Polynomial { alpha0, q } => {
                if !(alpha0 >= 0.0 && alpha0.is_finite() && q.is_finite()) {
                    return config(format!("polynomial inertia needs finite alpha0 >= 0 and q, got {alpha0}, {q}"));
                }
            }
            InertiaSchedule::Geometric { alpha0, rho } => {
                if !(alpha0 >= 0.0 && alpha0.is_finite() && rho >= 0.0 && rho.is_finite()) {
                    return config(format!("geometric inertia needs finite alpha0 >= 0 and rho >= 0, got {alpha0}, {rho}"));
                }
            }
            InertiaSchedule::Zero => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks the summability conditions on the noise and inertia schedules.
pub fn validate_schedules(noise: &NoiseSchedule, inertia: &InertiaSchedule) -> ScheduleReport {
    let mut violations = Vec::new();
    if let Err(e) = noise.validate() {
        violations.push(e.to_string());
    }
    if let Err(e) = inertia.validate() {
        violations.push(e.to_string());
    }
    if !noise.summable_variance() {
        violations.push(SUMMABLE_VARIANCE.to_string());
    }
    if !inertia.summable() {
        violations.push(SUMMABLE_INERTIA.to_string());
    }
    ScheduleReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// How the oracle perturbs the exact forward map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum OracleMode {
    /// `B w + sigma_n * N(0, I)`
    #[serde(rename = "additive")]
    Additive,
    /// Uniform minibatch of `ceil(b0 * (n + 1)^(2 theta))` summands for
    /// polynomial noise, `ceil(b0 * rho^(-2n))` for geometric noise.
    #[serde(rename = "minibatch")]
    Minibatch { b0: f64 },
}

impl Default for OracleMode {
    fn default() -> Self {
        OracleMode::Additive
    }
}

/// One step of SplitMix64.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds for `count` independent replicas, the successive SplitMix64
/// outputs started from `master`.
pub fn replica_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut state = master;
    (0..count).map(|_| splitmix64(&mut state)).collect()
}

/// Stochastic estimate `r_n` of `B w_n`. Owns its random stream.
#[derive(Clone, Debug)]
pub struct StochasticOracle {
    base: CocoerciveMap,
    noise: NoiseSchedule,
    mode: OracleMode,
    seed: u64,
    rng: ChaCha8Rng,
}

impl StochasticOracle {
    pub fn new(base: CocoerciveMap, noise: NoiseSchedule, mode: OracleMode, seed: u64) -> Result<Self> {
        noise.validate()?;
        if let OracleMode::Minibatch { b0 } = mode {
            if !base.is_finite_sum() {
                return config("minibatch sampling needs a finite-sum forward map");
            }
            if !(b0 > 0.0 && b0.is_finite()) {
                return config(format!("minibatch base size must be positive, got {b0}"));
            }
        }
        Ok(Self {
            base,
            noise,
            mode,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Exact oracle.
    pub fn exact(base: CocoerciveMap) -> Self {
        Self::new(base, NoiseSchedule::Zero, OracleMode::Additive, 0).expect("exact oracle is always valid")
    }

    pub fn base(&self) -> &CocoerciveMap {
        &self.base
    }

    pub fn noise(&self) -> &NoiseSchedule {
        &self.noise
    }

    pub fn mode(&self) -> &OracleMode {
        &self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Restarts the random stream.
    pub fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    /// Batch size at step `n`; `None` means the exact map is used.
    pub fn batch_size(&self, n: usize) -> Option<usize> {
        let OracleMode::Minibatch { b0 } = self.mode else {
            return None;
        };
        let total = self.base.num_terms();
        let growth = match self.noise {
            _ if self.noise.is_zero() => return None,
            NoiseSchedule::Polynomial { theta, .. } => ((n + 1) as f64).powf(2.0 * theta),
            NoiseSchedule::Geometric { rho, .. } => rho.powf(-2.0 * n as f64),
            NoiseSchedule::Zero => return None,
        };
        let b = (b0 * growth).ceil();
        if !(b < total as f64) {
            None
        } else {
            Some(b.max(1.0) as usize)
        }
    }

    /// Draws `r_n` at the point `w`.
    pub fn sample(&mut self, n: usize, w: &BlockVector) -> BlockVector {
        match self.mode {
            OracleMode::Additive => {
                let mut r = self.base.apply(w);
                let sigma = self.noise.sigma(n);
                if sigma != 0.0 {
                    let rng = &mut self.rng;
                    let noise = BlockVector::from_blocks(
                        r.dims()
                            .iter()
                            .map(|&d| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng)))
                            .collect(),
                    );
                    r.axpy(sigma, &noise);
                }
                r
            }
            OracleMode::Minibatch { .. } => match self.batch_size(n) {
                Some(b) => self.base.sampled_apply(w, b, &mut self.rng),
                None => self.base.apply(w),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_known_values() {
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
        assert!((zeta(4.0) - std::f64::consts::PI.powi(4) / 90.0).abs() < 1e-13);
        assert!((zeta(1.5) - 2.612_375_348_685_488).abs() < 1e-12);
    }

    #[test]
    fn schedule_examples() {
        let noise = NoiseSchedule::Polynomial { sigma0: 1.0, theta: 0.75 };
        let inertia = InertiaSchedule::Polynomial { alpha0: 0.3, q: 1.5 };
        assert!(validate_schedules(&noise, &inertia).ok);

        let bad = NoiseSchedule::Polynomial { sigma0: 1.0, theta: 0.5 };
        let report = validate_schedules(&bad, &InertiaSchedule::Zero);
        assert!(!report.ok);
        assert_eq!(report.violations, vec![SUMMABLE_VARIANCE.to_string()]);

        let g = NoiseSchedule::Geometric { sigma0: 1.0, rho: 0.9 };
        let gi = InertiaSchedule::Geometric { alpha0: 0.5, rho: 0.9 };
        assert!(validate_schedules(&g, &gi).ok);
    }

    #[test]
    fn sigma_at_three() {
        let noise = NoiseSchedule::Polynomial { sigma0: 1.0, theta: 1.0 };
        assert_eq!(noise.sigma(3), 0.25);
    }

    #[test]
    fn replica_seeds_are_distinct() {
        let seeds = replica_seeds(7, 64);
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 64);
        assert_eq!(replica_seeds(7, 3), seeds[..3].to_vec());
    }
}
