//! Retention probability bounds for a feature holding a `γ` share of the
//! total score mass in a sketch of `w` buckets by `c` slots.

use crate::eval::EvalError;

fn check_gamma(gamma: f64) -> Result<(), EvalError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(EvalError::DomainError(format!("gamma = {gamma} must lie in (0, 1)")))
    }
}

/// Distribution-free lower bound `1 - (1-γ) / ((c-1) γ w)`, clamped to
/// `[0, 1]`. Requires `c ≥ 2`.
pub fn retention_lower_bound(gamma: f64, w: usize, c: usize) -> Result<f64, EvalError> {
    check_gamma(gamma)?;
    if c < 2 {
        return Err(EvalError::DomainError(format!("c = {c}; the bound needs at least two slots per bucket")));
    }
    if w == 0 {
        return Err(EvalError::DomainError("w must be positive".into()));
    }
    let raw = 1.0 - (1.0 - gamma) / ((c - 1) as f64 * gamma * w as f64);
    Ok(raw.clamp(0.0, 1.0))
}

/// Search grid for the supremum over `η > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaGrid {
    pub min: f64,
    pub max: f64,
    /// Log-spaced grid points.
    pub points: usize,
    /// Golden-section refinement around the best grid point.
    pub refine: bool,
}

impl Default for EtaGrid {
    fn default() -> Self {
        Self { min: 1e-9, max: 200.0, points: 2048, refine: true }
    }
}

impl EtaGrid {
    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipfBound {
    /// Supremum clamped to `[0, 1]`.
    pub probability: f64,
    /// Maximizing `η`; `None` when the supremum is the `η → ∞` limit of 0.
    pub eta: Option<f64>,
}

/// Lower bound under a Zipf(`z`) score distribution with `n → ∞`:
///
/// `sup_{η>0} 3^{-η} (1 - η / ((c-1) γ (η w)^z))`
///
/// evaluated on a log-spaced grid with golden-section refinement. `η w` is
/// the number of hottest features excluded from the bucket, so the search
/// starts at `η = 1/w`; below that the objective falls as `z` grows.
pub fn zipf_retention_lower_bound(
    gamma: f64,
    z: f64,
    w: usize,
    c: usize,
    grid: &EtaGrid,
) -> Result<ZipfBound, EvalError> {
    check_gamma(gamma)?;
    if !(z > 1.0 && z.is_finite()) {
        return Err(EvalError::DomainError(format!("z = {z}; the Zipf bound needs z > 1")));
    }
    if w == 0 || c == 0 {
        return Err(EvalError::DomainError("w and c must be positive".into()));
    }
    if !(grid.min > 0.0 && grid.max > grid.min && grid.points >= 3) {
        return Err(EvalError::DomainError("eta grid needs 0 < min < max and at least 3 points".into()));
    }
    if c == 1 {
        return Ok(ZipfBound { probability: 0.0, eta: None });
    }
    // ln((c-1) γ w^z), so the inner ratio is exp((1-z) ln η - log_denom)
    let log_denom = ((c - 1) as f64 * gamma).ln() + z * (w as f64).ln();
    let objective = |log_eta: f64| {
        let eta = log_eta.exp();
        let ratio = ((1.0 - z) * log_eta - log_denom).exp();
        (-eta * 3f64.ln()).exp() * (1.0 - ratio)
    };

    let lo = grid.min.max(1.0 / w as f64).ln();
    let hi = grid.max.ln();
    if lo >= hi {
        return Err(EvalError::DomainError(format!("eta grid ends below 1/w = {}", 1.0 / w as f64)));
    }
    let step = (hi - lo) / (grid.points - 1) as f64;
    let at = |i: usize| lo + step * i as f64;
    let (best_i, mut best) = (0..grid.points)
        .map(|i| (i, objective(at(i))))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mut best_log_eta = at(best_i);

    if grid.refine {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = at(best_i.saturating_sub(1));
        let mut b = at((best_i + 1).min(grid.points - 1));
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let (mut f1, mut f2) = (objective(x1), objective(x2));
        for _ in 0..200 {
            if (b - a).abs() < 1e-13 {
                break;
            }
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = objective(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = objective(x1);
            }
        }
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f > best {
                best = f;
                best_log_eta = x;
            }
        }
    }

    if best <= 0.0 {
        return Ok(ZipfBound { probability: 0.0, eta: None });
    }
    Ok(ZipfBound { probability: best.min(1.0), eta: Some(best_log_eta.exp()) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecommendation {
    /// `1 + 1/(z-1)`.
    pub exact: f64,
    pub floor: usize,
    pub ceil: usize,
    pub nearest: usize,
}

/// Slots per bucket maximizing the Zipf bound at fixed memory `c·w`.
pub fn optimal_slots_per_bucket(z: f64) -> Result<SlotRecommendation, EvalError> {
    if !(z > 1.0 && z.is_finite()) {
        return Err(EvalError::DomainError(format!("z = {z}; needs z > 1")));
    }
    let exact = 1.0 + 1.0 / (z - 1.0);
    Ok(SlotRecommendation {
        exact,
        floor: exact.floor() as usize,
        ceil: exact.ceil() as usize,
        nearest: exact.round() as usize,
    })
}
