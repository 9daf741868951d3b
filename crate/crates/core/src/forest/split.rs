//! Split search with missing incorporated in attributes (MIA).
//!
//! For a feature with some missing values in the node, three families of
//! partitions are considered:
//!
//! * [`MissingDir::Left`]: `{x <= t or missing}` vs `{x > t}`
//! * [`MissingDir::Right`]: `{x <= t}` vs `{x > t or missing}`
//! * [`MissingDir::Separate`]: `{missing}` vs `{observed}`
//!
//! The chosen split maximizes the reduction in summed squared error of the
//! targets. Candidates are scanned by feature index, then threshold, then
//! family in the order above, and a later candidate only wins if its gain is
//! larger by more than `1e-12` times the node's total sum of squares.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissingDir {
    Left,
    Right,
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaSplit {
    pub feature: usize,
    /// `None` for [`MissingDir::Separate`].
    pub threshold: Option<f64>,
    pub missing_dir: MissingDir,
}

impl MiaSplit {
    /// Routing rule; `value` is `NaN` when the feature is missing.
    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        let missing = value.is_nan();
        match (self.missing_dir, self.threshold) {
            (MissingDir::Separate, _) => missing,
            (MissingDir::Left, Some(t)) => missing || value <= t,
            (MissingDir::Right, Some(t)) => !missing && value <= t,
            (_, None) => missing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SplitRule {
    /// Missing values handled by the three MIA families.
    #[default]
    Mia,
    /// Plain `x <= t` splits; only valid on fully observed features.
    Numeric,
}

/// Relative tolerance under which two gains count as tied.
pub const GAIN_TIE_TOL: f64 = 1e-12;

/// Midpoint strictly below `hi` so that `lo <= t < hi`.
#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t >= hi {
        lo
    } else {
        t
    }
}

pub(crate) struct SplitScratch {
    pairs: Vec<(f64, f64)>,
}

impl SplitScratch {
    pub(crate) fn new() -> Self {
        Self { pairs: Vec::new() }
    }
}

/// Best split over `features` (ascending) for the node `rows`, or `None` when
/// no admissible split improves the fit.
pub(crate) fn find_best_split(
    rows: &[usize],
    x: &FeatureMatrix,
    targets: &[f64],
    features: &[usize],
    min_node_size: usize,
    rule: SplitRule,
    scratch: &mut SplitScratch,
) -> Option<(MiaSplit, f64)> {
    let m = rows.len();
    if m < 2 * min_node_size.max(1) {
        return None;
    }
    let mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / m as f64;
    let sst: f64 = rows.iter().map(|&i| (targets[i] - mean).powi(2)).sum();
    if sst <= 0.0 {
        return None;
    }
    let tol = GAIN_TIE_TOL * sst;
    let min = min_node_size.max(1);
    let mf = m as f64;
    let gain_of = |s_left: f64, n_left: usize| s_left * s_left * mf / (n_left as f64 * (m - n_left) as f64);

    let mut best: Option<(MiaSplit, f64)> = None;
    let consider = |split: MiaSplit, gain: f64, best: &mut Option<(MiaSplit, f64)>| {
        let current = best.map_or(tol, |(_, g)| g + tol);
        if gain > current {
            *best = Some((split, gain));
        }
    };

    for &j in features {
        let col = x.column(j);
        let pairs = &mut scratch.pairs;
        pairs.clear();
        let mut s_miss = 0.0;
        let mut n_miss = 0usize;
        for &i in rows {
            let v = col[i];
            let t = targets[i] - mean;
            if v.is_nan() {
                s_miss += t;
                n_miss += 1;
            } else {
                pairs.push((v, t));
            }
        }
        if rule == SplitRule::Numeric && n_miss > 0 {
            continue;
        }
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let n_obs = pairs.len();
        let mut prefix = 0.0;
        for k in 0..n_obs.saturating_sub(1) {
            prefix += pairs[k].1;
            let (lo, hi) = (pairs[k].0, pairs[k + 1].0);
            if lo == hi {
                continue;
            }
            let t = midpoint(lo, hi);
            let c = k + 1;
            // (a) missing with the left block
            let n_left = c + n_miss;
            if n_left >= min && m - n_left >= min {
                let split = MiaSplit { feature: j, threshold: Some(t), missing_dir: MissingDir::Left };
                consider(split, gain_of(prefix + s_miss, n_left), &mut best);
            }
            // (b) missing with the right block
            if rule == SplitRule::Mia && c >= min && m - c >= min {
                let split = MiaSplit { feature: j, threshold: Some(t), missing_dir: MissingDir::Right };
                consider(split, gain_of(prefix, c), &mut best);
            }
        }
        // (c) missing vs observed
        if rule == SplitRule::Mia && n_miss >= min && n_obs >= min {
            let split = MiaSplit { feature: j, threshold: None, missing_dir: MissingDir::Separate };
            consider(split, gain_of(s_miss, n_miss), &mut best);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_rules() {
        let a = MiaSplit { feature: 0, threshold: Some(1.0), missing_dir: MissingDir::Left };
        let b = MiaSplit { missing_dir: MissingDir::Right, ..a };
        let c = MiaSplit { feature: 0, threshold: None, missing_dir: MissingDir::Separate };
        assert!(a.goes_left(f64::NAN) && a.goes_left(1.0) && !a.goes_left(1.5));
        assert!(!b.goes_left(f64::NAN) && b.goes_left(0.5) && !b.goes_left(2.0));
        assert!(c.goes_left(f64::NAN) && !c.goes_left(-100.0));
    }

    #[test]
    fn midpoint_stays_below_upper() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(lo <= t && t < hi);
        assert_eq!(midpoint(1.0, 3.0), 2.0);
    }
}
