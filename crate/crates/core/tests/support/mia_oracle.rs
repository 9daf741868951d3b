//! Exhaustive MIA split search: every admissible partition in the scan order
//! feature, threshold, then missing-left, missing-right and missing-apart,
//! with gains computed directly from the two child sums of squares.

use drate_core::forest::{best_mia_split, MiaSplit, MissingDir};
use drate_core::{seed, MaskedMatrix};
use rand::Rng;

fn sse(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - m).powi(2)).sum()
}

pub fn brute_force(rows: &[usize], x: &MaskedMatrix, y: &[f64], features: &[usize], min: usize) -> Option<MiaSplit> {
    let min = min.max(1);
    if rows.len() < 2 * min {
        return None;
    }
    let all: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let sst = sse(&all);
    if sst <= 0.0 {
        return None;
    }
    let tol = 1e-12 * sst;
    let mut best: Option<(MiaSplit, f64)> = None;
    let mut try_split = |split: MiaSplit| {
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for &i in rows {
            let v = x.get(i, split.feature).unwrap_or(f64::NAN);
            if split.goes_left(v) {
                l.push(y[i]);
            } else {
                r.push(y[i]);
            }
        }
        if l.len() < min || r.len() < min {
            return;
        }
        let gain = sst - sse(&l) - sse(&r);
        let bar = best.map_or(tol, |(_, g)| g + tol);
        if gain > bar {
            best = Some((split, gain));
        }
    };
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    for &j in &features {
        let mut vals: Vec<f64> = rows.iter().filter_map(|&i| x.get(i, j)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mut t = lo + (hi - lo) / 2.0;
            if t >= hi {
                t = lo;
            }
            for dir in [MissingDir::Left, MissingDir::Right] {
                try_split(MiaSplit { feature: j, threshold: Some(t), missing_dir: dir });
            }
        }
        let any_missing = rows.iter().any(|&i| x.get(i, j).is_none());
        if any_missing {
            try_split(MiaSplit { feature: j, threshold: None, missing_dir: MissingDir::Separate });
        }
    }
    best.map(|b| b.0)
}

/// Compare `best_mia_split` with [`brute_force`] on `count` random nodes of
/// at most 10 rows. Returns how many nodes had a split, or the first
/// disagreement.
pub fn check_random_nodes(seed_: u64, count: usize) -> Result<usize, String> {
    let mut rng = seed::rng(seed_, &[]);
    let mut found = 0;
    for case in 0..count {
        let n = 12;
        let p = rng.random_range(1..=4);
        let miss = [0.0, 0.2, 0.5][case % 3];
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| (!rng.random_bool(miss)).then(|| rng.random_range(0..5) as f64 * 0.5))
                    .collect()
            })
            .collect();
        let x = MaskedMatrix::from_rows(&rows).unwrap();
        // integer targets create exact ties between different partitions
        let y: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..3) as f64).collect()
        };
        let size = rng.random_range(1..=10);
        let mut node: Vec<usize> = (0..n).collect();
        for i in 0..size {
            let k = rng.random_range(i..n);
            node.swap(i, k);
        }
        node.truncate(size);
        let features: Vec<usize> = (0..p).filter(|_| rng.random_bool(0.75)).collect();
        let features = if features.is_empty() { vec![p - 1] } else { features };
        let min = rng.random_range(1..=3);

        let got = best_mia_split(&node, &x, &y, &features, min).map_err(|e| e.to_string())?;
        let want = brute_force(&node, &x, &y, &features, min);
        if got != want {
            return Err(format!("case {case}: node {node:?}, features {features:?}, min {min}: {got:?} vs {want:?}"));
        }
        found += got.is_some() as usize;
    }
    Ok(found)
}
