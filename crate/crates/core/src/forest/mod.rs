//! Regression forests that route missing covariates with MIA splits.
//!
//! Each tree is grown on a subsample drawn without replacement. With honesty
//! on, the subsample is halved: one half chooses the splits, the other fills
//! the leaves. Out-of-bag predictions for a training row only use trees whose
//! subsample excluded it (or, with sampling clusters, excluded its cluster).

mod split;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use split::{MiaSplit, MissingDir, SplitRule, GAIN_TIE_TOL};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::seed;
use split::{find_best_split, SplitScratch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub subsample_fraction: f64,
    /// Candidate features per split; `None` means `ceil(sqrt(#features))`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub honesty: bool,
    pub seed: u64,
    #[serde(skip)]
    pub split_rule: SplitRule,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            subsample_fraction: 0.5,
            mtry: None,
            min_node_size: 5,
            honesty: true,
            seed: 0,
            split_rule: SplitRule::Mia,
        }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subsample_fraction = {} not in (0, 1]",
                self.subsample_fraction
            )));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(Error::Config(format!("mtry = {m} not in 1..={n_features}")));
            }
        }
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        Ok(())
    }
}

/// Column-major feature storage with `NaN` for missing cells.
#[derive(Debug, Clone)]
pub(crate) struct FeatureMatrix {
    cols: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub(crate) fn from_masked(x: &MaskedMatrix) -> Self {
        let cols = (0..x.p())
            .map(|j| (0..x.n()).map(|i| x.get(i, j).unwrap_or(f64::NAN)).collect())
            .collect();
        Self { cols }
    }

    #[inline]
    pub(crate) fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    fn p(&self) -> usize {
        self.cols.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    split: Option<MiaSplit>,
    left: u32,
    right: u32,
    /// Mean target of the estimation rows reaching this node.
    value: f64,
    /// Number of estimation rows reaching this node.
    count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Leaf value for a raw row (`NaN` = missing). A leaf that received no
    /// estimation rows defers to its nearest populated ancestor.
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0usize;
        let mut value = self.nodes[0].value;
        loop {
            let node = &self.nodes[k];
            if node.count > 0 {
                value = node.value;
            }
            match node.split {
                None => return value,
                Some(s) => {
                    k = if s.goes_left(row[s.feature]) {
                        node.left as usize
                    } else {
                        node.right as usize
                    };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    /// Splits in depth-first (node index) order.
    pub fn splits(&self) -> Vec<MiaSplit> {
        self.nodes.iter().filter_map(|n| n.split).collect()
    }
}

fn mean_of(rows: &[usize], targets: &[f64]) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&i| targets[i]).sum::<f64>() / rows.len() as f64
    }
}

/// Stable in-place partition; returns the number of left rows.
fn partition(rows: &mut [usize], x: &FeatureMatrix, s: &MiaSplit, buf: &mut Vec<usize>) -> usize {
    buf.clear();
    let col = x.column(s.feature);
    let mut l = 0;
    for k in 0..rows.len() {
        let i = rows[k];
        if s.goes_left(col[i]) {
            rows[l] = i;
            l += 1;
        } else {
            buf.push(i);
        }
    }
    rows[l..].copy_from_slice(buf);
    l
}

fn grow_tree(
    x: &FeatureMatrix,
    targets: &[f64],
    mut structure: Vec<usize>,
    mut estimation: Option<Vec<usize>>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let p = x.p();
    let mtry = params.mtry_for(p);
    let mut nodes = Vec::new();
    let mut scratch = SplitScratch::new();
    let mut buf = Vec::new();
    // (node, structure range, estimation range)
    let mut stack = vec![(0usize, 0usize, structure.len(), 0usize, estimation.as_ref().map_or(0, Vec::len))];
    nodes.push(Node { split: None, left: 0, right: 0, value: 0.0, count: 0 });
    while let Some((id, s0, s1, e0, e1)) = stack.pop() {
        let (value, count) = match &estimation {
            Some(e) => (mean_of(&e[e0..e1], targets), e1 - e0),
            None => (mean_of(&structure[s0..s1], targets), s1 - s0),
        };
        nodes[id].value = value;
        nodes[id].count = count as u32;

        let mut features: Vec<usize> = sample(rng, p, mtry).into_vec();
        features.sort_unstable();
        let found = find_best_split(
            &structure[s0..s1],
            x,
            targets,
            &features,
            params.min_node_size,
            params.split_rule,
            &mut scratch,
        );
        let Some((split, _)) = found else { continue };
        let ls = partition(&mut structure[s0..s1], x, &split, &mut buf);
        let le = match &mut estimation {
            Some(e) => partition(&mut e[e0..e1], x, &split, &mut buf),
            None => 0,
        };
        let left = nodes.len();
        nodes.push(Node { split: None, left: 0, right: 0, value: 0.0, count: 0 });
        nodes.push(Node { split: None, left: 0, right: 0, value: 0.0, count: 0 });
        nodes[id].split = Some(split);
        nodes[id].left = left as u32;
        nodes[id].right = (left + 1) as u32;
        // right pushed first so the left subtree is numbered first
        stack.push((left + 1, s0 + ls, s1, e0 + le, e1));
        stack.push((left, s0, s0 + ls, e0, e0 + le));
    }
    Tree { nodes }
}

/// A fitted forest; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct MiaForest {
    trees: Vec<Tree>,
    /// Per tree, bitset over training rows that were in its subsample.
    inbag: Vec<Vec<u64>>,
    n_train: usize,
    n_features: usize,
    params: ForestParams,
}

fn bit(set: &[u64], i: usize) -> bool {
    set[i / 64] >> (i % 64) & 1 == 1
}

/// Forest predictions for the training rows using only trees that did not
/// see each row, plus the number of rows that fell back to the full forest.
#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    pub predictions: Vec<f64>,
    pub fallback_count: usize,
}

impl MiaForest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn is_inbag(&self, tree: usize, row: usize) -> bool {
        bit(&self.inbag[tree], row)
    }

    fn check_features(&self, x: &MaskedMatrix) -> Result<()> {
        if x.p() != self.n_features {
            return Err(Error::Dimension(format!(
                "forest trained on {} features, got {}",
                self.n_features,
                x.p()
            )));
        }
        Ok(())
    }
}

/// Fit with every row its own sampling unit.
pub fn fit_mia_forest(x: &MaskedMatrix, targets: &[f64], params: &ForestParams) -> Result<MiaForest> {
    fit_mia_forest_clustered(x, targets, params, None)
}

/// Fit a forest; `clusters[i]` names the sampling unit of row `i`. Rows of
/// one cluster are subsampled (and counted out-of-bag) together, which keeps
/// duplicated rows of a bootstrap resample out of each other's OOB trees.
pub fn fit_mia_forest_clustered(
    x: &MaskedMatrix,
    targets: &[f64],
    params: &ForestParams,
    clusters: Option<&[u64]>,
) -> Result<MiaForest> {
    let n = x.n();
    if targets.len() != n {
        return Err(Error::Dimension(format!("{n} rows, {} targets", targets.len())));
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(format!("target {i} is not finite")));
    }
    if x.p() == 0 {
        return Err(Error::InvalidInput("forest needs at least one feature".into()));
    }
    params.validate(x.p())?;
    if n < 2 * params.min_node_size.max(1) {
        return Err(Error::InvalidInput(format!(
            "{n} rows is too few for min_node_size {}",
            params.min_node_size
        )));
    }
    if params.split_rule == SplitRule::Numeric && x.has_missing() {
        return Err(Error::InvalidInput("numeric splitting needs complete features".into()));
    }
    if let Some(c) = clusters {
        if c.len() != n {
            return Err(Error::Dimension(format!("{n} rows, {} cluster ids", c.len())));
        }
    }

    // sampling units: distinct cluster ids in first-appearance order
    let (unit_of_row, unit_keys): (Vec<usize>, Vec<u64>) = match clusters {
        None => ((0..n).collect(), (0..n as u64).collect()),
        Some(c) => {
            let mut index = std::collections::HashMap::new();
            let mut keys = Vec::new();
            let unit = c
                .iter()
                .map(|&id| {
                    *index.entry(id).or_insert_with(|| {
                        keys.push(id);
                        keys.len() - 1
                    })
                })
                .collect();
            (unit, keys)
        }
    };
    let n_units = unit_keys.len();
    let mut rows_of_unit = vec![Vec::new(); n_units];
    for (i, &u) in unit_of_row.iter().enumerate() {
        rows_of_unit[u].push(i);
    }
    let sample_units = ((params.subsample_fraction * n_units as f64).ceil() as usize).clamp(1, n_units);
    let features = FeatureMatrix::from_masked(x);
    let words = n.div_ceil(64);

    let grown: Vec<(Tree, Vec<u64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            // Per-unit random keys make the subsample a function of unit
            // identity rather than of row order.
            let mut order: Vec<(u64, usize)> = (0..n_units)
                .map(|u| (seed::derive(params.seed, &[t as u64, unit_keys[u]]), u))
                .collect();
            order.select_nth_unstable(sample_units - 1);
            let mut chosen: Vec<(u64, usize)> = order[..sample_units].to_vec();
            chosen.sort_unstable();
            let mut inbag = vec![0u64; words];
            let mut rows_a = Vec::new();
            let mut rows_b = Vec::new();
            let half = chosen.len() / 2;
            for (rank, &(_, u)) in chosen.iter().enumerate() {
                for &i in &rows_of_unit[u] {
                    inbag[i / 64] |= 1 << (i % 64);
                    if params.honesty && rank >= half {
                        rows_b.push(i);
                    } else {
                        rows_a.push(i);
                    }
                }
            }
            rows_a.sort_unstable();
            rows_b.sort_unstable();
            let mut rng = seed::rng(params.seed, &[0x7472_6565, t as u64]);
            let estimation = params.honesty.then_some(rows_b);
            (grow_tree(&features, targets, rows_a, estimation, params, &mut rng), inbag)
        })
        .collect();
    let (trees, inbag) = grown.into_iter().unzip();
    Ok(MiaForest {
        trees,
        inbag,
        n_train: n,
        n_features: x.p(),
        params: params.clone(),
    })
}

/// Average of all trees.
pub fn predict(forest: &MiaForest, x_new: &MaskedMatrix) -> Result<Vec<f64>> {
    forest.check_features(x_new)?;
    let k = forest.trees.len() as f64;
    Ok((0..x_new.n())
        .into_par_iter()
        .map(|i| {
            let row = x_new.raw_row(i);
            forest.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
        })
        .collect())
}

/// Out-of-bag predictions on the training matrix.
pub fn oob_predict(forest: &MiaForest, x: &MaskedMatrix) -> Result<OobPrediction> {
    forest.check_features(x)?;
    if x.n() != forest.n_train {
        return Err(Error::Dimension(format!(
            "forest trained on {} rows, got {}",
            forest.n_train,
            x.n()
        )));
    }
    let results: Vec<(f64, bool)> = (0..x.n())
        .into_par_iter()
        .map(|i| {
            let row = x.raw_row(i);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (t, tree) in forest.trees.iter().enumerate() {
                if !bit(&forest.inbag[t], i) {
                    sum += tree.predict_row(row);
                    count += 1;
                }
            }
            if count > 0 {
                (sum / count as f64, false)
            } else {
                let all = forest.trees.iter().map(|t| t.predict_row(row)).sum::<f64>();
                (all / forest.trees.len() as f64, true)
            }
        })
        .collect();
    Ok(OobPrediction {
        fallback_count: results.iter().filter(|r| r.1).count(),
        predictions: results.into_iter().map(|r| r.0).collect(),
    })
}

/// Best MIA split of the node `node_rows` over `candidate_features`.
pub fn best_mia_split(
    node_rows: &[usize],
    x: &MaskedMatrix,
    targets: &[f64],
    candidate_features: &[usize],
    min_node_size: usize,
) -> Result<Option<MiaSplit>> {
    if node_rows.is_empty() {
        return Err(Error::Empty("split search on an empty node".into()));
    }
    if targets.len() != x.n() {
        return Err(Error::Dimension(format!("{} rows, {} targets", x.n(), targets.len())));
    }
    if let Some(&j) = candidate_features.iter().find(|&&j| j >= x.p()) {
        return Err(Error::Dimension(format!("feature {j} out of range")));
    }
    let mut features = candidate_features.to_vec();
    features.sort_unstable();
    features.dedup();
    let fm = FeatureMatrix::from_masked(x);
    Ok(find_best_split(
        node_rows,
        &fm,
        targets,
        &features,
        min_node_size,
        SplitRule::Mia,
        &mut SplitScratch::new(),
    )
    .map(|(s, _)| s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rows(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn separate_split_when_missingness_explains_targets() {
        // feature 1 missing exactly where the target is high
        let cells: Vec<Vec<Option<f64>>> = (0..12)
            .map(|i| vec![Some(i as f64 * 0.37 % 1.0), if i % 3 == 0 { None } else { Some(i as f64) }])
            .collect();
        let x = MaskedMatrix::from_rows(&cells).unwrap();
        let y: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 5.0 } else { 0.0 }).collect();
        let s = best_mia_split(&rows(12), &x, &y, &[0, 1], 2).unwrap().unwrap();
        assert_eq!(s, MiaSplit { feature: 1, threshold: None, missing_dir: MissingDir::Separate });
    }

    #[test]
    fn complete_node_matches_classical_split() {
        let x = MaskedMatrix::from_rows(&(0..8).map(|i| vec![Some(i as f64)]).collect::<Vec<_>>()).unwrap();
        let y = [0.0, 0.1, 0.0, 0.2, 3.0, 3.1, 2.9, 3.0];
        let s = best_mia_split(&rows(8), &x, &y, &[0], 1).unwrap().unwrap();
        assert_eq!(s.threshold, Some(3.5));
        assert_eq!(s.missing_dir, MissingDir::Left);
    }

    #[test]
    fn no_split_for_constant_targets_or_small_nodes() {
        let x = MaskedMatrix::from_rows(&(0..6).map(|i| vec![Some(i as f64)]).collect::<Vec<_>>()).unwrap();
        assert_eq!(best_mia_split(&rows(6), &x, &[1.0; 6], &[0], 1).unwrap(), None);
        let y = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(best_mia_split(&rows(6), &x, &y, &[0], 4).unwrap(), None);
        assert!(best_mia_split(&[], &x, &y, &[0], 1).is_err());
    }

    fn noisy_missing_indicator(n: usize, seed: u64) -> (MaskedMatrix, Vec<f64>) {
        let mut rng = seed::rng(seed, &[]);
        let mut cells = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let miss = rng.random_range(0.0..1.0) < 0.3;
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            cells.push(vec![if miss { None } else { Some(x1) }, Some(x2)]);
            let noise: f64 = rng.sample(StandardNormal);
            y.push(if miss { 1.0 } else { 0.0 } + 0.1 * noise);
        }
        (MaskedMatrix::from_rows(&cells).unwrap(), y)
    }

    #[test]
    fn learns_missingness_indicator_out_of_bag() {
        let (x, y) = noisy_missing_indicator(2000, 3);
        let params = ForestParams { n_trees: 100, seed: 1, ..Default::default() };
        let f = fit_mia_forest(&x, &y, &params).unwrap();
        let oob = oob_predict(&f, &x).unwrap();
        let truth: Vec<f64> = (0..2000).map(|i| if x.is_observed(i, 0) { 0.0 } else { 1.0 }).collect();
        let mse = oob.predictions.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 2000.0;
        assert!(mse <= 0.05, "oob mse {mse}");
        let bias = oob.predictions.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 2000.0;
        assert!(bias < 0.02);
    }

    #[test]
    fn constant_targets_predict_constant() {
        let (x, _) = noisy_missing_indicator(200, 4);
        let f = fit_mia_forest(&x, &[2.5; 200], &ForestParams { n_trees: 20, ..Default::default() }).unwrap();
        assert!(predict(&f, &x).unwrap().iter().all(|&v| v == 2.5));
        assert!(oob_predict(&f, &x).unwrap().predictions.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn same_seed_same_trees() {
        let (x, y) = noisy_missing_indicator(300, 5);
        let params = ForestParams { n_trees: 10, seed: 77, ..Default::default() };
        let a = fit_mia_forest(&x, &y, &params).unwrap();
        let b = fit_mia_forest(&x, &y, &params).unwrap();
        assert_eq!(a.trees(), b.trees());
        let c = fit_mia_forest(&x, &y, &ForestParams { seed: 78, ..params }).unwrap();
        assert_ne!(a.trees(), c.trees());
    }

    #[test]
    fn single_tree_oob_falls_back_for_inbag_rows() {
        let (x, y) = noisy_missing_indicator(100, 6);
        let f = fit_mia_forest(&x, &y, &ForestParams { n_trees: 1, ..Default::default() }).unwrap();
        let oob = oob_predict(&f, &x).unwrap();
        let inbag = (0..100).filter(|&i| f.is_inbag(0, i)).count();
        assert_eq!(oob.fallback_count, inbag);
        assert_eq!(inbag, 50);
    }

    #[test]
    fn all_missing_rows_are_routable() {
        let (x, y) = noisy_missing_indicator(300, 7);
        let f = fit_mia_forest(&x, &y, &ForestParams { n_trees: 30, ..Default::default() }).unwrap();
        let blank = MaskedMatrix::from_rows(&[vec![None, None]]).unwrap();
        let p = predict(&f, &blank).unwrap();
        assert!(p[0].is_finite());
        let empty = MaskedMatrix::new(0, 2, vec![], vec![]).unwrap();
        assert!(predict(&f, &empty).unwrap().is_empty());
        let wrong = MaskedMatrix::from_rows(&[vec![Some(1.0)]]).unwrap();
        assert!(predict(&f, &wrong).is_err());
    }

    #[test]
    fn hand_traced_single_tree() {
        // Four rows, no honesty, full subsample, one feature, min node 1.
        let x = MaskedMatrix::from_rows(&[vec![Some(1.0)], vec![Some(2.0)], vec![None], vec![Some(4.0)]]).unwrap();
        let y = [0.0, 0.0, 10.0, 1.0];
        let params = ForestParams {
            n_trees: 1,
            subsample_fraction: 1.0,
            honesty: false,
            min_node_size: 1,
            ..Default::default()
        };
        let f = fit_mia_forest(&x, &y, &params).unwrap();
        // root: missing vs observed isolates 10 (gain 75) beating any threshold
        // split; the observed side then splits at 3 with the missing
        // direction left by tie-break, leaves {1,2} -> 0 and {4} -> 1.
        let splits = f.trees()[0].splits();
        assert_eq!(splits[0], MiaSplit { feature: 0, threshold: None, missing_dir: MissingDir::Separate });
        assert_eq!(splits[1], MiaSplit { feature: 0, threshold: Some(3.0), missing_dir: MissingDir::Left });
        let p = predict(&f, &x).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 10.0, 1.0]);
        let probe = MaskedMatrix::from_rows(&[vec![Some(2.9)], vec![Some(3.1)]]).unwrap();
        assert_eq!(predict(&f, &probe).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn honesty_off_tracks_in_sample_fit() {
        let (x, y) = noisy_missing_indicator(500, 8);
        let params = ForestParams { n_trees: 300, honesty: false, subsample_fraction: 1.0, min_node_size: 5, ..Default::default() };
        let f = fit_mia_forest(&x, &y, &params).unwrap();
        let p = predict(&f, &x).unwrap();
        // leaf means of a full-sample tree: every tree sees all rows, so the
        // in-sample leaf means are the per-tree predictions themselves
        let leaf_means: Vec<f64> = (0..500).map(|i| f.trees()[0].predict_row(x.raw_row(i))).collect();
        let corr = pearson(&p, &leaf_means);
        assert!(corr >= 0.99, "correlation {corr}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn cart_reduction_on_complete_data() {
        let mut rng = seed::rng(11, &[]);
        let cells: Vec<Vec<Option<f64>>> = (0..300)
            .map(|_| (0..4).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect())
            .collect();
        let x = MaskedMatrix::from_rows(&cells).unwrap();
        let y: Vec<f64> = (0..300).map(|i| x.get(i, 0).unwrap() * 2.0 + x.get(i, 2).unwrap().sin()).collect();
        let mia = ForestParams { n_trees: 20, seed: 3, ..Default::default() };
        let numeric = ForestParams { split_rule: SplitRule::Numeric, ..mia.clone() };
        let a = fit_mia_forest(&x, &y, &mia).unwrap();
        let b = fit_mia_forest(&x, &y, &numeric).unwrap();
        assert_eq!(a.trees(), b.trees());
    }

    #[test]
    fn permutation_equivariance_of_oob() {
        let (x, y) = noisy_missing_indicator(200, 9);
        let ids: Vec<u64> = (0..200).collect();
        let params = ForestParams { n_trees: 50, seed: 2, ..Default::default() };
        let f = fit_mia_forest_clustered(&x, &y, &params, Some(&ids)).unwrap();
        let base = oob_predict(&f, &x).unwrap().predictions;

        let perm: Vec<usize> = (0..200).map(|i| (i * 37 + 11) % 200).collect();
        let xp = x.select_rows(&perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let idp: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
        let g = fit_mia_forest_clustered(&xp, &yp, &params, Some(&idp)).unwrap();
        let permuted = oob_predict(&g, &xp).unwrap().predictions;
        for (k, &i) in perm.iter().enumerate() {
            assert!((permuted[k] - base[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn clustered_duplicates_share_bag_membership() {
        let (x, y) = noisy_missing_indicator(100, 10);
        let dup: Vec<usize> = (0..100).chain(0..100).collect();
        let xd = x.select_rows(&dup);
        let yd: Vec<f64> = dup.iter().map(|&i| y[i]).collect();
        let ids: Vec<u64> = dup.iter().map(|&i| i as u64).collect();
        let f = fit_mia_forest_clustered(&xd, &yd, &ForestParams { n_trees: 10, ..Default::default() }, Some(&ids)).unwrap();
        for t in 0..10 {
            for i in 0..100 {
                assert_eq!(f.is_inbag(t, i), f.is_inbag(t, i + 100));
            }
        }
    }

    #[test]
    fn accepted_splits_strictly_reduce_error() {
        let (x, y) = noisy_missing_indicator(400, 12);
        let params = ForestParams { n_trees: 5, honesty: false, subsample_fraction: 1.0, ..Default::default() };
        let f = fit_mia_forest(&x, &y, &params).unwrap();
        for tree in f.trees() {
            for (k, node) in tree.nodes.iter().enumerate() {
                if node.split.is_some() {
                    let (l, r) = (&tree.nodes[node.left as usize], &tree.nodes[node.right as usize]);
                    assert!(l.value != r.value, "node {k} split without separating means");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = noisy_missing_indicator(8, 13);
        assert!(fit_mia_forest(&x, &y, &ForestParams::default()).is_err());
        let (x, y) = noisy_missing_indicator(50, 13);
        assert!(fit_mia_forest(&x, &y[..10], &ForestParams::default()).is_err());
        assert!(fit_mia_forest(&x, &y, &ForestParams { mtry: Some(3), ..Default::default() }).is_err());
        assert!(fit_mia_forest(&x, &y, &ForestParams { subsample_fraction: 0.0, ..Default::default() }).is_err());
    }
}
