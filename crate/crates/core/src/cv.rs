//! K-fold cross-validation for λ and repeated-CV selection aggregation.
//!
//! The λ grid is computed once on the full data, every fold is fitted along
//! the shared grid (warm-started), out-of-fold misclassification is averaged
//! per grid point, and the winning λ (ties go to the larger, more
//! parsimonious value) is refit on all rows.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde_json::json;

use crate::data::{split, BinaryResponse, LayerStack};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::solver::{fit_path_at, lambda_grid, lambda_max_per_feature, EnetConfig, EnetFit};

/// Outcome of one cross-validated λ search.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambda_grid: Vec<f64>,
    /// Out-of-fold misclassification rate, one row per fold, one column per
    /// grid point. NaN marks a grid point that failed inside a fold.
    pub mr_per_fold: Vec<Vec<f64>>,
    pub mean_mr: Vec<f64>,
    pub chosen_lambda: f64,
    pub chosen_index: usize,
    /// Refit on the full data at `chosen_lambda`.
    pub chosen_fit: EnetFit,
    /// Penalised columns (weight > 0) with nonzero coefficient in the chosen fit.
    pub selected_set: BTreeSet<usize>,
    pub warnings: Vec<String>,
}

impl CvResult {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "lambda_grid": self.lambda_grid,
            "mr_per_fold": self.mr_per_fold,
            "mean_mr": self.mean_mr,
            "chosen_lambda": self.chosen_lambda,
            "chosen_index": self.chosen_index,
            "chosen_fit": self.chosen_fit.to_json(),
            "selected_set": self.selected_set,
            "warnings": self.warnings,
        })
    }
}

/// Selection sets collected over repeated CV runs.
#[derive(Debug, Clone)]
pub struct RepeatedSelection {
    pub repeats: usize,
    pub per_repeat_sets: Vec<BTreeSet<usize>>,
    /// Largest single-repeat set (ties: first occurrence).
    pub maximal_set: BTreeSet<usize>,
    /// Most frequently recurring exact set (ties: smaller cardinality, then
    /// first occurrence).
    pub modal_set: BTreeSet<usize>,
    /// How many repeats selected each column.
    pub frequency: BTreeMap<usize, usize>,
}

impl RepeatedSelection {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "repeats": self.repeats,
            "per_repeat_sets": self.per_repeat_sets,
            "maximal_set": self.maximal_set,
            "modal_set": self.modal_set,
            "frequency": self.frequency.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<String, usize>>(),
        })
    }

    /// Frequency table as CSV rows `column_name,layer,count`.
    pub fn frequency_csv(&self, stack: &LayerStack) -> String {
        let mut out = String::from("column_name,layer,count\n");
        for (&col, &count) in &self.frequency {
            let layer = stack
                .layer_of(col)
                .map(|i| stack.layers[i].name.clone())
                .unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", stack.column_names[col], layer, count));
        }
        out
    }
}

/// Stratified fold assignment: per-class counts across folds differ by at
/// most one; deterministic given the seed.
pub fn make_folds(y: &BinaryResponse, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = y.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("{k} folds but only {n} rows")));
    }
    let mut rng = rng_from(seed);
    let mut assignment = vec![0usize; n];
    let mut offset = 0usize;
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| y.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = (pos + offset) % k;
        }
        offset += idx.len();
    }
    Ok(assignment)
}

/// Fraction of rows where the thresholded prediction (p ≥ 0.5) disagrees
/// with the label.
pub fn misclassification_rate(fit: &EnetFit, stack: &LayerStack, y: &BinaryResponse) -> Result<f64> {
    let n = stack.n_rows();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidInput("empty or mismatched evaluation data".into()));
    }
    let probs = fit.predict_stack(stack);
    let wrong = probs
        .iter()
        .zip(y.labels.iter())
        .filter(|(&p, &label)| u8::from(p >= 0.5) != label)
        .count();
    Ok(wrong as f64 / n as f64)
}

fn selected_of(fit: &EnetFit, weights: &[f64]) -> BTreeSet<usize> {
    fit.coefficients
        .iter()
        .enumerate()
        .filter(|(j, b)| **b != 0.0 && weights[*j] > 0.0)
        .map(|(j, _)| j)
        .collect()
}

/// Cross-validate λ along the shared full-data grid.
///
/// `config.lambda` is ignored; α, penalty weights and path parameters are
/// taken from `config`. A fold that fails is dropped with a warning as long
/// as at least K−1 folds succeed.
pub fn cv_lambda(
    stack: &LayerStack,
    y: &BinaryResponse,
    config: &EnetConfig,
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let p = stack.n_cols();
    let weights = if config.penalty_weights.is_empty() {
        vec![1.0; p]
    } else {
        config.penalty_weights.clone()
    };
    let alphas = match &config.per_feature_alpha {
        Some(a) => a.clone(),
        None => vec![config.alpha; p],
    };
    let lmax = lambda_max_per_feature(stack, y, &alphas, &weights)?;
    if lmax <= 0.0 || !lmax.is_finite() {
        return Err(Error::DegenerateDesign(format!("lambda_max = {lmax}")));
    }
    let ratio = config
        .lambda_min_ratio
        .unwrap_or(if stack.n_rows() < p { 1e-2 } else { 1e-4 });
    let grid = lambda_grid(lmax, config.path_length, ratio);

    let folds = make_folds(y, k, seed)?;
    let mut warnings = Vec::new();
    let mut mr_per_fold: Vec<Vec<f64>> = Vec::new();
    let mut failed_folds = 0usize;
    for fold in 0..k {
        match cv_one_fold(stack, y, config, &grid, &folds, fold) {
            Ok(mr) => mr_per_fold.push(mr),
            Err(e) => {
                failed_folds += 1;
                warnings.push(format!("fold {fold} dropped: {e}"));
                if failed_folds > 1 {
                    return Err(Error::FoldDegenerate(format!(
                        "{failed_folds} folds failed out of {k}: {e}"
                    )));
                }
            }
        }
    }

    let mut mean_mr = vec![f64::INFINITY; grid.len()];
    for (l, mm) in mean_mr.iter_mut().enumerate() {
        let vals: Vec<f64> = mr_per_fold
            .iter()
            .map(|row| row[l])
            .filter(|v| v.is_finite())
            .collect();
        if !vals.is_empty() {
            *mm = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }

    // Grid is stored by decreasing λ; strict improvement keeps the largest λ
    // among ties.
    let mut chosen_index = 0usize;
    for (l, &m) in mean_mr.iter().enumerate() {
        if m < mean_mr[chosen_index] {
            chosen_index = l;
        }
    }
    if !mean_mr[chosen_index].is_finite() {
        return Err(Error::Solver("every grid point failed in every fold".into()));
    }

    // Refit on the full data, warm-starting down the grid to the winner.
    let full_path = fit_path_at(stack, y, config, &grid[..=chosen_index])?;
    let chosen_fit = full_path
        .last()
        .and_then(|pt| pt.fit.clone())
        .ok_or_else(|| Error::Solver("full-data refit failed at chosen lambda".into()))?;
    let selected_set = selected_of(&chosen_fit, &weights);

    Ok(CvResult {
        chosen_lambda: grid[chosen_index],
        lambda_grid: grid,
        mr_per_fold,
        mean_mr,
        chosen_index,
        chosen_fit,
        selected_set,
        warnings,
    })
}

fn cv_one_fold(
    stack: &LayerStack,
    y: &BinaryResponse,
    config: &EnetConfig,
    grid: &[f64],
    folds: &[usize],
    fold: usize,
) -> Result<Vec<f64>> {
    let ((train_x, train_y), (test_x, test_y)) = split(stack, y, folds, fold)?;
    let path = fit_path_at(&train_x, &train_y, config, grid)?;
    let mut out = Vec::with_capacity(grid.len());
    for point in &path {
        match &point.fit {
            Some(fit) => out.push(misclassification_rate(fit, &test_x, &test_y)?),
            None => out.push(f64::NAN),
        }
    }
    Ok(out)
}

/// Run [`cv_lambda`] under `repeats` distinct fold seeds and aggregate the
/// selected sets.
pub fn repeated_cv_selection(
    stack: &LayerStack,
    y: &BinaryResponse,
    config: &EnetConfig,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<RepeatedSelection> {
    if repeats < 1 {
        return Err(Error::InvalidInput("repeats must be >= 1".into()));
    }
    let mut per_repeat_sets = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let result = cv_lambda(stack, y, config, k, derive_seed(seed, &[0x5e1ec7, r as u64]))?;
        per_repeat_sets.push(result.selected_set);
    }

    let max_len = per_repeat_sets.iter().map(|s| s.len()).max().unwrap_or(0);
    let maximal_set = per_repeat_sets
        .iter()
        .find(|s| s.len() == max_len)
        .cloned()
        .unwrap_or_default();

    let mut counts: Vec<(usize, usize)> = Vec::new(); // (first occurrence index, count)
    let mut seen: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for (i, s) in per_repeat_sets.iter().enumerate() {
        let key: Vec<usize> = s.iter().copied().collect();
        match seen.get(&key) {
            Some(&slot) => counts[slot].1 += 1,
            None => {
                seen.insert(key, counts.len());
                counts.push((i, 1));
            }
        }
    }
    let modal_set = counts
        .iter()
        .max_by(|&&(ia, ca), &&(ib, cb)| {
            ca.cmp(&cb)
                .then_with(|| per_repeat_sets[ib].len().cmp(&per_repeat_sets[ia].len()))
                .then_with(|| ib.cmp(&ia))
        })
        .map(|&(i, _)| per_repeat_sets[i].clone())
        .unwrap_or_default();

    let mut frequency: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &per_repeat_sets {
        for &col in s {
            *frequency.entry(col).or_insert(0) += 1;
        }
    }

    Ok(RepeatedSelection {
        repeats,
        per_repeat_sets,
        maximal_set,
        modal_set,
        frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    use crate::solver::sigmoid;

    fn noise_problem(seed: u64, n: usize, p: usize) -> (LayerStack, BinaryResponse) {
        let mut rng = rng_from(seed);
        let matrix = Array2::from_shape_fn((n, p), |_| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let stack = LayerStack::single_layer(matrix).unwrap();
        let (stack, _) = crate::data::standardize(&stack).unwrap();
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        (stack, BinaryResponse::new(labels).unwrap())
    }

    fn signal_problem(seed: u64, n: usize, p: usize, beta: f64) -> (LayerStack, BinaryResponse) {
        let mut rng = rng_from(seed);
        let matrix = Array2::from_shape_fn((n, p), |_| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let stack = LayerStack::single_layer(matrix).unwrap();
        let (stack, _) = crate::data::standardize(&stack).unwrap();
        let labels = (0..n)
            .map(|i| u8::from(rng.random::<f64>() < sigmoid(beta * stack.matrix[[i, 0]])))
            .collect();
        (stack, BinaryResponse::new(labels).unwrap())
    }

    #[test]
    fn folds_exactly_stratified_when_divisible() {
        let y = BinaryResponse::new([vec![0u8; 10], vec![1u8; 10]].concat()).unwrap();
        let folds = make_folds(&y, 10, 7).unwrap();
        for fold in 0..10 {
            let ones = (0..20)
                .filter(|&i| folds[i] == fold && y.labels[i] == 1)
                .count();
            let zeros = (0..20)
                .filter(|&i| folds[i] == fold && y.labels[i] == 0)
                .count();
            assert_eq!((zeros, ones), (1, 1), "fold {fold}");
        }
    }

    #[test]
    fn folds_deterministic_given_seed() {
        let y = BinaryResponse::new((0..30).map(|i| (i % 2) as u8).collect()).unwrap();
        assert_eq!(make_folds(&y, 5, 42).unwrap(), make_folds(&y, 5, 42).unwrap());
        assert_ne!(make_folds(&y, 5, 42).unwrap(), make_folds(&y, 5, 43).unwrap());
    }

    #[test]
    fn folds_near_balanced_for_uneven_classes() {
        // 7 cases, 13 controls, K=5: case counts per fold in {1,2}
        let y = BinaryResponse::new([vec![1u8; 7], vec![0u8; 13]].concat()).unwrap();
        let folds = make_folds(&y, 5, 3).unwrap();
        for fold in 0..5 {
            let cases = (0..20)
                .filter(|&i| folds[i] == fold && y.labels[i] == 1)
                .count();
            assert!((1..=2).contains(&cases), "fold {fold} has {cases} cases");
        }
    }

    #[test]
    fn folds_reject_k_above_n() {
        let y = BinaryResponse::new(vec![0, 1, 0, 1]).unwrap();
        assert!(make_folds(&y, 5, 0).is_err());
    }

    #[test]
    fn mr_counts_directly() {
        let (stack, _) = noise_problem(1, 5, 2);
        let y = BinaryResponse::new(vec![1, 1, 1, 0, 0]).unwrap();
        // Constant probability 0.9: predicts 1 everywhere -> 2 of 5 wrong.
        let fit = crate::solver::EnetFit {
            intercept: (0.9f64 / 0.1f64).ln(),
            coefficients: vec![0.0; 2],
            alpha: 1.0,
            lambda: 0.0,
            n_nonzero: 0,
            converged: true,
            objective: 0.0,
            separation: false,
            objective_trace: vec![],
        };
        assert_eq!(misclassification_rate(&fit, &stack, &y).unwrap(), 0.4);
    }

    #[test]
    fn mr_half_for_constant_just_below_threshold() {
        let (stack, _) = noise_problem(2, 10, 2);
        let y = BinaryResponse::new((0..10).map(|i| (i % 2) as u8).collect()).unwrap();
        let fit = crate::solver::EnetFit {
            intercept: -0.004, // p slightly below 0.5 -> predicts 0 everywhere
            coefficients: vec![0.0; 2],
            alpha: 1.0,
            lambda: 0.0,
            n_nonzero: 0,
            converged: true,
            objective: 0.0,
            separation: false,
            objective_trace: vec![],
        };
        assert_eq!(misclassification_rate(&fit, &stack, &y).unwrap(), 0.5);
    }

    #[test]
    fn null_data_cv_mr_near_half() {
        let mut sum = 0.0;
        let runs = 20;
        for seed in 0..runs {
            let (stack, y) = noise_problem(100 + seed, 60, 10);
            let mut config = EnetConfig::new(0.5, 0.0);
            config.path_length = 40;
            let result = cv_lambda(&stack, &y, &config, 5, seed).unwrap();
            sum += result.mean_mr[result.chosen_index];
        }
        let avg = sum / runs as f64;
        assert!((0.35..=0.65).contains(&avg), "avg null CV MR {avg}");
    }

    #[test]
    fn strong_signal_is_selected() {
        let mut hits = 0;
        for seed in 0..20 {
            let (stack, y) = signal_problem(200 + seed, 200, 5, 5.0);
            let mut config = EnetConfig::new(0.5, 0.0);
            config.path_length = 50;
            let result = cv_lambda(&stack, &y, &config, 10, seed).unwrap();
            if result.selected_set.contains(&0) {
                hits += 1;
            }
        }
        assert!(hits >= 19, "signal found in only {hits}/20 seeds");
    }

    #[test]
    fn leave_one_out_runs() {
        let (stack, y) = signal_problem(5, 12, 3, 2.0);
        let mut config = EnetConfig::new(0.5, 0.0);
        config.path_length = 20;
        let result = cv_lambda(&stack, &y, &config, 12, 9).unwrap();
        for row in &result.mr_per_fold {
            for v in row {
                if v.is_finite() {
                    assert!(*v == 0.0 || *v == 1.0, "LOO fold MR {v}");
                }
            }
        }
    }

    #[test]
    fn chosen_lambda_minimizes_mean_mr_with_tie_to_larger() {
        let (stack, y) = signal_problem(6, 80, 6, 2.0);
        let mut config = EnetConfig::new(0.5, 0.0);
        config.path_length = 30;
        let result = cv_lambda(&stack, &y, &config, 5, 1).unwrap();
        let min = result.mean_mr.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(result.mean_mr[result.chosen_index], min);
        // No larger λ attains the same minimum.
        for l in 0..result.chosen_index {
            assert!(result.mean_mr[l] > min);
        }
    }

    #[test]
    fn cv_result_serialization_deterministic() {
        let (stack, y) = signal_problem(7, 50, 4, 1.5);
        let mut config = EnetConfig::new(0.5, 0.0);
        config.path_length = 15;
        let a = cv_lambda(&stack, &y, &config, 5, 3).unwrap();
        let b = cv_lambda(&stack, &y, &config, 5, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&a.to_json()).unwrap(),
            serde_json::to_string(&b.to_json()).unwrap()
        );
    }

    #[test]
    fn out_of_fold_predictions_match_manual_refit() {
        let (stack, y) = signal_problem(8, 40, 4, 2.0);
        let mut config = EnetConfig::new(0.5, 0.0);
        config.path_length = 10;
        let seed = 11;
        let k = 4;
        let result = cv_lambda(&stack, &y, &config, k, seed).unwrap();
        let folds = make_folds(&y, k, seed).unwrap();
        // Recompute fold 2's row independently.
        let ((train_x, train_y), (test_x, test_y)) = split(&stack, &y, &folds, 2).unwrap();
        let path = fit_path_at(&train_x, &train_y, &config, &result.lambda_grid).unwrap();
        for (l, point) in path.iter().enumerate() {
            let fit = point.fit.as_ref().unwrap();
            let mr = misclassification_rate(fit, &test_x, &test_y).unwrap();
            assert_eq!(mr, result.mr_per_fold[2][l]);
        }
    }

    #[test]
    fn repeats_one_maximal_equals_modal() {
        let (stack, y) = signal_problem(9, 50, 4, 2.0);
        let mut config = EnetConfig::new(0.5, 0.0);
        config.path_length = 15;
        let sel = repeated_cv_selection(&stack, &y, &config, 5, 1, 2).unwrap();
        assert_eq!(sel.maximal_set, sel.modal_set);
        assert_eq!(sel.per_repeat_sets.len(), 1);
        assert_eq!(sel.per_repeat_sets[0], sel.maximal_set);
    }

    #[test]
    fn repeated_selection_counts_and_membership() {
        let (stack, y) = signal_problem(10, 60, 5, 2.0);
        let mut config = EnetConfig::new(0.5, 0.0);
        config.path_length = 15;
        let sel = repeated_cv_selection(&stack, &y, &config, 5, 8, 4).unwrap();
        assert!(sel.per_repeat_sets.contains(&sel.maximal_set));
        assert!(sel.per_repeat_sets.contains(&sel.modal_set));
        assert!(sel.maximal_set.len() >= sel.modal_set.len());
        for (&col, &count) in &sel.frequency {
            assert!(count <= 8);
            let occurs = sel.per_repeat_sets.iter().filter(|s| s.contains(&col)).count();
            assert_eq!(occurs, count);
        }
    }
}
