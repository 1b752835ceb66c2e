//! Exhaustive grid search scored by k-fold cross-validated accuracy.

use serde::{Deserialize, Serialize};

use super::cart::cart_train;
use super::linear::{train_epochs, ParameterVector};
use super::split::k_folds;
use super::{rng_from_seed, MlError, ModelKind, Result, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config: TrainConfig,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: TrainConfig,
    pub table: Vec<CvRow>,
    pub stratified: bool,
}

/// Default candidates for a model family.
pub fn default_grid(kind: ModelKind) -> Vec<TrainConfig> {
    match kind {
        ModelKind::DecisionTree => [2, 4, 6, 8]
            .into_iter()
            .map(|max_depth| TrainConfig {
                model: kind,
                max_depth,
                ..Default::default()
            })
            .collect(),
        _ => {
            let mut grid = Vec::new();
            for learning_rate in [0.5, 0.1, 0.01] {
                for l2 in [0.0, 1e-3] {
                    grid.push(TrainConfig {
                        model: kind,
                        learning_rate,
                        l2,
                        local_epochs: 20,
                        ..Default::default()
                    });
                }
            }
            grid
        }
    }
}

type Predictor = Box<dyn Fn(&[f64]) -> usize>;

/// Accuracy of `config` trained on `train` and scored on `valid`. Any
/// numerical failure scores zero.
fn fold_score(
    config: &TrainConfig,
    xs: &[Vec<f64>],
    ys: &[usize],
    num_classes: usize,
    train: &[usize],
    valid: &[usize],
) -> f64 {
    let tx: Vec<Vec<f64>> = train.iter().map(|&i| xs[i].clone()).collect();
    let ty: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
    let predict: Predictor = match config.model {
        ModelKind::DecisionTree => match cart_train(&tx, &ty, num_classes, config.max_depth, config.min_leaf) {
            Ok(tree) => Box::new(move |x| tree.predict(x).label),
            Err(_) => return 0.0,
        },
        kind => {
            let width = xs.first().map_or(0, Vec::len);
            let init = ParameterVector::zeros(kind, num_classes, width);
            match train_epochs(&init, &tx, &ty, config, &mut rng_from_seed(config.seed)) {
                Ok(p) if p.validate().is_ok() => Box::new(move |x| p.predict(x)),
                _ => return 0.0,
            }
        }
    };
    if valid.is_empty() {
        return 0.0;
    }
    valid.iter().filter(|&&i| predict(&xs[i]) == ys[i]).count() as f64 / valid.len() as f64
}

/// Scores every grid point by mean validation accuracy over `folds`
/// stratified folds. Ties go to the earliest grid point.
pub fn grid_search(
    grid: &[TrainConfig],
    folds: usize,
    xs: &[Vec<f64>],
    ys: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(MlError::InvalidConfig("empty grid".into()));
    }
    if folds < 2 {
        return Err(MlError::InvalidConfig("need at least 2 folds".into()));
    }
    if xs.len() != ys.len() {
        return Err(MlError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < folds {
        return Err(MlError::TooFewSamples {
            needed: folds,
            got: xs.len(),
        });
    }
    let (assignment, stratified) = k_folds(ys, folds, seed);
    let mut table = Vec::with_capacity(grid.len());
    for config in grid {
        let fold_scores: Vec<f64> = (0..folds)
            .map(|f| {
                let train: Vec<usize> = assignment
                    .iter()
                    .enumerate()
                    .filter(|(g, _)| *g != f)
                    .flat_map(|(_, idx)| idx.iter().copied())
                    .collect();
                fold_score(config, xs, ys, num_classes, &train, &assignment[f])
            })
            .collect();
        let mean = fold_scores.iter().sum::<f64>() / folds as f64;
        table.push(CvRow {
            config: config.clone(),
            fold_scores,
            mean,
        });
    }
    let mut best_index = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean > table[best_index].mean {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        best_index,
        best: table[best_index].config.clone(),
        table,
        stratified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlcore::BatchMode;

    fn separable() -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64, (i % 5) as f64 / 5.0]).collect();
        let ys = xs.iter().map(|x| x[0] as usize).collect();
        (xs, ys)
    }

    #[test]
    fn single_point_grid() {
        let (xs, ys) = separable();
        let cfg = TrainConfig { local_epochs: 5, ..Default::default() };
        let r = grid_search(std::slice::from_ref(&cfg), 4, &xs, &ys, 2, 0).unwrap();
        assert_eq!(r.best, cfg);
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.table[0].fold_scores.len(), 4);
    }

    #[test]
    fn diverging_cell_scores_zero() {
        // huge feature scale overflows the squared hinge gradient at lr = 0.1
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![1e150 * (i % 2) as f64 + 1e150, 1e150]).collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let base = TrainConfig {
            model: ModelKind::LinearSvmHinge,
            local_epochs: 30,
            batch: BatchMode::Full,
            l2: 0.0,
            ..Default::default()
        };
        let grid = vec![
            TrainConfig { learning_rate: 0.1, ..base.clone() },
            TrainConfig { model: ModelKind::DecisionTree, ..base.clone() },
        ];
        let r = grid_search(&grid, 2, &xs, &ys, 2, 0).unwrap();
        assert_eq!(r.table[0].mean, 0.0);
        assert_eq!(r.best_index, 1);
        assert_eq!(r.table.len(), 2);
    }

    #[test]
    fn ties_go_to_first_and_trees_work() {
        let (xs, ys) = separable();
        let grid = default_grid(ModelKind::DecisionTree);
        let r = grid_search(&grid, 5, &xs, &ys, 2, 0).unwrap();
        assert!(r.table.iter().all(|row| row.mean == 1.0));
        assert_eq!(r.best_index, 0);
        assert!(r.stratified);
    }

    #[test]
    fn unstratified_fallback_is_flagged() {
        let (xs, mut ys) = separable();
        ys.iter_mut().for_each(|y| *y = 0);
        ys[0] = 1;
        let r = grid_search(&default_grid(ModelKind::DecisionTree)[..1], 3, &xs, &ys, 2, 0).unwrap();
        assert!(!r.stratified);
        assert!(grid_search(&[], 3, &xs, &ys, 2, 0).is_err());
        assert!(grid_search(&default_grid(ModelKind::DecisionTree), 1, &xs, &ys, 2, 0).is_err());
    }
}
