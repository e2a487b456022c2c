//! k-nearest-neighbour matching with DTW under a Mahalanobis local distance.

use rayon::prelude::*;

use crate::dtw::{dtw_cost_projected, DtwOptions, ProjectedSeries};
use crate::error::{Error, Result};
use crate::mts::{Dataset, MTSeries, MetricMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    /// Indices into the training set, nearest first.
    pub neighbor_ids: Vec<usize>,
    pub neighbor_distances: Vec<f64>,
}

/// Training set projected through the metric factor once, ready to be
/// matched against many test series.
pub struct KnnClassifier<'a> {
    training: &'a Dataset,
    projected: Vec<ProjectedSeries>,
    factor: nalgebra::DMatrix<f64>,
    k: usize,
    options: DtwOptions,
}

impl<'a> KnnClassifier<'a> {
    pub fn new(training: &'a Dataset, metric: &MetricMatrix, k: usize) -> Result<Self> {
        Self::with_options(training, metric, k, DtwOptions::default())
    }

    pub fn with_options(
        training: &'a Dataset,
        metric: &MetricMatrix,
        k: usize,
        options: DtwOptions,
    ) -> Result<Self> {
        options.validate()?;
        if training.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if k == 0 || k > training.len() {
            return Err(Error::invalid(format!(
                "k must lie in [1, {}], got {k}",
                training.len()
            )));
        }
        let p = training.channels().unwrap_or(0);
        if p != metric.dim() {
            return Err(Error::invalid(format!(
                "training set has {p} channels, metric is {}x{}",
                metric.dim(),
                metric.dim()
            )));
        }
        let factor = metric.factor();
        let projected = training
            .samples()
            .par_iter()
            .map(|s| ProjectedSeries::with_factor(&s.series, &factor))
            .collect();
        Ok(Self {
            training,
            projected,
            factor,
            k,
            options,
        })
    }

    fn check_channels(&self, test: &MTSeries) -> Result<()> {
        let names = self.training.channel_names().unwrap_or_default();
        if test.channel_names() != names {
            return Err(Error::ChannelMismatch {
                expected: names.to_vec(),
                found: test.channel_names().to_vec(),
            });
        }
        Ok(())
    }

    /// DTW distance from `test` to every training sample, in training order.
    pub fn distances(&self, test: &MTSeries) -> Result<Vec<f64>> {
        self.check_channels(test)?;
        let query = ProjectedSeries::with_factor(test, &self.factor);
        Ok(self
            .projected
            .iter()
            .map(|t| dtw_cost_projected(&query, t, self.options))
            .collect())
    }

    pub fn classify(&self, test: &MTSeries) -> Result<Prediction> {
        let distances = self.distances(test)?;
        Ok(self.vote(&distances))
    }

    /// Majority vote among the `k` nearest. Distance ties go to the lower
    /// training index; vote ties to the class with the single closest
    /// neighbour, then to class order.
    fn vote(&self, distances: &[f64]) -> Prediction {
        let mut order: Vec<usize> = (0..distances.len()).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        order.truncate(self.k);

        let classes = self.training.class_set();
        let mut votes = vec![0usize; classes.len()];
        let mut closest = vec![f64::INFINITY; classes.len()];
        for &i in &order {
            let c = self
                .training
                .class_index(&self.training.samples()[i].label)
                .expect("dataset labels are validated");
            votes[c] += 1;
            closest[c] = closest[c].min(distances[i]);
        }
        let winner = (0..classes.len())
            .filter(|&c| votes[c] > 0)
            .min_by(|&a, &b| {
                votes[b]
                    .cmp(&votes[a])
                    .then(closest[a].total_cmp(&closest[b]))
                    .then(a.cmp(&b))
            })
            .expect("k >= 1 gives at least one vote");
        Prediction {
            label: classes[winner].clone(),
            neighbor_distances: order.iter().map(|&i| distances[i]).collect(),
            neighbor_ids: order,
        }
    }
}

/// Classifies one (already normalised) test series against the training set.
pub fn knn_classify(
    test: &MTSeries,
    training: &Dataset,
    metric: &MetricMatrix,
    k: usize,
) -> Result<Prediction> {
    KnnClassifier::new(training, metric, k)?.classify(test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub label: String,
    pub correct: usize,
    pub error: usize,
    /// Percent of this class's test samples classified correctly.
    pub accuracy: f64,
    /// The class has test samples but no training samples.
    pub unseen_in_training: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Training classes followed by any classes seen only in the test set.
    pub classes: Vec<String>,
    /// One entry per class that has test samples, in `classes` order.
    pub per_class: Vec<ClassReport>,
    pub overall_accuracy: f64,
    /// `confusion[true][predicted]` over `classes`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<Prediction>,
}

impl EvaluationReport {
    pub fn total(&self) -> usize {
        self.per_class.iter().map(|c| c.correct + c.error).sum()
    }

    pub fn correct(&self) -> usize {
        self.per_class.iter().map(|c| c.correct).sum()
    }

    pub fn class_accuracy(&self, label: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.label == label).map(|c| c.accuracy)
    }
}

/// Classifies every test sample and aggregates per-class accuracy.
pub fn evaluate(
    test_set: &Dataset,
    training: &Dataset,
    metric: &MetricMatrix,
    k: usize,
) -> Result<EvaluationReport> {
    evaluate_with(test_set, &KnnClassifier::new(training, metric, k)?)
}

pub fn evaluate_with(test_set: &Dataset, classifier: &KnnClassifier<'_>) -> Result<EvaluationReport> {
    if test_set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let predictions = test_set
        .samples()
        .par_iter()
        .map(|s| classifier.classify(&s.series))
        .collect::<Result<Vec<_>>>()?;

    let mut classes = classifier.training.class_set().to_vec();
    for c in test_set.class_set() {
        if !classes.contains(c) {
            classes.push(c.clone());
        }
    }
    let index = |label: &str| classes.iter().position(|c| c == label).expect("class collected");
    let n = classes.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (s, pred) in test_set.samples().iter().zip(&predictions) {
        confusion[index(&s.label)][index(&pred.label)] += 1;
    }
    let training_classes = classifier.training.class_set();
    let per_class: Vec<ClassReport> = classes
        .iter()
        .enumerate()
        .filter_map(|(i, label)| {
            let total: usize = confusion[i].iter().sum();
            (total > 0).then(|| {
                let correct = confusion[i][i];
                ClassReport {
                    label: label.clone(),
                    correct,
                    error: total - correct,
                    accuracy: 100.0 * correct as f64 / total as f64,
                    unseen_in_training: !training_classes.contains(label),
                }
            })
        })
        .collect();
    for c in per_class.iter().filter(|c| c.unseen_in_training) {
        log::warn!("class {} appears in the test set but not in training", c.label);
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    Ok(EvaluationReport {
        overall_accuracy: 100.0 * correct as f64 / test_set.len() as f64,
        classes,
        per_class,
        confusion,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtw::dtw_distance;
    use crate::mts::LabeledSample;

    fn uni(v: &[f64]) -> MTSeries {
        MTSeries::from_rows(&v.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap()
    }

    fn toy() -> Dataset {
        Dataset::from_samples(vec![
            LabeledSample::new("a", uni(&[0.0, 1.0, 2.0]), "A"),
            LabeledSample::new("b", uni(&[3.0, 3.0]), "B"),
            LabeledSample::new("c", uni(&[0.0, 0.0, 5.0, 0.0]), "C"),
        ])
        .unwrap()
    }

    #[test]
    fn single_training_sample() {
        let ds = Dataset::from_samples(vec![LabeledSample::new("a", uni(&[1.0]), "only")]).unwrap();
        let p = knn_classify(&uni(&[-40.0, 3.0]), &ds, &MetricMatrix::identity(1), 1).unwrap();
        assert_eq!(p.label, "only");
    }

    #[test]
    fn exact_copy_matches_at_zero() {
        let ds = toy();
        let p = knn_classify(&uni(&[3.0, 3.0]), &ds, &MetricMatrix::identity(1), 1).unwrap();
        assert_eq!(p.label, "B");
        assert_eq!(p.neighbor_ids, vec![1]);
        assert_eq!(p.neighbor_distances, vec![0.0]);
    }

    #[test]
    fn nearest_of_three_by_full_dtw() {
        let ds = toy();
        let m = MetricMatrix::identity(1);
        let test = uni(&[0.0, 0.5, 4.0]);
        let costs: Vec<f64> = ds
            .samples()
            .iter()
            .map(|s| dtw_distance(&test, &s.series, &m).unwrap().distance)
            .collect();
        // a: 0 + 0.25 + 4 = 4.25; b: 9 + 6.25 + 1 = 16.25; c: 0 + 0.25 + 1 + 16 = 17.25
        assert_eq!(costs, vec![4.25, 16.25, 17.25]);
        let p = knn_classify(&test, &ds, &m, 1).unwrap();
        assert_eq!(p.label, "A");
    }

    #[test]
    fn vote_tie_uses_closest_neighbor() {
        let ds = Dataset::from_samples(vec![
            LabeledSample::new("a1", uni(&[0.0]), "A"),
            LabeledSample::new("b1", uni(&[1.0]), "B"),
            LabeledSample::new("a2", uni(&[10.0]), "A"),
            LabeledSample::new("b2", uni(&[2.0]), "B"),
        ])
        .unwrap();
        // Distances from 0.9: a1 .81, b1 .01, b2 1.21, a2 82.81 -> k=4 gives 2-2.
        let p = knn_classify(&uni(&[0.9]), &ds, &MetricMatrix::identity(1), 4).unwrap();
        assert_eq!(p.label, "B");
        assert_eq!(p.neighbor_ids, vec![1, 0, 3, 2]);
        // Equal distances resolve to the lower training index.
        let p = knn_classify(&uni(&[0.5]), &ds, &MetricMatrix::identity(1), 2).unwrap();
        assert_eq!(p.neighbor_ids, vec![0, 1]);
        assert_eq!(p.label, "A");
    }

    #[test]
    fn invalid_inputs() {
        let ds = toy();
        let m = MetricMatrix::identity(1);
        assert!(knn_classify(&uni(&[1.0]), &ds, &m, 0).is_err());
        assert!(knn_classify(&uni(&[1.0]), &ds, &m, 4).is_err());
        let empty = Dataset::from_samples(vec![]).unwrap();
        assert!(knn_classify(&uni(&[1.0]), &empty, &m, 1).is_err());
        let two = MTSeries::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            knn_classify(&two, &ds, &m, 1),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let ds = toy();
        let r = evaluate(&ds, &ds, &MetricMatrix::identity(1), 1).unwrap();
        assert_eq!(r.overall_accuracy, 100.0);
        assert!(r.per_class.iter().all(|c| c.error == 0 && c.accuracy == 100.0));
        for (i, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), 1);
            assert_eq!(row[i], 1);
        }
    }

    #[test]
    fn disjoint_labels_flagged() {
        let training = toy();
        let test = Dataset::from_samples(vec![
            LabeledSample::new("x", uni(&[0.0, 1.0, 2.0]), "X"),
            LabeledSample::new("y", uni(&[3.0]), "Y"),
        ])
        .unwrap();
        let r = evaluate(&test, &training, &MetricMatrix::identity(1), 1).unwrap();
        assert_eq!(r.overall_accuracy, 0.0);
        assert_eq!(r.per_class.len(), 2);
        assert!(r.per_class.iter().all(|c| c.unseen_in_training && c.correct == 0));
        assert_eq!(r.classes, vec!["A", "B", "C", "X", "Y"]);
    }
}
