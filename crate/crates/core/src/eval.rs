//! Accuracy, per-category breakdowns and probability-averaging ensembles.
//!
//! Instances are scored in parallel; results are collected in input order so
//! every aggregate is independent of thread scheduling.

use rayon::prelude::*;

use crate::data::{categorize_question, Instance, QuestionCategory};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::selection::predict;

fn non_empty(instances: &[Instance]) -> Result<()> {
    if instances.is_empty() {
        Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()))
    } else {
        Ok(())
    }
}

/// Option probabilities for every instance, in input order.
pub fn probabilities(model: &Model, instances: &[Instance]) -> Result<Vec<Vec<f64>>> {
    instances.par_iter().map(|inst| Ok(model.forward(inst, false, None)?.probabilities())).collect()
}

pub fn predictions(model: &Model, instances: &[Instance]) -> Result<Vec<usize>> {
    instances.par_iter().map(|inst| Ok(model.forward(inst, false, None)?.prediction())).collect()
}

fn accuracy_of(preds: &[usize], instances: &[Instance]) -> f64 {
    let correct = preds.iter().zip(instances).filter(|(p, i)| **p == i.label).count();
    correct as f64 / instances.len() as f64
}

pub fn accuracy(model: &Model, instances: &[Instance]) -> Result<f64> {
    non_empty(instances)?;
    Ok(accuracy_of(&predictions(model, instances)?, instances))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryAccuracy {
    pub category: QuestionCategory,
    pub count: usize,
    pub correct: usize,
}

impl CategoryAccuracy {
    /// `None` for categories with no questions.
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }
}

/// One row per category, in [`QuestionCategory::ALL`] order.
pub fn accuracy_by_category(model: &Model, instances: &[Instance]) -> Result<Vec<CategoryAccuracy>> {
    non_empty(instances)?;
    let preds = predictions(model, instances)?;
    let mut rows: Vec<CategoryAccuracy> =
        QuestionCategory::ALL.iter().map(|&category| CategoryAccuracy { category, count: 0, correct: 0 }).collect();
    for (inst, pred) in instances.iter().zip(preds) {
        let row = &mut rows[categorize_question(&inst.question_text).index()];
        row.count += 1;
        row.correct += usize::from(pred == inst.label);
    }
    Ok(rows)
}

pub fn category_csv(rows: &[CategoryAccuracy]) -> String {
    let mut s = String::from("category,count,correct,accuracy\n");
    for r in rows {
        let acc = r.accuracy().map(|a| a.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{acc}\n", r.category, r.count, r.correct));
    }
    s
}

/// Element-wise mean of per-model probability tables (`[model][instance][option]`).
pub fn average_probabilities(per_model: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = per_model.first() else {
        return Err(Error::InvalidArgument("ensemble needs at least one model".into()));
    };
    for table in per_model {
        if table.len() != first.len() || table.iter().zip(first).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::InvalidArgument("incompatible ensemble: models disagree on option counts".into()));
        }
    }
    let k = per_model.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let mut avg = vec![0.0; first[i].len()];
            for table in per_model {
                avg.iter_mut().zip(&table[i]).for_each(|(a, p)| *a += p);
            }
            avg.iter_mut().for_each(|a| *a /= k);
            avg
        })
        .collect())
}

/// Mean of per-model option probabilities for models sharing a vocabulary.
pub fn ensemble_probabilities(models: &[&Model], instances: &[Instance]) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = models.first() {
        let n = first.config.n_options;
        if let Some(m) = models.iter().find(|m| m.config.n_options != n) {
            return Err(Error::InvalidArgument(format!(
                "incompatible ensemble: models expect {n} and {} options",
                m.config.n_options
            )));
        }
    }
    let per_model = models.iter().map(|m| probabilities(m, instances)).collect::<Result<Vec<_>>>()?;
    average_probabilities(&per_model)
}

/// Fraction of instances whose argmax over `probs` equals the label.
pub fn accuracy_from_probabilities(probs: &[Vec<f64>], instances: &[Instance]) -> Result<f64> {
    non_empty(instances)?;
    let preds: Vec<usize> = probs.iter().map(|p| predict(p)).collect();
    Ok(accuracy_of(&preds, instances))
}

pub fn ensemble_accuracy(models: &[&Model], instances: &[Instance]) -> Result<f64> {
    non_empty(instances)?;
    accuracy_from_probabilities(&ensemble_probabilities(models, instances)?, instances)
}
