//! Synthetic inputs for demos and tests: prediction records with chosen
//! per-label pool sizes, datasets with chosen class counts, and rating
//! tables whose per-label means hit given two-decimal targets exactly.

use std::collections::BTreeMap;

use crate::corpus::{Dataset, Label, LabeledInstance};
use crate::pipeline::PredictionRecord;
use crate::study::{Rating, StudySample};

/// `n` records per label, ids `"{label}-{i}"`.
pub fn records_with_pools(pools: &[(&str, usize)]) -> Vec<PredictionRecord> {
    pools
        .iter()
        .flat_map(|(label, n)| {
            (0..*n).map(move |i| PredictionRecord {
                instance_id: format!("{label}-{i}"),
                text: format!("synthetic text {i} for {label}"),
                predicted_label: Label::from(*label),
                explanation: format!("The text supports the {label} label."),
                classifier_id: "fixture".into(),
                explainer_id: "fixture".into(),
            })
        })
        .collect()
}

/// A dataset with the given class counts, labels in the given order.
pub fn dataset_with_counts(name: &str, counts: &[(&str, usize)]) -> Dataset {
    let label_set = counts.iter().map(|(l, _)| Label::from(*l)).collect();
    let instances = counts
        .iter()
        .flat_map(|(label, n)| {
            (0..*n).map(move |i| LabeledInstance::new(format!("{label}-{i:05}"), format!("text {i}"), *label))
        })
        .collect();
    Dataset::new(name, label_set, instances).expect("fixture dataset is valid")
}

/// JSONL form of a dataset.
pub fn dataset_jsonl(ds: &Dataset) -> String {
    ds.instances()
        .iter()
        .map(|i| serde_json::to_string(i).expect("instance serializes") + "\n")
        .collect()
}

/// Ratings from `raters` raters on every sampled item such that, for each
/// label bucket, the mean of instance means of each metric equals the
/// target given in hundredths (e.g. 634 for 6.34).
///
/// Each bucket/metric needs a total of `target · n_items · raters / 100`
/// integer points, spread as evenly as possible over the cells. Returns an
/// error when that total is fractional or does not fit the 1..=10 scale.
pub fn ratings_for_label_means(
    sample: &StudySample,
    metrics: &[&str],
    raters: usize,
    targets_hundredths: &[(&str, &[u32])],
) -> Result<Vec<Rating>, String> {
    let mut cells: BTreeMap<(usize, usize), Vec<(String, i64)>> = BTreeMap::new();
    for (label, targets) in targets_hundredths {
        if targets.len() != metrics.len() {
            return Err(format!("{label}: expected {} targets", metrics.len()));
        }
        let items: Vec<usize> = sample
            .items
            .iter()
            .enumerate()
            .filter(|(_, r)| r.predicted_label.as_str() == *label)
            .map(|(i, _)| i)
            .collect();
        if items.is_empty() {
            return Err(format!("no sampled items for {label}"));
        }
        let n_cells = (items.len() * raters) as u64;
        for (metric, &target) in metrics.iter().zip(*targets) {
            let scaled = u64::from(target) * n_cells;
            if !scaled.is_multiple_of(100) {
                return Err(format!(
                    "{label}/{metric}: {target}/100 over {n_cells} cells is not an integer total"
                ));
            }
            let total = scaled / 100;
            let (base, extra) = (total / n_cells, total % n_cells);
            if base < 1 || base + u64::from(extra > 0) > 10 {
                return Err(format!("{label}/{metric}: target outside the 1..=10 scale"));
            }
            let mut k = 0u64;
            for &item in &items {
                for rater in 0..raters {
                    let score = base + u64::from(k < extra);
                    k += 1;
                    cells
                        .entry((rater, item))
                        .or_default()
                        .push((metric.to_string(), score as i64));
                }
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|((rater, item), scores)| Rating {
            rater_id: format!("rater-{rater:03}"),
            instance_id: sample.items[item].instance_id.clone(),
            scores: scores.into_iter().collect(),
            submitted_at: format!("2024-01-01T00:00:00.{:06}Z", rater * 1000 + item),
            supersedes: None,
        })
        .collect())
}
