use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_3ug_examples, build_reorder_examples, TaskError, TaskExample, TaskKind};
use crate::corpus::IntentWindow;

/// The reordering ratios of the paper-faithful sweep.
pub const PAPER_RATIOS: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub reorder_ratio: f64,
    pub tasks: BTreeSet<TaskKind>,
    /// Unsupervised budget `B`; defaults to every unsupervised window.
    #[serde(default)]
    pub budget: Option<usize>,
}

impl MixtureSpec {
    pub fn new(reorder_ratio: f64, tasks: impl IntoIterator<Item = TaskKind>) -> Self {
        MixtureSpec {
            reorder_ratio,
            tasks: tasks.into_iter().collect(),
            budget: None,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Ratio after accounting for disabled generation tasks.
    pub fn effective_ratio(&self) -> f64 {
        match (
            self.tasks.contains(&TaskKind::Reorder),
            self.tasks.contains(&TaskKind::Gen3),
        ) {
            (false, _) => 0.0,
            (true, false) => 1.0,
            (true, true) => self.reorder_ratio,
        }
    }
}

/// `⌊r·B⌋`, with a 1e-9 slack so that decimal ratios such as 0.29·100 are not
/// floored one below their exact value by binary rounding.
pub fn reorder_count(ratio: f64, budget: usize) -> usize {
    ((ratio * budget as f64) + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub examples: Vec<TaskExample>,
    pub reorder: usize,
    pub gen3: usize,
}

/// Divides the unsupervised budget between reordering (`⌊rB⌋` windows) and
/// third-utterance generation (the rest), drawing disjoint windows without
/// replacement, then appends the other enabled task pools and shuffles.
pub fn build_mixture(
    spec: &MixtureSpec,
    unsupervised: &[IntentWindow],
    others: &[TaskExample],
    seed: u64,
) -> Result<Mixture, TaskError> {
    if !(0.0..=1.0).contains(&spec.reorder_ratio) {
        return Err(TaskError::Invalid(format!(
            "reorder ratio {} outside [0, 1]",
            spec.reorder_ratio
        )));
    }
    let generative = spec.tasks.contains(&TaskKind::Reorder) || spec.tasks.contains(&TaskKind::Gen3);
    let eligible: Vec<&IntentWindow> = unsupervised.iter().filter(|w| w.len() >= 3).collect();
    let budget = if generative { spec.budget.unwrap_or(eligible.len()) } else { 0 };
    if budget > eligible.len() {
        return Err(TaskError::Sizing {
            what: "unsupervised budget".into(),
            requested: budget,
            available: eligible.len(),
        });
    }
    for task in &spec.tasks {
        let empty = match task {
            TaskKind::Reorder | TaskKind::Gen3 => eligible.is_empty(),
            other => !others.iter().any(|e| e.task == *other),
        };
        if empty {
            return Err(TaskError::Sizing {
                what: format!("{task} pool"),
                requested: 1,
                available: 0,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.shuffle(&mut rng);
    let n_reorder = reorder_count(spec.effective_ratio(), budget);
    let pick = |idx: &[usize]| idx.iter().map(|&i| eligible[i].clone()).collect::<Vec<_>>();
    let reorder_windows = pick(&order[..n_reorder]);
    let gen3_windows = pick(&order[n_reorder..budget]);

    let mut examples = build_reorder_examples(&reorder_windows, seed);
    examples.extend(build_3ug_examples(&gen3_windows));
    examples.extend(others.iter().filter(|e| spec.tasks.contains(&e.task)).cloned());
    examples.shuffle(&mut rng);
    Ok(Mixture {
        examples,
        reorder: n_reorder,
        gen3: budget - n_reorder,
    })
}
