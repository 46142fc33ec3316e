/// Stops after `patience` consecutive epochs without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    higher_is_better: bool,
    best: Option<(f64, f64)>,
    best_epoch: usize,
    bad_epochs: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        EarlyStopper {
            patience,
            higher_is_better,
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's metric; returns true when it is a new best.
    pub fn observe(&mut self, metric: f64) -> bool {
        self.observe_with_tiebreak(metric, 0.0)
    }

    /// Like [`observe`](Self::observe), but an epoch that ties the best
    /// metric still counts as an improvement when `tiebreak` (lower is
    /// better) drops.
    pub fn observe_with_tiebreak(&mut self, metric: f64, tiebreak: f64) -> bool {
        self.epoch += 1;
        let improved = match self.best {
            None => true,
            Some((best, _)) if metric != best => (metric > best) == self.higher_is_better,
            Some((_, best_tie)) => tiebreak < best_tie,
        };
        if improved {
            self.best = Some((metric, tiebreak));
            self.best_epoch = self.epoch;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
