/// Early stopping on validation loss combined with a step-down learning
/// rate. Epochs are numbered from 0; a strictly lower loss counts as an
/// improvement and resets both counters.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    patience: usize,
    plateau: usize,
    factor: f64,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
    since_change: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
    /// Learning rate to use from the next epoch on.
    pub lr: f64,
    pub lr_changed: bool,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: usize, plateau: usize, factor: f64) -> Self {
        Self {
            lr,
            patience,
            plateau,
            factor,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
            since_change: 0,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Observation {
        let improved = val_loss < self.best;
        let mut lr_changed = false;
        if improved {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            self.since_change = 0;
        } else {
            self.since_best += 1;
            self.since_change += 1;
            if self.since_change >= self.plateau {
                self.lr *= self.factor;
                self.since_change = 0;
                lr_changed = true;
            }
        }
        Observation {
            improved,
            stop: self.since_best >= self.patience,
            lr: self.lr,
            lr_changed,
        }
    }
}
