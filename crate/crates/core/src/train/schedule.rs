/// Validation-loss bookkeeping for learning-rate reduction on plateau and
/// early stopping.
///
/// An epoch improves when its loss is strictly below the best seen so far.
/// After `lr_patience` consecutive non-improving epochs the rate is
/// multiplied by `factor` (never below `lr_min`) and that counter restarts.
/// After `stop_patience` consecutive non-improving epochs training stops.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTracker {
    lr: f64,
    lr_min: f64,
    factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    lr_wait: usize,
    stop_wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochDecision {
    pub improved: bool,
    /// Rate to use for the next epoch.
    pub next_lr: f64,
    pub reduced: bool,
    pub stop: bool,
}

impl PlateauTracker {
    pub fn new(lr: f64, lr_min: f64, factor: f64, lr_patience: usize, stop_patience: usize) -> Self {
        Self {
            lr,
            lr_min,
            factor,
            lr_patience,
            stop_patience,
            best: f64::INFINITY,
            lr_wait: 0,
            stop_wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> EpochDecision {
        let improved = val_loss < self.best;
        let mut reduced = false;
        if improved {
            self.best = val_loss;
            self.lr_wait = 0;
            self.stop_wait = 0;
        } else {
            self.lr_wait += 1;
            self.stop_wait += 1;
            if self.lr_wait >= self.lr_patience {
                self.lr_wait = 0;
                if self.lr > self.lr_min {
                    self.lr = (self.lr * self.factor).max(self.lr_min);
                    reduced = true;
                }
            }
        }
        EpochDecision {
            improved,
            next_lr: self.lr,
            reduced,
            stop: self.stop_wait >= self.stop_patience,
        }
    }
}
