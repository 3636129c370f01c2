//! Reduce-on-plateau learning-rate schedule driven by the validation loss.

pub const DEFAULT_FACTOR: f64 = 0.5;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_MIN_LR: f64 = 1e-7;

/// What happened on one scheduler step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlateauEvent {
    pub reduced: bool,
    /// Patience ran out again while already at the floor.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    threshold: f64,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        assert!(factor > 0.0 && factor < 1.0, "factor must be in (0, 1)");
        PlateauScheduler {
            lr,
            factor,
            patience,
            threshold: DEFAULT_THRESHOLD,
            min_lr: DEFAULT_MIN_LR,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_min_lr(mut self, min_lr: f64) -> Self {
        self.min_lr = min_lr;
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn min_lr(&self) -> f64 {
        self.min_lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feed one validation loss. A loss counts as an improvement only if it
    /// beats the best so far by more than the relative threshold.
    pub fn step(&mut self, loss: f64) -> PlateauEvent {
        if loss < self.best * (1.0 - self.threshold) {
            self.best = loss;
            self.bad_epochs = 0;
            return PlateauEvent::default();
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return PlateauEvent::default();
        }
        self.bad_epochs = 0;
        if self.lr > self.min_lr {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            PlateauEvent {
                reduced: true,
                exhausted: false,
            }
        } else {
            PlateauEvent {
                reduced: false,
                exhausted: true,
            }
        }
    }
}

/// Learning rate after replaying a validation-loss history from `lr`.
pub fn plateau_lr(history: &[f64], patience: usize, factor: f64, lr: f64) -> f64 {
    let mut s = PlateauScheduler::new(lr, factor, patience);
    for &l in history {
        s.step(l);
    }
    s.lr()
}
