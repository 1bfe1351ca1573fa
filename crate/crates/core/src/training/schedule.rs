/// Multiplies the learning rate by `factor` once the best epoch loss has
/// not strictly improved for `patience` consecutive epochs, then restarts
/// the count.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    initial_lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
    decays: i32,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize) -> Self {
        Self { initial_lr, factor, patience, best: None, bad_epochs: 0, decays: 0 }
    }

    /// Current rate, always `initial · factor^k`.
    pub fn lr(&self) -> f64 {
        self.initial_lr * self.factor.powi(self.decays)
    }

    pub fn decays(&self) -> i32 {
        self.decays
    }

    /// Records one epoch's loss and returns the rate for the next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(best) if !(loss < best) => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.decays += 1;
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
            }
        }
        self.lr()
    }
}

/// Rate in effect after each epoch of `losses`.
pub fn plateau_schedule(losses: &[f64], initial_lr: f64, factor: f64, patience: usize) -> Vec<f64> {
    let mut s = PlateauScheduler::new(initial_lr, factor, patience);
    losses.iter().map(|&l| s.step(l)).collect()
}
