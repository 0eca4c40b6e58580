use serde::{Deserialize, Serialize};

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// the monitored metric (higher is better) rising more than `min_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub enabled: bool,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            enabled: true,
            factor: 0.5,
            patience: 3,
            min_lr: 1e-5,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    config: PlateauConfig,
    best: f64,
    wait: usize,
}

impl Plateau {
    pub fn new(config: PlateauConfig) -> Self {
        Plateau {
            config,
            best: f64::NEG_INFINITY,
            wait: 0,
        }
    }

    /// Learning rate to use after observing `metric` for one epoch.
    pub fn update(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best + self.config.min_delta {
            self.best = metric;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.config.patience {
            self.wait = 0;
            (lr * self.config.factor).max(self.config.min_lr)
        } else {
            lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingConfig {
    pub enabled: bool,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStoppingConfig {
    fn default() -> Self {
        EarlyStoppingConfig {
            enabled: true,
            patience: 8,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Keep training; `improved` marks a new best epoch.
    Continue { improved: bool },
    Stop { best_epoch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    config: EarlyStoppingConfig,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(config: EarlyStoppingConfig) -> Self {
        EarlyStopping {
            config,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Feeds the metric of `epoch` (1-based).
    pub fn update(&mut self, epoch: usize, metric: f64) -> Decision {
        if metric > self.best + self.config.min_delta {
            self.best = metric;
            self.best_epoch = epoch;
            self.wait = 0;
            return Decision::Continue { improved: true };
        }
        self.wait += 1;
        if self.wait >= self.config.patience {
            Decision::Stop {
                best_epoch: self.best_epoch,
            }
        } else {
            Decision::Continue { improved: false }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plateau(patience: usize) -> Plateau {
        Plateau::new(PlateauConfig {
            patience,
            ..PlateauConfig::default()
        })
    }

    #[test]
    fn plateau_traces() {
        let mut p = plateau(2);
        let lrs: Vec<f64> = [0.5, 0.5, 0.5].iter().map(|&m| p.update(m, 1e-3)).collect();
        assert_eq!(lrs, vec![1e-3, 1e-3, 5e-4]);

        let mut p = plateau(1);
        let mut lr = 1e-3;
        for k in 0..20 {
            lr = p.update(k as f64 * 0.01, lr);
        }
        assert_eq!(lr, 1e-3);

        let mut p = plateau(1);
        assert_eq!(p.update(0.5, 1e-5), 1e-5);
        assert_eq!(p.update(0.5, 1e-5), 1e-5);
    }

    fn stopper(patience: usize, min_delta: f64) -> EarlyStopping {
        EarlyStopping::new(EarlyStoppingConfig {
            enabled: true,
            patience,
            min_delta,
        })
    }

    fn run(es: &mut EarlyStopping, metrics: &[f64]) -> Option<(usize, usize)> {
        for (i, &m) in metrics.iter().enumerate() {
            if let Decision::Stop { best_epoch } = es.update(i + 1, m) {
                return Some((i + 1, best_epoch));
            }
        }
        None
    }

    #[test]
    fn early_stopping_traces() {
        assert_eq!(run(&mut stopper(3, 1e-4), &[0.5, 0.7, 0.69, 0.69, 0.69]), Some((5, 2)));
        let rising: Vec<f64> = (0..80).map(|k| k as f64 / 80.0).collect();
        let mut es = stopper(8, 1e-4);
        assert_eq!(run(&mut es, &rising), None);
        assert_eq!(es.best_epoch(), 80);
        let small: Vec<f64> = (0..10).map(|k| 0.5 + k as f64 * 1e-3).collect();
        assert_eq!(run(&mut stopper(4, 0.1), &small), Some((5, 1)));
    }
}
