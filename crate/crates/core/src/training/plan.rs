use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Faces,
    Pokemon,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Faces => "faces",
            DatasetKind::Pokemon => "pokemon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub dataset: DatasetKind,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.epochs == 0 {
            return Err(TrainingError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainingError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainingError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    Fresh,
    FromCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub name: String,
    pub initialization: Initialization,
    pub stages: Vec<StageConfig>,
}

fn stage(dataset: DatasetKind, epochs: u32, learning_rate: f64, batch_size: usize, seed: u64) -> StageConfig {
    StageConfig {
        dataset,
        epochs,
        learning_rate,
        batch_size,
        optimizer: AdamConfig::default(),
        seed,
    }
}

/// Faces pre-training (two stages) followed by three sprite fine-tuning
/// rounds of 100 epochs at decreasing learning rates.
pub fn transfer_plan(seed: u64) -> TrainingPlan {
    use DatasetKind::*;
    TrainingPlan {
        name: "transfer".into(),
        initialization: Initialization::Fresh,
        stages: vec![
            stage(Faces, 10, 1e-4, 128, seed),
            stage(Faces, 50, 1e-5, 128, seed),
            stage(Pokemon, 100, 5e-5, 256, seed),
            stage(Pokemon, 100, 2e-5, 256, seed),
            stage(Pokemon, 100, 1e-5, 256, seed),
        ],
    }
}

/// Sprites only: 50 epochs at 1e-4, then ten 50-epoch rounds at 1e-5.
pub fn baseline_plan(seed: u64) -> TrainingPlan {
    let mut stages = vec![stage(DatasetKind::Pokemon, 50, 1e-4, 128, seed)];
    stages.extend((0..10).map(|_| stage(DatasetKind::Pokemon, 50, 1e-5, 256, seed)));
    TrainingPlan {
        name: "baseline".into(),
        initialization: Initialization::Fresh,
        stages,
    }
}

impl TrainingPlan {
    pub fn by_name(name: &str, seed: u64) -> Option<TrainingPlan> {
        match name {
            "transfer" => Some(transfer_plan(seed)),
            "baseline" => Some(baseline_plan(seed)),
            _ => None,
        }
    }

    /// Multiplies every stage's epoch count by `factor`, rounding up.
    pub fn scaled(&self, factor: f64) -> Result<TrainingPlan, TrainingError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(TrainingError::Config(format!("scale must be positive, got {factor}")));
        }
        let mut plan = self.clone();
        for s in &mut plan.stages {
            // Guard against 0.1 * 10 = 1.0000000000000002 style overshoot.
            let raw = s.epochs as f64 * factor;
            let rounded = raw.round();
            let epochs = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
            s.epochs = epochs.max(1.0) as u32;
        }
        Ok(plan)
    }

    pub fn with_seed(mut self, seed: u64) -> TrainingPlan {
        self.stages.iter_mut().for_each(|s| s.seed = seed);
        self
    }

    pub fn total_epochs(&self) -> u64 {
        self.stages.iter().map(|s| s.epochs as u64).sum()
    }

    /// Every stage valid, at least one stage, and no faces stage after a
    /// sprite stage.
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.stages.is_empty() {
            return Err(TrainingError::Config("plan has no stages".into()));
        }
        for s in &self.stages {
            s.validate()?;
        }
        if let Some(first_sprite) = self.stages.iter().position(|s| s.dataset == DatasetKind::Pokemon) {
            if self.stages[first_sprite..].iter().any(|s| s.dataset == DatasetKind::Faces) {
                return Err(TrainingError::Config("faces stages must precede sprite stages".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_toml(text: &str) -> Result<TrainingPlan, TrainingError> {
        let plan: TrainingPlan = toml::from_str(text).map_err(|e| TrainingError::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_plan_mirrors_schedule() {
        let p = transfer_plan(0);
        let summary: Vec<_> = p
            .stages
            .iter()
            .map(|s| (s.dataset, s.epochs, s.learning_rate, s.batch_size))
            .collect();
        use DatasetKind::*;
        assert_eq!(
            summary,
            vec![
                (Faces, 10, 1e-4, 128),
                (Faces, 50, 1e-5, 128),
                (Pokemon, 100, 5e-5, 256),
                (Pokemon, 100, 2e-5, 256),
                (Pokemon, 100, 1e-5, 256),
            ]
        );
        assert_eq!(p.initialization, Initialization::Fresh);
        p.validate().unwrap();
    }

    #[test]
    fn baseline_plan_totals() {
        let p = baseline_plan(0);
        assert_eq!(p.stages.len(), 11);
        assert_eq!(p.total_epochs(), 550);
        assert!(p.stages.iter().all(|s| s.dataset == DatasetKind::Pokemon));
        assert_eq!(p.stages[0].batch_size, 128);
        assert!(p.stages[1..].iter().all(|s| s.batch_size == 256 && s.learning_rate == 1e-5));
        assert_eq!(p.initialization, Initialization::Fresh);
    }

    #[test]
    fn scaling_rounds_up() {
        let t: Vec<u32> = transfer_plan(0).scaled(0.1).unwrap().stages.iter().map(|s| s.epochs).collect();
        assert_eq!(t, vec![1, 5, 10, 10, 10]);
        let b = baseline_plan(0).scaled(0.02).unwrap();
        assert!(b.stages.iter().all(|s| s.epochs == 1));
        assert!(transfer_plan(0).scaled(0.0).is_err());
        assert_eq!(transfer_plan(0).scaled(0.013).unwrap().stages[0].epochs, 1);
    }

    #[test]
    fn toml_round_trip() {
        for plan in [transfer_plan(7), baseline_plan(9)] {
            assert_eq!(TrainingPlan::from_toml(&plan.to_toml()).unwrap(), plan);
        }
    }

    #[test]
    fn rejects_bad_stages() {
        let mut p = transfer_plan(0);
        p.stages[0].epochs = 0;
        assert!(p.validate().is_err());
        let mut p = transfer_plan(0);
        p.stages.swap(0, 4);
        assert!(p.validate().is_err());
        let mut p = baseline_plan(0);
        p.stages[3].batch_size = 0;
        assert!(p.validate().is_err());
    }
}
