use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, ScorerConfig, ScorerError, ScoringModel};

pub const CHECKPOINT_FORMAT: &str = "campus-scorer/1";

/// Tensor shapes, echoed for readers that do not parse the nested weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapes {
    pub map_scale: [usize; 1],
    pub map_shift: [usize; 1],
    pub w1: [usize; 2],
    pub b1: [usize; 1],
    pub w2: [usize; 2],
    pub b2: [usize; 1],
}

impl Shapes {
    pub fn of(model: &ScoringModel<f64>) -> Self {
        let (i, h) = (model.mlp.input_dim, model.mlp.hidden);
        Self {
            map_scale: [model.map.dim()],
            map_shift: [model.map.dim()],
            w1: [h, i],
            b1: [h],
            w2: [1, h],
            b2: [1],
        }
    }
}

/// On-disk scorer: shapes, row-major weights and the training config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub feature_dim: usize,
    pub shapes: Shapes,
    pub scorer: ScoringModel<f64>,
    pub discriminator: Option<Mlp<f64>>,
    pub config: ScorerConfig<f64>,
}

impl Checkpoint {
    pub fn new(
        scorer: ScoringModel<f64>,
        discriminator: Option<Mlp<f64>>,
        config: ScorerConfig<f64>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            feature_dim: scorer.input_dim() / 2,
            shapes: Shapes::of(&scorer),
            scorer,
            discriminator,
            config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        let text = serde_json::to_string(self).map_err(|e| ScorerError::Checkpoint(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| ScorerError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ScorerError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ScorerError::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<(), ScorerError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ScorerError::Checkpoint(format!(
                "unsupported format `{}`",
                self.format
            )));
        }
        let m = &self.scorer.mlp;
        let consistent = m.w1.len() == m.hidden * m.input_dim
            && m.b1.len() == m.hidden
            && m.w2.len() == m.hidden
            && self.scorer.map.scale.len() == m.input_dim
            && self.scorer.map.shift.len() == m.input_dim
            && m.input_dim == 2 * self.feature_dim
            && self.shapes == Shapes::of(&self.scorer);
        if !consistent {
            return Err(ScorerError::Checkpoint("inconsistent tensor shapes".into()));
        }
        if !self.scorer.is_finite() {
            return Err(ScorerError::Checkpoint("non-finite weights".into()));
        }
        Ok(())
    }
}
