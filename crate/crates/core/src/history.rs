use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch training and validation losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl LossHistory {
    /// `epoch,train_loss,val_loss` with 1-based epochs.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            s.push_str(&format!("{},{t},{v}\n", i + 1));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reported to training observers after every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}
