use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::loader::Modality;

/// One input recipe of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentArm {
    SingleNb,
    SingleVis,
    MultiNbMask,
    MultiVisMask,
    MultiNbVis,
}

impl ExperimentArm {
    pub const ALL: [ExperimentArm; 5] = [
        ExperimentArm::SingleNb,
        ExperimentArm::SingleVis,
        ExperimentArm::MultiNbMask,
        ExperimentArm::MultiVisMask,
        ExperimentArm::MultiNbVis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentArm::SingleNb => "single_nb",
            ExperimentArm::SingleVis => "single_vis",
            ExperimentArm::MultiNbMask => "multi_nb_mask",
            ExperimentArm::MultiVisMask => "multi_vis_mask",
            ExperimentArm::MultiNbVis => "multi_nb_vis",
        }
    }

    /// Source of input A and, for multi-input arms, input B.
    pub fn inputs(self) -> (Modality, Option<Modality>) {
        match self {
            ExperimentArm::SingleNb => (Modality::Narrowband, None),
            ExperimentArm::SingleVis => (Modality::Visible, None),
            ExperimentArm::MultiNbMask => (Modality::Narrowband, Some(Modality::Mask)),
            ExperimentArm::MultiVisMask => (Modality::Visible, Some(Modality::Mask)),
            ExperimentArm::MultiNbVis => (Modality::Narrowband, Some(Modality::Visible)),
        }
    }

    pub fn is_multi(self) -> bool {
        self.inputs().1.is_some()
    }

    pub fn modalities(self) -> Vec<Modality> {
        let (a, b) = self.inputs();
        std::iter::once(a).chain(b).collect()
    }

    /// Column heading in report tables.
    pub fn column_label(self) -> &'static str {
        match self {
            ExperimentArm::SingleNb => "660 nm",
            ExperimentArm::SingleVis => "Visible",
            ExperimentArm::MultiNbMask => "660 nm + Masks",
            ExperimentArm::MultiVisMask => "Visible + Masks",
            ExperimentArm::MultiNbVis => "660 nm + Visible",
        }
    }
}

impl fmt::Display for ExperimentArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentArm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentArm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown arm {s:?}"))
    }
}
