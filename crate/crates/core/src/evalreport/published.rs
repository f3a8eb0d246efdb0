//! Published accuracies, used as report fixtures.

use super::{ExperimentArm, ExperimentResult};

/// (model, arm, accuracy %) for every cell of the three published tables.
pub const PUBLISHED: [(&str, ExperimentArm, f64); 20] = [
    ("MobileNetV1", ExperimentArm::SingleNb, 98.8),
    ("MobileNetV1", ExperimentArm::SingleVis, 98.26),
    ("DenseNet121", ExperimentArm::SingleNb, 95.39),
    ("DenseNet121", ExperimentArm::SingleVis, 98.46),
    ("ResNet50", ExperimentArm::SingleNb, 95.79),
    ("ResNet50", ExperimentArm::SingleVis, 96.10),
    ("VGG19", ExperimentArm::SingleNb, 33.36),
    ("VGG19", ExperimentArm::SingleVis, 33.22),
    ("MobileNetV1", ExperimentArm::MultiNbMask, 75.14),
    ("MobileNetV1", ExperimentArm::MultiVisMask, 69.85),
    ("DenseNet121", ExperimentArm::MultiNbMask, 72.59),
    ("DenseNet121", ExperimentArm::MultiVisMask, 85.71),
    ("ResNet50", ExperimentArm::MultiNbMask, 35.63),
    ("ResNet50", ExperimentArm::MultiVisMask, 52.87),
    ("VGG19", ExperimentArm::MultiNbMask, 65.78),
    ("VGG19", ExperimentArm::MultiVisMask, 66.04),
    ("MobileNetV1", ExperimentArm::MultiNbVis, 90.91),
    ("DenseNet121", ExperimentArm::MultiNbVis, 76.70),
    ("ResNet50", ExperimentArm::MultiNbVis, 60.36),
    ("VGG19", ExperimentArm::MultiNbVis, 36.36),
];

pub fn published_results() -> Vec<ExperimentResult> {
    PUBLISHED.iter().map(|&(model, arm, acc)| ExperimentResult::fixture(model, arm, acc)).collect()
}
