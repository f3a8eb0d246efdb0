use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneName {
    /// Four stride-2 conv blocks (16/32/64/64), no external assets.
    Tiny,
    MobilenetV1,
    Densenet121,
    Resnet50,
    Vgg19,
}

impl BackboneName {
    pub const ALL: [BackboneName; 5] = [
        BackboneName::Tiny,
        BackboneName::MobilenetV1,
        BackboneName::Densenet121,
        BackboneName::Resnet50,
        BackboneName::Vgg19,
    ];

    /// Channels of the architecture's final feature map.
    pub fn feature_depth(self) -> usize {
        match self {
            BackboneName::Tiny => 64,
            BackboneName::MobilenetV1 => 1024,
            BackboneName::Densenet121 => 1024,
            BackboneName::Resnet50 => 2048,
            BackboneName::Vgg19 => 512,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Tiny => "tiny",
            BackboneName::MobilenetV1 => "mobilenet_v1",
            BackboneName::Densenet121 => "densenet121",
            BackboneName::Resnet50 => "resnet50",
            BackboneName::Vgg19 => "vgg19",
        }
    }

    /// Name as printed in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            BackboneName::Tiny => "Tiny",
            BackboneName::MobilenetV1 => "MobileNetV1",
            BackboneName::Densenet121 => "DenseNet121",
            BackboneName::Resnet50 => "ResNet50",
            BackboneName::Vgg19 => "VGG19",
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackboneName::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown backbone {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub pretrained: bool,
    /// `[height, width, channels]`; channels is always 3.
    pub input_size: [usize; 3],
    pub feature_depth: usize,
}

impl BackboneSpec {
    pub fn new(name: BackboneName, pretrained: bool, height: usize, width: usize) -> Self {
        Self {
            name,
            pretrained,
            input_size: [height, width, 3],
            feature_depth: name.feature_depth(),
        }
    }

    pub fn tiny(height: usize, width: usize) -> Self {
        Self::new(BackboneName::Tiny, false, height, width)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name == BackboneName::Tiny && self.pretrained {
            return Err(ModelError::SpecInvalid("the tiny backbone has no pretrained weights".into()));
        }
        if self.feature_depth != self.name.feature_depth() {
            return Err(ModelError::SpecInvalid(format!(
                "{} produces depth {}, spec says {}",
                self.name,
                self.name.feature_depth(),
                self.feature_depth
            )));
        }
        if self.input_size[2] != 3 || self.input_size[0] == 0 || self.input_size[1] == 0 {
            return Err(ModelError::SpecInvalid(format!("input size {:?} must be [H, W, 3]", self.input_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    GlobalAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub pooling: Pooling,
    pub hidden_sizes: [usize; 2],
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            pooling: Pooling::GlobalAverage,
            hidden_sizes: [256, 128],
            dropout_rate: 0.5,
            num_classes: 3,
        }
    }
}

impl HeadSpec {
    /// Trainable parameters of the dense stack for a `depth`-wide input.
    pub fn param_count(&self, depth: usize) -> usize {
        let [h1, h2] = self.hidden_sizes;
        (depth + 1) * h1 + (h1 + 1) * h2 + (h2 + 1) * self.num_classes
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::SpecInvalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.num_classes < 2 || self.hidden_sizes.contains(&0) {
            return Err(ModelError::SpecInvalid("head sizes must be positive and num_classes >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub mode: InputMode,
    pub backbone_a: BackboneSpec,
    pub backbone_b: Option<BackboneSpec>,
    pub share_weights: bool,
    pub head: HeadSpec,
}

impl ClassifierSpec {
    pub fn single(backbone: BackboneSpec) -> Self {
        Self {
            mode: InputMode::Single,
            backbone_a: backbone,
            backbone_b: None,
            share_weights: false,
            head: HeadSpec::default(),
        }
    }

    /// Two untied branches of the same architecture.
    pub fn multi(backbone: BackboneSpec) -> Self {
        Self {
            mode: InputMode::Multi,
            backbone_a: backbone,
            backbone_b: Some(backbone),
            share_weights: false,
            head: HeadSpec::default(),
        }
    }

    pub fn shared(backbone: BackboneSpec) -> Self {
        Self {
            mode: InputMode::Multi,
            backbone_a: backbone,
            backbone_b: None,
            share_weights: true,
            head: HeadSpec::default(),
        }
    }

    /// Branch-B architecture of a multi-input spec.
    pub fn branch_b(&self) -> Option<BackboneSpec> {
        match self.mode {
            InputMode::Single => None,
            InputMode::Multi if self.share_weights => Some(self.backbone_a),
            InputMode::Multi => self.backbone_b,
        }
    }

    /// Depth entering the pooling layer.
    pub fn fused_depth(&self) -> usize {
        self.backbone_a.feature_depth + self.branch_b().map_or(0, |b| b.feature_depth)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.backbone_a.validate()?;
        self.head.validate()?;
        if self.mode == InputMode::Multi {
            let b = self.branch_b().ok_or_else(|| {
                ModelError::SpecInvalid("multi-input mode needs backbone_b or share_weights".into())
            })?;
            b.validate()?;
            if b.input_size != self.backbone_a.input_size {
                return Err(ModelError::BranchShapeMismatch(format!(
                    "branch inputs {:?} and {:?} differ",
                    self.backbone_a.input_size, b.input_size
                )));
            }
        }
        Ok(())
    }
}
