use std::collections::BTreeMap;
use std::str::FromStr;

use super::{EvalError, ExperimentArm, ExperimentResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Single input: 660 nm, visible.
    Table1,
    /// Image + mask: 660 nm + masks, visible + masks.
    Table2,
    /// Two spectra: 660 nm + visible.
    Table3,
}

impl Layout {
    pub fn arms(self) -> &'static [ExperimentArm] {
        match self {
            Layout::Table1 => &[ExperimentArm::SingleNb, ExperimentArm::SingleVis],
            Layout::Table2 => &[ExperimentArm::MultiNbMask, ExperimentArm::MultiVisMask],
            Layout::Table3 => &[ExperimentArm::MultiNbVis],
        }
    }
}

impl FromStr for Layout {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table1" => Ok(Layout::Table1),
            "table2" => Ok(Layout::Table2),
            "table3" => Ok(Layout::Table3),
            other => Err(EvalError::UnknownLayout(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

impl FromStr for TableFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

const MISSING: &str = "—";
const MODEL_ORDER: [&str; 4] = ["MobileNetV1", "DenseNet121", "ResNet50", "VGG19"];

/// Two-decimal rendering, rounding half up on the shortest decimal
/// representation of `v` (so 98.265 becomes 98.27, not 98.26).
pub fn format_percent(v: f64) -> String {
    if !v.is_finite() {
        return MISSING.to_string();
    }
    let s = format!("{}", v.abs());
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(2)).collect();
    if frac.as_bytes().get(2).is_some_and(|&d| d >= b'5') {
        // propagate the carry through the digit string
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 2;
    let body = format!(
        "{}.{}",
        std::str::from_utf8(&digits[..split]).expect("ascii digits"),
        std::str::from_utf8(&digits[split..]).expect("ascii digits")
    );
    let zero = digits.iter().all(|&d| d == b'0');
    if v.is_sign_negative() && !zero {
        format!("-{body}")
    } else {
        body
    }
}

fn model_rank(name: &str) -> (usize, &str) {
    (MODEL_ORDER.iter().position(|&m| m == name).unwrap_or(MODEL_ORDER.len()), name)
}

/// Renders the accuracy grid of `layout`. Only models that appear in
/// `results` get a row; the first result per (model, arm) is used.
pub fn emit_table(results: &[ExperimentResult], layout: Layout, format: TableFormat) -> String {
    let arms = layout.arms();
    let mut grid: BTreeMap<(usize, &str), Vec<Option<f64>>> = BTreeMap::new();
    for r in results {
        let row = grid.entry(model_rank(&r.model_name)).or_insert_with(|| vec![None; arms.len()]);
        if let Some(col) = arms.iter().position(|&a| a == r.arm) {
            row[col].get_or_insert(r.accuracy_pct);
        }
    }
    let sep = match format {
        TableFormat::Text => " | ",
        TableFormat::Csv => ",",
    };
    let mut out = String::new();
    let header: Vec<&str> = std::iter::once("Model").chain(arms.iter().map(|a| a.column_label())).collect();
    out.push_str(&header.join(sep));
    out.push('\n');
    for ((_, name), cells) in grid {
        let mut line = vec![name.to_string()];
        line.extend(cells.iter().map(|c| c.map_or_else(|| MISSING.to_string(), format_percent)));
        out.push_str(&line.join(sep));
        out.push('\n');
    }
    out
}
