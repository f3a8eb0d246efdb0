//! Manifest of paired visible/narrowband captures, validation and
//! fruit-grouped train/validation splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest not found: {0}")]
    ManifestNotFound(PathBuf),
    #[error("manifest parse error{}: {message}", .record.map(|i| format!(" in record {i}")).unwrap_or_default())]
    ManifestParseError {
        record: Option<usize>,
        message: String,
    },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("cannot write manifest {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The three defect categories. Declaration order is the default label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectClass {
    Bruise,
    Stain,
    Rot,
}

impl DefectClass {
    pub const ALL: [DefectClass; 3] = [DefectClass::Bruise, DefectClass::Stain, DefectClass::Rot];

    pub fn as_str(self) -> &'static str {
        match self {
            DefectClass::Bruise => "bruise",
            DefectClass::Stain => "stain",
            DefectClass::Rot => "rot",
        }
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bruise" => Ok(DefectClass::Bruise),
            "stain" => Ok(DefectClass::Stain),
            "rot" => Ok(DefectClass::Rot),
            other => Err(format!("unknown defect class {other:?}")),
        }
    }
}

/// One paired capture. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub fruit_id: String,
    pub view_index: u32,
    pub defect_class: DefectClass,
    pub visible_path: PathBuf,
    pub narrowband_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

impl CaptureRecord {
    /// Where a derived copy of `path` goes inside an output directory:
    /// the same relative path when it stays inside the manifest root,
    /// `<class>/<fruit_id>/<file name>` otherwise.
    pub fn output_relative(&self, path: &Path) -> PathBuf {
        use std::path::Component;
        let contained = path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
        if contained {
            path.to_path_buf()
        } else {
            let name = path.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("image.png"));
            PathBuf::from(self.defect_class.as_str()).join(&self.fruit_id).join(name)
        }
    }

    /// Copy with every path mapped through [`CaptureRecord::output_relative`].
    pub fn with_output_paths(&self) -> CaptureRecord {
        CaptureRecord {
            visible_path: self.output_relative(&self.visible_path),
            narrowband_path: self.output_relative(&self.narrowband_path),
            mask_path: self.mask_path.as_deref().map(|p| self.output_relative(p)),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub records: Vec<CaptureRecord>,
    /// Directory that relative record paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<CaptureRecord>, root: impl Into<PathBuf>) -> Self {
        Self {
            class_names: DefectClass::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            records,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Label index of a class: its position in `class_names`.
    pub fn label_of(&self, class: DefectClass) -> usize {
        self.class_names
            .iter()
            .position(|n| n == class.as_str())
            .expect("validated manifests name every class")
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| self.label_of(r.defect_class)).collect()
    }

    /// Distinct fruit ids in sorted order.
    pub fn fruit_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.fruit_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn has_all_masks(&self) -> bool {
        self.records.iter().all(|r| r.mask_path.is_some())
    }

    /// Canonical JSON text (pretty, two-space indent, trailing newline).
    pub fn to_canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    /// SHA-256 of the canonical JSON, used in cache keys.
    pub fn content_hash(&self) -> String {
        crate::seed::content_hash(self.to_canonical_json().as_bytes())
    }

    /// Returns a copy whose record paths are rebased so they resolve the
    /// same files from `new_root`.
    pub fn rebased(&self, new_root: &Path) -> Manifest {
        let rebase = |p: &Path| relative_to(&self.root.join(p), new_root);
        let records = self
            .records
            .iter()
            .map(|r| CaptureRecord {
                visible_path: rebase(&r.visible_path),
                narrowband_path: rebase(&r.narrowband_path),
                mask_path: r.mask_path.as_deref().map(rebase),
                ..r.clone()
            })
            .collect();
        Manifest {
            class_names: self.class_names.clone(),
            records,
            root: new_root.to_path_buf(),
        }
    }
}

/// Expresses `target` relative to `base` when both are absolute (or both
/// relative); otherwise returns `target` unchanged.
pub fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
        }
    };
    let target = normalize(&abs(target));
    let base = normalize(&abs(base));
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return target;
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out
}

fn normalize(p: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Parses manifest JSON text. `root` is where relative paths resolve.
pub fn parse_manifest(text: &str, root: &Path) -> Result<Manifest, DatasetError> {
    let parse_err = |record: Option<usize>, message: String| DatasetError::ManifestParseError { record, message };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err(None, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(None, "top level must be an object".into()))?;

    let class_names: Vec<String> = serde_json::from_value(
        obj.get("class_names")
            .cloned()
            .ok_or_else(|| parse_err(None, "missing \"class_names\"".into()))?,
    )
    .map_err(|e| parse_err(None, format!("class_names: {e}")))?;
    if class_names.len() != 3 {
        return Err(parse_err(
            None,
            format!("class_names must list 3 classes, found {}", class_names.len()),
        ));
    }
    let distinct: BTreeSet<&String> = class_names.iter().collect();
    if distinct.len() != class_names.len() {
        return Err(parse_err(None, "class_names contains duplicates".into()));
    }
    for name in &class_names {
        DefectClass::from_str(name).map_err(|e| parse_err(None, format!("class_names: {e}")))?;
    }

    let raw_records = obj
        .get("records")
        .and_then(|r| r.as_array())
        .ok_or_else(|| parse_err(None, "missing \"records\" array".into()))?;
    let mut records = Vec::with_capacity(raw_records.len());
    for (i, raw) in raw_records.iter().enumerate() {
        let record: CaptureRecord =
            serde_json::from_value(raw.clone()).map_err(|e| parse_err(Some(i), e.to_string()))?;
        records.push(record);
    }
    Ok(Manifest {
        class_names,
        records,
        root: root.to_path_buf(),
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::ManifestNotFound(path.to_path_buf()),
        _ => DatasetError::ManifestParseError {
            record: None,
            message: format!("{}: {e}", path.display()),
        },
    })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &root)
}

/// Writes canonical JSON to `path`. Record paths are written as stored;
/// callers rebase first when the manifest moves.
pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), DatasetError> {
    let write_err = |source| DatasetError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(write_err)?;
    }
    std::fs::write(path, manifest.to_canonical_json()).map_err(write_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathField {
    Visible,
    Narrowband,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    MissingFile {
        record: usize,
        field: PathField,
        path: PathBuf,
    },
    MissingMask {
        record: usize,
    },
    SamePaths {
        record: usize,
    },
    DuplicateTriple {
        records: Vec<usize>,
        fruit_id: String,
        view_index: u32,
        defect_class: DefectClass,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::MissingFile { record, field, path } => {
                write!(f, "record {record}: {field:?} file missing: {}", path.display())
            }
            ValidationIssue::MissingMask { record } => write!(f, "record {record}: no mask_path"),
            ValidationIssue::SamePaths { record } => {
                write!(f, "record {record}: visible and narrowband paths are identical")
            }
            ValidationIssue::DuplicateTriple {
                records,
                fruit_id,
                view_index,
                defect_class,
            } => write!(
                f,
                "records {records:?} duplicate ({fruit_id}, {view_index}, {defect_class})"
            ),
        }
    }
}

/// Checks files and duplicates. An empty result means the manifest is usable.
/// `require_masks` reports records without a mask path.
pub fn validate_manifest(m: &Manifest, require_masks: bool) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for (i, r) in m.records.iter().enumerate() {
        if r.visible_path == r.narrowband_path {
            issues.push(ValidationIssue::SamePaths { record: i });
        }
        let mut check = |field, rel: &Path| {
            let path = m.resolve(rel);
            if !path.is_file() {
                issues.push(ValidationIssue::MissingFile { record: i, field, path });
            }
        };
        check(PathField::Visible, &r.visible_path);
        check(PathField::Narrowband, &r.narrowband_path);
        match &r.mask_path {
            Some(mask) => check(PathField::Mask, mask),
            None if require_masks => issues.push(ValidationIssue::MissingMask { record: i }),
            None => {}
        }
    }

    let mut groups: BTreeMap<(&str, u32, DefectClass), Vec<usize>> = BTreeMap::new();
    for (i, r) in m.records.iter().enumerate() {
        groups
            .entry((r.fruit_id.as_str(), r.view_index, r.defect_class))
            .or_default()
            .push(i);
    }
    let mut dups: Vec<_> = groups.into_iter().filter(|(_, idx)| idx.len() > 1).collect();
    dups.sort_by_key(|(_, idx)| idx[0]);
    for ((fruit_id, view_index, defect_class), records) in dups {
        issues.push(ValidationIssue::DuplicateTriple {
            records,
            fruit_id: fruit_id.to_string(),
            view_index,
            defect_class,
        });
    }
    issues
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.2,
            seed: 42,
        }
    }
}

/// Number of validation fruits for `n` fruits.
pub fn val_fruit_count(n: usize, val_fraction: f64) -> usize {
    if val_fraction <= 0.0 || n < 2 {
        return 0;
    }
    ((val_fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Splits by fruit id so no fruit appears on both sides. Sorted fruit ids
/// are shuffled with a ChaCha8 stream seeded by `spec.seed`; the first
/// `val_fruit_count` go to validation. Record order is preserved.
pub fn split_grouped(m: &Manifest, spec: SplitSpec) -> Result<(Manifest, Manifest), DatasetError> {
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(DatasetError::DegenerateSplit(format!(
            "val_fraction {} outside [0, 1)",
            spec.val_fraction
        )));
    }
    let subset = |keep: &dyn Fn(&CaptureRecord) -> bool| Manifest {
        class_names: m.class_names.clone(),
        records: m.records.iter().filter(|r| keep(r)).cloned().collect(),
        root: m.root.clone(),
    };
    if spec.val_fraction == 0.0 {
        return Ok((m.clone(), subset(&|_| false)));
    }
    let mut fruits = m.fruit_ids();
    if fruits.len() < 2 {
        return Err(DatasetError::DegenerateSplit(format!(
            "need at least 2 distinct fruits for a validation split, found {}",
            fruits.len()
        )));
    }
    let n_val = val_fruit_count(fruits.len(), spec.val_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    fruits.shuffle(&mut rng);
    let val_fruits: BTreeSet<String> = fruits.into_iter().take(n_val).collect();
    let train = subset(&|r| !val_fruits.contains(&r.fruit_id));
    let val = subset(&|r| val_fruits.contains(&r.fruit_id));
    Ok((train, val))
}

/// Per-class record counts; every class is present, zero if absent.
pub fn class_distribution(m: &Manifest) -> BTreeMap<DefectClass, usize> {
    let mut counts: BTreeMap<DefectClass, usize> = DefectClass::ALL.iter().map(|&c| (c, 0)).collect();
    for r in &m.records {
        *counts.entry(r.defect_class).or_default() += 1;
    }
    counts
}

/// Groups record indices by fruit id, in first-appearance order.
pub fn records_by_fruit(m: &Manifest) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in m.records.iter().enumerate() {
        groups
            .entry(r.fruit_id.as_str())
            .or_insert_with(|| {
                order.push(r.fruit_id.clone());
                Vec::new()
            })
            .push(i);
    }
    order
        .into_iter()
        .map(|id| {
            let idx = groups.remove(id.as_str()).unwrap_or_default();
            (id, idx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(fruit: &str, view: u32, class: DefectClass) -> CaptureRecord {
        CaptureRecord {
            fruit_id: fruit.to_string(),
            view_index: view,
            defect_class: class,
            visible_path: PathBuf::from(format!("{fruit}/{view}_vis.png")),
            narrowband_path: PathBuf::from(format!("{fruit}/{view}_nb.png")),
            mask_path: Some(PathBuf::from(format!("{fruit}/{view}_mask.png"))),
        }
    }

    fn touch_all(m: &Manifest) {
        for r in &m.records {
            for p in [&r.visible_path, &r.narrowband_path, r.mask_path.as_ref().unwrap()] {
                let full = m.resolve(p);
                std::fs::create_dir_all(full.parent().unwrap()).unwrap();
                std::fs::write(full, b"x").unwrap();
            }
        }
    }

    fn fruits_manifest(n_fruits: usize, views: u32) -> Manifest {
        let mut records = Vec::new();
        for f in 0..n_fruits {
            for v in 0..views {
                records.push(record(&format!("f{f:02}"), v, DefectClass::ALL[f % 3]));
            }
        }
        Manifest::new(records, "")
    }

    #[test]
    fn load_keeps_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(
            vec![
                record("b", 0, DefectClass::Rot),
                record("a", 1, DefectClass::Bruise),
                record("c", 0, DefectClass::Stain),
            ],
            dir.path(),
        );
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records, m.records);
        let ids: Vec<_> = loaded.records.iter().map(|r| r.fruit_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
    }

    #[test]
    fn missing_manifest_is_not_found() {
        let err = load_manifest(Path::new("/nonexistent/manifest.json")).unwrap_err();
        assert!(matches!(err, DatasetError::ManifestNotFound(_)));
    }

    #[test]
    fn unknown_class_names_the_record() {
        let text = r#"{"class_names": ["bruise", "stain", "rot"], "records": [
            {"fruit_id": "a", "view_index": 0, "defect_class": "rot", "visible_path": "a.png", "narrowband_path": "b.png", "mask_path": null},
            {"fruit_id": "a", "view_index": 1, "defect_class": "mold", "visible_path": "c.png", "narrowband_path": "d.png", "mask_path": null}
        ]}"#;
        match parse_manifest(text, Path::new("")) {
            Err(DatasetError::ManifestParseError { record: Some(1), message }) => {
                assert!(message.contains("mold"), "{message}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn class_names_must_be_three_distinct() {
        let two = r#"{"class_names": ["bruise", "rot"], "records": []}"#;
        let dup = r#"{"class_names": ["bruise", "rot", "rot"], "records": []}"#;
        for text in [two, dup] {
            assert!(matches!(
                parse_manifest(text, Path::new("")),
                Err(DatasetError::ManifestParseError { record: None, .. })
            ));
        }
    }

    #[test]
    fn class_names_order_defines_labels() {
        let text = r#"{"class_names": ["rot", "bruise", "stain"], "records": []}"#;
        let m = parse_manifest(text, Path::new("")).unwrap();
        assert_eq!(m.label_of(DefectClass::Rot), 0);
        assert_eq!(m.label_of(DefectClass::Stain), 2);
    }

    #[test]
    fn validation_clean_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fruits_manifest(2, 2);
        m.root = dir.path().to_path_buf();
        touch_all(&m);
        assert!(validate_manifest(&m, true).is_empty());

        std::fs::remove_file(m.resolve(&m.records[2].narrowband_path)).unwrap();
        let issues = validate_manifest(&m, true);
        assert_eq!(issues.len(), 1);
        assert!(matches!(
            issues[0],
            ValidationIssue::MissingFile { record: 2, field: PathField::Narrowband, .. }
        ));
    }

    #[test]
    fn missing_mask_only_when_required() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fruits_manifest(1, 1);
        m.root = dir.path().to_path_buf();
        touch_all(&m);
        m.records[0].mask_path = None;
        assert!(validate_manifest(&m, false).is_empty());
        assert_eq!(validate_manifest(&m, true), vec![ValidationIssue::MissingMask { record: 0 }]);
    }

    #[test]
    fn duplicate_triples_match_pairwise_scan() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fruits_manifest(3, 2);
        m.records.push(m.records[1].clone());
        m.records.push(m.records[4].clone());
        m.records.push(m.records[1].clone());
        m.root = dir.path().to_path_buf();
        touch_all(&m);

        // brute-force oracle: pairwise comparison, grouped by first index
        let key = |r: &CaptureRecord| (r.fruit_id.clone(), r.view_index, r.defect_class);
        let mut expected: Vec<Vec<usize>> = Vec::new();
        let mut seen = vec![false; m.len()];
        for i in 0..m.len() {
            if seen[i] {
                continue;
            }
            let mut group = vec![i];
            for j in i + 1..m.len() {
                if key(&m.records[i]) == key(&m.records[j]) {
                    group.push(j);
                    seen[j] = true;
                }
            }
            if group.len() > 1 {
                expected.push(group);
            }
        }
        let found: Vec<Vec<usize>> = validate_manifest(&m, true)
            .into_iter()
            .filter_map(|issue| match issue {
                ValidationIssue::DuplicateTriple { records, .. } => Some(records),
                _ => None,
            })
            .collect();
        assert_eq!(found, expected);
        assert_eq!(found, vec![vec![1, 6, 8], vec![4, 7]]);
    }

    #[test]
    fn split_ten_fruits_matches_seeded_shuffle_oracle() {
        let m = fruits_manifest(10, 3);
        let spec = SplitSpec { val_fraction: 0.2, seed: 7 };
        let (train, val) = split_grouped(&m, spec).unwrap();
        assert_eq!(val.fruit_ids().len(), 2);
        assert_eq!(train.fruit_ids().len(), 8);
        assert_eq!(val.len(), 6);

        // oracle: shuffle sorted ids with the same seeded stream
        let mut ids: Vec<String> = (0..10).map(|f| format!("f{f:02}")).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
        let mut expected_val: Vec<String> = ids[..2].to_vec();
        expected_val.sort();
        assert_eq!(val.fruit_ids(), expected_val);

        let (train2, val2) = split_grouped(&m, spec).unwrap();
        assert_eq!((train2, val2), (train, val));
    }

    #[test]
    fn zero_fraction_and_degenerate_split() {
        let m = fruits_manifest(3, 2);
        let (train, val) = split_grouped(&m, SplitSpec { val_fraction: 0.0, seed: 1 }).unwrap();
        assert_eq!(train, m);
        assert!(val.is_empty());

        let single = fruits_manifest(1, 5);
        assert!(matches!(
            split_grouped(&single, SplitSpec { val_fraction: 0.2, seed: 1 }),
            Err(DatasetError::DegenerateSplit(_))
        ));
        assert!(split_grouped(&m, SplitSpec { val_fraction: 1.0, seed: 1 }).is_err());
    }

    #[test]
    fn val_count_clamps() {
        assert_eq!(val_fruit_count(10, 0.2), 2);
        assert_eq!(val_fruit_count(3, 0.01), 1);
        assert_eq!(val_fruit_count(3, 0.99), 2);
        assert_eq!(val_fruit_count(46, 0.2), 9);
    }

    #[test]
    fn class_distribution_examples() {
        let empty = Manifest::new(vec![], "");
        assert!(class_distribution(&empty).values().all(|&c| c == 0));
        let m = Manifest::new(
            vec![
                record("a", 0, DefectClass::Bruise),
                record("a", 1, DefectClass::Bruise),
                record("b", 0, DefectClass::Rot),
            ],
            "",
        );
        let d = class_distribution(&m);
        assert_eq!(d[&DefectClass::Bruise], 2);
        assert_eq!(d[&DefectClass::Stain], 0);
        assert_eq!(d[&DefectClass::Rot], 1);
    }

    #[test]
    fn published_counts_reproduce_total() {
        let mut records = Vec::new();
        for (class, n) in [(DefectClass::Bruise, 4539), (DefectClass::Stain, 3136), (DefectClass::Rot, 3094)] {
            for v in 0..n {
                records.push(record(&format!("{class}_{}", v / 120), v % 120, class));
            }
        }
        let d = class_distribution(&Manifest::new(records, ""));
        assert_eq!(d.values().copied().collect::<Vec<_>>(), vec![4539, 3136, 3094]);
        assert_eq!(d.values().sum::<usize>(), 10769);
    }

    #[test]
    fn relative_paths_between_dirs() {
        assert_eq!(
            relative_to(Path::new("/a/b/c.png"), Path::new("/a/d")),
            PathBuf::from("../b/c.png")
        );
        assert_eq!(relative_to(Path::new("/a/b/c.png"), Path::new("/a/b")), PathBuf::from("c.png"));
    }

    fn arb_manifest() -> impl Strategy<Value = Manifest> {
        prop::collection::vec((0usize..12, 0u32..6, 0usize..3), 0..60).prop_map(|rows| {
            let records = rows
                .into_iter()
                .map(|(f, v, c)| record(&format!("fruit{f}"), v, DefectClass::ALL[c]))
                .collect();
            Manifest::new(records, "")
        })
    }

    proptest! {
        #[test]
        fn distribution_sums_to_record_count(m in arb_manifest()) {
            prop_assert_eq!(class_distribution(&m).values().sum::<usize>(), m.len());
        }

        #[test]
        fn canonical_json_round_trips(m in arb_manifest()) {
            let text = m.to_canonical_json();
            let back = parse_manifest(&text, Path::new("")).unwrap();
            prop_assert_eq!(back.to_canonical_json(), text);
        }
    }
}
