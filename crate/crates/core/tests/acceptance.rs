//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nbdefect::dataset::{split_grouped, CaptureRecord, DefectClass, Manifest, SplitSpec};
use nbdefect::evalreport::{
    accuracy, confusion_matrix, emit_table, published_results, trace, ExperimentArm, Layout, TableFormat,
};
use nbdefect::maskproc::{connected_components, BinaryMask, Connectivity};
use nbdefect::model::layers::softmax;
use nbdefect::model::{
    asset_path, Backbone, BackboneName, BackboneSpec, Batch, Classifier, ClassifierSpec, ConvLayout, HeadSpec,
    InputMode, Mode,
};
use nbdefect::pipeline::{run_pipeline, PipelineConfig};
use nbdefect::registration::{estimate_homography_dlt, register_pair, Correspondence, Homography, MatcherConfig};
use nbdefect::synthgen::{
    band_transmission, random_scene, render_view, render_view_in_frame, RenderMode, RenderSettings, SpectralBand,
};
use nbdefect::trainer::{make_batches, History, HISTORY_FILE};
use ndarray::{Array2, Array4};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const DESK_ARMS: [ExperimentArm; 3] = [ExperimentArm::SingleNb, ExperimentArm::MultiNbMask, ExperimentArm::MultiNbVis];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn within(limit: Duration, started: Instant, what: &str) -> Result<(), String> {
    let took = started.elapsed();
    if took > limit {
        return Err(format!("{what} took {took:.1?}, limit {limit:?}"));
    }
    Ok(())
}

// ---------------------------------------------------------------- criterion 1

fn softmax_rows_sum_to_one() -> Result<(), String> {
    let strategy = (1usize..8, 2usize..6)
        .prop_flat_map(|(n, k)| (Just((n, k)), prop::collection::vec(-50.0f64..50.0, n * k)));
    runner(256)
        .run(&strategy, |((n, k), v)| {
            let p = softmax(&Array2::from_shape_vec((n, k), v).unwrap());
            for row in p.rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
                prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
            Ok(())
        })
        .map_err(|e| format!("softmax: {e}"))
}

/// Assets with one 1x1 convolution ending at the architecture's depth.
fn write_toy_assets(dir: &Path, size: usize) -> Result<(), String> {
    for name in BackboneName::ALL.into_iter().filter(|&n| n != BackboneName::Tiny) {
        let spec = BackboneSpec::new(name, true, size, size);
        let layout = [ConvLayout {
            kernel: 1,
            stride: 4,
            pad: 0,
            in_channels: 3,
            out_channels: name.feature_depth(),
            relu: true,
            batch_norm: false,
        }];
        let b = Backbone::<f32>::from_layout(&spec, &layout).map_err(|e| e.to_string())?;
        b.save_asset(&asset_path(dir, name)).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn fused_depth_is_sum() -> Result<(), String> {
    const SIZE: usize = 16;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_toy_assets(dir.path(), SIZE)?;
    let spec_for = |n: BackboneName| BackboneSpec::new(n, n != BackboneName::Tiny, SIZE, SIZE);
    for a in BackboneName::ALL {
        for b in BackboneName::ALL {
            let spec = ClassifierSpec {
                mode: InputMode::Multi,
                backbone_a: spec_for(a),
                backbone_b: Some(spec_for(b)),
                share_weights: false,
                head: HeadSpec::default(),
            };
            let expected = a.feature_depth() + b.feature_depth();
            if spec.fused_depth() != expected {
                return Err(format!("{a:?}+{b:?}: spec depth {} != {expected}", spec.fused_depth()));
            }
            let model = Classifier::<f32>::build(&spec, 1, Some(dir.path())).map_err(|e| e.to_string())?;
            let fc1 = model
                .named_params()
                .into_iter()
                .find(|(n, _)| n == "head.fc1.weight")
                .map(|(_, v)| v.len())
                .ok_or("no head.fc1.weight")?;
            if fc1 != expected * 256 {
                return Err(format!("{a:?}+{b:?}: fc1 has {fc1} weights, expected {}", expected * 256));
            }
            let x = Array4::from_elem((2, SIZE, SIZE, 3), 0.5f32);
            let probs = model.forward(&Batch::pair(x.clone(), x), Mode::Eval).map_err(|e| e.to_string())?;
            if probs.dim() != (2, 3) {
                return Err(format!("{a:?}+{b:?}: output {:?}", probs.dim()));
            }
        }
    }
    Ok(())
}

fn band_half_max_at_fwhm() -> Result<(), String> {
    runner(256)
        .run(&(400.0f64..900.0, 1.0f64..200.0), |(center, fwhm)| {
            let band = SpectralBand::new(center, fwhm).unwrap();
            prop_assert!((band_transmission(&band, center).unwrap() - 1.0).abs() <= 1e-12);
            for lambda in [center - fwhm / 2.0, center + fwhm / 2.0] {
                prop_assert!((band_transmission(&band, lambda).unwrap() - 0.5).abs() <= 1e-9);
            }
            Ok(())
        })
        .map_err(|e| format!("band: {e}"))?;
    let b = SpectralBand::BP660;
    for lambda in [630.0, 690.0] {
        let t = band_transmission(&b, lambda).map_err(|e| e.to_string())?;
        if (t - 0.5).abs() > 1e-9 {
            return Err(format!("BP660 at {lambda} nm gives {t}"));
        }
    }
    Ok(())
}

fn dlt_reprojects_exact_correspondences() -> Result<(), String> {
    let h_strategy = (
        prop::array::uniform4(-0.2f64..0.2),
        (-30.0f64..30.0, -30.0f64..30.0),
        (-2e-4f64..2e-4, -2e-4f64..2e-4),
    );
    let pts = prop::collection::vec((0.0f64..256.0, 0.0f64..222.0), 8..24);
    runner(200)
        .run(&(h_strategy, pts), |(([a, b, d, e], (c, f), (g, h)), pts)| {
            let truth = Homography::from_matrix([[1.0 + a, b, c], [d, 1.0 + e, f], [g, h, 1.0]]);
            let corrs: Vec<_> = pts.iter().map(|&(x, y)| Correspondence::new((x, y), truth.apply(x, y))).collect();
            let est = estimate_homography_dlt(&corrs).unwrap();
            for c in &corrs {
                let err = est.reprojection_error(c);
                prop_assert!(err <= 1e-6, "reprojection error {err}");
            }
            Ok(())
        })
        .map_err(|e| format!("dlt: {e}"))
}

fn random_manifest(fruits: &[(u8, u8)]) -> Manifest {
    let classes = [DefectClass::Bruise, DefectClass::Rot, DefectClass::Stain];
    let records = fruits
        .iter()
        .enumerate()
        .map(|(i, &(fruit, class))| CaptureRecord {
            fruit_id: format!("f{fruit}"),
            view_index: i as u32,
            defect_class: classes[class as usize],
            visible_path: format!("{i}_vis.png").into(),
            narrowband_path: format!("{i}_nb.png").into(),
            mask_path: None,
        })
        .collect();
    Manifest::new(records, "/data")
}

fn split_is_fruit_disjoint() -> Result<(), String> {
    let strategy = (prop::collection::vec((0u8..25, 0u8..3), 2..80), 0.05f64..0.95, any::<u64>());
    runner(200)
        .run(&strategy, |(fruits, val_fraction, seed)| {
            let m = random_manifest(&fruits);
            let distinct: BTreeSet<_> = m.records.iter().map(|r| r.fruit_id.clone()).collect();
            prop_assume!(distinct.len() >= 2);
            let (train, val) = split_grouped(&m, SplitSpec { val_fraction, seed }).unwrap();
            let ids = |m: &Manifest| m.records.iter().map(|r| r.fruit_id.clone()).collect::<BTreeSet<_>>();
            prop_assert!(ids(&train).is_disjoint(&ids(&val)));
            prop_assert_eq!(train.len() + val.len(), m.len());
            prop_assert!(!train.is_empty() && !val.is_empty());
            Ok(())
        })
        .map_err(|e| format!("split: {e}"))
}

/// Breadth-first flood fill; regions as sorted pixel lists, sorted.
fn flood_fill_regions(mask: &BinaryMask, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || seen[y * w + x] {
                continue;
            }
            let mut region = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            seen[y * w + x] = true;
            while let Some((cx, cy)) = queue.pop_front() {
                region.push((cx, cy));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            region.sort_by_key(|&(x, y)| (y, x));
            regions.push(region);
        }
    }
    regions.sort();
    regions
}

fn components_match_flood_fill() -> Result<(), String> {
    let strategy = (1usize..=64, 1usize..=64, 0.0f64..1.0, any::<u64>());
    runner(200)
        .run(&strategy, |(w, h, density, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density));
            for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
                let regions = connected_components(&mask, conn);
                let mut got: Vec<Vec<(usize, usize)>> = regions
                    .iter()
                    .map(|r| {
                        let mut p = r.pixels.clone();
                        p.sort_by_key(|&(x, y)| (y, x));
                        p
                    })
                    .collect();
                got.sort();
                prop_assert_eq!(&got, &flood_fill_regions(&mask, eight));
                for r in &regions {
                    prop_assert_eq!(r.area, r.pixels.len());
                }
                let labels: Vec<u32> = regions.iter().map(|r| r.label).collect();
                prop_assert_eq!(labels, (1..=regions.len() as u32).collect::<Vec<_>>());
            }
            Ok(())
        })
        .map_err(|e| format!("components: {e}"))
}

fn accuracy_is_confusion_trace() -> Result<(), String> {
    let strategy = prop::collection::vec((0usize..3, 0usize..3), 1..300);
    runner(256)
        .run(&strategy, |pairs| {
            let (pred, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let acc = accuracy(&pred, &labels).unwrap();
            let m = confusion_matrix(&pred, &labels, 3).unwrap();
            let n: u64 = m.iter().flatten().sum();
            prop_assert_eq!(n, labels.len() as u64);
            prop_assert!((acc - 100.0 * trace(&m) as f64 / n as f64).abs() <= 1e-12);
            Ok(())
        })
        .map_err(|e| format!("accuracy: {e}"))
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    softmax_rows_sum_to_one()?;
    fused_depth_is_sum()?;
    band_half_max_at_fwhm()?;
    dlt_reprojects_exact_correspondences()?;
    split_is_fruit_disjoint()?;
    components_match_flood_fill()?;
    accuracy_is_confusion_trace()?;
    within(Duration::from_secs(120), start, "property suite")?;
    Ok(format!("7 property groups held ({:.1?})", start.elapsed()))
}

// ---------------------------------------------------------------- criterion 2

const FD_EPS: f64 = 1e-6;

/// Settles running normalization statistics on `batch` so evaluation
/// mode sees realistic feature scales.
fn calibrated(mut model: Classifier<f64>, batch: &Batch<f64>, labels: &[usize]) -> Result<Classifier<f64>, String> {
    for step in 0..200 {
        let (_, _, g) = model
            .loss_and_grad(batch, labels, Mode::Train { dropout_seed: step }, false)
            .map_err(|e| e.to_string())?;
        model.update_norm_stats(&g.norm_stats);
    }
    Ok(model)
}

fn head_gradient_failures(model: &Classifier<f64>, batch: &Batch<f64>, labels: &[usize]) -> Result<(usize, usize), String> {
    let (_, _, grads) = model.loss_and_grad(batch, labels, Mode::Eval, false).map_err(|e| e.to_string())?;
    // the backbone is frozen in evaluation mode, so only the head is rerun
    let features = model.features(batch, Mode::Eval).map_err(|e| e.to_string())?;
    let mut work = model.clone();
    let (mut checked, mut failed) = (0, 0);
    for (pi, name) in model.param_names().iter().enumerate() {
        if !name.starts_with("head.") {
            continue;
        }
        let g = grads.entries[pi].clone().ok_or_else(|| format!("{name}: no gradient"))?;
        for j in (0..g.len()).step_by(13) {
            let original = work.params_mut()[pi][j];
            work.params_mut()[pi][j] = original + FD_EPS;
            let lp = work.head_loss(&features, labels, Mode::Eval).map_err(|e| e.to_string())?;
            work.params_mut()[pi][j] = original - FD_EPS;
            let lm = work.head_loss(&features, labels, Mode::Eval).map_err(|e| e.to_string())?;
            work.params_mut()[pi][j] = original;
            let numeric = (lp - lm) / (2.0 * FD_EPS);
            let diff = (g[j] - numeric).abs();
            checked += 1;
            if diff > 1e-3 * g[j].abs().max(numeric.abs()) && diff > 1e-8 {
                failed += 1;
            }
        }
    }
    Ok((checked, failed))
}

fn criterion2() -> Outcome {
    let start = Instant::now();
    let mut total = 0;
    for seed in 0..5u64 {
        for multi in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut images = || Array4::from_shape_fn((4, 16, 16, 3), |_| rng.random_range(0.0..1.0));
            let tiny = BackboneSpec::tiny(16, 16);
            let (spec, batch) = if multi {
                (ClassifierSpec::multi(tiny), Batch::pair(images(), images()))
            } else {
                (ClassifierSpec::single(tiny), Batch::single(images()))
            };
            let labels = [0, 1, 2, 1];
            let model = Classifier::<f64>::build(&spec, seed, None).map_err(|e| e.to_string())?;
            let model = calibrated(model, &batch, &labels)?;
            let (checked, failed) = head_gradient_failures(&model, &batch, &labels)?;
            if failed > 0 {
                return Err(format!("seed {seed} multi={multi}: {failed}/{checked} head entries off by >1e-3 relative"));
            }
            total += checked;
        }
    }
    within(Duration::from_secs(60), start, "gradient check")?;
    Ok(format!("{total} head entries within 1e-3 relative over 5 seeds x 2 modes ({:.1?})", start.elapsed()))
}

// ---------------------------------------------------------- criteria 3, 4, 7

struct DeskRun {
    accuracies: Vec<(ExperimentArm, f64)>,
    history: String,
    train_records: usize,
    seconds: f64,
}

fn desk_run(root: &Path, seed: u64, arms: &[ExperimentArm]) -> Result<DeskRun, String> {
    let mut cfg = PipelineConfig::desk_scale(root);
    cfg.master_seed = seed;
    cfg.arms = arms.to_vec();
    let start = Instant::now();
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let accuracies = arms
        .iter()
        .map(|&arm| {
            report
                .results
                .iter()
                .find(|r| r.arm == arm)
                .map(|r| (arm, r.accuracy_pct))
                .ok_or_else(|| format!("no result for {arm}"))
        })
        .collect::<Result<_, _>>()?;
    let history_path = root.join("results").join("tiny").join("single_nb").join(HISTORY_FILE);
    let history = std::fs::read_to_string(&history_path).map_err(|e| format!("{}: {e}", history_path.display()))?;
    let (train, _) = split_grouped(&report.manifest, cfg.effective().split).map_err(|e| e.to_string())?;
    Ok(DeskRun { accuracies, history, train_records: train.len(), seconds })
}

fn acc_of(run: &DeskRun, arm: ExperimentArm) -> f64 {
    run.accuracies.iter().find(|(a, _)| *a == arm).map_or(f64::NAN, |&(_, v)| v)
}

fn criterion3(run: &Result<DeskRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let acc = acc_of(run, ExperimentArm::SingleNb);
    let detail = format!("single_nb best-epoch {acc:.2}%, three arms in {:.0} s", run.seconds);
    if acc >= 90.0 && run.seconds <= 600.0 {
        Ok(detail)
    } else {
        Err(format!("{detail} (need >= 90% within 600 s)"))
    }
}

fn criterion4(run: &Result<DeskRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let (mask, vis) = (acc_of(run, ExperimentArm::MultiNbMask), acc_of(run, ExperimentArm::MultiNbVis));
    let detail = format!("multi_nb_mask {mask:.2}%, multi_nb_vis {vis:.2}%");
    if mask >= 60.0 && vis >= 60.0 {
        Ok(detail)
    } else {
        Err(format!("{detail} (need both >= 60%)"))
    }
}

fn criterion7(first: &Result<DeskRun, String>) -> Outcome {
    let first = first.as_ref().map_err(Clone::clone)?;
    let rerun_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rerun = desk_run(rerun_dir.path(), 42, &DESK_ARMS)?;
    if rerun.history != first.history {
        return Err("same-seed rerun produced a different single_nb history".into());
    }
    let history: History = serde_json::from_str(&first.history).map_err(|e| format!("history.json: {e}"))?;
    if history.is_empty() {
        return Err("history.json has no epochs".into());
    }

    let other_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let other = desk_run(other_dir.path(), 7, &[ExperimentArm::SingleNb])?;
    let order = |seed: u64, n: usize| {
        let mut cfg = PipelineConfig::desk_scale("unused");
        cfg.master_seed = seed;
        let train = cfg.matrix_config().cell_train_config(BackboneName::Tiny, ExperimentArm::SingleNb);
        make_batches(n, train.batch_size, train.seed, 0)
    };
    let n = first.train_records.min(other.train_records);
    if order(42, n) == order(7, n) {
        return Err("seed 7 produced the same epoch-0 batch order as seed 42".into());
    }
    let acc = acc_of(&other, ExperimentArm::SingleNb);
    if acc < 90.0 {
        return Err(format!("seed 7 single_nb {acc:.2}% (need >= 90%)"));
    }
    Ok(format!("identical history on rerun; seed 7 reorders batches and reaches {acc:.2}%"))
}

// ---------------------------------------------------------------- criterion 5

fn criterion5() -> Outcome {
    const TRIALS: usize = 50;
    let (w, h) = (256usize, 222usize);
    let start = Instant::now();
    let settings = RenderSettings { texture: 0.3, ..RenderSettings::default() };
    let cfg = MatcherConfig { out_size: [w, h], ..MatcherConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut errors = Vec::with_capacity(TRIALS);
    let mut first_pair = None;
    for trial in 0..TRIALS {
        let class = [DefectClass::Bruise, DefectClass::Rot, DefectClass::Stain][trial % 3];
        let scene = random_scene(class, &format!("reg{trial}"), 99, (0.7, 1.0));
        let angle = rng.random_range(0.0..360.0);
        let r = rng.random_range(0.0..=15.0);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let truth = Homography::similarity_about(
            (w as f64 - 1.0) / 2.0,
            (h as f64 - 1.0) / 2.0,
            rng.random_range(0.97..=1.03),
            rng.random_range(-3.0..=3.0),
            r * theta.cos(),
            r * theta.sin(),
        );
        let fixed = render_view::<f32>(&scene, angle, &RenderMode::Visible, &settings).image.to_luma();
        let moving =
            render_view_in_frame::<f32>(&scene, angle, &RenderMode::Band(SpectralBand::BP660), &settings, Some(&truth))
                .image;
        let err = match register_pair(&moving, &fixed, &cfg) {
            Ok(reg) => reg.homography.cast::<f64>().mean_corner_error(&truth, w, h),
            Err(_) => f64::INFINITY,
        };
        errors.push(err);
        if first_pair.is_none() {
            first_pair = Some((moving, fixed));
        }
    }
    let (moving, fixed) = first_pair.expect("at least one trial");
    let runs: Vec<_> = (0..3)
        .map(|_| register_pair(&moving, &fixed, &cfg).map(|r| (r.homography, r.diagnostics)).map_err(|e| e.to_string()))
        .collect();
    if runs.windows(2).any(|p| p[0] != p[1]) {
        return Err("registration differs across identical reruns".into());
    }
    within(Duration::from_secs(180), start, "registration trials")?;
    let good = errors.iter().filter(|&&e| e < 1.0).count();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let detail = format!(
        "{good}/{TRIALS} trials with mean corner error < 1 px (median {:.3} px), deterministic over 3 reruns",
        sorted[TRIALS / 2]
    );
    if good * 10 >= TRIALS * 9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 6

fn criterion6() -> Outcome {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden");
    let results = published_results();
    let mut compared = 0;
    for (name, layout) in [("table1", Layout::Table1), ("table2", Layout::Table2), ("table3", Layout::Table3)] {
        for (ext, format) in [("txt", TableFormat::Text), ("csv", TableFormat::Csv)] {
            let path = golden.join(format!("{name}.{ext}"));
            let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let got = emit_table(&results, layout, format);
            if got != expected {
                return Err(format!("{name}.{ext} differs:\n{got}"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} rendered tables match the golden files"))
}

// ------------------------------------------------------------------------ main

fn report(n: u32, outcome: &Outcome) -> bool {
    match outcome {
        Ok(detail) => println!("PASS criterion {n}: {detail}"),
        Err(detail) => println!("FAIL criterion {n}: {detail}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored
    let mut ok = true;
    ok &= report(1, &criterion1());
    ok &= report(2, &criterion2());
    let desk_dir = tempfile::tempdir().expect("temp dir");
    let desk = desk_run(desk_dir.path(), 42, &DESK_ARMS);
    ok &= report(3, &criterion3(&desk));
    ok &= report(4, &criterion4(&desk));
    ok &= report(5, &criterion5());
    ok &= report(6, &criterion6());
    ok &= report(7, &criterion7(&desk));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
