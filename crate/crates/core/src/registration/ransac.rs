use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::homography::{estimate_affine, estimate_homography_dlt, has_collinear_triple, Correspondence, GeomScalar, Homography};
use super::RegistrationError;

/// Transform family fitted to correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformModel {
    #[default]
    Homography,
    /// Fallback for near-planar misalignment.
    Affine,
}

impl TransformModel {
    pub fn min_samples(self) -> usize {
        match self {
            TransformModel::Homography => 4,
            TransformModel::Affine => 3,
        }
    }

    pub fn fit<T: GeomScalar>(self, corrs: &[Correspondence<T>]) -> Result<Homography<T>, RegistrationError> {
        match self {
            TransformModel::Homography => estimate_homography_dlt(corrs),
            TransformModel::Affine => estimate_affine(corrs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub inlier_threshold_px: f64,
    pub max_iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub model: TransformModel,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold_px: 2.0,
            max_iterations: 1000,
            seed: 42,
            model: TransformModel::Homography,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome<T> {
    pub homography: Homography<T>,
    /// Indices whose residual under `homography` is within the threshold.
    pub inliers: Vec<usize>,
}

const MIN_CONSENSUS: usize = 4;
const MAX_REFITS: usize = 10;

fn consensus<T: GeomScalar>(h: &Homography<T>, corrs: &[Correspondence<T>], threshold: T) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let e = h.reprojection_error(c);
            e.is_finite() && e <= threshold
        })
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC over minimal samples from a seeded ChaCha8 stream. The largest
/// consensus set wins (earliest on ties); the model is then re-fitted on
/// its consensus until the set stops changing.
pub fn ransac_homography<T: GeomScalar>(
    corrs: &[Correspondence<T>],
    params: &RansacParams,
) -> Result<RansacOutcome<T>, RegistrationError> {
    let k = params.model.min_samples();
    if corrs.len() < k.max(MIN_CONSENSUS) {
        return Err(RegistrationError::InsufficientCorrespondences {
            found: corrs.len(),
            required: k.max(MIN_CONSENSUS),
        });
    }
    if !(params.inlier_threshold_px > 0.0) {
        return Err(RegistrationError::InvalidParameter(format!(
            "inlier threshold {} must be > 0",
            params.inlier_threshold_px
        )));
    }
    let threshold = T::lit(params.inlier_threshold_px);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Homography<T>, Vec<usize>)> = None;
    let mut sample = Vec::with_capacity(k);

    for _ in 0..params.max_iterations {
        let idx = rand::seq::index::sample(&mut rng, corrs.len(), k);
        sample.clear();
        sample.extend(idx.iter().map(|i| corrs[i]));
        if has_collinear_triple(&sample) {
            continue;
        }
        let Ok(h) = params.model.fit(&sample) else { continue };
        let inliers = consensus(&h, corrs, threshold);
        if best.as_ref().is_none_or(|(_, b)| inliers.len() > b.len()) {
            let done = inliers.len() == corrs.len();
            best = Some((h, inliers));
            if done {
                break;
            }
        }
    }

    let Some((mut model, mut inliers)) = best.filter(|(_, b)| b.len() >= MIN_CONSENSUS) else {
        return Err(RegistrationError::NoModelFound);
    };
    for _ in 0..MAX_REFITS {
        let subset: Vec<_> = inliers.iter().map(|&i| corrs[i]).collect();
        let Ok(refit) = params.model.fit(&subset) else { break };
        let next = consensus(&refit, corrs, threshold);
        if next.len() < MIN_CONSENSUS || next.len() < inliers.len() {
            break;
        }
        let converged = next == inliers;
        model = refit;
        inliers = next;
        if converged {
            break;
        }
    }
    // report consensus under the returned model
    let inliers = consensus(&model, corrs, threshold);
    Ok(RansacOutcome {
        homography: model,
        inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn translated_with_outliers(seed: u64) -> (Vec<Correspondence<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corrs = Vec::new();
        for _ in 0..20 {
            let p = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
            corrs.push(Correspondence { src: p, dst: [p[0] + 12.0, p[1] - 7.0] });
        }
        for _ in 0..5 {
            corrs.push(Correspondence {
                src: [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)],
                dst: [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)],
            });
        }
        // oracle: residual under the ground-truth translation
        let truth = Homography::translation(12.0, -7.0);
        let expected = (0..corrs.len()).filter(|&i| truth.reprojection_error(&corrs[i]) <= 2.0).collect();
        (corrs, expected)
    }

    #[test]
    fn finds_exact_inlier_set() {
        let (corrs, expected) = translated_with_outliers(3);
        assert_eq!(expected, (0..20).collect::<Vec<_>>());
        let out = ransac_homography(&corrs, &RansacParams { seed: 9, ..Default::default() }).unwrap();
        assert_eq!(out.inliers, expected);
        assert!(out.homography.mean_corner_error(&Homography::translation(12.0, -7.0), 640, 480) < 1e-6);
    }

    #[test]
    fn deterministic_for_seed() {
        let (corrs, _) = translated_with_outliers(8);
        let p = RansacParams { seed: 5, max_iterations: 50, ..Default::default() };
        let a = ransac_homography(&corrs, &p).unwrap();
        let b = ransac_homography(&corrs, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn collinear_points_have_no_model() {
        let corrs: Vec<_> = (0..10)
            .map(|i| {
                let p = [i as f64 * 7.0, 3.0 + i as f64 * 2.0];
                Correspondence { src: p, dst: [p[0] + 1.0, p[1]] }
            })
            .collect();
        assert!(matches!(
            ransac_homography(&corrs, &RansacParams::default()),
            Err(RegistrationError::NoModelFound)
        ));
    }

    #[test]
    fn affine_model_uses_three_point_samples() {
        let (corrs, expected) = translated_with_outliers(4);
        let p = RansacParams { model: TransformModel::Affine, ..Default::default() };
        let out = ransac_homography(&corrs, &p).unwrap();
        assert_eq!(out.inliers, expected);
        assert_eq!(out.homography.h[2], [0.0, 0.0, 1.0]);
    }
}
