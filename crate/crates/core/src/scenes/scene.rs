//! Synthetic scenes: random objects on a canvas, a hidden target, and the
//! deterministic feature vectors that stand in for image features.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::derive_seed;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest box side as a fraction of the canvas side, so spatial features
/// never degenerate.
pub const MIN_SIDE_FRACTION: f64 = 0.05;

/// Number of occupancy cells (3×3) in the scene feature vector.
pub const GRID_CELLS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    /// 1-based category id.
    pub category: usize,
    /// (x_min, y_min, x_max, y_max) in pixels, y growing downward.
    pub bbox: [f64; 4],
}

impl SceneObject {
    pub fn center(&self) -> (f64, f64) {
        ((self.bbox[0] + self.bbox[2]) / 2.0, (self.bbox[1] + self.bbox[3]) / 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct Game<S> {
    pub scene_id: u64,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<SceneObject>,
    pub target_index: usize,
    /// Deterministic function of the objects; see [`scene_features`].
    pub scene_features: Vec<S>,
}

impl<S: Scalar> Game<S> {
    /// Builds a game and computes its features, validating the invariants.
    pub fn new(
        scene_id: u64,
        width: f64,
        height: f64,
        objects: Vec<SceneObject>,
        target_index: usize,
        config: &SceneConfig,
    ) -> Result<Game<S>> {
        if objects.len() < 2 {
            return Err(Error::Invalid(format!(
                "scene {scene_id} has {} objects, need at least 2",
                objects.len()
            )));
        }
        if target_index >= objects.len() {
            return Err(Error::Invalid(format!(
                "scene {scene_id} target index {target_index} out of range for {} objects",
                objects.len()
            )));
        }
        for (i, obj) in objects.iter().enumerate() {
            let [x0, y0, x1, y1] = obj.bbox;
            if !(0.0 <= x0 && x0 < x1 && x1 <= width && 0.0 <= y0 && y0 < y1 && y1 <= height) {
                return Err(Error::Invalid(format!(
                    "scene {scene_id} object {i} bbox {:?} outside {width}x{height} canvas",
                    obj.bbox
                )));
            }
            if obj.category == 0 || obj.category > config.n_categories {
                return Err(Error::Invalid(format!(
                    "scene {scene_id} object {i} category {} out of range 1..={}",
                    obj.category, config.n_categories
                )));
            }
        }
        let scene_features = scene_features(&objects, width, height, config);
        Ok(Game { scene_id, width, height, objects, target_index, scene_features })
    }

    pub fn target(&self) -> &SceneObject {
        &self.objects[self.target_index]
    }

    /// Same scene with a different hidden target.
    pub fn with_target(&self, target_index: usize) -> Game<S> {
        let mut g = self.clone();
        g.target_index = target_index;
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Number of object categories, C.
    pub n_categories: usize,
    /// Objects per scene drawn uniformly from this inclusive range.
    pub k_min: usize,
    pub k_max: usize,
    /// Canvas size in pixels.
    pub width: f64,
    pub height: f64,
    /// Scene feature vector length; histogram+grid is padded or truncated
    /// to this.
    pub feature_dim: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_categories: 5,
            k_min: 3,
            k_max: 6,
            width: 100.0,
            height: 100.0,
            feature_dim: 32,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_categories < 2 {
            problems.push(format!("scene.n_categories must be >= 2, got {}", self.n_categories));
        }
        if self.k_min < 2 {
            problems.push(format!("scene.k_min must be >= 2, got {}", self.k_min));
        }
        if self.k_min > self.k_max {
            problems.push(format!("scene.k_min {} exceeds scene.k_max {}", self.k_min, self.k_max));
        }
        let degenerate = |v: f64| v.is_nan() || v <= 0.0;
        if degenerate(self.width) || degenerate(self.height) {
            problems.push(format!("canvas {}x{} is not positive", self.width, self.height));
        }
        if self.feature_dim == 0 {
            problems.push("scene.feature_dim must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Location descriptor of a box: `[x_min, y_min, x_max, y_max, x_center,
/// y_center, w_box, h_box]` in coordinates normalized to [-1, 1] with the
/// origin at the canvas center (`x_n = 2x/W - 1`), and sizes as canvas
/// fractions times two (`w = 2(x_max - x_min)/W`).
pub fn spatial_features<S: Scalar>(bbox: [f64; 4], width: f64, height: f64) -> Result<[S; 8]> {
    let [x0, y0, x1, y1] = bbox;
    if !(x0 < x1 && y0 < y1) {
        return Err(Error::Invalid(format!("degenerate bbox {bbox:?}")));
    }
    let nx = |x: f64| 2.0 * x / width - 1.0;
    let ny = |y: f64| 2.0 * y / height - 1.0;
    Ok([
        S::of(nx(x0)),
        S::of(ny(y0)),
        S::of(nx(x1)),
        S::of(ny(y1)),
        S::of(nx((x0 + x1) / 2.0)),
        S::of(ny((y0 + y1) / 2.0)),
        S::of(2.0 * (x1 - x0) / width),
        S::of(2.0 * (y1 - y0) / height),
    ])
}

/// Cell index (0..9, row-major) of a point on the 3×3 canvas grid.
pub fn grid_cell(x: f64, y: f64, width: f64, height: f64) -> usize {
    let col = (((3.0 * x / width).floor() as isize).clamp(0, 2)) as usize;
    let row = (((3.0 * y / height).floor() as isize).clamp(0, 2)) as usize;
    row * 3 + col
}

/// Whole-scene descriptor: category histogram normalized by object count,
/// then per-cell object-center counts, padded with zeros (or truncated) to
/// `config.feature_dim`.
pub fn scene_features<S: Scalar>(
    objects: &[SceneObject],
    width: f64,
    height: f64,
    config: &SceneConfig,
) -> Vec<S> {
    let k = objects.len().max(1) as f64;
    let mut raw = vec![0.0f64; config.n_categories + GRID_CELLS];
    for obj in objects {
        raw[obj.category - 1] += 1.0 / k;
        let (cx, cy) = obj.center();
        raw[config.n_categories + grid_cell(cx, cy, width, height)] += 1.0;
    }
    raw.resize(config.feature_dim, 0.0);
    raw.truncate(config.feature_dim);
    raw.into_iter().map(S::of).collect()
}

/// Draws one random game: object count uniform in [k_min, k_max], categories
/// uniform, boxes uniform with the minimum side length, target uniform.
pub fn generate_scene<S: Scalar>(rng: &mut ChaCha8Rng, scene_id: u64, config: &SceneConfig) -> Game<S> {
    let k = rng.gen_range(config.k_min..=config.k_max);
    let min_w = config.width * MIN_SIDE_FRACTION;
    let min_h = config.height * MIN_SIDE_FRACTION;
    let objects: Vec<SceneObject> = (0..k)
        .map(|_| {
            let category = rng.gen_range(1..=config.n_categories);
            let w = rng.gen_range(min_w..=config.width);
            let h = rng.gen_range(min_h..=config.height);
            let x0 = rng.gen_range(0.0..=(config.width - w));
            let y0 = rng.gen_range(0.0..=(config.height - h));
            SceneObject { category, bbox: [x0, y0, x0 + w, y0 + h] }
        })
        .collect();
    let target_index = rng.gen_range(0..k);
    Game::new(scene_id, config.width, config.height, objects, target_index, config)
        .expect("generated scene satisfies invariants")
}

/// Scene `index` of the stream derived from `base_seed`; scenes are
/// index-addressable so generation parallelizes without changing output.
pub fn scene_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base_seed, index))
}
