//! Training loop for the toy denoiser: Adam on the weighted DSM loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edm::{add_noise_with, dsm_loss, dsm_loss_grad, EdmSchedule};
use super::model::{condition_input, encode_clip, ToyConfig, ToyDenoiser, LATENT_POOL};
use super::tensor::Tensor;
use crate::condition::{make_training_condition, ConditionTensors, SamplerConfig};
use crate::error::{Error, Result};
use crate::grid::VideoClip;
use crate::synth::{ground_truth, random_scene, render_clip, RandomSceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `(σ² + σ_d²) / (σ σ_d)²`.
    #[default]
    Edm,
    Uniform,
}

impl Weighting {
    pub fn weight(self, sigma: f64, sched: &EdmSchedule) -> f64 {
        match self {
            Weighting::Edm => sched.loss_weight(sigma),
            Weighting::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weighting: Weighting,
    /// Feed an all-zero condition; the ablation baseline.
    pub zero_condition: bool,
    pub schedule: EdmSchedule,
    pub model: ToyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            steps: 600,
            batch_size: 4,
            seed: 0,
            weighting: Weighting::Edm,
            zero_condition: false,
            schedule: EdmSchedule::default(),
            model: ToyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format("train config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::format("learning_rate", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::format("steps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::format("batch_size", "must be positive"));
        }
        self.schedule.validate()?;
        self.model.validate()
    }
}

/// One training clip in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub latent: Tensor,
    pub first: Tensor,
    pub cond: Tensor,
}

impl Example {
    pub fn new(clip: &VideoClip, cond: &ConditionTensors, model: &ToyConfig) -> Result<Self> {
        if cond.len() != clip.len() || cond.height() != clip.height() || cond.width() != clip.width() {
            return Err(Error::shape("condition does not match clip"));
        }
        let latent = encode_clip(clip)?;
        Ok(Self {
            first: latent.frame(0),
            latent,
            cond: condition_input(cond, model.traj_scale),
        })
    }

    fn zeroed(&self) -> Self {
        Self {
            cond: Tensor::zeros(self.cond.len(), self.cond.height(), self.cond.width(), self.cond.channels()),
            ..self.clone()
        }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &ToyDenoiser) -> Self {
        Self {
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ToyDenoiser, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (id, g) in grads.iter().enumerate() {
            let p = model.params.get_mut(id);
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(&mut self.m[id]).zip(&mut self.v[id]) {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyDenoiser,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Loss and parameter gradients for one noised sample.
fn sample_loss(model: &ToyDenoiser, ex: &Example, sigma: f64, weight: f64, rng: &mut ChaCha8Rng, grads: Option<&mut [Vec<f64>]>) -> Result<f64> {
    let z = add_noise_with(&ex.latent, sigma, rng)?;
    match grads {
        None => dsm_loss(&model.forward(&z, sigma, &ex.first, &ex.cond)?, &ex.latent, weight),
        Some(g) => {
            let (pred, cache) = model.forward_cached(&z, sigma, &ex.first, &ex.cond)?;
            let loss = dsm_loss(&pred, &ex.latent, weight)?;
            model.backward(&cache, &dsm_loss_grad(&pred, &ex.latent, weight), g);
            Ok(loss)
        }
    }
}

/// Train from fresh weights on prepared examples.
pub fn train_examples(examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let zeroed: Vec<Example>;
    let examples = if cfg.zero_condition {
        zeroed = examples.iter().map(Example::zeroed).collect();
        &zeroed[..]
    } else {
        examples
    };
    let mut model = ToyDenoiser::new(cfg.model, cfg.schedule)?;
    let mut adam = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    let inv_b = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        let mut grads = model.params.zeros_like();
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let ex = &examples[rng.random_range(0..examples.len())];
            let sigma = cfg.schedule.sample_sigma(&mut rng);
            let weight = cfg.weighting.weight(sigma, &cfg.schedule) * inv_b;
            total += sample_loss(&model, ex, sigma, weight, &mut rng, Some(&mut grads))?;
        }
        if !total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss: total });
        }
        losses.push(total);
        adam.step(&mut model, &grads, cfg.learning_rate);
    }
    Ok(TrainOutcome { model, losses })
}

/// Train on `(clip, condition)` pairs.
pub fn train_toy(dataset: &[(VideoClip, ConditionTensors)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let examples = dataset
        .iter()
        .map(|(clip, cond)| Example::new(clip, cond, &cfg.model))
        .collect::<Result<Vec<_>>>()?;
    train_examples(&examples, cfg)
}

/// Mean weighted DSM loss over `draws` fixed noise draws per example.
///
/// Draws depend only on `seed`, so two models evaluated with the same seed
/// see identical noise levels and noise.
pub fn evaluate_loss(model: &ToyDenoiser, examples: &[Example], weighting: Weighting, zero_condition: bool, draws: usize, seed: u64) -> Result<f64> {
    if examples.is_empty() || draws == 0 {
        return Err(Error::invalid("evaluation needs examples and draws"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for ex in examples {
        let zeroed;
        let ex = if zero_condition {
            zeroed = ex.zeroed();
            &zeroed
        } else {
            ex
        };
        for _ in 0..draws {
            let sigma = model.schedule.sample_sigma(&mut rng);
            let weight = weighting.weight(sigma, &model.schedule);
            total += sample_loss(model, ex, sigma, weight, &mut rng, None)?;
        }
    }
    Ok(total / (examples.len() * draws) as f64)
}

/// Synthetic clips with training conditions; scene `i` uses seed `seed + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub clips: usize,
    pub scene: RandomSceneConfig,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            clips: 200,
            scene: RandomSceneConfig {
                frames: 4,
                height: 16,
                width: 16,
                radius: (3.0, 5.0),
                max_speed: 3.0,
                ..RandomSceneConfig::default()
            },
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

pub fn synthetic_dataset(cfg: &DatasetConfig) -> Result<Vec<(VideoClip, ConditionTensors)>> {
    if !cfg.scene.height.is_multiple_of(2 * LATENT_POOL) || !cfg.scene.width.is_multiple_of(2 * LATENT_POOL) {
        return Err(Error::invalid(format!(
            "clip size must be divisible by {}",
            2 * LATENT_POOL
        )));
    }
    (0..cfg.clips as u64)
        .map(|i| {
            let spec = random_scene(cfg.seed.wrapping_add(i), &cfg.scene);
            let clip = render_clip(&spec)?;
            let gt = ground_truth(&spec)?;
            let sampler = SamplerConfig {
                seed: cfg.seed.wrapping_add(i).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                ..cfg.sampler
            };
            Ok((clip, make_training_condition(&gt.flow, &gt.visibility, &sampler)?))
        })
        .collect()
}

/// Held-out losses of a conditioned model and its cond-zeroed twin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub conditioned: f64,
    pub zeroed: f64,
}

impl PairedRun {
    pub fn conditioned_wins(&self) -> bool {
        self.conditioned < self.zeroed
    }
}

/// Train both variants with identical seeds and compare held-out DSM loss.
pub fn paired_run(train: &[Example], held_out: &[Example], cfg: &TrainConfig, draws: usize) -> Result<PairedRun> {
    let with = train_examples(train, &TrainConfig { zero_condition: false, ..*cfg })?;
    let without = train_examples(train, &TrainConfig { zero_condition: true, ..*cfg })?;
    let eval_seed = cfg.seed ^ 0xe7a1;
    Ok(PairedRun {
        seed: cfg.seed,
        conditioned: evaluate_loss(&with.model, held_out, cfg.weighting, false, draws, eval_seed)?,
        zeroed: evaluate_loss(&without.model, held_out, cfg.weighting, true, draws, eval_seed)?,
    })
}
