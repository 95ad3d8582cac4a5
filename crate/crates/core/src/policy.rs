//! The trainable agent: a linear softmax policy over presented candidates.
//!
//! Training minimizes a masked action-level cross-entropy: only steps at or
//! after an example's `mask_start` contribute, which is how solutions mined
//! from intermediate states train the recovery segment without the actions
//! that preceded it. The gradient is analytic and is checked against finite
//! differences in the acceptance suite.

use rand::Rng;

use crate::env::{ActionToken, TaskConstraints};
use crate::error::{Error, Result};
use crate::features::{check_schema, featurize_all, FeatureVector, FEATURE_DIM, FEATURE_SCHEMA_VERSION};
use crate::rng::stream;

/// Weight vector of the softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub schema_version: u32,
}

impl PolicyParams {
    pub fn zeros() -> Self {
        PolicyParams {
            weights: vec![0.0; FEATURE_DIM],
            schema_version: FEATURE_SCHEMA_VERSION,
        }
    }

    fn check(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.weights.len() != FEATURE_DIM {
            return Err(Error::SchemaMismatch {
                expected: FEATURE_SCHEMA_VERSION,
                got: self.schema_version,
            });
        }
        Ok(())
    }
}

/// Optimization settings for one fine-tuning call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 6,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One decision point of a training sequence: the featurized candidates and
/// the index of the action that was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStep {
    pub features: Vec<FeatureVector>,
    pub action_index: usize,
}

/// A featurized trajectory with the step index from which loss applies.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub steps: Vec<TrainStep>,
    pub mask_start: usize,
}

fn dot(weights: &[f64], features: &FeatureVector) -> f64 {
    weights
        .iter()
        .zip(features.values.iter())
        .map(|(w, x)| w * x)
        .sum()
}

fn softmax_stable(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Softmax distribution over the candidates of one observation.
pub fn action_distribution(
    params: &PolicyParams,
    observation: &str,
    candidates: &[ActionToken],
    constraints: &TaskConstraints,
    temperature: f64,
) -> Result<Vec<f64>> {
    params.check()?;
    if candidates.is_empty() {
        return Err(Error::Config("candidate set is empty".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let features = featurize_all(observation, candidates, constraints);
    let scores: Vec<f64> = features
        .iter()
        .map(|f| dot(&params.weights, f) / temperature)
        .collect();
    Ok(softmax_stable(&scores))
}

/// Categorical draw from [`action_distribution`]; deterministic given the
/// rng stream position.
pub fn sample_action<R: Rng>(
    params: &PolicyParams,
    observation: &str,
    candidates: &[ActionToken],
    constraints: &TaskConstraints,
    temperature: f64,
    rng: &mut R,
) -> Result<ActionToken> {
    let probs = action_distribution(params, observation, candidates, constraints, temperature)?;
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (p, c) in probs.iter().zip(candidates.iter()) {
        acc += p;
        if u < acc {
            return Ok(c.clone());
        }
    }
    Ok(candidates.last().expect("non-empty").clone())
}

/// Argmax action; ties break to the earliest candidate.
pub fn greedy_action(
    params: &PolicyParams,
    observation: &str,
    candidates: &[ActionToken],
    constraints: &TaskConstraints,
) -> Result<ActionToken> {
    params.check()?;
    if candidates.is_empty() {
        return Err(Error::Config("candidate set is empty".into()));
    }
    let features = featurize_all(observation, candidates, constraints);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, f) in features.iter().enumerate() {
        let s = dot(&params.weights, f);
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    Ok(candidates[best].clone())
}

fn validate_step(step: &TrainStep) -> Result<()> {
    if step.features.is_empty() {
        return Err(Error::CorruptExample(
            "step has an empty candidate set".into(),
        ));
    }
    if step.action_index >= step.features.len() {
        return Err(Error::CorruptExample(format!(
            "recorded action index {} outside its candidate set of {}",
            step.action_index,
            step.features.len()
        )));
    }
    for f in &step.features {
        check_schema(f.schema_version)?;
        if f.values.len() != FEATURE_DIM || f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptExample("non-finite or ill-sized feature".into()));
        }
    }
    Ok(())
}

/// Accumulate loss, gradient, and the number of masked steps over a batch.
/// Loss and gradient are sums over masked steps at temperature 1.
fn accumulate(
    params: &PolicyParams,
    examples: &[TrainSequence],
    grad: Option<&mut [f64]>,
) -> Result<(f64, usize)> {
    let mut loss = 0.0;
    let mut count = 0usize;
    let mut grad = grad;
    for seq in examples {
        if seq.mask_start > seq.steps.len() {
            return Err(Error::CorruptExample(format!(
                "mask_start {} beyond sequence length {}",
                seq.mask_start,
                seq.steps.len()
            )));
        }
        for step in &seq.steps[seq.mask_start..] {
            validate_step(step)?;
            let scores: Vec<f64> = step
                .features
                .iter()
                .map(|f| dot(&params.weights, f))
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let log_z = max + z.ln();
            loss += log_z - scores[step.action_index];
            count += 1;
            if let Some(g) = grad.as_deref_mut() {
                let probs: Vec<f64> = scores.iter().map(|s| (s - max).exp() / z).collect();
                for (p, f) in probs.iter().zip(step.features.iter()) {
                    for (gj, xj) in g.iter_mut().zip(f.values.iter()) {
                        *gj += p * xj;
                    }
                }
                let taken = &step.features[step.action_index];
                for (gj, xj) in g.iter_mut().zip(taken.values.iter()) {
                    *gj -= xj;
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss = {loss}")));
    }
    Ok((loss, count))
}

/// Masked cross-entropy over the examples: the negative log-likelihood of
/// each recorded action at steps at or after `mask_start`, summed.
pub fn masked_sft_loss(params: &PolicyParams, examples: &[TrainSequence]) -> Result<f64> {
    params.check()?;
    accumulate(params, examples, None).map(|(loss, _)| loss)
}

/// Analytic gradient of [`masked_sft_loss`]: per coordinate the expected
/// feature under the policy minus the taken action's feature, summed over
/// masked steps.
pub fn grad_masked_sft(params: &PolicyParams, examples: &[TrainSequence]) -> Result<Vec<f64>> {
    params.check()?;
    let mut grad = vec![0.0; FEATURE_DIM];
    accumulate(params, examples, Some(&mut grad))?;
    Ok(grad)
}

/// Mini-batch gradient descent on the masked loss. Batches are formed by
/// seeded shuffling each epoch; each batch applies the gradient averaged
/// over its sequences. Never mutates the input parameters.
pub fn sft_update(
    params: &PolicyParams,
    examples: &[TrainSequence],
    config: &TrainConfig,
) -> Result<PolicyParams> {
    params.check()?;
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet("no training sequences".into()));
    }
    let mut weights = params.weights.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = stream(config.seed, &format!("sft/epoch{epoch}"));
        // Fisher-Yates with the epoch stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainSequence> =
                chunk.iter().map(|&i| examples[i].clone()).collect();
            let current = PolicyParams {
                weights: weights.clone(),
                schema_version: params.schema_version,
            };
            let mut grad = vec![0.0; FEATURE_DIM];
            accumulate(&current, &batch, Some(&mut grad))?;
            let scale = config.learning_rate / batch.len() as f64;
            for (w, g) in weights.iter_mut().zip(grad.iter()) {
                *w -= scale * g;
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFiniteLoss(format!(
                    "weights diverged in epoch {epoch} (lr {})",
                    config.learning_rate
                )));
            }
        }
    }
    Ok(PolicyParams {
        weights,
        schema_version: params.schema_version,
    })
}

/// A random (parameters, sequence) instance over the first `dim` feature
/// coordinates; used by gradient checks and benchmarks.
pub fn random_instance(
    rng: &mut impl Rng,
    dim: usize,
    max_steps: usize,
) -> (PolicyParams, TrainSequence) {
    let mut weights = vec![0.0; FEATURE_DIM];
    for w in weights.iter_mut().take(dim) {
        *w = rng.gen_range(-1.0..1.0);
    }
    let n_steps = rng.gen_range(1..=max_steps);
    let steps: Vec<TrainStep> = (0..n_steps)
        .map(|_| {
            let n_cands = rng.gen_range(2..=5);
            let features: Vec<FeatureVector> = (0..n_cands)
                .map(|_| {
                    let mut values = vec![0.0; FEATURE_DIM];
                    for v in values.iter_mut().take(dim) {
                        *v = rng.gen_range(-1.5..1.5);
                    }
                    FeatureVector {
                        values,
                        schema_version: FEATURE_SCHEMA_VERSION,
                    }
                })
                .collect();
            TrainStep {
                action_index: rng.gen_range(0..n_cands),
                features,
            }
        })
        .collect();
    let mask_start = rng.gen_range(0..=n_steps);
    (
        PolicyParams {
            weights,
            schema_version: FEATURE_SCHEMA_VERSION,
        },
        TrainSequence { steps, mask_start },
    )
}
