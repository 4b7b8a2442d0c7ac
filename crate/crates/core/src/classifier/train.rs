use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{bce_with_logit, sigmoid};
use super::{
    tokenize, AnyModel, Architecture, AttentionEncoder, ClassifierError, CnnModel, HybridModel,
    Model, TrainedClassifier, Vocab,
};
use crate::audio::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(with = "arch_name")]
    pub architecture: Architecture,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub d: usize,
    pub filters: usize,
    pub width: usize,
    /// Words seen fewer times than this map to the unknown token.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Cnn,
            lr: 1.0,
            epochs: 400,
            seed: 1,
            d: 8,
            filters: 16,
            width: 2,
            min_count: 2,
        }
    }
}

mod arch_name {
    use super::Architecture;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(a: &Architecture, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&a.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Architecture, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained<M> {
    pub model: M,
    /// Mean loss at the start of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mean BCE over `corpus` and its gradient.
pub fn loss_and_gradient<M: Model>(model: &M, corpus: &[(Vec<usize>, Label)]) -> (f64, M) {
    let mut grad = model.zeros_like();
    let n = corpus.len() as f64;
    let mut loss = 0.0;
    for (tokens, label) in corpus {
        let y = label.target();
        let z = model.logit(tokens);
        loss += bce_with_logit(z, y);
        model.backward(tokens, (sigmoid(z) - y) / n, &mut grad);
    }
    (loss / n, grad)
}

pub fn mean_loss<M: Model>(model: &M, corpus: &[(Vec<usize>, Label)]) -> f64 {
    let total: f64 = corpus
        .iter()
        .map(|(t, l)| bce_with_logit(model.logit(t), l.target()))
        .sum();
    total / corpus.len() as f64
}

fn check_corpus<T>(corpus: &[(T, Label)]) -> Result<(), ClassifierError> {
    let first = corpus.first().ok_or(ClassifierError::EmptyCorpus)?.1;
    if corpus.iter().all(|(_, l)| *l == first) {
        return Err(ClassifierError::DegenerateCorpus(first));
    }
    Ok(())
}

/// Full-batch gradient descent from `init`.
pub fn train_model<M: Model>(
    init: M,
    corpus: &[(Vec<usize>, Label)],
    lr: f64,
    epochs: usize,
) -> Result<Trained<M>, ClassifierError> {
    check_corpus(corpus)?;
    let mut model = init;
    let mut loss_history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (loss, grad) = loss_and_gradient(&model, corpus);
        loss_history.push(loss);
        for (p, g) in model.params_mut().into_iter().zip(grad.params()) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
        if !model.is_finite() {
            return Err(ClassifierError::NonFinite { epoch });
        }
    }
    Ok(Trained {
        model,
        loss_history,
    })
}

/// Builds a vocabulary from `corpus`, initializes the chosen architecture
/// from `cfg.seed` and trains it.
pub fn train(
    cfg: &TrainConfig,
    corpus: &[(String, Label)],
) -> Result<(TrainedClassifier, Vec<f64>), ClassifierError> {
    check_corpus(corpus)?;
    let vocab = Vocab::build_with_min_count(corpus.iter().map(|(t, _)| t.as_str()), cfg.min_count);
    let examples: Vec<(Vec<usize>, Label)> = corpus
        .iter()
        .map(|(t, l)| (tokenize(t, &vocab), *l))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v = vocab.size();
    let (model, history) = match cfg.architecture {
        Architecture::Cnn => {
            let init = CnnModel::random(v, cfg.d, cfg.filters, cfg.width, &mut rng);
            let t = train_model(init, &examples, cfg.lr, cfg.epochs)?;
            (AnyModel::Cnn(t.model), t.loss_history)
        }
        Architecture::Attention => {
            let init = AttentionEncoder::random(v, cfg.d, &mut rng);
            let t = train_model(init, &examples, cfg.lr, cfg.epochs)?;
            (AnyModel::Attention(t.model), t.loss_history)
        }
        Architecture::Hybrid => {
            let init = HybridModel::random(v, cfg.d, cfg.filters, cfg.width, &mut rng);
            let t = train_model(init, &examples, cfg.lr, cfg.epochs)?;
            (AnyModel::Hybrid(t.model), t.loss_history)
        }
    };
    Ok((TrainedClassifier { vocab, model }, history))
}
