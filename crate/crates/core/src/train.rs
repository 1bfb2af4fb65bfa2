//! Differentiable class heads and the optimizer loop.

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Dropout, MaskedSequence, RobertaMaskedLm};
use crate::scoring::{ResolvedVerbalizer, Scorer};
use crate::verbalizer::SoftVerbalizer;

/// Fine-tuning hyperparameters. Defaults follow the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of the total steps spent in linear warmup.
    pub warmup_ratio: f64,
    pub dropout: bool,
    /// Update the language model's parameters.
    pub train_lm: bool,
    /// Update verbalizer weights or prototypes.
    pub train_head: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 10,
            batch_size: 4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_ratio: 0.1,
            dropout: true,
            train_lm: true,
            train_head: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && self.batch_size > 0
            && self.weight_decay.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && (0.0..=1.0).contains(&self.warmup_ratio);
        if ok {
            Ok(())
        } else {
            Err(Error::argument(format!("invalid training configuration {self:?}")))
        }
    }

    /// Multiplier on the peak learning rate for update `step` (0-based) out of `total`:
    /// linear ramp from 0 over the warmup steps, then linear decay to 0.
    pub fn lr_factor(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_ratio * total as f64).floor() as usize;
        if step < warmup {
            step as f64 / warmup.max(1) as f64
        } else {
            (total.saturating_sub(step)) as f64 / (total - warmup).max(1) as f64
        }
    }
}

enum HeadKind {
    Words {
        /// Every token of every label word, flattened.
        token_ids: Tensor,
        /// `[words, tokens]` averaging matrix (token mean per word).
        token_mean: Tensor,
        /// `[labels, words]` 0/1 membership.
        membership: Tensor,
        weights: Option<Var>,
        source: ResolvedVerbalizer,
    },
    Soft {
        prototypes: Var,
        labels: Vec<String>,
    },
}

/// Candle version of a [`Scorer`], mapping MASK outputs to class logits
/// so that gradients reach the verbalizer parameters.
pub struct ClassHead {
    kind: HeadKind,
    dtype: DType,
}

impl ClassHead {
    /// Mean heads carry no parameters; weighted and soft heads are trainable.
    pub fn new(scorer: &Scorer, dtype: DType, device: &Device) -> Result<Self> {
        let kind = match scorer {
            Scorer::Mean(v) => Self::words(v, false, dtype, device)?,
            Scorer::Weighted(v) => Self::words(v, true, dtype, device)?,
            Scorer::Soft(sv) => {
                let d = sv.prototypes.first().map_or(0, Vec::len);
                let flat: Vec<f32> = sv.prototypes.iter().flatten().copied().collect();
                let t = Tensor::from_vec(flat, (sv.prototypes.len(), d), device)?.to_dtype(dtype)?;
                HeadKind::Soft {
                    prototypes: Var::from_tensor(&t)?,
                    labels: sv.labels.clone(),
                }
            }
        };
        Ok(Self { kind, dtype })
    }

    fn words(v: &ResolvedVerbalizer, trainable: bool, dtype: DType, device: &Device) -> Result<HeadKind> {
        let mut token_ids = Vec::new();
        let mut spans = Vec::new();
        let mut owner = Vec::new();
        let mut weights = Vec::new();
        for y in 0..v.num_labels() {
            for (ids, &q) in v.word_ids(y).iter().zip(v.weights(y)) {
                spans.push((token_ids.len(), ids.len()));
                token_ids.extend(ids.iter().map(|t| t.0));
                owner.push(y);
                weights.push(q);
            }
        }
        let (w, t, c) = (spans.len(), token_ids.len(), v.num_labels());
        let mut token_mean = vec![0f64; w * t];
        for (i, &(start, len)) in spans.iter().enumerate() {
            for j in start..start + len {
                token_mean[i * t + j] = 1.0 / len as f64;
            }
        }
        let mut membership = vec![0f64; c * w];
        for (i, &y) in owner.iter().enumerate() {
            membership[y * w + i] = 1.0;
        }
        let weights = if trainable {
            Some(Var::from_tensor(&Tensor::from_vec(weights, w, device)?.to_dtype(dtype)?)?)
        } else {
            None
        };
        Ok(HeadKind::Words {
            token_ids: Tensor::from_vec(token_ids, t, device)?,
            token_mean: Tensor::from_vec(token_mean, (w, t), device)?.to_dtype(dtype)?,
            membership: Tensor::from_vec(membership, (c, w), device)?.to_dtype(dtype)?,
            weights,
            source: v.clone(),
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn vars(&self) -> Vec<Var> {
        match &self.kind {
            HeadKind::Words { weights, .. } => weights.iter().cloned().collect(),
            HeadKind::Soft { prototypes, .. } => vec![prototypes.clone()],
        }
    }

    /// The weight vector of a weighted head, flattened over labels in order.
    pub fn weights(&self) -> Option<&Var> {
        match &self.kind {
            HeadKind::Words { weights, .. } => weights.as_ref(),
            HeadKind::Soft { .. } => None,
        }
    }

    /// `[batch, labels]` class logits from `[batch, vocab]` logits and `[batch, hidden]` states.
    pub fn class_logits(&self, vocab_logits: &Tensor, hidden: &Tensor) -> Result<Tensor> {
        match &self.kind {
            HeadKind::Words {
                token_ids,
                token_mean,
                membership,
                weights,
                ..
            } => {
                let gathered = vocab_logits.to_dtype(self.dtype)?.index_select(token_ids, 1)?;
                let word_logits = gathered.matmul(&token_mean.t()?)?;
                match weights {
                    None => {
                        let counts = membership.sum_keepdim(1)?.t()?;
                        Ok(word_logits.matmul(&membership.t()?)?.broadcast_div(&counts)?)
                    }
                    Some(q) => {
                        let q = q.as_tensor();
                        let num = word_logits.broadcast_mul(&q.unsqueeze(0)?)?.matmul(&membership.t()?)?;
                        let den = q.unsqueeze(0)?.matmul(&membership.t()?)?;
                        let den_values = den.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                        if den_values.iter().any(|&x| x == 0.0) {
                            return Err(Error::Numeric("a label's weights sum to zero".into()));
                        }
                        Ok(num.broadcast_div(&den)?)
                    }
                }
            }
            HeadKind::Soft { prototypes, .. } => Ok(hidden
                .to_dtype(self.dtype)?
                .matmul(&prototypes.as_tensor().t()?)?),
        }
    }

    /// Scorer carrying the head's current parameters.
    pub fn to_scorer(&self) -> Result<Scorer> {
        match &self.kind {
            HeadKind::Words { weights: None, source, .. } => Ok(Scorer::Mean(source.clone())),
            HeadKind::Words {
                weights: Some(q),
                source,
                ..
            } => {
                let flat = q.as_tensor().to_dtype(DType::F64)?.to_vec1::<f64>()?;
                let mut out = source.clone();
                let mut offset = 0;
                for y in 0..out.num_labels() {
                    let n = out.word_ids(y).len();
                    out.set_weights(y, flat[offset..offset + n].to_vec())?;
                    offset += n;
                }
                Ok(Scorer::Weighted(out))
            }
            HeadKind::Soft { prototypes, labels } => Ok(Scorer::Soft(SoftVerbalizer {
                labels: labels.clone(),
                prototypes: prototypes.as_tensor().to_dtype(DType::F32)?.to_vec2::<f32>()?,
            })),
        }
    }
}

/// Mean cross-entropy of `[batch, labels]` logits against gold indices.
pub fn cross_entropy_loss(class_logits: &Tensor, gold: &[usize]) -> Result<Tensor> {
    let (_, c) = class_logits.dims2()?;
    if let Some(&bad) = gold.iter().find(|&&g| g >= c) {
        return Err(Error::argument(format!("label {bad} out of range for {c} classes")));
    }
    let target: Vec<u32> = gold.iter().map(|&g| g as u32).collect();
    let target = Tensor::new(target.as_slice(), class_logits.device())?;
    Ok(candle_nn::loss::cross_entropy(class_logits, &target)?)
}

/// One AdamW optimizer over a language model and its class head.
pub struct Trainer<'a> {
    lm: &'a RobertaMaskedLm,
    head: &'a ClassHead,
    optimizer: AdamW,
    config: TrainingConfig,
    dropout: Option<Dropout>,
    total_steps: usize,
    step: usize,
    losses: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        lm: &'a RobertaMaskedLm,
        head: &'a ClassHead,
        config: TrainingConfig,
        total_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut vars = Vec::new();
        if config.train_lm {
            vars.extend(lm.vars());
        }
        if config.train_head {
            vars.extend(head.vars());
        }
        let params = ParamsAdamW {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
        };
        Ok(Self {
            lm,
            head,
            optimizer: AdamW::new(vars, params)?,
            dropout: config.dropout.then(|| Dropout::new(seed)),
            config,
            total_steps: total_steps.max(1),
            step: 0,
            losses: Vec::new(),
        })
    }

    /// Losses of all steps so far.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Forward, cross-entropy, backward and one optimizer update. Returns the loss.
    pub fn train_step(&mut self, batch: &[(MaskedSequence, usize)]) -> Result<f64> {
        self.train_step_with(batch, |loss| Ok(loss))
    }

    /// As [`train_step`](Self::train_step), with `adjust` applied to the loss before backprop.
    pub fn train_step_with(
        &mut self,
        batch: &[(MaskedSequence, usize)],
        adjust: impl FnOnce(Tensor) -> Result<Tensor>,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::argument("empty training batch"));
        }
        let seqs: Vec<MaskedSequence> = batch.iter().map(|(s, _)| s.clone()).collect();
        let gold: Vec<usize> = batch.iter().map(|&(_, y)| y).collect();
        let (hidden, logits) = self.lm.forward(&seqs, self.dropout.as_mut())?;
        let class_logits = self.head.class_logits(&logits, &hidden)?;
        let loss = adjust(cross_entropy_loss(&class_logits, &gold)?)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {value} at step {}",
                self.step
            )));
        }
        let factor = self.config.lr_factor(self.step, self.total_steps);
        self.optimizer.set_learning_rate(self.config.learning_rate * factor);
        self.optimizer.backward_step(&loss)?;
        self.step += 1;
        self.losses.push(value);
        Ok(value)
    }
}
