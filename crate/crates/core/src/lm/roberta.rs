use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Embedding, Linear};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::CheckpointFiles;
use super::{LmTokenizer, MaskOutput, MaskHiddenState, MaskedLm, MaskedSequence, VocabLogits};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

const EVAL_BATCH: usize = 16;

mod defaults {
    pub fn max_position_embeddings() -> usize {
        514
    }
    pub fn type_vocab_size() -> usize {
        1
    }
    pub fn layer_norm_eps() -> f64 {
        1e-5
    }
    pub fn pad_token_id() -> u32 {
        1
    }
    pub fn dropout() -> f32 {
        0.1
    }
    pub fn hidden_act() -> String {
        "gelu".into()
    }
}

/// Architecture hyperparameters, read from a checkpoint's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobertaConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "defaults::max_position_embeddings")]
    pub max_position_embeddings: usize,
    #[serde(default = "defaults::type_vocab_size")]
    pub type_vocab_size: usize,
    #[serde(default = "defaults::layer_norm_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "defaults::pad_token_id")]
    pub pad_token_id: u32,
    #[serde(default = "defaults::dropout")]
    pub hidden_dropout_prob: f32,
    #[serde(default = "defaults::dropout")]
    pub attention_probs_dropout_prob: f32,
    #[serde(default = "defaults::hidden_act")]
    pub hidden_act: String,
}

impl RobertaConfig {
    /// A small configuration for tests and toy experiments.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: 32,
            num_hidden_layers: 2,
            num_attention_heads: 4,
            intermediate_size: 64,
            max_position_embeddings: 130,
            type_vocab_size: 1,
            layer_norm_eps: 1e-5,
            pad_token_id: 1,
            hidden_dropout_prob: 0.1,
            attention_probs_dropout_prob: 0.1,
            hidden_act: "gelu".into(),
        }
    }

    /// Longest input, special tokens included. Positions start after the padding index.
    pub fn max_sequence_len(&self) -> usize {
        self.max_position_embeddings
            .saturating_sub(self.pad_token_id as usize + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_act != "gelu" {
            return Err(Error::argument(format!(
                "unsupported activation {:?}",
                self.hidden_act
            )));
        }
        if self.num_attention_heads == 0 || self.hidden_size % self.num_attention_heads != 0 {
            return Err(Error::argument(
                "hidden size must be a multiple of the number of attention heads",
            ));
        }
        if self.max_sequence_len() < 3 {
            return Err(Error::argument("max_position_embeddings too small"));
        }
        Ok(())
    }

    fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.hidden_size;
        let mut out = vec![
            ("roberta.embeddings.word_embeddings.weight".to_string(), vec![self.vocab_size, d]),
            (
                "roberta.embeddings.position_embeddings.weight".to_string(),
                vec![self.max_position_embeddings, d],
            ),
            (
                "roberta.embeddings.token_type_embeddings.weight".to_string(),
                vec![self.type_vocab_size, d],
            ),
            ("roberta.embeddings.LayerNorm.weight".to_string(), vec![d]),
            ("roberta.embeddings.LayerNorm.bias".to_string(), vec![d]),
        ];
        for i in 0..self.num_hidden_layers {
            let p = format!("roberta.encoder.layer.{i}");
            for name in ["query", "key", "value"] {
                out.push((format!("{p}.attention.self.{name}.weight"), vec![d, d]));
                out.push((format!("{p}.attention.self.{name}.bias"), vec![d]));
            }
            out.push((format!("{p}.attention.output.dense.weight"), vec![d, d]));
            out.push((format!("{p}.attention.output.dense.bias"), vec![d]));
            out.push((format!("{p}.attention.output.LayerNorm.weight"), vec![d]));
            out.push((format!("{p}.attention.output.LayerNorm.bias"), vec![d]));
            out.push((format!("{p}.intermediate.dense.weight"), vec![self.intermediate_size, d]));
            out.push((format!("{p}.intermediate.dense.bias"), vec![self.intermediate_size]));
            out.push((format!("{p}.output.dense.weight"), vec![d, self.intermediate_size]));
            out.push((format!("{p}.output.dense.bias"), vec![d]));
            out.push((format!("{p}.output.LayerNorm.weight"), vec![d]));
            out.push((format!("{p}.output.LayerNorm.bias"), vec![d]));
        }
        out.push(("lm_head.dense.weight".to_string(), vec![d, d]));
        out.push(("lm_head.dense.bias".to_string(), vec![d]));
        out.push(("lm_head.layer_norm.weight".to_string(), vec![d]));
        out.push(("lm_head.layer_norm.bias".to_string(), vec![d]));
        out.push(("lm_head.bias".to_string(), vec![self.vocab_size]));
        out
    }
}

/// Seeded dropout, so that training runs are reproducible.
pub struct Dropout {
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn apply(&mut self, x: &Tensor, p: f32) -> candle_core::Result<Tensor> {
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if self.rng.random::<f32>() < p { 0.0 } else { scale })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        x * mask
    }
}

fn maybe_drop(x: Tensor, p: f32, dropout: &mut Option<&mut Dropout>) -> candle_core::Result<Tensor> {
    match dropout {
        Some(d) => d.apply(&x, p),
        None => Ok(x),
    }
}

/// Layer normalization from differentiable primitives.
struct Norm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl Module for Norm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

struct EncoderLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: Norm,
    intermediate: Linear,
    output: Linear,
    out_norm: Norm,
}

struct Params<'a> {
    vars: &'a BTreeMap<String, Var>,
    eps: f64,
}

impl Params<'_> {
    fn get(&self, name: &str) -> Result<Tensor> {
        self.vars
            .get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| Error::Model(candle_core::Error::Msg(format!("missing tensor {name}"))))
    }

    fn linear(&self, prefix: &str) -> Result<Linear> {
        Ok(Linear::new(
            self.get(&format!("{prefix}.weight"))?,
            Some(self.get(&format!("{prefix}.bias"))?),
        ))
    }

    fn norm(&self, prefix: &str) -> Result<Norm> {
        Ok(Norm {
            weight: self.get(&format!("{prefix}.weight"))?,
            bias: self.get(&format!("{prefix}.bias"))?,
            eps: self.eps,
        })
    }
}

/// RoBERTa-family masked language model (`roberta-large`, `distilroberta-base`, ...).
///
/// Parameters are [`Var`]s so the model can be fine-tuned in place. The output
/// projection of the MLM head is tied to the input word embeddings.
pub struct RobertaMaskedLm {
    config: RobertaConfig,
    tokenizer: LmTokenizer,
    vars: BTreeMap<String, Var>,
    word_embeddings: Tensor,
    position_embeddings: Embedding,
    token_type: Tensor,
    embed_norm: Norm,
    layers: Vec<EncoderLayer>,
    head_dense: Linear,
    head_norm: Norm,
    head_bias: Tensor,
    device: Device,
}

impl std::fmt::Debug for RobertaMaskedLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobertaMaskedLm")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn normalize_name(name: &str) -> String {
    let name = name
        .replace("LayerNorm.gamma", "LayerNorm.weight")
        .replace("LayerNorm.beta", "LayerNorm.bias");
    if name.starts_with("embeddings.") || name.starts_with("encoder.") {
        format!("roberta.{name}")
    } else {
        name
    }
}

impl RobertaMaskedLm {
    /// Builds a model from named tensors (checkpoint naming).
    pub fn from_tensors(
        config: RobertaConfig,
        tokenizer: LmTokenizer,
        tensors: HashMap<String, Tensor>,
        device: &Device,
    ) -> Result<Self> {
        config.validate()?;
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(Error::argument(format!(
                "tokenizer has {} entries but the model only {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        let tensors: HashMap<String, Tensor> = tensors
            .into_iter()
            .map(|(k, v)| (normalize_name(&k), v))
            .collect();
        let mut vars = BTreeMap::new();
        for (name, shape) in config.parameter_shapes() {
            let t = tensors.get(&name).ok_or_else(|| {
                Error::Model(candle_core::Error::Msg(format!("checkpoint lacks tensor {name}")))
            })?;
            if t.dims() != shape.as_slice() {
                return Err(Error::Model(candle_core::Error::Msg(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.dims()
                ))));
            }
            let t = t.to_dtype(DType::F32)?.to_device(device)?;
            vars.insert(name, Var::from_tensor(&t)?);
        }
        Self::assemble(config, tokenizer, vars, device.clone())
    }

    /// Randomly initialized model (normal(0, 0.02) weights), deterministic in `seed`.
    pub fn random(config: RobertaConfig, tokenizer: LmTokenizer, seed: u64) -> Result<Self> {
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
        let mut tensors = HashMap::new();
        for (name, shape) in config.parameter_shapes() {
            let n: usize = shape.iter().product();
            let values: Vec<f32> = if name.ends_with("LayerNorm.weight") || name.ends_with("layer_norm.weight") {
                vec![1.0; n]
            } else if name.ends_with("bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            tensors.insert(name, Tensor::from_vec(values, shape, &device)?);
        }
        Self::from_tensors(config, tokenizer, tensors, &device)
    }

    pub fn load(files: &CheckpointFiles) -> Result<Self> {
        let config: RobertaConfig = serde_json::from_str(&std::fs::read_to_string(&files.config)?)?;
        let tokenizer = LmTokenizer::from_file(&files.tokenizer)?;
        let device = Device::Cpu;
        let tensors = candle_core::safetensors::load(&files.weights, &device)?;
        Self::from_tensors(config, tokenizer, tensors, &device)
    }

    /// Writes `config.json`, `model.safetensors` and `tokenizer.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        let tensors: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, dir.join("model.safetensors"))?;
        self.tokenizer.save(dir.join("tokenizer.json"))
    }

    fn assemble(
        config: RobertaConfig,
        tokenizer: LmTokenizer,
        vars: BTreeMap<String, Var>,
        device: Device,
    ) -> Result<Self> {
        let p = Params {
            vars: &vars,
            eps: config.layer_norm_eps,
        };
        let d = config.hidden_size;
        let word_embeddings = p.get("roberta.embeddings.word_embeddings.weight")?;
        let position_embeddings =
            Embedding::new(p.get("roberta.embeddings.position_embeddings.weight")?, d);
        let token_type = p
            .get("roberta.embeddings.token_type_embeddings.weight")?
            .narrow(0, 0, 1)?;
        let embed_norm = p.norm("roberta.embeddings.LayerNorm")?;
        let mut layers = Vec::with_capacity(config.num_hidden_layers);
        for i in 0..config.num_hidden_layers {
            let pre = format!("roberta.encoder.layer.{i}");
            layers.push(EncoderLayer {
                query: p.linear(&format!("{pre}.attention.self.query"))?,
                key: p.linear(&format!("{pre}.attention.self.key"))?,
                value: p.linear(&format!("{pre}.attention.self.value"))?,
                attn_out: p.linear(&format!("{pre}.attention.output.dense"))?,
                attn_norm: p.norm(&format!("{pre}.attention.output.LayerNorm"))?,
                intermediate: p.linear(&format!("{pre}.intermediate.dense"))?,
                output: p.linear(&format!("{pre}.output.dense"))?,
                out_norm: p.norm(&format!("{pre}.output.LayerNorm"))?,
            });
        }
        let head_dense = p.linear("lm_head.dense")?;
        let head_norm = p.norm("lm_head.layer_norm")?;
        let head_bias = p.get("lm_head.bias")?;
        Ok(Self {
            config,
            tokenizer,
            word_embeddings,
            position_embeddings,
            token_type,
            embed_norm,
            layers,
            head_dense,
            head_norm,
            head_bias,
            vars,
            device,
        })
    }

    pub fn config(&self) -> &RobertaConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Independent deep copy: training the copy leaves `self` untouched.
    pub fn fork(&self) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (name, var) in &self.vars {
            vars.insert(name.clone(), Var::from_tensor(&var.as_tensor().copy()?)?);
        }
        Self::assemble(self.config.clone(), self.tokenizer.clone(), vars, self.device.clone())
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.vars
            .values()
            .map(|v| Ok(v.as_tensor().copy()?))
            .collect()
    }

    pub fn restore(&self, snapshot: &[Tensor]) -> Result<()> {
        if snapshot.len() != self.vars.len() {
            return Err(Error::argument("snapshot does not match the model"));
        }
        for (var, t) in self.vars.values().zip(snapshot) {
            var.set(t)?;
        }
        Ok(())
    }

    /// Input-embedding rows for the given token ids (as stored by the model).
    pub fn embedding_rows(&self, ids: &[u32]) -> Result<Vec<Vec<f32>>> {
        let idx = Tensor::new(ids, &self.device)?;
        Ok(self.word_embeddings.index_select(&idx, 0)?.to_vec2::<f32>()?)
    }

    /// Hidden states and vocabulary logits at the MASK position of each sequence,
    /// shaped `[batch, hidden]` and `[batch, vocab]`. Dropout is active iff given.
    pub fn forward(
        &self,
        seqs: &[MaskedSequence],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Tensor, Tensor)> {
        if seqs.is_empty() {
            return Err(Error::argument("empty batch"));
        }
        for s in seqs {
            self.check_sequence(s)?;
        }
        let b = seqs.len();
        let l = seqs.iter().map(MaskedSequence::len).max().unwrap_or(0);
        let pad = self.config.pad_token_id;
        let mut ids = Vec::with_capacity(b * l);
        let mut positions = Vec::with_capacity(b * l);
        let mut bias = Vec::with_capacity(b * l);
        let mut gather = Vec::with_capacity(b);
        for (i, s) in seqs.iter().enumerate() {
            for j in 0..l {
                if let Some(t) = s.ids().get(j) {
                    ids.push(t.0);
                    positions.push(pad + 1 + j as u32);
                    bias.push(0f32);
                } else {
                    ids.push(pad);
                    positions.push(pad);
                    bias.push(-1e9f32);
                }
            }
            gather.push((i * l + s.mask_position()) as u32);
        }
        let dev = &self.device;
        let input = Tensor::from_vec(ids, (b, l), dev)?;
        let positions = Tensor::from_vec(positions, (b, l), dev)?;
        let bias = Tensor::from_vec(bias, (b, 1, 1, l), dev)?;

        let d = self.config.hidden_size;
        let words = Embedding::new(self.word_embeddings.clone(), d).forward(&input)?;
        let x = (words + self.position_embeddings.forward(&positions)?)?
            .broadcast_add(&self.token_type)?;
        let x = self.embed_norm.forward(&x)?;
        let mut x = maybe_drop(x, self.config.hidden_dropout_prob, &mut dropout)?;
        for layer in &self.layers {
            x = self.layer_forward(layer, &x, &bias, &mut dropout)?;
        }
        let flat = x.reshape((b * l, d))?;
        let hidden = flat.index_select(&Tensor::new(gather.as_slice(), dev)?, 0)?;
        let h = self.head_dense.forward(&hidden)?.gelu_erf()?;
        let h = self.head_norm.forward(&h)?;
        let logits = h
            .matmul(&self.word_embeddings.t()?)?
            .broadcast_add(&self.head_bias)?;
        Ok((hidden, logits))
    }

    fn layer_forward(
        &self,
        layer: &EncoderLayer,
        x: &Tensor,
        bias: &Tensor,
        dropout: &mut Option<&mut Dropout>,
    ) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let heads = self.config.num_attention_heads;
        let hd = d / heads;
        let split = |t: Tensor| -> candle_core::Result<Tensor> {
            t.reshape((b, l, heads, hd))?.transpose(1, 2)?.contiguous()
        };
        let q = split(layer.query.forward(x)?)?;
        let k = split(layer.key.forward(x)?)?;
        let v = split(layer.value.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?.broadcast_add(bias)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let probs = maybe_drop(probs, self.config.attention_probs_dropout_prob, dropout)?;
        let ctx = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, l, d))?;
        let attn = maybe_drop(layer.attn_out.forward(&ctx)?, self.config.hidden_dropout_prob, dropout)?;
        let attn = layer.attn_norm.forward(&(attn + x)?)?;
        let inter = layer.intermediate.forward(&attn)?.gelu_erf()?;
        let out = maybe_drop(layer.output.forward(&inter)?, self.config.hidden_dropout_prob, dropout)?;
        Ok(layer.out_norm.forward(&(out + attn)?)?)
    }
}

impl MaskedLm for RobertaMaskedLm {
    fn tokenizer(&self) -> &LmTokenizer {
        &self.tokenizer
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    fn max_len(&self) -> usize {
        self.config.max_sequence_len()
    }

    fn mask_outputs(&self, seqs: &[MaskedSequence]) -> Result<Vec<MaskOutput>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EVAL_BATCH) {
            let (hidden, logits) = self.forward(chunk, None)?;
            let hidden = hidden.to_vec2::<f32>()?;
            let logits = logits.to_vec2::<f32>()?;
            for (h, lg) in hidden.into_iter().zip(logits) {
                if lg.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric("non-finite MASK logits".into()));
                }
                out.push(MaskOutput {
                    logits: VocabLogits(lg),
                    hidden: MaskHiddenState(h),
                });
            }
        }
        Ok(out)
    }

    fn embedding_matrix(&self) -> Result<EmbeddingStore> {
        let mut vocab = self.tokenizer.vocab_strings()?;
        for i in vocab.len()..self.config.vocab_size {
            vocab.push(format!("<unused:{i}>"));
        }
        let flat = self.word_embeddings.flatten_all()?.to_vec1::<f32>()?;
        EmbeddingStore::from_flat(vocab, flat, self.config.hidden_size)
    }
}
