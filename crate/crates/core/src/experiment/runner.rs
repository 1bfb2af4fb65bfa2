//! Fine-tuning, evaluation and the repeated few-shot benchmark.

use std::path::Path;

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingStore;
use crate::ensemble::MemberOutput;
use crate::error::{Error, Result};
use crate::experiment::config::{EmbeddingSource, ExperimentConfig, VerbalizerKind};
use crate::experiment::dataset::{default_split_path, load_dataset, DataFormat, Dataset, Schema};
use crate::experiment::export::{write_logits, LogitRecord};
use crate::experiment::report::{MemberReport, RunReport, SeedReport, VariantReport};
use crate::experiment::sampling::{sample_fewshot, sample_uniform, subsample, FewShotSplit};
use crate::lm::{resolve_checkpoint, MaskedLm, MaskedSequence, RobertaMaskedLm};
use crate::scoring::{ResolvedVerbalizer, Scorer};
use crate::template::{builtin_templates, load_templates, Example, Template};
use crate::train::{ClassHead, Trainer, TrainingConfig};
use crate::verbalizer::{build_manual, build_petal, enrich_maven, init_soft, Verbalizer, VerbalizerFile, WeightedVerbalizer};

/// Examples rendered and scored per forward batch during evaluation.
const EVAL_CHUNK: usize = 64;

pub fn render_all(lm: &dyn MaskedLm, template: &Template, xs: &[Example]) -> Result<Vec<MaskedSequence>> {
    xs.iter()
        .map(|x| template.render(x, lm.tokenizer(), lm.max_len()))
        .collect()
}

/// Accuracy and per-example class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub records: Vec<LogitRecord>,
}

pub fn evaluate(lm: &dyn MaskedLm, template: &Template, scorer: &Scorer, test: &[Example]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::argument("nothing to evaluate"));
    }
    let records = class_logits(lm, template, scorer, test)?;
    let mut correct = 0usize;
    for r in &records {
        let gold = r
            .gold
            .ok_or_else(|| Error::argument(format!("example {:?} is unlabeled", r.id)))?;
        if crate::scoring::argmax(&r.logits) == gold {
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / records.len() as f64,
        records,
    })
}

/// Class logits for every example, in order.
pub fn class_logits(lm: &dyn MaskedLm, template: &Template, scorer: &Scorer, xs: &[Example]) -> Result<Vec<LogitRecord>> {
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(EVAL_CHUNK) {
        let outputs = lm.mask_outputs(&render_all(lm, template, chunk)?)?;
        for (x, o) in chunk.iter().zip(&outputs) {
            out.push(LogitRecord {
                id: x.id.clone(),
                gold: x.label,
                logits: scorer.score(o)?.logits().to_vec(),
            });
        }
    }
    Ok(out)
}

/// Writes one JSON line of class logits per example.
pub fn export_logits(
    lm: &dyn MaskedLm,
    template: &Template,
    scorer: &Scorer,
    xs: &[Example],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_logits(path, &class_logits(lm, template, scorer, xs)?)
}

/// A model that is either the shared pretrained one or a fine-tuned copy.
pub enum ModelState<'a> {
    Base(&'a RobertaMaskedLm),
    Tuned(Box<RobertaMaskedLm>),
}

impl ModelState<'_> {
    pub fn lm(&self) -> &RobertaMaskedLm {
        match self {
            ModelState::Base(lm) => lm,
            ModelState::Tuned(lm) => lm,
        }
    }
}

pub struct FineTuned<'a> {
    pub model: ModelState<'a>,
    pub scorer: Scorer,
    /// 1-based epoch of the retained checkpoint.
    pub best_epoch: Option<usize>,
    pub validation_accuracy: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Trains a copy of `base` with `scorer` on the training half, validating after each
/// epoch and keeping the most accurate checkpoint (earliest on ties).
pub fn fine_tune<'a>(
    base: &'a RobertaMaskedLm,
    template: &Template,
    scorer: &Scorer,
    split: &FewShotSplit,
    hp: &TrainingConfig,
    seed: u64,
) -> Result<FineTuned<'a>> {
    hp.validate()?;
    if split.d_train.is_empty() || hp.epochs == 0 {
        return Ok(FineTuned {
            model: ModelState::Base(base),
            scorer: scorer.clone(),
            best_epoch: None,
            validation_accuracy: Vec::new(),
            losses: Vec::new(),
        });
    }
    let c = scorer.num_labels();
    let mut data = Vec::with_capacity(split.d_train.len());
    for x in &split.d_train {
        let y = x
            .label
            .filter(|&y| y < c)
            .ok_or_else(|| Error::argument(format!("training example {:?} has no valid label", x.id)))?;
        data.push((template.render(x, base.tokenizer(), base.max_len())?, y));
    }
    let lm = base.fork()?;
    let head = ClassHead::new(scorer, DType::F32, lm.device())?;
    let total = hp.epochs * data.len().div_ceil(hp.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut validation_accuracy = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, usize, Vec<candle_core::Tensor>, Scorer)> = None;
    let losses = {
        let mut trainer = Trainer::new(&lm, &head, hp.clone(), total, seed)?;
        for epoch in 1..=hp.epochs {
            data.shuffle(&mut rng);
            for batch in data.chunks(hp.batch_size) {
                trainer.train_step(batch)?;
            }
            if split.d_valid.is_empty() {
                continue;
            }
            let current = head.to_scorer()?;
            let acc = evaluate(&lm, template, &current, &split.d_valid)?.accuracy;
            log::debug!("template {} epoch {epoch}: validation accuracy {acc:.4}", template.id());
            validation_accuracy.push(acc);
            if best.as_ref().is_none_or(|b| acc > b.0) {
                best = Some((acc, epoch, lm.snapshot()?, current));
            }
        }
        trainer.losses().to_vec()
    };
    let (best_epoch, scorer) = match best {
        Some((_, epoch, snapshot, scorer)) => {
            lm.restore(&snapshot)?;
            (epoch, scorer)
        }
        None => (hp.epochs, head.to_scorer()?),
    };
    Ok(FineTuned {
        model: ModelState::Tuned(Box::new(lm)),
        scorer,
        best_epoch: Some(best_epoch),
        validation_accuracy,
        losses,
    })
}

/// `wv` with the weights carried by a trained weighted scorer.
pub fn trained_verbalizer(wv: &WeightedVerbalizer, scorer: &Scorer) -> Result<WeightedVerbalizer> {
    let Scorer::Weighted(rv) = scorer else {
        return Err(Error::argument("scorer carries no word weights"));
    };
    let mut out = wv.clone();
    for y in 0..out.num_labels() {
        out.set_weights(y, rv.weights(y))?;
    }
    Ok(out)
}

/// Resolves the dataset of `cfg`: the training pool (absent when `n = 0`) and the test split.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Option<Dataset>, Dataset)> {
    let d = &cfg.dataset;
    let schema = match (&d.label_names, &d.columns) {
        (Some(labels), Some(columns)) => Schema::plain(labels.clone(), columns.clone()),
        (None, None) => Schema::builtin(&d.id)?,
        _ => return Err(Error::argument("custom datasets need both label_names and columns")),
    };
    let read = |path: &Option<std::path::PathBuf>, split: &str| -> Result<Dataset> {
        let path = match path {
            Some(p) => p.clone(),
            None => default_split_path(&d.id, split)?,
        };
        let format = d.format.unwrap_or_else(|| DataFormat::from_path(&path));
        load_dataset(&path, format, &schema, &format!("{}-{split}", d.id))
    };
    let train = if cfg.n > 0 { Some(read(&d.train, "train")?) } else { None };
    let test = read(&d.test, "test")?;
    Ok((train, test))
}

pub fn load_model(checkpoint: &str) -> Result<RobertaMaskedLm> {
    RobertaMaskedLm::load(&resolve_checkpoint(checkpoint)?)
}

fn load_store(source: &EmbeddingSource, lm: &dyn MaskedLm) -> Result<EmbeddingStore> {
    match source {
        EmbeddingSource::Lm => lm.embedding_matrix(),
        EmbeddingSource::External { format, path } => EmbeddingStore::load_external(path, *format),
    }
}

/// Loads model and data, runs, and writes the report when `cfg.output` is set.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let lm = load_model(&cfg.checkpoint)?;
    let report = Benchmark::new(cfg.clone(), &lm, train, test)?.run()?;
    if let Some(path) = &cfg.output {
        report.save(path)?;
    }
    Ok(report)
}

enum Prepared {
    Plain(Verbalizer),
    Weighted(WeightedVerbalizer),
}

struct Variant {
    name: &'static str,
    scorer: Scorer,
    words: usize,
    weighted: Option<WeightedVerbalizer>,
}

/// A configured benchmark over one model and dataset.
pub struct Benchmark<'a> {
    cfg: ExperimentConfig,
    lm: &'a RobertaMaskedLm,
    train: Option<Dataset>,
    test: Vec<Example>,
    labels: Vec<String>,
    templates: Vec<Template>,
    base: Prepared,
    store: Option<EmbeddingStore>,
}

impl<'a> Benchmark<'a> {
    pub fn new(cfg: ExperimentConfig, lm: &'a RobertaMaskedLm, train: Option<Dataset>, test: Dataset) -> Result<Self> {
        cfg.validate()?;
        let labels = test.label_names().to_vec();
        if let Some(tr) = &train {
            if tr.label_names() != labels.as_slice() {
                return Err(Error::argument("train and test label sets differ"));
            }
            let ids: std::collections::HashSet<&str> = tr.examples.iter().map(|x| x.id.as_str()).collect();
            if test.examples.iter().any(|x| ids.contains(x.id.as_str())) {
                return Err(Error::argument("train pool and test split share example ids"));
            }
        }
        if cfg.n > 0 && train.is_none() {
            return Err(Error::argument("n > 0 needs a training pool"));
        }
        let all = match &cfg.template_file {
            Some(p) => load_templates(p)?,
            None => builtin_templates(&cfg.dataset.id)?,
        };
        let templates = if cfg.templates.is_empty() {
            all
        } else {
            cfg.templates
                .iter()
                .map(|id| {
                    all.iter()
                        .find(|t| t.id() == *id)
                        .cloned()
                        .ok_or_else(|| Error::argument(format!("no template with id {id}")))
                })
                .collect::<Result<_>>()?
        };
        if templates.is_empty() {
            return Err(Error::argument("no templates"));
        }
        let schema_fields: Vec<&str> = test.schema.fields.keys().map(String::as_str).collect();
        for t in &templates {
            if let Some(f) = t.fields().into_iter().find(|f| !schema_fields.contains(f)) {
                return Err(Error::argument(format!("template {} uses unknown field {f:?}", t.id())));
            }
        }
        let base = match &cfg.verbalizer.file {
            Some(p) => match VerbalizerFile::load(p)? {
                VerbalizerFile::Plain(v) => Prepared::Plain(v),
                VerbalizerFile::Weighted(w) if cfg.verbalizer.kind == VerbalizerKind::Maven => Prepared::Weighted(w),
                VerbalizerFile::Weighted(w) => Prepared::Plain(w.to_verbalizer()),
            },
            None => Prepared::Plain(build_manual(&cfg.dataset.id)?),
        };
        let base_labels = match &base {
            Prepared::Plain(v) => v.labels(),
            Prepared::Weighted(w) => w.labels(),
        };
        if base_labels != labels.as_slice() {
            return Err(Error::argument(format!(
                "verbalizer labels {base_labels:?} differ from dataset labels {labels:?}"
            )));
        }
        let needs_store = match cfg.verbalizer.kind {
            VerbalizerKind::Soft | VerbalizerKind::AutoMaven => true,
            VerbalizerKind::Maven => matches!(base, Prepared::Plain(_)),
            _ => false,
        };
        let store = if needs_store {
            Some(load_store(&cfg.verbalizer.embeddings, lm)?)
        } else {
            None
        };
        let test = match cfg.dataset.test_limit {
            Some(limit) => subsample(&test.examples, limit, cfg.dataset.test_seed),
            None => test.examples,
        };
        Ok(Self {
            cfg,
            lm,
            train,
            test,
            labels,
            templates,
            base,
            store,
        })
    }

    pub fn test_examples(&self) -> &[Example] {
        &self.test
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    fn variant_names(&self) -> &'static [&'static str] {
        match self.cfg.verbalizer.kind {
            VerbalizerKind::Manual => &["manual"],
            VerbalizerKind::Soft => &["soft"],
            VerbalizerKind::Auto => &["auto"],
            VerbalizerKind::Maven => &["maven"],
            VerbalizerKind::AutoMaven => &["auto", "auto+maven"],
        }
    }

    fn store(&self) -> Result<&EmbeddingStore> {
        self.store
            .as_ref()
            .ok_or_else(|| Error::argument("no embedding store loaded"))
    }

    fn enrich(&self, v: &Verbalizer) -> Result<Variant> {
        let enriched = enrich_maven(v, self.store()?, self.cfg.verbalizer.k, self.cfg.verbalizer.core_form)?;
        if !enriched.missing_core_words.is_empty() {
            log::warn!("core words missing from the embedding store: {:?}", enriched.missing_core_words);
        }
        let wv = enriched.verbalizer;
        Ok(Variant {
            name: "maven",
            scorer: Scorer::Weighted(ResolvedVerbalizer::weighted(&wv, self.lm.tokenizer())?),
            words: (0..wv.num_labels()).map(|y| wv.entries(y).len()).sum(),
            weighted: Some(wv),
        })
    }

    fn plain(&self, name: &'static str, v: &Verbalizer) -> Result<Variant> {
        Ok(Variant {
            name,
            scorer: Scorer::Mean(ResolvedVerbalizer::manual(v, self.lm.tokenizer())?),
            words: (0..v.num_labels()).map(|y| v.words(y).len()).sum(),
            weighted: None,
        })
    }

    /// Verbalizers that do not depend on the template or the sample.
    fn static_variants(&self) -> Result<Option<Vec<Variant>>> {
        let kind = self.cfg.verbalizer.kind;
        Ok(Some(match (&self.base, kind) {
            (_, VerbalizerKind::Auto | VerbalizerKind::AutoMaven) => return Ok(None),
            (Prepared::Weighted(wv), VerbalizerKind::Maven) => vec![Variant {
                name: "maven",
                scorer: Scorer::Weighted(ResolvedVerbalizer::weighted(wv, self.lm.tokenizer())?),
                words: (0..wv.num_labels()).map(|y| wv.entries(y).len()).sum(),
                weighted: Some(wv.clone()),
            }],
            (Prepared::Plain(v), VerbalizerKind::Maven) => vec![self.enrich(v)?],
            (Prepared::Plain(v), VerbalizerKind::Manual) => vec![self.plain("manual", v)?],
            (Prepared::Plain(v), VerbalizerKind::Soft) => {
                let sv = init_soft(v, self.store()?)?;
                vec![Variant {
                    name: "soft",
                    scorer: Scorer::Soft(sv),
                    words: v.iter().map(|(_, ws)| ws.len()).sum(),
                    weighted: None,
                }]
            }
            (Prepared::Weighted(_), _) => unreachable!("weighted files are only kept for maven"),
        }))
    }

    fn mined_variants(&self, template: &Template, split: &FewShotSplit) -> Result<Vec<Variant>> {
        let mined = build_petal(&split.d_train, template, self.lm, &self.labels, self.cfg.verbalizer.k_auto)?;
        let mut out = vec![self.plain("auto", &mined)?];
        if self.cfg.verbalizer.kind == VerbalizerKind::AutoMaven {
            let mut enriched = self.enrich(&mined)?;
            enriched.name = "auto+maven";
            out.push(enriched);
        }
        Ok(out)
    }

    fn sample(&self, seed: u64) -> Result<FewShotSplit> {
        match &self.train {
            None => Ok(FewShotSplit::empty(seed)),
            Some(pool) if self.cfg.stratified => sample_fewshot(&pool.examples, pool.num_labels(), self.cfg.n, seed),
            Some(pool) => sample_uniform(&pool.examples, pool.num_labels(), self.cfg.n, seed),
        }
    }

    pub fn run(&self) -> Result<RunReport> {
        let started_at = chrono::Utc::now().to_rfc3339();
        if self.test.is_empty() {
            return Err(Error::argument("empty test split"));
        }
        if let Some(dir) = &self.cfg.export_dir {
            std::fs::create_dir_all(dir)?;
        }
        let names = self.variant_names();
        let fixed = self.static_variants()?;
        let mut per_variant: Vec<Vec<SeedReport>> = vec![Vec::new(); names.len()];
        for &seed in &self.cfg.seeds {
            let split = self.sample(seed)?;
            let mut members: Vec<Vec<MemberReport>> = vec![Vec::new(); names.len()];
            let mut outputs: Vec<Vec<(u32, Vec<LogitRecord>)>> = vec![Vec::new(); names.len()];
            for template in &self.templates {
                let variants = match &fixed {
                    Some(v) => Ok(v.iter().map(|v| Variant {
                        name: v.name,
                        scorer: v.scorer.clone(),
                        words: v.words,
                        weighted: v.weighted.clone(),
                    }).collect::<Vec<_>>()),
                    None => self.mined_variants(template, &split),
                };
                let variants = match variants {
                    Ok(v) => v,
                    Err(e) => {
                        log::warn!("seed {seed}, template {}: verbalizer construction failed: {e}", template.id());
                        for m in members.iter_mut() {
                            m.push(failed_member(template.id(), &e));
                        }
                        continue;
                    }
                };
                for (slot, variant) in variants.into_iter().enumerate() {
                    let (report, records) = self.member(template, &variant, &split, seed);
                    if let Some(records) = records {
                        outputs[slot].push((template.id(), records));
                    }
                    members[slot].push(report);
                }
            }
            for (slot, (members, outputs)) in members.into_iter().zip(outputs).enumerate() {
                let ensemble_accuracy = self.ensemble_accuracy(&outputs)?;
                log::info!("{} seed {seed}: ensemble accuracy {ensemble_accuracy:?}", names[slot]);
                per_variant[slot].push(SeedReport {
                    seed,
                    train_size: split.d_train.len(),
                    valid_size: split.d_valid.len(),
                    members,
                    ensemble_accuracy,
                });
            }
        }
        Ok(RunReport {
            config_hash: self.cfg.hash()?,
            config: self.cfg.clone(),
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            stratified: self.cfg.stratified,
            test_size: self.test.len(),
            variants: names
                .iter()
                .zip(per_variant)
                .map(|(n, seeds)| VariantReport::new(*n, seeds))
                .collect(),
        })
    }

    fn member(
        &self,
        template: &Template,
        variant: &Variant,
        split: &FewShotSplit,
        seed: u64,
    ) -> (MemberReport, Option<Vec<LogitRecord>>) {
        let run = || -> Result<(MemberReport, Vec<LogitRecord>)> {
            let tuned = fine_tune(self.lm, template, &variant.scorer, split, &self.cfg.training, seed)?;
            let eval = evaluate(tuned.model.lm(), template, &tuned.scorer, &self.test)?;
            if let Some(dir) = &self.cfg.export_dir {
                let stem = format!("{}-seed{seed}-t{}", variant.name, template.id());
                write_logits(dir.join(format!("{stem}.jsonl")), &eval.records)?;
                if let Some(wv) = &variant.weighted {
                    VerbalizerFile::Weighted(trained_verbalizer(wv, &tuned.scorer)?)
                        .save(dir.join(format!("{stem}.verbalizer.json")))?;
                }
            }
            Ok((
                MemberReport {
                    template_id: template.id(),
                    accuracy: Some(eval.accuracy),
                    best_epoch: tuned.best_epoch,
                    validation_accuracy: tuned.validation_accuracy,
                    label_words: variant.words,
                    failure: None,
                },
                eval.records,
            ))
        };
        match run() {
            Ok((report, records)) => (report, Some(records)),
            Err(e) => {
                log::warn!("{} seed {seed} template {} failed: {e}", variant.name, template.id());
                let mut report = failed_member(template.id(), &e);
                report.label_words = variant.words;
                (report, None)
            }
        }
    }

    fn ensemble_accuracy(&self, outputs: &[(u32, Vec<LogitRecord>)]) -> Result<Option<f64>> {
        if outputs.is_empty() {
            return Ok(None);
        }
        let mut correct = 0usize;
        for (i, x) in self.test.iter().enumerate() {
            let members: Vec<MemberOutput> = outputs
                .iter()
                .map(|(t, recs)| MemberOutput::new(*t, recs[i].logits.clone()))
                .collect();
            if Some(self.cfg.ensemble.aggregate(&members)?) == x.label {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / self.test.len() as f64))
    }
}

fn failed_member(template_id: u32, e: &Error) -> MemberReport {
    MemberReport {
        template_id,
        accuracy: None,
        best_epoch: None,
        validation_accuracy: Vec::new(),
        label_words: 0,
        failure: Some(e.to_string()),
    }
}
