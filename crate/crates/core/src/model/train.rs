//! Staged training with Adam: pre-training objectives in schedule order,
//! then the localization objective.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::code::{preprocess, ModelInput, SourceUnit};
use crate::flow::{build_vfg, ValueFlowGraph};
use crate::pretrain::{sample_rng, Label, Objective, PretrainSample};

use super::locate::statement_tokens;
use super::net::{Ctx, Example, Target};
use super::params::round_f32;
use super::tape::Tensor;
use super::{Model, ModelConfig, ModelError, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Pretrain(Objective),
    /// Emit the statement to inject into.
    Locate,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Pretrain(o) => o.name(),
            Task::Locate => "LOCATE",
        }
    }
}

/// One stage: its tasks' samples are mixed and shuffled each epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub tasks: Vec<Task>,
    pub epochs: usize,
}

/// CAP, then MSP/IT/MIP mixed, then ISP, then fine-tuning.
pub fn default_schedule(config: &ModelConfig) -> Vec<Stage> {
    let pre = |name: &str, tasks: Vec<Task>| Stage {
        name: name.into(),
        tasks,
        epochs: config.pretrain_epochs,
    };
    vec![
        pre("cap", vec![Task::Pretrain(Objective::Cap)]),
        pre(
            "codet5",
            vec![
                Task::Pretrain(Objective::Msp),
                Task::Pretrain(Objective::It),
                Task::Pretrain(Objective::Mip),
            ],
        ),
        pre("isp", vec![Task::Pretrain(Objective::Isp)]),
        Stage {
            name: "finetune".into(),
            tasks: vec![Task::Locate],
            epochs: config.finetune_epochs,
        },
    ]
}

/// A fine-tuning example: the function and the statement tokens to emit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocateSample {
    pub input: ModelInput,
    pub vfg: ValueFlowGraph,
    pub statement: Vec<String>,
}

impl LocateSample {
    /// `text` labeled with the outermost statement starting on `line`.
    pub fn from_text(text: &str, line: usize) -> Result<Self, ModelError> {
        let pre = preprocess(&SourceUnit::new(text))?;
        let stmt = pre
            .ast
            .body_statements()
            .into_iter()
            .find(|s| s.line == line)
            .ok_or(ModelError::NoStatementAt(line))?;
        let statement = statement_tokens(stmt, &pre.ast.source);
        let vfg = build_vfg(&pre.ast, &pre.input);
        Ok(Self {
            input: pre.input,
            vfg,
            statement,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Datasets {
    pub pretrain: BTreeMap<Objective, Vec<PretrainSample>>,
    pub finetune: Vec<LocateSample>,
}

impl Datasets {
    fn len(&self, task: Task) -> usize {
        match task {
            Task::Pretrain(o) => self.pretrain.get(&o).map_or(0, Vec::len),
            Task::Locate => self.finetune.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: String,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,step,loss\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.stage, r.step, r.loss);
        }
        s
    }

    pub fn stage(&self, name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == name)
            .map(|r| r.loss)
            .collect()
    }
}

fn tokens_to_ids(vocab: &Vocab, toks: impl IntoIterator<Item = impl AsRef<str>>) -> Vec<usize> {
    toks.into_iter().map(|t| vocab.id(t.as_ref())).collect()
}

pub(crate) fn pretrain_example(model: &Model, s: &PretrainSample) -> Example {
    let v = &model.vocab;
    let target = match &s.label {
        Label::Spans { target, .. } => Target::Seq(tokens_to_ids(v, target)),
        Label::Identifiers(bits) => Target::Tags(bits.iter().map(|&b| usize::from(b)).collect()),
        Label::Names(names) => {
            Target::Seq(tokens_to_ids(v, names.iter().flat_map(|(s, n)| [s, n])))
        }
        Label::Matched(m) => Target::Class(usize::from(*m)),
        Label::Inserted { text, .. } => Target::Seq(tokens_to_ids(
            v,
            crate::code::token_texts(text).unwrap_or_default(),
        )),
    };
    Example::new(&s.input, &s.vfg, target, v, model.config.max_seq_len)
}

pub(crate) fn locate_example(model: &Model, s: &LocateSample) -> Example {
    let target = Target::Seq(tokens_to_ids(&model.vocab, &s.statement));
    Example::new(
        &s.input,
        &s.vfg,
        target,
        &model.vocab,
        model.config.max_seq_len,
    )
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: Vec<i32>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const CLIP_NORM: f64 = 1.0;

impl Adam {
    fn new(model: &Model) -> Self {
        let zeros: Vec<Tensor> = model
            .params
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows, t.cols))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: vec![0; model.params.len()],
        }
    }

    /// Updates only the parameters that received a gradient.
    fn step(&mut self, model: &mut Model, grads: &[Option<Tensor>], lr: f64) {
        let norm: f64 = grads
            .iter()
            .flatten()
            .flat_map(|g| g.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let clip = if norm > CLIP_NORM {
            CLIP_NORM / norm
        } else {
            1.0
        };
        for (pid, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            self.t[pid] += 1;
            let (b1, b2) = (1.0 - BETA1.powi(self.t[pid]), 1.0 - BETA2.powi(self.t[pid]));
            let p = &mut model.params.tensors[pid];
            for k in 0..g.data.len() {
                let gk = g.data[k] * clip;
                let m = &mut self.m[pid].data[k];
                *m = BETA1 * *m + (1.0 - BETA1) * gk;
                let v = &mut self.v[pid].data[k];
                *v = BETA2 * *v + (1.0 - BETA2) * gk * gk;
                p.data[k] -=
                    lr * (self.m[pid].data[k] / b1) / ((self.v[pid].data[k] / b2).sqrt() + EPS);
            }
        }
    }
}

/// Mean loss of `task` over all its samples, without updating anything.
pub fn evaluate(model: &Model, task: Task, data: &Datasets) -> Result<f64, ModelError> {
    let examples: Vec<Example> = match task {
        Task::Pretrain(o) => data
            .pretrain
            .get(&o)
            .into_iter()
            .flatten()
            .map(|s| pretrain_example(model, s))
            .collect(),
        Task::Locate => data
            .finetune
            .iter()
            .map(|s| locate_example(model, s))
            .collect(),
    };
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset(task.name().to_string()));
    }
    let mut total = 0.0;
    for ex in &examples {
        let mut cx = Ctx::new(&model.params);
        let loss = model.loss(&mut cx, ex)?;
        total += cx.tape.value(loss).data[0];
    }
    Ok(total / examples.len() as f64)
}

/// Runs `schedule` in order. Each step averages gradients over a batch; the
/// recorded loss is the batch mean. Parameters end rounded to f32.
pub fn train(
    model: &mut Model,
    schedule: &[Stage],
    data: &Datasets,
) -> Result<LossTrace, ModelError> {
    for stage in schedule.iter().filter(|s| s.epochs > 0) {
        if let Some(t) = stage.tasks.iter().find(|&&t| data.len(t) == 0) {
            return Err(ModelError::EmptyDataset(format!(
                "{} in stage {}",
                t.name(),
                stage.name
            )));
        }
    }
    let mut trace = LossTrace::default();
    for (si, stage) in schedule.iter().enumerate() {
        if stage.epochs == 0 {
            continue;
        }
        let examples: Vec<Example> = stage
            .tasks
            .iter()
            .flat_map(|&t| -> Vec<Example> {
                match t {
                    Task::Pretrain(o) => data.pretrain[&o]
                        .iter()
                        .map(|s| pretrain_example(model, s))
                        .collect(),
                    Task::Locate => data
                        .finetune
                        .iter()
                        .map(|s| locate_example(model, s))
                        .collect(),
                }
            })
            .collect();
        log::info!(
            "stage {}: {} examples, {} epochs",
            stage.name,
            examples.len(),
            stage.epochs
        );
        let mut adam = Adam::new(model);
        let mut step = 0;
        for epoch in 0..stage.epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut sample_rng(
                model.config.seed ^ (si as u64) << 32,
                epoch as u64,
            ));
            for batch in order.chunks(model.config.batch_size) {
                let mut grads: Vec<Option<Tensor>> = vec![None; model.params.len()];
                let mut total = 0.0;
                for &i in batch {
                    let mut cx = Ctx::new(&model.params);
                    let loss = model.loss(&mut cx, &examples[i])?;
                    total += cx.tape.value(loss).data[0];
                    for (pid, g) in cx.tape.backward(loss) {
                        match &mut grads[pid] {
                            Some(acc) => {
                                acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b)
                            }
                            slot => *slot = Some(g),
                        }
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                grads
                    .iter_mut()
                    .flatten()
                    .for_each(|g| g.data.iter_mut().for_each(|v| *v *= scale));
                let loss = total * scale;
                if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(ModelError::Diverged {
                        stage: stage.name.clone(),
                        step,
                        loss,
                    });
                }
                adam.step(model, &grads, model.config.learning_rate);
                trace.records.push(LossRecord {
                    stage: stage.name.clone(),
                    step,
                    loss,
                });
                step += 1;
            }
        }
        if let Some(name) = model.params.first_non_finite() {
            return Err(ModelError::NonFinite(name.to_string()));
        }
    }
    model.params.tensors.iter_mut().for_each(round_f32);
    Ok(trace)
}
