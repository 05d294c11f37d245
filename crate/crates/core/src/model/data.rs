//! Assembly of pre-training and fine-tuning sets from raw functions and
//! labeled pairs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{preprocess, Preprocessed, SourceUnit};
use crate::corpus::TrainingPair;
use crate::flow::build_vfg;
use crate::pattern::LabeledSample;
use crate::pretrain::{
    augment, gen_cap, gen_isp_lenient, gen_it, gen_mip, gen_msp, label_span_at_line, sample_rng,
    Objective,
};

use super::{Datasets, LocateSample, ModelError, Vocab};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataReport {
    pub functions: usize,
    pub unparsed: usize,
    pub msp: usize,
    pub it: usize,
    pub mip: usize,
    pub cap: usize,
    pub isp: usize,
    pub pairs: usize,
    pub finetune: usize,
    pub augmented: usize,
    /// (item, reason) for anything dropped along the way.
    pub skipped: Vec<(String, String)>,
}

/// Fine-tuning samples for one pair: the normal side labeled at its
/// injection line, then each refactored variant when `augment_pairs` is set.
pub fn locate_samples(
    pair: &TrainingPair,
    seed: u64,
    augment_pairs: bool,
) -> Result<Vec<LocateSample>, String> {
    let labeled = LabeledSample::from_pair(pair)?;
    let line = labeled.lines.0;
    let base = LocateSample::from_text(&pair.normal, line).map_err(|e| e.to_string())?;
    let mut out = vec![base];
    if augment_pairs {
        let unit = SourceUnit::new(pair.normal.clone());
        let span = label_span_at_line(&labeled.normal, line)
            .ok_or_else(|| format!("no statement on line {line}"))?;
        for v in augment(&unit, span, seed) {
            match LocateSample::from_text(&v.variant_text, v.label_line) {
                Ok(s) => out.push(s),
                Err(e) => log::debug!("dropping variant of {}: {e}", pair.id),
            }
        }
    }
    Ok(out)
}

/// Every pre-training objective over `corpus` and the localization set over
/// `pairs`, plus a vocabulary covering both.
pub fn build_datasets(
    corpus: &[SourceUnit],
    pairs: &[TrainingPair],
    seed: u64,
    augment_pairs: bool,
) -> Result<(Vocab, Datasets, DataReport), ModelError> {
    let mut report = DataReport {
        functions: corpus.len(),
        pairs: pairs.len(),
        ..DataReport::default()
    };
    let parsed: Vec<Option<Preprocessed>> = corpus.par_iter().map(|u| preprocess(u).ok()).collect();
    let pre: Vec<Preprocessed> = parsed.into_iter().flatten().collect();
    report.unparsed = corpus.len() - pre.len();

    let mut data = Datasets::default();
    let per_unit: Vec<_> = pre
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let vfg = build_vfg(&p.ast, &p.input);
            let msp_seed = sample_rng(seed, i as u64).random::<u64>();
            (
                gen_msp(&p.input, &vfg, msp_seed),
                gen_it(&p.input, &vfg),
                gen_mip(&p.input, &vfg),
            )
        })
        .collect();
    let (mut msp, mut it, mut mip) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (m, t, ip)) in per_unit.into_iter().enumerate() {
        match m {
            Ok(s) => msp.push(s),
            Err(e) => report.skipped.push((format!("msp:{i}"), e.to_string())),
        }
        it.push(t);
        mip.push(ip);
    }
    let cap = gen_cap(&pre, seed);
    let (isp, isp_skipped) = gen_isp_lenient(&pre, seed);
    report.skipped.extend(
        isp_skipped
            .into_iter()
            .map(|e| ("isp".to_string(), e.to_string())),
    );
    (report.msp, report.it, report.mip, report.cap, report.isp) =
        (msp.len(), it.len(), mip.len(), cap.len(), isp.len());
    for (o, v) in [
        (Objective::Msp, msp),
        (Objective::It, it),
        (Objective::Mip, mip),
        (Objective::Cap, cap),
        (Objective::Isp, isp),
    ] {
        data.pretrain.insert(o, v);
    }

    let located: Vec<_> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| locate_samples(p, sample_rng(seed, i as u64).random(), augment_pairs))
        .collect();
    for (p, r) in pairs.iter().zip(located) {
        match r {
            Ok(samples) => {
                report.augmented += samples.len() - 1;
                data.finetune.extend(samples);
            }
            Err(e) => report.skipped.push((p.id.clone(), e)),
        }
    }
    report.finetune = data.finetune.len();

    let vocab = Vocab::build(pre.iter().flat_map(|p| p.input.sequence()).chain(
        data.finetune.iter().flat_map(|s| {
            s.input
                .sequence()
                .into_iter()
                .chain(s.statement.iter().map(String::as_str))
        }),
    ));
    Ok((vocab, data, report))
}
