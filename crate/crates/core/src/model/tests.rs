use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Id, Tape, Tensor};
use super::*;
use crate::code::{preprocess, SourceUnit};
use crate::fixtures::PASSWORD_CHECK;
use crate::flow::build_vfg;
use crate::pattern::shipped_patterns;
use crate::pretrain::{gen_cap, Objective};
use crate::synth::{planted_corpus, toy_corpus};

pub(crate) fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Largest relative error between analytic and central-difference gradients
/// of `sum(out * w)` over every element of every tensor in `inputs`.
pub(crate) fn max_grad_error(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Id]) -> Id) -> f64 {
    let eval = |ts: &[Tensor]| {
        let mut tape = Tape::new();
        let ids: Vec<Id> = ts
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(t.clone(), i))
            .collect();
        let out = build(&mut tape, &ids);
        let (r, c) = (tape.value(out).rows, tape.value(out).cols);
        let w = tape.constant(random(r, c, &mut ChaCha8Rng::seed_from_u64(77)));
        let m = tape.mul(out, w);
        let root = tape.sum_all(m);
        (tape.value(root).data[0], tape.backward(root))
    };
    let (_, grads) = eval(inputs);
    let mut analytic: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::zeros(t.rows, t.cols))
        .collect();
    for (pid, g) in grads {
        analytic[pid] = g;
    }
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.data.len() {
            let h = 1e-6;
            let mut plus = inputs.to_vec();
            plus[i].data[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data[k] -= h;
            let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let an = analytic[i].data[k];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    worst
}

/// Inputs for one attention instance: x, eleven weights, absolute and
/// relative VFG embeddings.
pub(crate) struct AttnCase {
    pub tensors: Vec<Tensor>,
    pub var_rows: Vec<usize>,
    pub pairs: Vec<(usize, usize, usize)>,
    pub heads: usize,
    pub clip: usize,
}

pub(crate) fn attn_case(seed: u64) -> AttnCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let heads = rng.random_range(1..=2);
    let d = heads * rng.random_range(1..=4);
    let g = rng.random_range(1..=3);
    let clip = rng.random_range(1..=3);
    let b = 2 * clip + 1;
    let var_rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    let u = rng.random_range(1..=3);
    let mut pairs = Vec::new();
    for &i in &var_rows {
        for &j in &var_rows {
            if rng.random_bool(0.7) {
                pairs.push((i, j, rng.random_range(0..u)));
            }
        }
    }
    let m = var_rows.len().max(1);
    let shapes = [
        (n, d),
        (d, d),
        (d, d),
        (d, d),
        (d, d),
        (d, d),
        (b, d),
        (b, d),
        (g, d),
        (g, d),
        (g, d),
        (g, d),
        (m, g),
        (u, g),
    ];
    let tensors = shapes
        .iter()
        .map(|&(r, c)| random(r, c, &mut rng))
        .collect();
    AttnCase {
        tensors,
        var_rows,
        pairs,
        heads,
        clip,
    }
}

pub(crate) fn run_attention(tape: &mut Tape, ids: &[Id], case: &AttnCase, with_vfg: bool) -> Id {
    let n = tape.value(ids[0]).rows;
    let d = tape.value(ids[1]).cols;
    let pos = Positions::new(tape, n, d, case.clip);
    let p = AttentionParams {
        wq: ids[1],
        wk: ids[2],
        wv: ids[3],
        aq: ids[4],
        ak: ids[5],
        rk: ids[6],
        rv: ids[7],
        vaq: ids[8],
        vak: ids[9],
        vrk: ids[10],
        vrv: ids[11],
    };
    let vfg = VfgEncodings {
        var_rows: Rc::new(case.var_rows.clone()),
        abs: ids[12],
        pairs: Rc::new(case.pairs.clone()),
        rel: ids[13],
    };
    let vfg = (with_vfg && !case.var_rows.is_empty()).then_some(&vfg);
    attention_block(tape, ids[0], &pos, vfg, &p, case.heads).unwrap()
}

/// Direct loop evaluation of the attention equations.
fn reference_attention(case: &AttnCase) -> Tensor {
    let t = &case.tensors;
    let (x, wq, wk, wv, aq, ak, rk, rv) = (&t[0], &t[1], &t[2], &t[3], &t[4], &t[5], &t[6], &t[7]);
    let (vaq, vak, vrk, vrv, gabs, grel) = (&t[8], &t[9], &t[10], &t[11], &t[12], &t[13]);
    let n = x.rows;
    let d = wq.cols;
    let dh = d / case.heads;
    let pe = sinusoids(n, d);
    let mm = |a: &[f64], w: &Tensor, col: usize| -> f64 {
        (0..w.rows).map(|r| a[r] * w.at(r, col)).sum()
    };
    let zero_g = vec![0.0; gabs.cols];
    let abs_of = |i: usize| {
        case.var_rows
            .iter()
            .position(|&r| r == i)
            .map_or(zero_g.clone(), |k| gabs.row(k).to_vec())
    };
    let rel_of = |i: usize, j: usize| -> Vec<f64> {
        let mut acc = vec![0.0; grel.cols];
        for &(a, b, e) in &case.pairs {
            if a == i && b == j {
                acc.iter_mut().zip(grel.row(e)).for_each(|(s, v)| *s += v);
            }
        }
        acc
    };
    let bucket = |i: usize, j: usize| {
        ((j as isize - i as isize).clamp(-(case.clip as isize), case.clip as isize)
            + case.clip as isize) as usize
    };
    let mut out = Tensor::zeros(n, d);
    for h in 0..case.heads {
        for i in 0..n {
            let cols = h * dh..(h + 1) * dh;
            let q: Vec<f64> = cols.clone().map(|c| mm(x.row(i), wq, c)).collect();
            let a_q: Vec<f64> = cols.clone().map(|c| mm(pe.row(i), aq, c)).collect();
            let av_q: Vec<f64> = cols.clone().map(|c| mm(&abs_of(i), vaq, c)).collect();
            let mut scores = Vec::new();
            for j in 0..n {
                let key: Vec<f64> = cols
                    .clone()
                    .map(|c| {
                        mm(x.row(j), wk, c) + rk.at(bucket(i, j), c) + mm(&rel_of(i, j), vrk, c)
                    })
                    .collect();
                let a_k: Vec<f64> = cols.clone().map(|c| mm(pe.row(j), ak, c)).collect();
                let av_k: Vec<f64> = cols.clone().map(|c| mm(&abs_of(j), vak, c)).collect();
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                let s = 1.0 / ((2 * dh) as f64).sqrt();
                scores.push(s * dot(&q, &key) + s * dot(&a_q, &a_k) + s * dot(&av_q, &av_k));
            }
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|v| (v - m).exp()).sum();
            for j in 0..n {
                let p = (scores[j] - m).exp() / z;
                for c in cols.clone() {
                    let val =
                        mm(x.row(j), wv, c) + rv.at(bucket(i, j), c) + mm(&rel_of(i, j), vrv, c);
                    out.data[i * d + c] += p * val;
                }
            }
        }
    }
    out
}

fn eval_attention(case: &AttnCase, with_vfg: bool) -> Tensor {
    let mut tape = Tape::new();
    let ids: Vec<Id> = case
        .tensors
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let out = run_attention(&mut tape, &ids, case, with_vfg);
    tape.value(out).clone()
}

#[test]
fn attention_matches_reference_evaluation() {
    for seed in 0..40 {
        let case = attn_case(seed);
        let got = eval_attention(&case, true);
        let want = reference_attention(&case);
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-10, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn attention_gradients_match_finite_differences() {
    for seed in 0..10 {
        let case = attn_case(seed);
        let err = max_grad_error(&case.tensors, &|tape, ids| {
            run_attention(tape, ids, &case, true)
        });
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn attention_rows_are_normalized() {
    for seed in 0..20 {
        let mut case = attn_case(seed);
        // Constant unit values expose the row sums of the attention weights.
        case.tensors[3].data.fill(0.0);
        case.tensors[7].data.fill(1.0);
        case.tensors[11].data.fill(0.0);
        let out = eval_attention(&case, true);
        assert!(out.data.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }
}

#[test]
fn zero_vfg_projections_collapse_bit_identically() {
    for seed in 0..20 {
        let mut case = attn_case(seed);
        for k in 8..12 {
            case.tensors[k].data.fill(0.0);
        }
        assert_eq!(
            eval_attention(&case, true),
            eval_attention(&case, false),
            "seed {seed}"
        );
    }
}

#[test]
fn single_token_output_is_its_value() {
    let mut case = attn_case(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, g) = (case.tensors[1].cols, case.tensors[13].cols);
    case.tensors[0] = random(1, d, &mut rng);
    case.tensors[12] = random(1, g, &mut rng);
    case.var_rows = vec![0];
    case.pairs = vec![(0, 0, 0)];
    let out = eval_attention(&case, true);
    let t = &case.tensors;
    let c = case.clip;
    for col in 0..d {
        let xv: f64 = (0..d).map(|r| t[0].at(0, r) * t[3].at(r, col)).sum();
        let rel: f64 = (0..g).map(|r| t[13].at(0, r) * t[11].at(r, col)).sum();
        let want = xv + t[7].at(c, col) + rel;
        assert!((out.at(0, col) - want).abs() < 1e-12);
    }
}

#[test]
fn traditional_terms_off_reduce_to_scaled_dot_product() {
    let mut case = attn_case(11);
    for k in 4..12 {
        case.tensors[k].data.fill(0.0);
    }
    let got = eval_attention(&case, true);
    let t = &case.tensors;
    let x = &t[0];
    let (q, k, v) = (
        tape::matmul(x, &t[1]),
        tape::matmul(x, &t[2]),
        tape::matmul(x, &t[3]),
    );
    let (n, d) = (x.rows, t[1].cols);
    let dh = d / case.heads;
    for h in 0..case.heads {
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| {
                    (h * dh..(h + 1) * dh)
                        .map(|c| q.at(i, c) * k.at(j, c))
                        .sum::<f64>()
                        / ((2 * dh) as f64).sqrt()
                })
                .collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for c in h * dh..(h + 1) * dh {
                let want: f64 = (0..n).map(|j| s[j].exp() / z * v.at(j, c)).sum();
                assert!((got.at(i, c) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn non_finite_weights_fail_before_compute() {
    let mut case = attn_case(2);
    case.tensors[5].data[0] = f64::NAN;
    let mut tape = Tape::new();
    let ids: Vec<Id> = case
        .tensors
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let n = tape.value(ids[0]).rows;
    let pos = Positions::new(&mut tape, n, case.tensors[1].cols, case.clip);
    let p = AttentionParams {
        wq: ids[1],
        wk: ids[2],
        wv: ids[3],
        aq: ids[4],
        ak: ids[5],
        rk: ids[6],
        rv: ids[7],
        vaq: ids[8],
        vak: ids[9],
        vrk: ids[10],
        vrv: ids[11],
    };
    let before = tape.len();
    assert!(
        matches!(attention_block(&mut tape, ids[0], &pos, None, &p, case.heads), Err(ModelError::NonFinite(n)) if n == "A^K")
    );
    assert_eq!(tape.len(), before);
}

/// Graph network inputs: trigram table then the eleven weights in
/// `GgnnParams` order.
pub(crate) fn ggnn_tensors(g: usize, buckets: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut ts = vec![random(buckets, g, rng)];
    for bias in [
        false, true, false, false, true, false, false, true, false, false, true,
    ] {
        ts.push(random(if bias { 1 } else { g }, g, rng));
    }
    ts
}

pub(crate) fn ggnn_params(ids: &[Id]) -> GgnnParams {
    GgnnParams {
        trigram: ids[0],
        wg: ids[1],
        bg: ids[2],
        wz: ids[3],
        uz: ids[4],
        bz: ids[5],
        wr: ids[6],
        ur: ids[7],
        br: ids[8],
        wh: ids[9],
        uh: ids[10],
        bh: ids[11],
    }
}

pub(crate) fn random_graphs(rng: &mut ChaCha8Rng) -> Vec<GraphInput> {
    let names = ["len", "buf", "p", "count", "x"];
    (0..rng.random_range(1..=3))
        .map(|_| {
            let k = rng.random_range(1..=4);
            let edges = (0..k)
                .flat_map(|u| (0..k).map(move |v| (u, v)))
                .filter(|_| rng.random_bool(0.4))
                .collect();
            GraphInput {
                names: (0..k)
                    .map(|_| names[rng.random_range(0..names.len())].to_string())
                    .collect(),
                edges,
            }
        })
        .collect()
}

fn eval_ggnn(ts: &[Tensor], graphs: &[GraphInput], steps: usize) -> Tensor {
    let mut tape = Tape::new();
    let ids: Vec<Id> = ts.iter().map(|t| tape.constant(t.clone())).collect();
    let out = encode_subgraphs(&mut tape, graphs, &ggnn_params(&ids), steps);
    tape.value(out).clone()
}

fn initial(ts: &[Tensor], name: &str) -> Vec<f64> {
    let ids = trigram_ids(name, ts[0].rows);
    (0..ts[0].cols)
        .map(|c| ids.iter().map(|&i| ts[0].at(i, c)).sum::<f64>() / ids.len() as f64)
        .collect()
}

#[test]
fn ggnn_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..8 {
        let g = rng.random_range(1..=3);
        let ts = ggnn_tensors(g, 7, &mut rng);
        let graphs = random_graphs(&mut rng);
        let steps = rng.random_range(1..=2);
        let err = max_grad_error(&ts, &|tape, ids| {
            encode_subgraphs(tape, &graphs, &ggnn_params(ids), steps)
        });
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn single_node_without_steps_is_its_name_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ts = ggnn_tensors(4, 31, &mut rng);
    let out = eval_ggnn(
        &ts,
        &[GraphInput {
            names: vec!["buf".into()],
            edges: vec![],
        }],
        0,
    );
    for (a, b) in out.data.iter().zip(initial(&ts, "buf")) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn saturated_update_gate_keeps_initial_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ts = ggnn_tensors(3, 31, &mut rng);
    ts[3].data.fill(0.0);
    ts[4].data.fill(0.0);
    ts[5].data.fill(1e3);
    let graph = GraphInput {
        names: vec!["a".into(), "b".into(), "c".into()],
        edges: vec![(0, 1), (1, 2), (2, 0)],
    };
    let out = eval_ggnn(&ts, &[graph], 2);
    for c in 0..3 {
        let want: f64 = ["a", "b", "c"].iter().map(|n| initial(&ts, n)[c]).sum();
        assert!((out.data[c] - want).abs() < 1e-12);
    }
}

#[test]
fn scalar_chain_matches_hand_unrolled_gru() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ts = ggnn_tensors(1, 13, &mut rng);
    let graph = GraphInput {
        names: vec!["a".into(), "bb".into(), "c".into()],
        edges: vec![(0, 1), (1, 2)],
    };
    let out = eval_ggnn(&ts, &[graph], 2);
    let w = |k: usize| ts[k].data[0];
    let (wg, bg, wz, uz, bz, wr, ur, br, wh, uh, bh) = (
        w(1),
        w(2),
        w(3),
        w(4),
        w(5),
        w(6),
        w(7),
        w(8),
        w(9),
        w(10),
        w(11),
    );
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut x = [
        initial(&ts, "a")[0],
        initial(&ts, "bb")[0],
        initial(&ts, "c")[0],
    ];
    for _ in 0..2 {
        let m = [0.0, x[0] * wg + bg, x[1] * wg + bg];
        let mut next = [0.0; 3];
        for v in 0..3 {
            let r = sig(m[v] * wr + x[v] * ur + br);
            let z = sig(m[v] * wz + x[v] * uz + bz);
            let h = (m[v] * wh + r * x[v] * uh + bh).tanh();
            next[v] = (1.0 - z) * h + z * x[v];
        }
        x = next;
    }
    assert!((out.data[0] - x.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn trigrams_are_stable() {
    assert_eq!(trigram_ids("buf", 1 << 20), trigram_ids("buf", 1 << 20));
    assert_eq!(trigram_ids("buf", 1000).len(), 3);
    assert_eq!(trigram_ids("", 1000).len(), 1);
}

pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        num_heads: 2,
        num_layers: 1,
        ffn_dim: 32,
        graph_dim: 8,
        trigram_buckets: 64,
        max_decode_len: 24,
        batch_size: 4,
        learning_rate: 3e-3,
        ..ModelConfig::default()
    }
}

fn cap_data(n: usize) -> (Vocab, Datasets) {
    let corpus: Vec<_> = toy_corpus(n, 6)
        .iter()
        .map(|u| preprocess(u).unwrap())
        .collect();
    let vocab = Vocab::build(corpus.iter().flat_map(|p| p.input.sequence()));
    let mut data = Datasets::default();
    data.pretrain.insert(Objective::Cap, gen_cap(&corpus, 1));
    (vocab, data)
}

fn cap_stage() -> Vec<Stage> {
    vec![Stage {
        name: "cap".into(),
        tasks: vec![Task::Pretrain(Objective::Cap)],
        epochs: 1,
    }]
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let bad = ModelConfig {
        num_heads: 3,
        ..ModelConfig::default()
    };
    assert!(matches!(bad.validate(), Err(ModelError::Config(_))));
    let zero = ModelConfig {
        graph_dim: 0,
        ..ModelConfig::default()
    };
    assert!(zero.validate().is_err());
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let (vocab, data) = cap_data(6);
    let mut model = Model::new(tiny_config(), vocab).unwrap();
    let before = model.params.tensors.clone();
    let mut schedule = default_schedule(&model.config);
    schedule.iter_mut().for_each(|s| s.epochs = 0);
    let trace = train(&mut model, &schedule, &data).unwrap();
    assert!(trace.records.is_empty());
    assert_eq!(model.params.tensors, before);
}

#[test]
fn encoder_only_stage_never_touches_the_decoder() {
    let (vocab, data) = cap_data(12);
    let mut model = Model::new(tiny_config(), vocab).unwrap();
    let decoder = model.checksum(Group::Decoder);
    let encoder = model.checksum(Group::Encoder);
    let trace = train(&mut model, &cap_stage(), &data).unwrap();
    assert_eq!(trace.stage("cap").len(), 3);
    assert_eq!(model.checksum(Group::Decoder), decoder);
    assert_ne!(model.checksum(Group::Encoder), encoder);
}

#[test]
fn decoder_parameters_do_not_affect_encoder_only_losses() {
    let (vocab, data) = cap_data(12);
    let base = Model::new(tiny_config(), vocab).unwrap();
    let mut permuted = base.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (t, g) in permuted
        .params
        .tensors
        .iter_mut()
        .zip(&permuted.params.groups)
    {
        if *g == Group::Decoder {
            rand::seq::SliceRandom::shuffle(t.data.as_mut_slice(), &mut rng);
            t.data.iter_mut().for_each(|v| *v += 0.25);
        }
    }
    let mut a = base.clone();
    let mut b = permuted;
    assert_eq!(
        train(&mut a, &cap_stage(), &data).unwrap(),
        train(&mut b, &cap_stage(), &data).unwrap()
    );
}

#[test]
fn training_is_reproducible() {
    let (vocab, data) = cap_data(8);
    let mut a = Model::new(tiny_config(), vocab.clone()).unwrap();
    let mut b = Model::new(tiny_config(), vocab).unwrap();
    assert_eq!(
        train(&mut a, &cap_stage(), &data).unwrap(),
        train(&mut b, &cap_stage(), &data).unwrap()
    );
    assert_eq!(a.params.tensors, b.params.tensors);
}

#[test]
fn missing_dataset_and_divergence_are_reported() {
    let (vocab, data) = cap_data(6);
    let mut model = Model::new(tiny_config(), vocab).unwrap();
    let isp = vec![Stage {
        name: "isp".into(),
        tasks: vec![Task::Pretrain(Objective::Isp)],
        epochs: 1,
    }];
    assert!(matches!(
        train(&mut model, &isp, &data),
        Err(ModelError::EmptyDataset(_))
    ));
    let cap_w = model.params.index_of("head.cap_w").unwrap();
    model.params.tensors[cap_w].data.fill(f64::MAX);
    assert!(matches!(
        train(&mut model, &cap_stage(), &data),
        Err(ModelError::Diverged { .. })
    ));
    let mut nan = Model::new(tiny_config(), model.vocab.clone()).unwrap();
    let wq = nan.params.index_of("enc.0.attn.wq").unwrap();
    nan.params.tensors[wq].data[0] = f64::NAN;
    assert!(matches!(
        train(&mut nan, &cap_stage(), &data),
        Err(ModelError::NonFinite(_))
    ));
}

#[test]
fn checkpoint_round_trip() {
    let (vocab, data) = cap_data(6);
    let mut model = Model::new(tiny_config(), vocab).unwrap();
    train(&mut model, &cap_stage(), &data).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    assert_eq!(&buf[..4], b"VGXM");
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back.params.tensors, model.params.tensors);
    assert_eq!(back.params.names, model.params.names);
    assert_eq!(back.config, model.config);
    assert_eq!(back.vocab, model.vocab);
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(again, buf);

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(
        read_checkpoint(bad.as_slice()),
        Err(ModelError::Checkpoint(_))
    ));
    assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    let mut long = buf;
    long.push(0);
    assert!(matches!(
        read_checkpoint(long.as_slice()),
        Err(ModelError::Checkpoint(_))
    ));
}

#[test]
fn untrained_model_output_rarely_resolves_and_is_deterministic() {
    let (vocab, _) = cap_data(4);
    let model = Model::new(tiny_config(), vocab).unwrap();
    let unit = SourceUnit::new(PASSWORD_CHECK);
    let a = locate(&unit, &model).unwrap();
    assert_eq!(a, locate(&unit, &model).unwrap());
    assert!(a.statement_text.len() <= model.config.max_decode_len);
    assert!(a.confidence <= 0.0);
    if let Some((i, line)) = a.resolved_span {
        let ast = crate::code::parse_function(PASSWORD_CHECK).unwrap();
        assert_eq!(
            statement_tokens(ast.body_statements()[i], &ast.source),
            a.statement_text
        );
        assert_eq!(ast.body_statements()[i].line, line);
    }
}

#[test]
fn overfit_one_sample_locates_its_label() {
    let p = &planted_corpus(1, 3)[0];
    let sample = LocateSample::from_text(&p.unit.text, p.site_line).unwrap();
    let pre = preprocess(&p.unit).unwrap();
    let vocab = Vocab::build(pre.input.sequence());
    let mut config = tiny_config();
    config.batch_size = 1;
    let mut model = Model::new(config, vocab).unwrap();
    let data = Datasets {
        finetune: vec![sample],
        ..Datasets::default()
    };
    let stage = vec![Stage {
        name: "finetune".into(),
        tasks: vec![Task::Locate],
        epochs: 120,
    }];
    let trace = train(&mut model, &stage, &data).unwrap();
    let losses = trace.stage("finetune");
    assert!(losses.last().unwrap() < &(losses[0] * 0.1));
    let pred = locate(&p.unit, &model).unwrap();
    assert_eq!(
        pred.resolved_span.map(|(_, l)| l),
        Some(p.site_line),
        "{:?}",
        pred.statement_text
    );
}

#[test]
fn duplicated_statements_resolve_to_the_first() {
    let text = "void f() {\n    x = 1;\n    y = 2;\n    x = 1;\n}\n";
    let ast = crate::code::parse_function(text).unwrap();
    let toks: Vec<String> = ["x", "=", "1", ";"].iter().map(|s| s.to_string()).collect();
    assert_eq!(locate::resolve(&ast, &toks), Some((0, 2)));
    assert_eq!(locate::resolve(&ast, &["z".to_string()]), None);
}

#[test]
fn rule_locator_picks_the_bounds_check() {
    let patterns = shipped_patterns().unwrap();
    let pred = rule_based_locate(&SourceUnit::new(PASSWORD_CHECK), &patterns).unwrap();
    assert_eq!(pred.resolved_span.map(|(_, l)| l), Some(7));
    assert_eq!(
        pred.statement_text.join(" "),
        "if ( n >= cap ) return - 1 ;"
    );
    assert_eq!(pred.confidence, 3.0);
}

#[test]
fn rule_locator_ties_and_edge_cases() {
    let patterns = shipped_patterns().unwrap();
    let single =
        rule_based_locate(&SourceUnit::new("int f() {\n    return x;\n}\n"), &patterns).unwrap();
    assert_eq!(single.resolved_span, Some((0, 2)));
    let tie = "void f() {\n    my_free(a);\n    my_free(b);\n}\n";
    let pred = rule_based_locate(&SourceUnit::new(tie), &patterns).unwrap();
    assert_eq!(pred.resolved_span, Some((0, 2)));
    assert!(matches!(
        rule_based_locate(&SourceUnit::new("void f() {}"), &patterns),
        Err(ModelError::NoStatement)
    ));
}

#[test]
fn rule_locator_finds_planted_sites() {
    let patterns = shipped_patterns().unwrap();
    for p in planted_corpus(60, 5) {
        let pred = rule_based_locate(&p.unit, &patterns).unwrap();
        assert_eq!(
            pred.resolved_span.map(|(_, l)| l),
            Some(p.site_line),
            "{}",
            p.unit.text
        );
    }
}

#[test]
fn featurized_pairs_share_components() {
    for u in toy_corpus(20, 1) {
        let p = preprocess(&u).unwrap();
        let vfg = build_vfg(&p.ast, &p.input);
        let f = ggnn::featurize(&vfg, usize::MAX);
        assert_eq!(f.var_rows.len(), vfg.nodes.len());
        let comp = vfg.components();
        for &(a, b, _) in &f.pairs {
            assert_eq!(
                comp[vfg.node_of_token(a).unwrap()],
                comp[vfg.node_of_token(b).unwrap()]
            );
        }
        let truncated = ggnn::featurize(&vfg, 20);
        assert!(truncated.var_rows.iter().all(|&t| t < 20));
        assert!(truncated.pairs.iter().all(|&(a, b, _)| a < 20 && b < 20));
    }
}
