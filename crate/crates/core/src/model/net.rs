//! Parameter layout, encoder, decoder, heads and per-example losses.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::code::ModelInput;
use crate::flow::ValueFlowGraph;

use super::attention::{
    attention_block, sinusoids, vanilla_attention, AttentionParams, Positions, VfgEncodings,
};
use super::ggnn::{encode_subgraphs, featurize, GgnnParams, VfgFeatures};
use super::params::{Group, Init, ParamStore};
use super::tape::{Id, Tape, Tensor};
use super::{Model, ModelConfig, ModelError, Vocab, BOS, EOS};

#[derive(Debug, Clone)]
pub(crate) struct AttnPids {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub aq: usize,
    pub ak: usize,
    pub rk: usize,
    pub rv: usize,
    pub vaq: usize,
    pub vak: usize,
    pub vrk: usize,
    pub vrv: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Ffn {
    pub ln_g: usize,
    pub ln_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct EncLayer {
    pub ln_g: usize,
    pub ln_b: usize,
    pub attn: AttnPids,
    pub wo: usize,
    pub ffn: Ffn,
}

#[derive(Debug, Clone)]
pub(crate) struct DecAttn {
    pub ln_g: usize,
    pub ln_b: usize,
    pub w: [usize; 3],
    pub wo: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DecLayer {
    pub self_attn: DecAttn,
    pub cross: DecAttn,
    pub ffn: Ffn,
}

#[derive(Debug, Clone)]
pub(crate) struct GgnnPids {
    pub trigram: usize,
    pub gates: [usize; 11],
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub enc_embed: usize,
    pub ggnn: GgnnPids,
    pub enc: Vec<EncLayer>,
    pub enc_ln: (usize, usize),
    pub dec_embed: usize,
    pub dec: Vec<DecLayer>,
    pub dec_ln: (usize, usize),
    pub out_w: usize,
    pub out_b: usize,
    pub it: (usize, usize),
    pub cap: (usize, usize),
}

struct Builder {
    store: ParamStore,
    rng: Option<ChaCha8Rng>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, group: Group, init: Init) -> usize {
        self.store
            .add(name, rows, cols, group, init, self.rng.as_mut())
    }

    fn ln(&mut self, prefix: &str, d: usize, group: Group) -> (usize, usize) {
        (
            self.add(format!("{prefix}.ln_g"), 1, d, group, Init::Ones),
            self.add(format!("{prefix}.ln_b"), 1, d, group, Init::Zeros),
        )
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize, group: Group) -> Ffn {
        let (ln_g, ln_b) = self.ln(&format!("{prefix}.ffn"), d, group);
        Ffn {
            ln_g,
            ln_b,
            w1: self.add(format!("{prefix}.ffn.w1"), d, f, group, Init::Xavier),
            b1: self.add(format!("{prefix}.ffn.b1"), 1, f, group, Init::Zeros),
            w2: self.add(format!("{prefix}.ffn.w2"), f, d, group, Init::Xavier),
            b2: self.add(format!("{prefix}.ffn.b2"), 1, d, group, Init::Zeros),
        }
    }

    fn dec_attn(&mut self, prefix: &str, d: usize) -> DecAttn {
        let (ln_g, ln_b) = self.ln(prefix, d, Group::Decoder);
        let mut w = [0; 3];
        for (slot, n) in w.iter_mut().zip(["wq", "wk", "wv"]) {
            *slot = self.add(format!("{prefix}.{n}"), d, d, Group::Decoder, Init::Xavier);
        }
        DecAttn {
            ln_g,
            ln_b,
            w,
            wo: self.add(format!("{prefix}.wo"), d, d, Group::Decoder, Init::Xavier),
        }
    }
}

impl Layout {
    /// Declares every tensor in checkpoint order. With `init`, values are
    /// drawn from `config.seed`; otherwise they are zero.
    pub fn build(config: &ModelConfig, vocab: usize, init: bool) -> (ParamStore, Layout) {
        let mut b = Builder {
            store: ParamStore::default(),
            rng: init.then(|| ChaCha8Rng::seed_from_u64(config.seed)),
        };
        let (d, g, f) = (config.hidden_dim, config.graph_dim, config.ffn_dim);
        let buckets = 2 * config.rel_clip + 1;
        let enc = Group::Encoder;

        let enc_embed = b.add("enc.embed".into(), vocab, d, enc, Init::Uniform(0.5));
        let trigram = b.add(
            "ggnn.trigram".into(),
            config.trigram_buckets,
            g,
            enc,
            Init::Uniform(0.5),
        );
        let mut gates = [0; 11];
        for (slot, n) in gates.iter_mut().zip([
            "wg", "bg", "wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh",
        ]) {
            let bias = n.starts_with('b');
            *slot = b.add(
                format!("ggnn.{n}"),
                if bias { 1 } else { g },
                g,
                enc,
                if bias { Init::Zeros } else { Init::Xavier },
            );
        }
        let mut enc_layers = Vec::new();
        for l in 0..config.num_layers {
            let p = format!("enc.{l}");
            let (ln_g, ln_b) = b.ln(&format!("{p}.attn"), d, enc);
            let mut m =
                |n: &str, rows: usize| b.add(format!("{p}.attn.{n}"), rows, d, enc, Init::Xavier);
            let attn = AttnPids {
                wq: m("wq", d),
                wk: m("wk", d),
                wv: m("wv", d),
                aq: m("aq", d),
                ak: m("ak", d),
                rk: m("rk", buckets),
                rv: m("rv", buckets),
                vaq: m("vfg_aq", g),
                vak: m("vfg_ak", g),
                vrk: m("vfg_rk", g),
                vrv: m("vfg_rv", g),
            };
            let wo = b.add(format!("{p}.attn.wo"), d, d, enc, Init::Xavier);
            let ffn = b.ffn(&p, d, f, enc);
            enc_layers.push(EncLayer {
                ln_g,
                ln_b,
                attn,
                wo,
                ffn,
            });
        }
        let enc_ln = b.ln("enc.final", d, enc);

        let dec_embed = b.add(
            "dec.embed".into(),
            vocab,
            d,
            Group::Decoder,
            Init::Uniform(0.5),
        );
        let mut dec = Vec::new();
        for l in 0..config.decoder_layers {
            let p = format!("dec.{l}");
            dec.push(DecLayer {
                self_attn: b.dec_attn(&format!("{p}.self"), d),
                cross: b.dec_attn(&format!("{p}.cross"), d),
                ffn: b.ffn(&p, d, f, Group::Decoder),
            });
        }
        let dec_ln = b.ln("dec.final", d, Group::Decoder);
        let out_w = b.add("dec.out_w".into(), d, vocab, Group::Decoder, Init::Xavier);
        let out_b = b.add("dec.out_b".into(), 1, vocab, Group::Decoder, Init::Zeros);
        let it = (
            b.add("head.it_w".into(), d, 2, Group::Head, Init::Xavier),
            b.add("head.it_b".into(), 1, 2, Group::Head, Init::Zeros),
        );
        let cap = (
            b.add("head.cap_w".into(), d, 2, Group::Head, Init::Xavier),
            b.add("head.cap_b".into(), 1, 2, Group::Head, Init::Zeros),
        );
        let layout = Layout {
            enc_embed,
            ggnn: GgnnPids { trigram, gates },
            enc: enc_layers,
            enc_ln,
            dec_embed,
            dec,
            dec_ln,
            out_w,
            out_b,
            it,
            cap,
        };
        (b.store, layout)
    }
}

/// A tape plus lazily bound parameter leaves.
pub(crate) struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Id>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn p(&mut self, pid: usize) -> Id {
        if let Some(id) = self.bound[pid] {
            return id;
        }
        let id = self.tape.param(self.store.tensors[pid].clone(), pid);
        self.bound[pid] = Some(id);
        id
    }

    fn checked(&mut self, pid: usize) -> Result<Id, ModelError> {
        if !self.store.tensors[pid].is_finite() {
            return Err(ModelError::NonFinite(self.store.names[pid].clone()));
        }
        Ok(self.p(pid))
    }

    fn ln(&mut self, x: Id, (g, b): (usize, usize)) -> Id {
        let (g, b) = (self.p(g), self.p(b));
        self.tape.layer_norm(x, g, b)
    }

    fn linear(&mut self, x: Id, w: usize, b: usize) -> Id {
        let w = self.p(w);
        let b = self.p(b);
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn ffn(&mut self, x: Id, f: &Ffn) -> Id {
        let h = self.ln(x, (f.ln_g, f.ln_b));
        let h = self.linear(h, f.w1, f.b1);
        let h = self.tape.relu(h);
        let h = self.linear(h, f.w2, f.b2);
        self.tape.add(x, h)
    }
}

/// What one example is trained to produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Target {
    /// Decoder output, without begin/end markers.
    Seq(Vec<usize>),
    /// One class per code token.
    Tags(Vec<usize>),
    /// One class for the whole input.
    Class(usize),
}

/// A model-ready example: token ids, value-flow features and target.
#[derive(Debug, Clone)]
pub(crate) struct Example {
    pub ids: Vec<usize>,
    pub features: VfgFeatures,
    pub target: Target,
}

impl Example {
    pub fn new(
        input: &ModelInput,
        vfg: &ValueFlowGraph,
        target: Target,
        vocab: &Vocab,
        max_len: usize,
    ) -> Self {
        let ids: Vec<usize> = input
            .sequence()
            .iter()
            .take(max_len)
            .map(|t| vocab.id(t))
            .collect();
        let code_len = input.code_tokens.len().min(ids.len());
        let target = match target {
            Target::Tags(t) => Target::Tags(t.into_iter().take(code_len).collect()),
            other => other,
        };
        Self {
            features: featurize(vfg, code_len),
            ids,
            target,
        }
    }
}

impl Model {
    pub(crate) fn from_parts(config: ModelConfig, vocab: Vocab, params: ParamStore) -> Self {
        let (_, layout) = Layout::build(&config, vocab.len(), false);
        Self {
            config,
            vocab,
            params,
            layout,
        }
    }

    /// Encoder states, `n x d`.
    pub(crate) fn encode(&self, cx: &mut Ctx, ex: &Example) -> Result<Id, ModelError> {
        let lay = &self.layout;
        let d = self.config.hidden_dim;
        let n = ex.ids.len();
        let embed = cx.p(lay.enc_embed);
        let mut x = cx.tape.gather(embed, Rc::new(ex.ids.clone()));
        let pos = Positions::new(&mut cx.tape, n, d, self.config.rel_clip);

        let vfg = if ex.features.var_rows.is_empty() {
            None
        } else {
            let gg = &lay.ggnn.gates;
            let p = GgnnParams {
                trigram: cx.checked(lay.ggnn.trigram)?,
                wg: cx.checked(gg[0])?,
                bg: cx.checked(gg[1])?,
                wz: cx.checked(gg[2])?,
                uz: cx.checked(gg[3])?,
                bz: cx.checked(gg[4])?,
                wr: cx.checked(gg[5])?,
                ur: cx.checked(gg[6])?,
                br: cx.checked(gg[7])?,
                wh: cx.checked(gg[8])?,
                uh: cx.checked(gg[9])?,
                bh: cx.checked(gg[10])?,
            };
            let graphs = encode_subgraphs(
                &mut cx.tape,
                &ex.features.graphs,
                &p,
                self.config.ggnn_steps,
            );
            let abs = cx
                .tape
                .gather(graphs, Rc::new(ex.features.abs_graph.clone()));
            Some(VfgEncodings {
                var_rows: Rc::new(ex.features.var_rows.clone()),
                abs,
                pairs: Rc::new(ex.features.pairs.clone()),
                rel: graphs,
            })
        };

        for layer in &lay.enc {
            let a = &layer.attn;
            let ap = AttentionParams {
                wq: cx.p(a.wq),
                wk: cx.p(a.wk),
                wv: cx.p(a.wv),
                aq: cx.p(a.aq),
                ak: cx.p(a.ak),
                rk: cx.p(a.rk),
                rv: cx.p(a.rv),
                vaq: cx.p(a.vaq),
                vak: cx.p(a.vak),
                vrk: cx.p(a.vrk),
                vrv: cx.p(a.vrv),
            };
            let h = cx.ln(x, (layer.ln_g, layer.ln_b));
            let z = attention_block(
                &mut cx.tape,
                h,
                &pos,
                vfg.as_ref(),
                &ap,
                self.config.num_heads,
            )?;
            let wo = cx.p(layer.wo);
            let z = cx.tape.matmul(z, wo);
            x = cx.tape.add(x, z);
            x = cx.ffn(x, &layer.ffn);
        }
        Ok(cx.ln(x, lay.enc_ln))
    }

    /// Next-token logits for every prefix position, `len x vocab`.
    pub(crate) fn decode(&self, cx: &mut Ctx, enc: Id, prefix: &[usize]) -> Id {
        let lay = &self.layout;
        let d = self.config.hidden_dim;
        let heads = self.config.num_heads;
        let embed = cx.p(lay.dec_embed);
        let e = cx.tape.gather(embed, Rc::new(prefix.to_vec()));
        let mut pe = sinusoids(prefix.len(), d);
        pe.data.iter_mut().for_each(|v| *v *= 0.5);
        let pe = cx.tape.constant(pe);
        let mut y = cx.tape.add(e, pe);
        for layer in &lay.dec {
            for (att, causal) in [(&layer.self_attn, true), (&layer.cross, false)] {
                let h = cx.ln(y, (att.ln_g, att.ln_b));
                let w = [cx.p(att.w[0]), cx.p(att.w[1]), cx.p(att.w[2])];
                let kv = if causal { h } else { enc };
                let z = vanilla_attention(&mut cx.tape, h, kv, w, heads, causal);
                let wo = cx.p(att.wo);
                let z = cx.tape.matmul(z, wo);
                y = cx.tape.add(y, z);
            }
            y = cx.ffn(y, &layer.ffn);
        }
        let y = cx.ln(y, lay.dec_ln);
        cx.linear(y, lay.out_w, lay.out_b)
    }

    /// Scalar training loss of one example.
    pub(crate) fn loss(&self, cx: &mut Ctx, ex: &Example) -> Result<Id, ModelError> {
        let enc = self.encode(cx, ex)?;
        Ok(match &ex.target {
            Target::Seq(t) => {
                let mut prefix = vec![BOS];
                prefix.extend(t.iter().take(self.config.max_decode_len - 1));
                let mut gold: Vec<usize> = prefix[1..].to_vec();
                gold.push(EOS);
                let logits = self.decode(cx, enc, &prefix);
                cx.tape.cross_entropy(logits, Rc::new(gold))
            }
            Target::Tags(t) => {
                let rows = cx.tape.slice_rows(enc, 0, t.len());
                let logits = cx.linear(rows, self.layout.it.0, self.layout.it.1);
                cx.tape.cross_entropy(logits, Rc::new(t.clone()))
            }
            Target::Class(c) => {
                let pooled = cx.tape.mean_rows(enc);
                let logits = cx.linear(pooled, self.layout.cap.0, self.layout.cap.1);
                cx.tape.cross_entropy(logits, Rc::new(vec![*c]))
            }
        })
    }

    /// Greedy decoding; returns token ids (without markers) and the summed
    /// log-probability including the end marker when emitted.
    pub(crate) fn greedy(&self, ex: &Example) -> Result<(Vec<usize>, f64), ModelError> {
        let mut cx = Ctx::new(&self.params);
        let enc = self.encode(&mut cx, ex)?;
        let enc_value: Tensor = cx.tape.value(enc).clone();
        let mut prefix = vec![BOS];
        let mut logp = 0.0;
        while prefix.len() <= self.config.max_decode_len {
            let mut step = Ctx::new(&self.params);
            let enc = step.tape.constant(enc_value.clone());
            let logits = self.decode(&mut step, enc, &prefix);
            let lv = step.tape.value(logits);
            let row = lv.row(lv.rows - 1);
            let (best, &top) =
                row.iter()
                    .enumerate()
                    .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| {
                        if *v > *acc.1 {
                            (i, v)
                        } else {
                            acc
                        }
                    });
            let lse = top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            logp += top - lse;
            if best == EOS {
                break;
            }
            prefix.push(best);
        }
        Ok((prefix[1..].to_vec(), logp))
    }
}
