//! One optimization step: discriminators first on detached generator
//! outputs, then the generator through the freshly updated critics.

use super::data::TrainingBatch;
use super::optimizer::{Adam, AdamConfig};
use super::{lambda_sim, TrainingConfig};
use crate::autodiff::{NodeId, Tape};
use crate::discriminators::{
    EmbeddingDiscriminator, EmbeddingDiscriminatorConfig, MelDiscriminator, MelDiscriminatorConfig,
};
use crate::error::{Error, Result};
use crate::losses::{self, GanForm, LossReport};
use crate::model::{Generator, GeneratorConfig};
use crate::nn::{ForwardCtx, Module};
use crate::training::checkpoint::{self, CheckpointData};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Architecture bundle; its digest guards checkpoint compatibility.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBundleConfig {
    pub generator: GeneratorConfig,
    pub mel_disc: MelDiscriminatorConfig,
    pub emb_disc: EmbeddingDiscriminatorConfig,
    pub gan_form: GanForm,
}

impl Default for ModelBundleConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        let mel_disc = MelDiscriminatorConfig {
            input_dim: generator.n_mels,
            ..MelDiscriminatorConfig::default()
        };
        let emb_disc = EmbeddingDiscriminatorConfig {
            input_dim: generator.hidden_dim,
            ..EmbeddingDiscriminatorConfig::default()
        };
        ModelBundleConfig {
            generator,
            mel_disc,
            emb_disc,
            gan_form: GanForm::default(),
        }
    }
}

impl ModelBundleConfig {
    /// Derive a consistent bundle from a generator config.
    pub fn for_generator(generator: GeneratorConfig) -> Self {
        let mel_disc = MelDiscriminatorConfig {
            input_dim: generator.n_mels,
            ..MelDiscriminatorConfig::default()
        };
        let emb_disc = EmbeddingDiscriminatorConfig {
            input_dim: generator.hidden_dim,
            ..EmbeddingDiscriminatorConfig::default()
        };
        ModelBundleConfig {
            generator,
            mel_disc,
            emb_disc,
            gan_form: GanForm::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.mel_disc.input_dim != self.generator.n_mels {
            return Err(Error::Config(format!(
                "mel discriminator input {} != n_mels {}",
                self.mel_disc.input_dim, self.generator.n_mels
            )));
        }
        if self.emb_disc.input_dim != self.generator.hidden_dim {
            return Err(Error::Config(format!(
                "embedding discriminator input {} != hidden_dim {}",
                self.emb_disc.input_dim, self.generator.hidden_dim
            )));
        }
        Ok(())
    }
}

pub struct TrainState {
    pub bundle: ModelBundleConfig,
    pub generator: Generator,
    pub d_r: MelDiscriminator,
    pub d_c: MelDiscriminator,
    pub d_e: EmbeddingDiscriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
}

impl TrainState {
    pub fn new(bundle: ModelBundleConfig, tcfg: &TrainingConfig, seed: u64) -> Result<Self> {
        bundle.validate()?;
        let generator = Generator::new(bundle.generator.clone(), seed)?;
        let d_r = MelDiscriminator::new("d_r", bundle.mel_disc.clone(), seed)?;
        let d_c = MelDiscriminator::new("d_c", bundle.mel_disc.clone(), seed)?;
        let d_e = EmbeddingDiscriminator::new("d_e", bundle.emb_disc.clone(), seed)?;
        let opt_g = Adam::new(AdamConfig {
            lr: tcfg.lr_g,
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            ..AdamConfig::default()
        });
        let opt_d = Adam::new(AdamConfig {
            lr: tcfg.lr_d,
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            ..AdamConfig::default()
        });
        Ok(TrainState {
            bundle,
            generator,
            d_r,
            d_c,
            d_e,
            opt_g,
            opt_d,
        })
    }

    pub fn disc_params(&self) -> Vec<&crate::nn::Param> {
        let mut out = Vec::new();
        self.d_r.visit(&mut out);
        self.d_c.visit(&mut out);
        self.d_e.visit(&mut out);
        out
    }

    fn disc_params_mut(&mut self) -> Vec<&mut crate::nn::Param> {
        disc_params_of(&mut self.d_r, &mut self.d_c, &mut self.d_e)
    }

    /// Save `<dir>/ckpt_<step>.vcck` + sidecar; returns the blob path.
    pub fn save(&self, dir: &Path, step: u64) -> Result<PathBuf> {
        let mut tensors: Vec<(String, &Array2<f64>)> = Vec::new();
        for p in self.generator.params() {
            tensors.push((p.name.clone(), &p.value));
        }
        for p in self.disc_params() {
            tensors.push((p.name.clone(), &p.value));
        }
        let g_params = self.generator.params();
        let d_params = self.disc_params();
        let opt_g_state = self.opt_g.state_tensors("adam_g", &g_params);
        let opt_d_state = self.opt_d.state_tensors("adam_d", &d_params);
        tensors.extend(opt_g_state);
        tensors.extend(opt_d_state);
        let counters = Array2::from_shape_vec(
            (1, 2),
            vec![self.opt_g.t as f64, self.opt_d.t as f64],
        )
        .unwrap();
        tensors.push(("opt.counters".into(), &counters));
        checkpoint::save_checkpoint(&dir.join(format!("ckpt_{step}")), step, &self.bundle, &tensors)
    }

    /// Load a checkpoint; the sidecar's bundle determines the architecture.
    pub fn load(blob: &Path, tcfg: &TrainingConfig) -> Result<(Self, u64)> {
        let data: CheckpointData<ModelBundleConfig> = checkpoint::load_checkpoint(blob)?;
        let mut state = TrainState::new(data.config.clone(), tcfg, 0)?;
        let restore = |params: Vec<&mut crate::nn::Param>,
                       tensors: &std::collections::BTreeMap<String, Array2<f64>>|
         -> Result<()> {
            for p in params {
                let t = tensors.get(&p.name).ok_or_else(|| {
                    Error::Format(format!("checkpoint missing tensor {}", p.name))
                })?;
                if t.dim() != p.value.dim() {
                    return Err(Error::Format(format!(
                        "checkpoint tensor {} has shape {:?}, model wants {:?}",
                        p.name,
                        t.dim(),
                        p.value.dim()
                    )));
                }
                p.value = t.clone();
            }
            Ok(())
        };
        restore(state.generator.params_mut(), &data.tensors)?;
        restore(state.disc_params_mut(), &data.tensors)?;
        let moment = |prefix: &str, kind: &str, name: &str| {
            data.tensors.get(&format!("{prefix}.{kind}.{name}")).cloned()
        };
        let g_meta: Vec<(u64, String)> = state
            .generator
            .params()
            .iter()
            .map(|p| (p.key, p.name.clone()))
            .collect();
        for (key, name) in g_meta {
            if let (Some(m), Some(v)) = (moment("adam_g", "m", &name), moment("adam_g", "v", &name))
            {
                state.opt_g.restore(key, m, v);
            }
        }
        let d_meta: Vec<(u64, String)> = state
            .disc_params()
            .iter()
            .map(|p| (p.key, p.name.clone()))
            .collect();
        for (key, name) in d_meta {
            if let (Some(m), Some(v)) = (moment("adam_d", "m", &name), moment("adam_d", "v", &name))
            {
                state.opt_d.restore(key, m, v);
            }
        }
        if let Some(c) = data.tensors.get("opt.counters") {
            state.opt_g.t = c[[0, 0]] as u64;
            state.opt_d.t = c[[0, 1]] as u64;
        }
        Ok((state, data.step))
    }
}

fn disc_params_of<'a>(
    d_r: &'a mut MelDiscriminator,
    d_c: &'a mut MelDiscriminator,
    d_e: &'a mut EmbeddingDiscriminator,
) -> Vec<&'a mut crate::nn::Param> {
    let mut out = Vec::new();
    d_r.visit_mut(&mut out);
    d_c.visit_mut(&mut out);
    d_e.visit_mut(&mut out);
    out
}

/// Nodes produced by the generator pass, shared by both phases.
struct GeneratorPass {
    mel_fake: Vec<NodeId>,
    mel_real: Vec<NodeId>,
    emb_internal: Vec<NodeId>,
    mel_converted: Vec<NodeId>,
    emb_external: Vec<NodeId>,
    l_rec: NodeId,
}

fn generator_pass(
    tape: &mut Tape,
    state: &TrainState,
    batch: &TrainingBatch,
    step: u64,
    seed: u64,
) -> Result<GeneratorPass> {
    let dropout = state.bundle.generator.dropout;
    let mut mel_fake = Vec::new();
    let mut mel_real = Vec::new();
    let mut emb_internal = Vec::new();
    let mut rec_terms = Vec::new();
    for (i, item) in batch.target.iter().enumerate() {
        let mut ctx = ForwardCtx::training(dropout, seed, format!("g:{step}:t{i}"));
        let x = tape.constant(item.features.clone());
        let (mel_f, e_i) = state.generator.forward_on(tape, x, &mut ctx);
        let mel_g = tape.constant(
            item.mel
                .clone()
                .ok_or_else(|| Error::Training("target batch item lacks a mel".into()))?,
        );
        rec_terms.push(losses::loss_rec_on(tape, mel_f, mel_g));
        mel_fake.push(mel_f);
        mel_real.push(mel_g);
        emb_internal.push(e_i);
    }
    let mut acc = rec_terms[0];
    for &t in &rec_terms[1..] {
        acc = tape.add(acc, t);
    }
    let l_rec = tape.scale(acc, 1.0 / rec_terms.len() as f64);

    let mut mel_converted = Vec::new();
    let mut emb_external = Vec::new();
    for (j, item) in batch.external.iter().enumerate() {
        let mut ctx = ForwardCtx::training(dropout, seed, format!("g:{step}:x{j}"));
        let x = tape.constant(item.features.clone());
        let (mel_c, e_o) = state.generator.forward_on(tape, x, &mut ctx);
        mel_converted.push(mel_c);
        emb_external.push(e_o);
    }
    Ok(GeneratorPass {
        mel_fake,
        mel_real,
        emb_internal,
        mel_converted,
        emb_external,
        l_rec,
    })
}

fn detach(src: &Tape, dst: &mut Tape, nodes: &[NodeId]) -> Vec<NodeId> {
    nodes
        .iter()
        .map(|&n| dst.constant(src.value(n).clone()))
        .collect()
}

fn weighted_sum(tape: &mut Tape, terms: &[(f64, NodeId)]) -> NodeId {
    let mut acc: Option<NodeId> = None;
    for &(w, node) in terms {
        let scaled = tape.scale(node, w);
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled),
            None => scaled,
        });
    }
    acc.expect("at least one loss term")
}

/// One full optimization step. Returns the step's losses; discriminator-side
/// values are from before the discriminator update, generator-side values are
/// scored against the updated critics, matching what each update minimized.
pub fn train_step(
    state: &mut TrainState,
    batch: &TrainingBatch,
    step: u64,
    tcfg: &TrainingConfig,
) -> Result<LossReport> {
    if batch.target.is_empty() {
        return Err(Error::Training("empty target batch".into()));
    }
    let lam_sim = lambda_sim(tcfg, step);
    let lam_rf = tcfg.lambda_rf;
    let form = state.bundle.gan_form;
    let sim_available = !batch.external.is_empty();
    let rf_active = lam_rf != 0.0;
    let d_active = rf_active || sim_available;

    // Phase 1: generator forward, gradients flowing.
    let mut tape_g = Tape::new();
    let pass = generator_pass(&mut tape_g, state, batch, step, tcfg.seed)?;

    // Phase 2: critics update on detached copies. Scores recorded here are
    // what the critics actually minimized.
    let mut rf_d = 0.0;
    let mut cvt_d = 0.0;
    let mut e_d = 0.0;
    if d_active {
        let mut tape_d = Tape::new();
        let mel_fake = detach(&tape_g, &mut tape_d, &pass.mel_fake);
        let mel_real = detach(&tape_g, &mut tape_d, &pass.mel_real);
        let mut terms: Vec<(f64, NodeId)> = Vec::new();
        if rf_active {
            let fake_scores: Vec<NodeId> = mel_fake
                .iter()
                .map(|&m| state.d_r.forward_on(&mut tape_d, m))
                .collect();
            let real_scores: Vec<NodeId> = mel_real
                .iter()
                .map(|&m| state.d_r.forward_on(&mut tape_d, m))
                .collect();
            let (_, d_term) = losses::loss_rf_on(&mut tape_d, form, &fake_scores, &real_scores);
            rf_d = tape_d.scalar(d_term);
            terms.push((lam_rf, d_term));
        }
        if sim_available {
            let mel_converted = detach(&tape_g, &mut tape_d, &pass.mel_converted);
            let emb_external = detach(&tape_g, &mut tape_d, &pass.emb_external);
            let emb_internal = detach(&tape_g, &mut tape_d, &pass.emb_internal);
            let cvt_scores: Vec<NodeId> = mel_converted
                .iter()
                .map(|&m| state.d_c.forward_on(&mut tape_d, m))
                .collect();
            let cvt_fake: Vec<NodeId> = mel_fake
                .iter()
                .map(|&m| state.d_c.forward_on(&mut tape_d, m))
                .collect();
            let cvt_real: Vec<NodeId> = mel_real
                .iter()
                .map(|&m| state.d_c.forward_on(&mut tape_d, m))
                .collect();
            let (_, cvt_term) =
                losses::loss_cvt_on(&mut tape_d, form, &cvt_scores, &cvt_fake, &cvt_real);
            cvt_d = tape_d.scalar(cvt_term);
            terms.push((lam_sim, cvt_term));

            let ext_scores: Vec<NodeId> = emb_external
                .iter()
                .map(|&e| state.d_e.forward_on(&mut tape_d, e))
                .collect();
            let int_scores: Vec<NodeId> = emb_internal
                .iter()
                .map(|&e| state.d_e.forward_on(&mut tape_d, e))
                .collect();
            let (_, e_term) = losses::loss_e_on(&mut tape_d, form, &ext_scores, &int_scores);
            e_d = tape_d.scalar(e_term);
            terms.push((lam_sim, e_term));
        }
        let total_d_node = weighted_sum(&mut tape_d, &terms);
        let grads = tape_d.backward(total_d_node);
        if !grads.is_finite() {
            return Err(Error::Training("non-finite discriminator gradient".into()));
        }
        let mut dparams = disc_params_of(&mut state.d_r, &mut state.d_c, &mut state.d_e);
        state.opt_d.apply(&mut dparams, &grads);
    }

    // Phase 3: generator side, scored by the post-update critics bound onto
    // the live tape.
    let mut rf_g = 0.0;
    let mut cvt_g = 0.0;
    let mut e_g = 0.0;
    let mut terms: Vec<(f64, NodeId)> = vec![(1.0, pass.l_rec)];
    if rf_active {
        let fake_scores: Vec<NodeId> = pass
            .mel_fake
            .iter()
            .map(|&m| state.d_r.forward_on(&mut tape_g, m))
            .collect();
        let m = losses::g_side(&mut tape_g, form, &fake_scores);
        rf_g = tape_g.scalar(m);
        terms.push((lam_rf, m));
    }
    if sim_available {
        let cvt_scores: Vec<NodeId> = pass
            .mel_converted
            .iter()
            .map(|&m| state.d_c.forward_on(&mut tape_g, m))
            .collect();
        let m = losses::g_side(&mut tape_g, form, &cvt_scores);
        cvt_g = tape_g.scalar(m);
        terms.push((lam_sim, m));

        let ext_scores: Vec<NodeId> = pass
            .emb_external
            .iter()
            .map(|&e| state.d_e.forward_on(&mut tape_g, e))
            .collect();
        let m = losses::g_side(&mut tape_g, form, &ext_scores);
        e_g = tape_g.scalar(m);
        terms.push((lam_sim, m));
    }
    let total_g_node = weighted_sum(&mut tape_g, &terms);
    let grads = tape_g.backward(total_g_node);
    if !grads.is_finite() {
        return Err(Error::Training("non-finite generator gradient".into()));
    }
    state.opt_g.apply(&mut state.generator.params_mut(), &grads);

    let report = losses::assemble(
        tape_g.scalar(pass.l_rec),
        (rf_g, rf_d),
        (cvt_g, cvt_d),
        (e_g, e_d),
        lam_sim,
        lam_rf,
    );
    for (name, v) in [
        ("l_rec", report.l_rec),
        ("total_g", report.total_g),
        ("total_d", report.total_d),
    ] {
        if !v.is_finite() {
            return Err(Error::Training(format!("non-finite loss {name}")));
        }
    }
    Ok(report)
}
