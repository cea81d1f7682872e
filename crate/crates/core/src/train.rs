//! Dataset sampling and the alternating optimization loop.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tapegrad::{AdamConfig, AdamState, Tensor, Var};

use crate::error::{Error, Result};
use crate::losses::{self, Channels, LossBreakdown, LossTerms};
use crate::model::{Ctx, FeatureStats, Model, MotionVars};
use crate::motion::{Clip, FootContactMask, Labels, ManifestEntry, MotionSequence, Preprocess, Skeleton};

/// A labelled motion with its foot contacts.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub motion: MotionSequence,
    pub contacts: FootContactMask,
}

impl Sample {
    pub fn style(&self) -> &str {
        self.motion.labels.style.as_deref().unwrap_or("")
    }

    pub fn content(&self) -> &str {
        self.motion.labels.content.as_deref().unwrap_or("")
    }

    pub fn crop<R: Rng + ?Sized>(&self, rng: &mut R, min_len: usize, max_len: usize) -> Result<Sample> {
        let (start, len) = self.motion.crop_window(rng, min_len.min(self.motion.len()), max_len)?;
        Ok(Sample { motion: self.motion.slice(start, len)?, contacts: self.contacts.slice(start, len)? })
    }
}

/// Training clips on one skeleton.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub skeleton: Skeleton,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_clips(clips: Vec<(Clip, Labels)>) -> Result<Self> {
        let skeleton = clips.first().map(|(c, _)| c.skeleton.clone()).ok_or_else(|| Error::Data("dataset is empty".into()))?;
        let mut samples = Vec::with_capacity(clips.len());
        for (clip, labels) in clips {
            if clip.skeleton != skeleton {
                return Err(Error::Data("clips use different skeletons".into()));
            }
            samples.push(Sample { motion: clip.motion.with_labels(labels), contacts: clip.contacts });
        }
        Ok(Dataset { skeleton, samples })
    }

    pub fn load(entries: &[ManifestEntry], pre: &Preprocess) -> Result<Self> {
        let clips = entries
            .iter()
            .map(|e| {
                let labels = Labels { style: Some(e.style.clone()), content: Some(e.content.clone()) };
                pre.load(&e.path).map(|c| (c, labels))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_clips(clips)
    }

    pub fn stats(&self) -> Result<FeatureStats> {
        FeatureStats::from_motions(&self.samples.iter().map(|s| &s.motion).collect::<Vec<_>>())
    }

    /// Clip indices by style, then by content, in sorted label order.
    pub fn cells(&self) -> BTreeMap<String, BTreeMap<String, Vec<usize>>> {
        let mut out: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            out.entry(s.style().to_string()).or_default().entry(s.content().to_string()).or_default().push(i);
        }
        out
    }

    /// Whether some style has clips of at least two contents.
    pub fn supports_disentangle(&self) -> bool {
        self.cells().values().any(|c| c.len() >= 2)
    }
}

/// Clip indices for one training sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletIndex {
    pub content: usize,
    pub style: usize,
    /// Same style as `style`, different content; absent when the data has no such pair.
    pub style_b: Option<usize>,
}

/// Draws a content clip uniformly, then a style label among those with two or
/// more content labels, two distinct contents of it, and one clip of each.
pub fn sample_triplet<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> TripletIndex {
    let content = rng.random_range(0..data.samples.len());
    let cells = data.cells();
    let eligible: Vec<&BTreeMap<String, Vec<usize>>> = cells.values().filter(|c| c.len() >= 2).collect();
    let Some(by_content) = eligible.choose(rng) else {
        return TripletIndex { content, style: rng.random_range(0..data.samples.len()), style_b: None };
    };
    let lists: Vec<&Vec<usize>> = by_content.values().collect();
    let a = rng.random_range(0..lists.len());
    let mut b = rng.random_range(0..lists.len() - 1);
    if b >= a {
        b += 1;
    }
    let style = *lists[a].choose(rng).expect("non-empty cell");
    let style_b = *lists[b].choose(rng).expect("non-empty cell");
    TripletIndex { content, style, style_b: Some(style_b) }
}

/// Cropped motions for one training sample.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub content: Sample,
    pub style: Sample,
    pub style_b: Option<Sample>,
}

/// Generator-side objective of one sample, and the generated motion.
pub struct SampleObjective {
    pub terms: LossTerms<Var>,
    pub total: Var,
    pub generated: MotionVars,
}

/// Builds every generator-side loss term for one triplet on `ctx`.
pub fn sample_objective(model: &Model, ctx: &mut Ctx<'_>, t: &Triplet) -> Result<SampleObjective> {
    sample_objective_with(model, ctx, t, None)
}

/// `transfer(content, style_b)` for a triplet, the stop-gradient target of the
/// disentanglement term.
pub fn disentangle_target(model: &Model, t: &Triplet) -> Result<Option<FrozenMotion>> {
    let Some(sb) = &t.style_b else { return Ok(None) };
    let mut ctx = model.ctx();
    let c_in = model.input(&mut ctx, &t.content.motion)?;
    let sb_in = model.input(&mut ctx, &sb.motion)?;
    let ec = model.encode(&mut ctx, &c_in)?;
    let esb = model.encode(&mut ctx, &sb_in)?;
    let gb = model.transfer(&mut ctx, &ec, &esb)?;
    Ok(Some(FrozenMotion::capture(&ctx, &gb)))
}

/// Like [`sample_objective`], optionally with a precomputed disentanglement
/// target so its value stays fixed while parameters move.
pub fn sample_objective_with(model: &Model, ctx: &mut Ctx<'_>, t: &Triplet, target: Option<&FrozenMotion>) -> Result<SampleObjective> {
    let c_in = model.input(ctx, &t.content.motion)?;
    let s_in = model.input(ctx, &t.style.motion)?;
    let ec = model.encode(ctx, &c_in)?;
    let es = model.encode(ctx, &s_in)?;
    let g = model.transfer(ctx, &ec, &es)?;
    let r = model.transfer(ctx, &ec, &ec)?;
    let recon = losses::seq_distance(ctx, &r, &c_in, Channels::All)?;

    let eg = model.encode(ctx, &g)?;
    let back_s = model.transfer(ctx, &es, &eg)?;
    let cyc_s = losses::seq_distance(ctx, &back_s, &s_in, Channels::All)?;
    let back_c = model.transfer(ctx, &eg, &ec)?;
    let cyc_c = losses::seq_distance(ctx, &back_c, &c_in, Channels::All)?;

    let disentangle = match (&t.style_b, target) {
        (Some(_), Some(frozen)) => {
            let gb = frozen.place(ctx);
            losses::seq_distance(ctx, &g, &gb, Channels::All)?
        }
        (Some(sb), None) => {
            let sb_in = model.input(ctx, &sb.motion)?;
            let esb = model.encode(ctx, &sb_in)?;
            let gb = model.transfer(ctx, &ec, &esb)?.detach(ctx);
            losses::seq_distance(ctx, &g, &gb, Channels::All)?
        }
        (None, _) => ctx.tape.constant(Tensor::scalar(0.0)),
    };

    let vel = losses::velocity_reg(ctx, &g)?;
    let acc = losses::acceleration_reg(ctx, &g)?;
    let foot = losses::foot_contact_reg(ctx, &g, &t.content.contacts)?;
    let p_fake = model.discriminate(ctx, &g)?;
    let adv_g = losses::adversarial_g(ctx, p_fake);

    let terms = LossTerms { disentangle, vel, acc, foot, adv_g, recon, cyc_s, cyc_c };
    let total = losses::total_loss_var(ctx, &terms, &model.hp.weights)?;
    Ok(SampleObjective { terms, total, generated: g })
}

/// Batch-mean generator objective on a single tape; `targets`, when given,
/// holds one precomputed disentanglement target per triplet.
pub fn batch_objective(model: &Model, ctx: &mut Ctx<'_>, batch: &[Triplet], targets: Option<&[Option<FrozenMotion>]>) -> Result<Var> {
    let totals = batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let target = targets.and_then(|ts| ts.get(i)).and_then(|t| t.as_ref());
            sample_objective_with(model, ctx, t, target).map(|o| o.total)
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = ctx.tape.add_all(&totals)?;
    Ok(ctx.tape.scale(sum, 1.0 / batch.len() as f64))
}

/// Tensor values of a motion, for moving it to another tape.
#[derive(Clone, Debug)]
pub struct FrozenMotion {
    values: [Tensor; 6],
    mask: Vec<bool>,
}

impl FrozenMotion {
    pub fn capture(ctx: &Ctx<'_>, mv: &MotionVars) -> Self {
        let vars = [mv.joints, mv.root, mv.vel, mv.joints_n, mv.root_n, mv.vel_n];
        FrozenMotion { values: vars.map(|v| ctx.value(v).clone()), mask: mv.mask.clone() }
    }

    pub fn place(&self, ctx: &mut Ctx<'_>) -> MotionVars {
        let [j, r, v, jn, rn, vn] = self.values.clone().map(|t| ctx.tape.constant(t));
        MotionVars { joints: j, root: r, vel: v, joints_n: jn, root_n: rn, vel_n: vn, mask: self.mask.clone() }
    }
}

/// Optimizer state and sampling stream of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub data: Dataset,
    pub adam_eg: AdamState,
    pub adam_d: AdamState,
    pub rng: ChaCha8Rng,
    /// Completed iterations.
    pub iteration: u64,
    /// Shortest random crop, in frames.
    pub min_crop: usize,
}

impl Trainer {
    pub fn new(model: Model, data: Dataset, seed: u64, min_crop: usize) -> Result<Self> {
        if data.samples.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if min_crop < 3 || min_crop > model.hp.max_len {
            return Err(Error::Config(format!("min_crop {min_crop} must lie in [3, {}]", model.hp.max_len)));
        }
        if let Some(s) = data.samples.iter().find(|s| s.motion.len() < 3) {
            return Err(Error::Data(format!("clip with {} frames is too short", s.motion.len())));
        }
        let adam_eg = AdamState::new(&model.store, model.eg_params.clone(), AdamConfig::default());
        let adam_d = AdamState::new(&model.store, model.d_params.clone(), AdamConfig::default());
        // Offset so data sampling does not replay the initialization stream.
        let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        Ok(Trainer { model, data, adam_eg, adam_d, rng, iteration: 0, min_crop })
    }

    pub fn sample_batch(&mut self) -> Result<Vec<Triplet>> {
        let max = self.model.hp.max_len;
        (0..self.model.hp.batch)
            .map(|_| {
                let idx = sample_triplet(&self.data, &mut self.rng);
                let s = &self.data.samples;
                Ok(Triplet {
                    content: s[idx.content].crop(&mut self.rng, self.min_crop, max)?,
                    style: s[idx.style].crop(&mut self.rng, self.min_crop, max)?,
                    style_b: idx.style_b.map(|i| s[i].crop(&mut self.rng, self.min_crop, max)).transpose()?,
                })
            })
            .collect()
    }

    /// One iteration: a generator-side step on the batch, then a discriminator
    /// step on the same batch's real style motions and generated motions.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let batch = self.sample_batch()?;
        let inv_b = 1.0 / batch.len() as f64;
        let mut terms = LossTerms::<f64>::default();
        let mut fakes = Vec::with_capacity(batch.len());

        self.model.store.zero_grad();
        let mut grads = Vec::with_capacity(batch.len());
        for t in &batch {
            let mut ctx = self.model.ctx();
            let obj = sample_objective(&self.model, &mut ctx, t)?;
            let v = obj.terms.map(|x| ctx.value(x).item());
            accumulate_terms(&mut terms, &v, inv_b);
            fakes.push(FrozenMotion::capture(&ctx, &obj.generated));
            let loss = ctx.tape.scale(obj.total, inv_b);
            grads.push(ctx.tape.backward(loss)?);
        }
        let total = losses::total_loss(&terms, &self.model.hp.weights);
        if !total.is_finite() {
            return Err(self.non_finite(&terms, f64::NAN));
        }
        for g in &grads {
            self.model.store.accumulate(g);
        }
        drop(grads);
        self.adam_eg.step(&mut self.model.store, self.model.hp.lr_eg)?;

        self.model.store.zero_grad();
        let mut adv_d = 0.0;
        let mut grads = Vec::with_capacity(batch.len());
        let lambda = self.model.hp.weights.adv;
        for (t, fake) in batch.iter().zip(&fakes) {
            let mut ctx = self.model.ctx();
            let real = self.model.input(&mut ctx, &t.style.motion)?;
            let fake = fake.place(&mut ctx);
            let p_real = self.model.discriminate(&mut ctx, &real)?;
            let p_fake = self.model.discriminate(&mut ctx, &fake)?;
            let obj = losses::adversarial_d(&mut ctx, p_real, p_fake)?;
            adv_d += ctx.value(obj).item() * inv_b;
            let loss = ctx.tape.scale(obj, -lambda * inv_b);
            grads.push(ctx.tape.backward(loss)?);
        }
        if !adv_d.is_finite() {
            return Err(self.non_finite(&terms, adv_d));
        }
        for g in &grads {
            self.model.store.accumulate(g);
        }
        self.adam_d.step(&mut self.model.store, self.model.hp.lr_d)?;
        self.model.store.zero_grad();
        self.iteration += 1;
        Ok(LossBreakdown { terms, adv_d, total })
    }

    fn non_finite(&self, terms: &LossTerms<f64>, adv_d: f64) -> Error {
        let b = LossBreakdown { terms: *terms, adv_d, total: losses::total_loss(terms, &self.model.hp.weights) };
        let detail = LossBreakdown::HEADER.iter().zip(b.values()).map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        Error::NonFinite { iteration: self.iteration + 1, detail }
    }
}

fn accumulate_terms(acc: &mut LossTerms<f64>, v: &LossTerms<f64>, k: f64) {
    acc.disentangle += k * v.disentangle;
    acc.vel += k * v.vel;
    acc.acc += k * v.acc;
    acc.foot += k * v.foot;
    acc.adv_g += k * v.adv_g;
    acc.recon += k * v.recon;
    acc.cyc_s += k * v.cyc_s;
    acc.cyc_c += k * v.cyc_c;
}
