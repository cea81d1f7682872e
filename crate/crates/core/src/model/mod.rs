//! Encoder, part-attentive style modulator, generator and discriminator.

pub mod config;
pub mod discriminator;
pub mod embedding;
pub mod encoder;
pub mod generator;
pub mod nn;
pub mod psm;
pub mod stats;

pub use config::{HyperParams, LossWeights, PartGrouping, TRAJ_NAME};
pub use discriminator::Discriminator;
pub use embedding::{Embedding, MotionVars};
pub use encoder::{Encoded, Encoder};
pub use generator::Generator;
pub use nn::{Ctx, Trace};
pub use psm::Psm;
pub use stats::FeatureStats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tapegrad::{ParamId, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;

/// All networks plus the data normalizer, sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub hp: HyperParams,
    pub grouping: PartGrouping,
    pub stats: FeatureStats,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub psm: Psm,
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Parameters of the encoder, modulator and generator.
    pub eg_params: Vec<ParamId>,
    pub d_params: Vec<ParamId>,
}

impl Model {
    /// Builds a model with weights drawn from `seed`.
    pub fn new(hp: HyperParams, grouping: PartGrouping, stats: FeatureStats, seed: u64) -> Result<Self> {
        hp.validate()?;
        if stats.num_joints() != grouping.num_joints() {
            return Err(Error::Config(format!(
                "statistics cover {} joints, grouping {}",
                stats.num_joints(),
                grouping.num_joints()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &hp, &grouping, &mut rng)?;
        let psm = Psm::new(&mut store, &hp, grouping.num_tokens(), &mut rng);
        let generator = Generator::new(&mut store, &hp, &grouping, &mut rng);
        let split = store.len();
        let discriminator = Discriminator::new(&mut store, &hp, &grouping, &mut rng)?;
        let eg_params = store.ids().take(split).collect();
        let d_params = store.ids().skip(split).collect();
        Ok(Model { hp, grouping, stats, store, encoder, psm, generator, discriminator, eg_params, d_params })
    }

    pub fn ctx(&self) -> Ctx<'_> {
        Ctx::new(&self.store)
    }

    /// A motion as tape constants.
    pub fn input(&self, ctx: &mut Ctx<'_>, ms: &MotionSequence) -> Result<MotionVars> {
        MotionVars::constant(ctx, ms, &self.stats, None)
    }

    pub fn encode(&self, ctx: &mut Ctx<'_>, mv: &MotionVars) -> Result<Encoded> {
        self.encoder.forward(ctx, mv, &self.grouping)
    }

    /// `S̃` for the style motion's features conditioned on both content codes.
    pub fn modulate(&self, ctx: &mut Ctx<'_>, content: &Encoded, style: &Encoded) -> Result<Var> {
        self.psm.forward(ctx, style.style, content.content, style.content)
    }

    /// `transfer(content, style)` from already encoded inputs.
    pub fn transfer(&self, ctx: &mut Ctx<'_>, content: &Encoded, style: &Encoded) -> Result<MotionVars> {
        let s = self.modulate(ctx, content, style)?;
        self.generator.forward(ctx, content, s, &self.grouping, &self.stats)
    }

    pub fn discriminate(&self, ctx: &mut Ctx<'_>, mv: &MotionVars) -> Result<Var> {
        self.discriminator.forward(ctx, mv, &self.grouping)
    }

    /// Runs inference on plain sequences. Content longer than the model's
    /// maximum length is processed in consecutive windows; the style motion is
    /// cut to its first `max_len` frames.
    pub fn transfer_motion(&self, content: &MotionSequence, style: &MotionSequence) -> Result<TransferOutput> {
        if content.is_empty() || style.is_empty() {
            return Err(Error::Motion("transfer needs non-empty motions".into()));
        }
        let max = self.hp.max_len;
        let style = if style.len() > max { style.slice(0, max)? } else { style.clone() };
        let mut pieces = Vec::new();
        let mut report = None;
        let mut start = 0;
        while start < content.len() {
            let mut len = max.min(content.len() - start);
            // Avoid a trailing window too short for the encoder's statistics.
            if content.len() - start - len == 1 && len > 1 {
                len -= 1;
            }
            let window = content.slice(start, len)?;
            let mut ctx = self.ctx();
            let c_in = self.input(&mut ctx, &window)?;
            let s_in = self.input(&mut ctx, &style)?;
            let c = self.encode(&mut ctx, &c_in)?;
            let s = self.encode(&mut ctx, &s_in)?;
            let s_mod = self.modulate(&mut ctx, &c, &s)?;
            let out = self.generator.forward(&mut ctx, &c, s_mod, &self.grouping, &self.stats)?;
            pieces.push(out.to_sequence(&ctx, content.fps)?);
            if report.is_none() {
                let cross = *ctx.trace.cross.last().expect("modulator records its map");
                report = Some(TransferReport {
                    style_features: ctx.value(s.style).clone(),
                    modulated: ctx.value(s_mod).clone(),
                    cross_attention: ctx.value(cross).clone(),
                });
            }
            start += len;
        }
        let report = report.expect("at least one window");
        let motion = MotionSequence::concat(&pieces)?.with_labels(content.labels.clone());
        Ok(TransferOutput { motion, report })
    }
}

/// Features exported alongside a transferred motion.
#[derive(Clone, Debug)]
pub struct TransferReport {
    /// `S` of the style motion, `[P+1, d]`.
    pub style_features: Tensor,
    /// `S̃` after modulation, `[P+1, d]`.
    pub modulated: Tensor,
    /// Cross-attention maps `[heads, P+1, P+1]`; rows are content tokens.
    pub cross_attention: Tensor,
}

#[derive(Clone, Debug)]
pub struct TransferOutput {
    pub motion: MotionSequence,
    pub report: TransferReport,
}
