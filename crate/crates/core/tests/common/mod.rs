//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use motion_style::model::{Ctx, FeatureStats, HyperParams, Model, PartGrouping};
use motion_style::motion::{Labels, Preprocess};
use motion_style::synth::{corpus_clips, CorpusSpec};
use motion_style::train::{Dataset, Sample, Triplet};
use motion_style::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tapegrad::gradcheck::max_relative_error;
use tapegrad::{ParamId, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Synthetic clips for every (style, content) combination, one variant each.
pub fn dataset(styles: &[&str], contents: &[&str]) -> Dataset {
    let spec = CorpusSpec {
        styles: styles.iter().map(|s| s.to_string()).collect(),
        contents: contents.iter().map(|s| s.to_string()).collect(),
        variants: 1,
        ..CorpusSpec::default()
    };
    let clips = corpus_clips(&spec, &Preprocess::default()).unwrap();
    Dataset::from_clips(clips.into_iter().map(|(c, l, _)| (c, l)).collect()).unwrap()
}

/// The four-clip overfit set: two styles by two contents.
pub fn four_clips() -> Dataset {
    dataset(&["neutral", "angry"], &["walk", "punch"])
}

pub fn grouping(data: &Dataset) -> PartGrouping {
    PartGrouping::from_names(&data.skeleton, &PartGrouping::default_parts()).unwrap()
}

/// A very small model for finite-difference checks.
pub fn tiny_hp() -> HyperParams {
    HyperParams { d: 8, d_head: 4, heads: 2, blocks: 2, max_len: 8, mlp_hidden: 8, batch: 2, ..HyperParams::default() }
}

pub fn model(data: &Dataset, hp: HyperParams, seed: u64) -> Model {
    Model::new(hp, grouping(data), data.stats().unwrap(), seed).unwrap()
}

pub fn identity_stats_model(data: &Dataset, hp: HyperParams, seed: u64) -> Model {
    let nj = data.skeleton.len();
    Model::new(hp, grouping(data), FeatureStats::identity(nj), seed).unwrap()
}

pub fn crop(s: &Sample, start: usize, len: usize) -> Sample {
    Sample { motion: s.motion.slice(start, len).unwrap(), contacts: s.contacts.slice(start, len).unwrap() }
}

pub fn find<'a>(data: &'a Dataset, style: &str, content: &str) -> &'a Sample {
    data.samples.iter().find(|s| s.style() == style && s.content() == content).expect("clip present")
}

pub fn labels(style: &str, content: &str) -> Labels {
    Labels { style: Some(style.into()), content: Some(content.into()) }
}

/// Triplet (content, style, same-style other-content) cropped to `len` frames.
pub fn triplet(data: &Dataset, c: (&str, &str), s: (&str, &str), sb: (&str, &str), start: usize, len: usize) -> Triplet {
    Triplet {
        content: crop(find(data, c.0, c.1), start, len),
        style: crop(find(data, s.0, s.1), start + 3, len),
        style_b: Some(crop(find(data, sb.0, sb.1), start + 5, len)),
    }
}

/// `count` random (parameter, entry) probes per parameter tensor.
pub fn probes(model: &Model, ids: &[ParamId], count: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut r = rng(seed);
    ids.iter()
        .flat_map(|&id| {
            let n = model.store.value(id).len();
            (0..count.min(n)).map(|_| (id, r.random_range(0..n))).collect::<Vec<_>>()
        })
        .collect()
}

/// Worst relative error between analytic and central-difference gradients of
/// the scalar built by `build`, over the probed parameter entries.
pub fn param_grad_error(
    model: &mut Model,
    probes: &[(ParamId, usize)],
    build: &dyn Fn(&Model, &mut Ctx<'_>) -> Result<Var>,
) -> f64 {
    let analytic: Vec<f64> = {
        let grads = {
            let mut ctx = model.ctx();
            let loss = build(model, &mut ctx).unwrap();
            ctx.tape.backward(loss).unwrap()
        };
        model.store.zero_grad();
        model.store.accumulate(&grads);
        probes.iter().map(|&(id, k)| model.store.grad(id)[k]).collect()
    };
    model.store.zero_grad();
    let eval = |model: &Model| {
        let mut ctx = model.ctx();
        let v = build(model, &mut ctx).unwrap();
        ctx.value(v).item()
    };
    let numeric: Vec<f64> = probes
        .iter()
        .map(|&(id, k)| {
            let x = model.store.value(id).data()[k];
            model.store.value_mut(id).data_mut()[k] = x + FD_STEP;
            let up = eval(model);
            model.store.value_mut(id).data_mut()[k] = x - FD_STEP;
            let down = eval(model);
            model.store.value_mut(id).data_mut()[k] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    max_relative_error(&analytic, &numeric, FD_FLOOR)
}
