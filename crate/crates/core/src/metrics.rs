//! Content consistency (CC), style consistency (SC) and SC against
//! pseudo-ground-truth training clips (SC++).

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, JOINT_DIM};

/// Anything that maps a (content, style) pair to a generated motion.
pub trait StyleTransfer {
    fn transfer(&self, content: &MotionSequence, style: &MotionSequence) -> Result<MotionSequence>;
}

impl StyleTransfer for crate::model::Model {
    fn transfer(&self, content: &MotionSequence, style: &MotionSequence) -> Result<MotionSequence> {
        Ok(self.transfer_motion(content, style)?.motion)
    }
}

/// Returns the content motion unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityTransfer;

impl StyleTransfer for IdentityTransfer {
    fn transfer(&self, content: &MotionSequence, _style: &MotionSequence) -> Result<MotionSequence> {
        Ok(content.clone())
    }
}

/// Joint-vector distance over the first `min(T_a, T_b)` frames; root and
/// velocity channels (global translation and facing) are left out.
pub fn motion_distance(a: &MotionSequence, b: &MotionSequence) -> Result<f64> {
    if a.num_joints() != b.num_joints() {
        return Err(Error::Motion(format!("cannot compare {} and {} joints", a.num_joints(), b.num_joints())));
    }
    let n = a.len().min(b.len()) * a.num_joints() * JOINT_DIM;
    Ok(a.joints()[..n]
        .chunks(JOINT_DIM)
        .zip(b.joints()[..n].chunks(JOINT_DIM))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .sum())
}

fn label<'a>(ms: &'a MotionSequence, style: bool) -> Result<&'a str> {
    let l = if style { &ms.labels.style } else { &ms.labels.content };
    l.as_deref().ok_or_else(|| Error::Data("evaluation motion lacks style/content labels".into()))
}

/// A content motion, a style motion and the output for them.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub content: MotionSequence,
    pub style: MotionSequence,
    pub generated: MotionSequence,
}

impl EvalPair {
    pub fn run(model: &impl StyleTransfer, content: &MotionSequence, style: &MotionSequence) -> Result<Self> {
        Ok(EvalPair { content: content.clone(), style: style.clone(), generated: model.transfer(content, style)? })
    }

    pub fn same_style(&self) -> Result<bool> {
        Ok(label(&self.content, true)? == label(&self.style, true)?)
    }

    pub fn same_content(&self) -> Result<bool> {
        Ok(label(&self.content, false)? == label(&self.style, false)?)
    }
}

fn mean(values: &[f64], what: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data(format!("{what}: no eligible pairs")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean distance of outputs to their content motions, over same-style pairs.
pub fn metric_cc<'a>(pairs: impl IntoIterator<Item = &'a EvalPair>) -> Result<f64> {
    let mut d = Vec::new();
    for p in pairs {
        if p.same_style()? {
            d.push(motion_distance(&p.generated, &p.content)?);
        }
    }
    mean(&d, "CC")
}

/// Mean distance of outputs to their style motions, over same-content pairs.
pub fn metric_sc<'a>(pairs: impl IntoIterator<Item = &'a EvalPair>) -> Result<f64> {
    let mut d = Vec::new();
    for p in pairs {
        if p.same_content()? {
            d.push(motion_distance(&p.generated, &p.style)?);
        }
    }
    mean(&d, "SC")
}

/// SC++ value and how many pairs found no training clip in their cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScppResult {
    pub value: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Per pair, the mean distance to every training clip sharing the content
/// motion's content label and the style motion's style label; then the mean
/// over pairs. Pairs whose cell is empty are skipped and counted.
pub fn metric_scpp<'a>(pairs: impl IntoIterator<Item = &'a EvalPair>, train: &[MotionSequence]) -> Result<ScppResult> {
    let mut inner = Vec::new();
    let mut skipped = 0;
    for p in pairs {
        let (content, style) = (label(&p.content, false)?, label(&p.style, true)?);
        let mut cell = Vec::new();
        for t in train {
            if label(t, false)? == content && label(t, true)? == style {
                cell.push(motion_distance(&p.generated, t)?);
            }
        }
        if cell.is_empty() {
            skipped += 1;
        } else {
            inner.push(cell.iter().sum::<f64>() / cell.len() as f64);
        }
    }
    let used = inner.len();
    Ok(ScppResult { value: mean(&inner, "SC++")?, used, skipped })
}
