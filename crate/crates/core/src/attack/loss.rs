use super::{AttackConfig, CentroidTracker, PoisonObjective};
use crate::error::{Error, Result};
use crate::model::{BoundParams, VimModel};
use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::trigger::Trigger;

/// Scalar values of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// `CE(f(x_c), y_c)` over the whole batch.
    pub clean: f64,
    /// Poison cross-entropy averaged over the poisoned rows (0 when none
    /// are poisoned).
    pub poison_ce: f64,
    /// Squared distance of poisoned final states to the centroid, averaged
    /// over poisoned rows and divided by `‖h_t‖²`; unweighted.
    pub state: f64,
    pub total: f64,
    pub poisoned: usize,
}

/// A recorded loss ready for `backward`.
pub struct LossGraph {
    pub total: Var,
    pub bound: BoundParams,
    pub terms: LossTerms,
    /// Clean-input final states of the whole batch, `[batch, d*n]`.
    pub clean_states: Vec<f64>,
}

/// Records the composite objective for one batch on `tape`.
///
/// `poisoned` indexes the batch rows that also enter the poison branch.
/// The centroid enters as a constant, so no gradient reaches it.
pub fn composite_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &VimModel<T>,
    images: &[f32],
    labels: &[usize],
    poisoned: &[usize],
    trigger: Option<&Trigger>,
    centroid: &CentroidTracker,
    cfg: &AttackConfig,
) -> Result<LossGraph> {
    let h_t = centroid.require()?;
    let poison = match (poisoned.is_empty(), trigger) {
        (true, _) => None,
        (false, Some(t)) => Some((poisoned, t, h_t)),
        (false, None) => return Err(Error::invalid("poisoned samples given without a trigger")),
    };
    record_loss(tape, model, images, labels, poison, cfg)
}

pub(super) fn record_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &VimModel<T>,
    images: &[f32],
    labels: &[usize],
    poison: Option<(&[usize], &Trigger, &[f64])>,
    cfg: &AttackConfig,
) -> Result<LossGraph> {
    let il = model.config.image_len();
    let bound = model.bind(tape, true);
    let x = model.patches_on_tape(tape, images, labels.len())?;
    let fwd = model.forward_tape(tape, &bound, x)?;
    let lc = tape.cross_entropy(fwd.logits, labels)?;
    let mut terms = LossTerms {
        clean: tape.value(lc).item()?.as_f64(),
        ..LossTerms::default()
    };
    let clean_states = tape.value(fwd.final_state).data().iter().map(|v| v.as_f64()).collect();
    let mut total = lc;
    if let Some((rows, trigger, h_t)) = poison {
        let m = rows.len();
        let mut subset = Vec::with_capacity(m * il);
        for &r in rows {
            if r >= labels.len() {
                return Err(Error::invalid(format!("poisoned row {r} outside batch of {}", labels.len())));
            }
            subset.extend_from_slice(&images[r * il..(r + 1) * il]);
        }
        let xp_images = trigger.apply_batch(&subset, il)?;
        let xp = model.patches_on_tape(tape, &xp_images, m)?;
        let fp = model.forward_tape(tape, &bound, xp)?;
        let lp = match cfg.objective {
            PoisonObjective::TargetLabel => tape.cross_entropy(fp.logits, &vec![cfg.target_label; m])?,
            PoisonObjective::CleanLabel => {
                let xs = model.patches_on_tape(tape, &subset, m)?;
                let fs = model.forward_tape(tape, &bound, xs)?;
                let ys: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
                tape.cross_entropy(fs.logits, &ys)?
            }
        };
        let dn = model.config.state_len();
        if h_t.len() != dn {
            return Err(Error::ShapeMismatch {
                op: "state_alignment",
                left: vec![h_t.len()],
                right: vec![dn],
            });
        }
        let tiled: Vec<f64> = h_t.iter().copied().cycle().take(m * dn).collect();
        let ht = tape.constant(Tensor::from_f64(vec![m, dn], &tiled)?);
        let diff = tape.sub(fp.final_state, ht)?;
        let sq = tape.mul(diff, diff)?;
        let sum = tape.sum(sq)?;
        // relative to the centroid's own size, so λ does not depend on the
        // scale the states happen to live at
        let norm: f64 = h_t.iter().map(|v| v * v).sum();
        if !(norm > 0.0) {
            return Err(Error::invalid("target centroid has zero norm"));
        }
        let lst = tape.scale(sum, T::lit(1.0 / (norm * m as f64)))?;
        let weighted = tape.scale(lst, T::lit(cfg.lambda))?;
        total = tape.add(total, lp)?;
        total = tape.add(total, weighted)?;
        terms.poison_ce = tape.value(lp).item()?.as_f64();
        terms.state = tape.value(lst).item()?.as_f64();
        terms.poisoned = m;
    }
    terms.total = tape.value(total).item()?.as_f64();
    Ok(LossGraph {
        total,
        bound,
        terms,
        clean_states,
    })
}
