use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{encode_for_model, GenQotError, GenQotModel};
use crate::grid::ArrivalSequence;
use crate::metrics::{tv_against_truth, MAX_ENUMERATED_SEQUENCES};
use crate::postprocess::PostProcessor;
use crate::world::{HistorySlice, World};

/// Exact distribution of the token sequence produced by ordering `action`
/// from `vendor`, enumerated over the generator's supply and share atoms.
/// Sequences longer than `max_len` classes are cut to a forced stop.
pub fn truth_distribution(
    world: &World,
    slice: &HistorySlice,
    action: f64,
    post: &dyn PostProcessor,
    model: &GenQotModel,
) -> Result<Vec<(Vec<usize>, f64)>, GenQotError> {
    let truth = world
        .ground_truth()
        .ok_or_else(|| GenQotError::NotEnumerable("world has no generator parameters".into()))?;
    let atoms = truth
        .config
        .enumerable_arrival_atoms(slice.vendor)
        .ok_or_else(|| GenQotError::NotEnumerable("continuous supply or share process".into()))?;
    if atoms.len() > MAX_ENUMERATED_SEQUENCES {
        return Err(GenQotError::NotEnumerable(format!("{} atoms", atoms.len())));
    }
    let processed = post
        .apply(action, &slice.order_constraints)
        .map_err(|e| GenQotError::Invalid(e.to_string()))?;
    let mut dist: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (p, supply, shares) in atoms {
        let filled = supply.fill(processed);
        let seq = ArrivalSequence::new(action, shares.iter().map(|r| filled * r).collect());
        let mut tokens = if action == 0.0 {
            vec![0]
        } else {
            encode_for_model(&seq, model.grid())?
        };
        tokens.truncate(model.max_len());
        *dist.entry(tokens).or_insert(0.0) += p;
    }
    Ok(dist.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub per_context: Vec<f64>,
    pub mean: f64,
}

/// Average over contexts of the total-variation distance between the
/// model's sequence distribution and the enumerated ground truth.
pub fn estimate_arrival_tv(
    model: &GenQotModel,
    world: &World,
    contexts: &[(HistorySlice, f64)],
    post: &dyn PostProcessor,
) -> Result<TvReport, GenQotError> {
    if contexts.is_empty() {
        return Err(GenQotError::Invalid("no contexts".into()));
    }
    let per_context = contexts
        .iter()
        .map(|(slice, a)| {
            let truth = truth_distribution(world, slice, *a, post, model)?;
            let features = model.spec().featurize(slice, *a)?;
            let probs = truth
                .iter()
                .map(|(tokens, _)| model.sequence_log_prob(&features, tokens).map(f64::exp))
                .collect::<Result<Vec<_>, _>>()?;
            let indexed: Vec<(usize, f64)> = truth.iter().enumerate().map(|(k, (_, p))| (k, *p)).collect();
            Ok(tv_against_truth(&indexed, |k| probs[*k]))
        })
        .collect::<Result<Vec<f64>, GenQotError>>()?;
    let mean = per_context.iter().sum::<f64>() / per_context.len() as f64;
    Ok(TvReport { per_context, mean })
}
