use log::warn;
use rand::Rng as _;

use super::World;
use crate::error::{Error, Result};
use crate::policy_rl::PolicyNet;
use crate::reward_model::{PairSource, PreferenceDataset, PreferencePair};
use crate::rng::stream;
use crate::scoring::Scorer;

const TIE_RESAMPLES: usize = 16;

/// Gold-relabelled preference pairs over SFT samples on the training prompts.
///
/// Each pair draws two SFT responses for one prompt; the gold-preferred one is
/// `chosen`. Exact gold ties are re-sampled; a pair whose budget runs out is
/// skipped with a warning.
pub fn gen_preference_dataset(
    world: &World,
    sft: &PolicyNet,
    n_pairs: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if world.train_prompts.is_empty() {
        return Err(Error::config("world has no training prompts"));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut skipped = 0;
    for i in 0..n_pairs {
        let mut rng = stream(seed, "dataset/pair", i as u64);
        let prompt = &world.train_prompts[rng.random_range(0..world.train_prompts.len())];
        let mut emitted = false;
        for _ in 0..TIE_RESAMPLES {
            let a = sft.sample(prompt, &mut rng).response;
            let b = sft.sample(prompt, &mut rng).response;
            let (ga, gb) = (
                world.gold.raw_score(prompt, &a),
                world.gold.raw_score(prompt, &b),
            );
            if ga == gb {
                continue;
            }
            let (chosen, rejected, gc, gr) = if ga > gb {
                (a, b, ga, gb)
            } else {
                (b, a, gb, ga)
            };
            pairs.push(PreferencePair {
                prompt_id: prompt.id,
                chosen,
                rejected,
                source: PairSource::Original,
                gold_chosen: gc,
                gold_rejected: gr,
                adv: None,
            });
            emitted = true;
            break;
        }
        if !emitted {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} preference pairs after exhausting tie re-samples");
    }
    Ok(PreferenceDataset::new(pairs))
}
