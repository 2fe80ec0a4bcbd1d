use rand::{Rng as _, SeedableRng};

use advrm::reward_model::{
    pair_accuracy, train_rm, PairSource, PreferenceDataset, PreferencePair, RmConfig,
};
use advrm::rng::Rng;
use advrm::scoring::Sample;
use advrm::synth_env::{build_world, random_response, WorldConfig};

#[test]
fn one_epoch_fits_linearly_separable_pairs() {
    let world = build_world(&WorldConfig::default(), 5).unwrap();
    let fm = world.features.clone();
    let mut rng = Rng::seed_from_u64(6);
    let w: Vec<f64> = (0..fm.width())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let score = |p: &advrm::synth_env::Prompt, r: &advrm::synth_env::Response| {
        fm.features(p, r)
            .iter()
            .zip(&w)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };

    let mut pairs = Vec::new();
    while pairs.len() < 1000 {
        let prompt = &world.train_prompts[rng.random_range(0..world.train_prompts.len())];
        let a = random_response(world.vocab(), world.max_len(), &mut rng);
        let b = random_response(world.vocab(), world.max_len(), &mut rng);
        let (sa, sb) = (score(prompt, &a), score(prompt, &b));
        if (sa - sb).abs() < 1e-3 {
            continue;
        }
        let (chosen, rejected, gc, gr) = if sa > sb {
            (a, b, sa, sb)
        } else {
            (b, a, sb, sa)
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
    }
    let dataset = PreferenceDataset::new(pairs);
    let reference: Vec<Sample> = (0..256)
        .map(|i| Sample {
            prompt: world.train_prompts[i % world.train_prompts.len()].clone(),
            response: random_response(world.vocab(), world.max_len(), &mut rng),
        })
        .collect();
    let config = RmConfig::default();
    assert_eq!(config.epochs, 1);
    let rm = train_rm(&dataset, fm.clone(), &world, &config, 7, &reference).unwrap();
    let acc = pair_accuracy(&rm, &dataset, &world);
    assert!(acc > 0.9, "training pair accuracy {acc}");
}
