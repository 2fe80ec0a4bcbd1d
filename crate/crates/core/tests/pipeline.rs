use std::fs;

use advrm::harness::{ExperimentConfig, Lab};
use advrm::Error;

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for o in [
        "world.train_prompts=24",
        "world.eval_prompts=6",
        "sft.candidates_per_prompt=16",
        "sft.epochs=2",
        "data.n_pairs=120",
        "data.reference_samples=64",
        "rlhf.max_steps=4",
        "rlhf.batch_size=8",
        "attack_rl.max_steps=4",
        "attack_rl.batch_size=8",
        "attack.threshold_samples=8",
        "attack.pair_budget=20",
        "eval.correlation_samples=64",
        "eval.perturb_variants=4",
        "eval.ablations=false",
        "eval.downstream_baselines=false",
    ] {
        c.apply_override(o).unwrap();
    }
    c
}

fn missing_stage(e: Error) -> String {
    match e {
        Error::MissingArtifact { stage, .. } => stage,
        other => panic!("expected a missing artifact, got {other}"),
    }
}

#[test]
fn stages_are_gated_on_their_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lab = Lab::open(tiny(), tmp.path()).unwrap();
    assert_eq!(missing_stage(lab.train_rm(0).unwrap_err()), "gen-world");
    lab.gen_world().unwrap();
    assert_eq!(missing_stage(lab.attack(0).unwrap_err()), "train-rm-0");
    assert_eq!(missing_stage(lab.round(2).unwrap_err()), "build-pairs-1");
    assert_eq!(missing_stage(lab.train_policy().unwrap_err()), "train-rm-0");
    assert_eq!(missing_stage(lab.report().unwrap_err()), "evaluate");
    assert!(matches!(lab.round(3), Err(Error::Config(_))));
}

#[test]
fn stages_are_idempotent_and_resumable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lab = Lab::open(tiny(), tmp.path()).unwrap();
    lab.gen_world().unwrap();
    lab.train_rm(0).unwrap();
    let dir = lab.dir.root().to_path_buf();
    let read = |name: &str| fs::read(dir.join(name)).unwrap();
    let (sft, rm) = (read("sft.json"), read("rm_r0_m0.params.json"));

    let mut again = Lab::open(tiny(), tmp.path()).unwrap();
    assert!(again.dir.is_done("train-rm-0"));
    again.gen_world().unwrap();
    again.train_rm(0).unwrap();
    assert_eq!(read("sft.json"), sft);
    assert_eq!(read("rm_r0_m0.params.json"), rm);

    let mut other = tiny();
    other.attack.lambda = 12.0;
    assert!(Lab::open(other, tmp.path()).is_err());
}

#[test]
fn split_stages_match_the_round_command() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = Lab::open(tiny(), &tmp.path().join("a")).unwrap();
    a.gen_world().unwrap();
    a.round(0).unwrap();
    let mut b = Lab::open(tiny(), &tmp.path().join("b")).unwrap();
    b.gen_world().unwrap();
    b.train_rm(0).unwrap();
    b.attack(0).unwrap();
    b.filter(0).unwrap();
    b.build_pairs(0).unwrap();
    for name in [
        "candidates_r0.jsonl",
        "retained_r0.jsonl",
        "pairs_r0.jsonl",
        "round_r0.json",
    ] {
        assert_eq!(
            fs::read(a.dir.path(name)).unwrap(),
            fs::read(b.dir.path(name)).unwrap(),
            "{name}"
        );
    }
}
