//! End-to-end acceptance checks, one line per criterion.
//!
//! Criteria 1 and 2 run in-process. The rest drive the `advrm` binary through
//! full `reproduce` runs on seeds 7, 8 and 9 (plus a second seed-7 run for the
//! determinism check) and read back the artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};

use advrm::adv_pipeline::{AdvSample, ThresholdCache};
use advrm::harness::{EvalSummary, ExperimentConfig};
use advrm::numerics::{categorical_sample, load_params, softmax, Gradients, ParamStore};
use advrm::policy_rl::{rloo_advantages, PolicyNet};
use advrm::reward_model::{bt_loss_and_grads, RewardNet};
use advrm::rng::{derive_seed, Rng};
use advrm::scoring::{Sample, Scorer};
use advrm::synth_env::{
    build_world, gen_preference_dataset, reference_samples, Prompt, Response, SftConfig,
    WorldConfig,
};

const SEEDS: [u64; 3] = [7, 8, 9];

const FD_PROBES: usize = 100;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_BUDGET: Duration = Duration::from_secs(60);

const BANDIT_SAMPLES: usize = 100_000;
const BANDIT_GROUP: usize = 4;
const BANDIT_SE: f64 = 3.0;
const ZERO_SUM_VECTORS: usize = 1000;

const Z_FILTER: f64 = 1.96;

const HACK_DROP: f64 = 0.25;
const HACK_BUDGET: Duration = Duration::from_secs(30 * 60);

const ADV_SUCCESS_MIN: f64 = 50.0;
const BASELINE_GAP_PP: f64 = 30.0;
const ROUND_DROP_PP: f64 = 20.0;
const CORR_SFT_MAX_ABS: f64 = 0.3;
const CORR_ADV_MAX: f64 = -0.4;

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
}

fn report(id: usize, pass: bool, detail: String) -> Verdict {
    println!(
        "criterion {id}: {} | {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    Verdict { id, pass, detail }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Central differences of `f` at `probes` flat coordinates, compared with `analytic`.
fn fd_check(
    params: &ParamStore,
    analytic: &[f64],
    probes: &[usize],
    f: impl Fn(&ParamStore) -> f64,
) -> f64 {
    let mut p = params.clone();
    probes
        .iter()
        .map(|&i| {
            let x = *p.flat_mut(i);
            *p.flat_mut(i) = x + FD_STEP;
            let up = f(&p);
            *p.flat_mut(i) = x - FD_STEP;
            let down = f(&p);
            *p.flat_mut(i) = x;
            rel_err(analytic[i], (up - down) / (2.0 * FD_STEP))
        })
        .fold(0.0, f64::max)
}

fn small_world() -> (advrm::synth_env::World, PolicyNet) {
    let config = WorldConfig {
        train_prompts: 16,
        eval_prompts: 4,
        ..WorldConfig::default()
    };
    let world = build_world(&config, 11).unwrap();
    let spec = SftConfig::default().policy_spec(&world);
    let policy = PolicyNet::random(spec, &mut Rng::seed_from_u64(12)).unwrap();
    (world, policy)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let (world, policy) = small_world();
    let mut rng = Rng::seed_from_u64(13);

    let dataset = gen_preference_dataset(&world, &policy, 32, 14).unwrap();
    let rm = RewardNet::init(world.features.clone(), &[16], 15);
    let (_, grads) = bt_loss_and_grads(&rm, &dataset.pairs, &world).unwrap();
    let flat = grads.flatten();
    let probes: Vec<usize> = (0..FD_PROBES)
        .map(|_| rng.random_range(0..flat.len()))
        .collect();
    let bt_err = fd_check(rm.params(), &flat, &probes, |p| {
        let mut probe = rm.clone();
        *probe.params_mut() = p.clone();
        bt_loss_and_grads(&probe, &dataset.pairs, &world).unwrap().0
    });

    // Surrogate sum_i w_i log pi(y_i | x_i) with arbitrary weights.
    let batch: Vec<(Prompt, Response, f64)> = (0..16)
        .map(|i| {
            let prompt = world.train_prompts[i % world.train_prompts.len()].clone();
            let response = policy.sample(&prompt, &mut rng).response;
            (prompt, response, rng.random_range(-2.0..2.0))
        })
        .collect();
    let mut g = Gradients::zeros_like(policy.params());
    for (p, r, w) in &batch {
        policy.accumulate_log_prob_grad(p, r, *w, &mut g).unwrap();
    }
    let flat = g.flatten();
    let probes: Vec<usize> = (0..FD_PROBES)
        .map(|_| rng.random_range(0..flat.len()))
        .collect();
    let pg_err = fd_check(policy.params(), &flat, &probes, |params| {
        batch
            .iter()
            .map(|(p, r, w)| w * policy.log_prob_under(params, p, r).unwrap())
            .sum()
    });

    let elapsed = start.elapsed();
    report(
        1,
        bt_err < FD_REL_TOL && pg_err < FD_REL_TOL && elapsed < FD_BUDGET,
        format!(
            "max rel err bt {bt_err:.2e}, policy gradient {pg_err:.2e} (tol {FD_REL_TOL:e}, {FD_PROBES} probes each), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Verdict {
    let logits = [0.3, -0.5, 1.1];
    let p = softmax(&logits, 1.0);
    // d/dtheta E[r] for a softmax bandit: p_j (r_j - E[r]).
    let reward = [1.0, -0.5, 0.25];
    let expected: f64 = p.iter().zip(reward).map(|(p, r)| p * r).sum();
    let analytic: Vec<f64> = (0..3).map(|j| p[j] * (reward[j] - expected)).collect();

    let mut rng = Rng::seed_from_u64(21);
    let groups = BANDIT_SAMPLES / BANDIT_GROUP;
    let mut per_group: Vec<[f64; 3]> = Vec::with_capacity(groups);
    for _ in 0..groups {
        let draws: Vec<usize> = (0..BANDIT_GROUP)
            .map(|_| categorical_sample(&logits, 1.0, &mut rng).unwrap().0)
            .collect();
        let rewards: Vec<f64> = draws.iter().map(|&a| reward[a]).collect();
        let adv = rloo_advantages(&rewards).unwrap();
        let mut g = [0.0; 3];
        for (&a, &v) in draws.iter().zip(&adv) {
            // d log p_a / d theta_j = 1[a = j] - p_j
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += v * (f64::from(u8::from(a == j)) - p[j]) / BANDIT_GROUP as f64;
            }
        }
        per_group.push(g);
    }
    let n = groups as f64;
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        let mean = per_group.iter().map(|g| g[j]).sum::<f64>() / n;
        let var = per_group.iter().map(|g| (g[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        worst = worst.max((mean - analytic[j]).abs() / (var / n).sqrt());
    }

    let mut rng = Rng::seed_from_u64(22);
    let zero_sums = (0..ZERO_SUM_VECTORS)
        .filter(|_| {
            let k = rng.random_range(2..=16);
            let scale = 10f64.powi(rng.random_range(-3..=3));
            let r: Vec<f64> = (0..k)
                .map(|_| rng.random_range(-1.0..1.0) * scale)
                .collect();
            rloo_advantages(&r).unwrap().iter().sum::<f64>() == 0.0
        })
        .count();

    report(
        2,
        worst <= BANDIT_SE && zero_sums == ZERO_SUM_VECTORS,
        format!(
            "worst coordinate {worst:.2} SE (limit {BANDIT_SE}), exact zero sums {zero_sums}/{ZERO_SUM_VECTORS}"
        ),
    )
}

struct Run {
    dir: PathBuf,
    summary: EvalSummary,
    elapsed: Duration,
}

fn reproduce(out: &Path, seed: u64) -> Result<Run, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_advrm"))
        .args(["reproduce", "--seed", &seed.to_string(), "--out"])
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("reproduce --seed {seed} exited with {status}"));
    }
    let dir = out.join(format!("seed-{seed}"));
    let text = fs::read_to_string(dir.join("summary.json")).map_err(|e| e.to_string())?;
    let summary = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(Run {
        dir,
        summary,
        elapsed: start.elapsed(),
    })
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Recomputes `r1`, `T(x)` and `z` for every retained attack from the saved models.
fn criterion_3(run: &Run) -> Verdict {
    let config = ExperimentConfig::load(&run.dir.join("config.toml")).unwrap();
    let world = build_world(&config.world, config.seed).unwrap();
    let sft: PolicyNet =
        serde_json::from_str(&fs::read_to_string(run.dir.join("sft.json")).unwrap()).unwrap();
    let reference: Vec<Sample> = reference_samples(
        &sft,
        &world.train_prompts,
        config.data.reference_samples,
        config.seed,
    );
    let load = |stem: &str| {
        let params = load_params(&run.dir.join(format!("{stem}.params.json"))).unwrap();
        let sidecar = serde_json::from_str(
            &fs::read_to_string(run.dir.join(format!("{stem}.sidecar.json"))).unwrap(),
        )
        .unwrap();
        RewardNet::from_parts(world.features.clone(), params, &sidecar).unwrap()
    };
    let (mut checked, mut bad, mut stale) = (0usize, 0usize, 0usize);
    for round in 0..=config.rounds {
        let retained: Vec<AdvSample> = jsonl(&run.dir.join(format!("retained_r{round}.jsonl")));
        let (rm1, rm2) = (
            load(&format!("rm_r{round}_m0")),
            load(&format!("rm_r{round}_m1")),
        );
        let lambda = config.attack.lambda;
        let us: Vec<f64> = reference
            .iter()
            .map(|s| {
                rm1.score(&s.prompt, &s.response, true).unwrap()
                    - lambda * rm2.score(&s.prompt, &s.response, true).unwrap()
            })
            .collect();
        let mu = us.iter().sum::<f64>() / us.len() as f64;
        let sd = (us.iter().map(|u| (u - mu).powi(2)).sum::<f64>() / us.len() as f64).sqrt();
        let mut cache = ThresholdCache::new();
        let mut thresholds = BTreeMap::new();
        for s in &retained {
            let prompt = world.prompt(s.prompt_id).unwrap();
            let t = *thresholds.entry(s.prompt_id).or_insert_with(|| {
                cache
                    .threshold_t(
                        prompt,
                        &sft,
                        &rm1,
                        config.attack.threshold_samples,
                        derive_seed(config.seed, "round", round as u64),
                    )
                    .unwrap()
            });
            let r1 = rm1.score(prompt, &s.response, true).unwrap();
            let r2 = rm2.score(prompt, &s.response, true).unwrap();
            let z = (r1 - lambda * r2 - mu) / sd;
            checked += 1;
            if !(r1 > t && z > Z_FILTER) {
                bad += 1;
            }
            if (r1 - s.r1).abs() > 1e-9 || (z - s.z).abs() > 1e-6 || (t - s.threshold).abs() > 1e-9
            {
                stale += 1;
            }
        }
    }
    report(
        3,
        checked > 0 && bad == 0 && stale == 0,
        format!("{checked} retained samples over all rounds, {bad} violate r1 > T(x) and z > {Z_FILTER}, {stale} disagree with stored scores"),
    )
}

fn criterion_4(runs: &[Run]) -> Verdict {
    let mut hacked = 0;
    let mut parts = Vec::new();
    for r in runs {
        let o = &r.summary.overoptimization;
        let baseline = r.summary.downstream("baseline").unwrap();
        let drop = o.best_gold - o.final_gold;
        let ok = o.steps >= 3 * (baseline.best_step + 1) && drop >= HACK_DROP;
        hacked += usize::from(ok);
        parts.push(format!(
            "seed {} drop {drop:.2} over {} steps",
            r.summary.seed, o.steps
        ));
    }
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    report(
        4,
        hacked * 3 >= runs.len() * 2 && slowest < HACK_BUDGET,
        format!(
            "{hacked}/{} seeds drop >= {HACK_DROP} [{}]; slowest full run {:.0}s",
            runs.len(),
            parts.join(", "),
            slowest.as_secs_f64()
        ),
    )
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_5(runs: &[Run]) -> Verdict {
    let attack = |m: &str| mean(runs.iter().map(|r| r.summary.attack(m).unwrap().strict));
    let (adv, tok, over) = (
        attack("adv_rm"),
        attack("token_perturbation"),
        attack("over_optimization"),
    );
    report(
        5,
        adv >= ADV_SUCCESS_MIN && adv - tok >= BASELINE_GAP_PP && adv - over >= BASELINE_GAP_PP,
        format!("3-seed mean strict success: adversarial {adv:.1}%, token perturbation {tok:.1}%, over-optimization {over:.1}%"),
    )
}

fn criterion_6(runs: &[Run]) -> Verdict {
    let mut robust = 0;
    let mut downstream = 0;
    let mut parts = Vec::new();
    for r in runs {
        let s = &r.summary;
        let last = s.rounds.iter().map(|x| x.round).max().unwrap();
        let (r0, r2) = (
            s.round(0).unwrap().strict,
            s.round(2.min(last)).unwrap().strict,
        );
        robust += usize::from(last >= 2 && r0 - r2 >= ROUND_DROP_PP);
        let (b, a) = (
            s.downstream("baseline").unwrap(),
            s.downstream("adv_rm").unwrap(),
        );
        downstream += usize::from(a.best_step > b.best_step && a.final_gold > b.final_gold);
        parts.push(format!(
            "seed {}: {r0:.0}% -> {r2:.0}%, best step {} vs {}, final gold {:.2} vs {:.2}",
            s.seed, a.best_step, b.best_step, a.final_gold, b.final_gold
        ));
    }
    report(
        6,
        robust == runs.len() && downstream * 3 >= runs.len() * 2,
        format!(
            "round drop >= {ROUND_DROP_PP}pp on {robust}/{n}, later and higher downstream gold on {downstream}/{n} [{}]",
            parts.join("; "),
            n = runs.len()
        ),
    )
}

fn criterion_7(runs: &[Run]) -> Verdict {
    let corr = |set: &str| {
        mean(
            runs.iter()
                .map(|r| r.summary.correlation(set).unwrap_or(f64::NAN)),
        )
    };
    let (sft, adv) = (corr("sft"), corr("sft_adv"));
    report(
        7,
        sft.abs() < CORR_SFT_MAX_ABS && adv < CORR_ADV_MAX,
        format!("3-seed mean pearson(U, gold): SFT {sft:.3}, SFT+adversarial {adv:.3}"),
    )
}

fn criterion_8(runs: &[Run]) -> Verdict {
    let abl = |m: &str| {
        mean(
            runs.iter()
                .map(|r| r.summary.ablation(m).map_or(f64::NAN, |x| x.strict)),
        )
    };
    let (full, nf, l1, nt) = (
        abl("full"),
        abl("no_filtering"),
        abl("lambda_1"),
        abl("no_threshold"),
    );
    report(
        8,
        full > nf && nf > l1 && l1 >= nt,
        format!("3-seed mean strict success: full {full:.1}, no filtering {nf:.1}, lambda 1 {l1:.1}, no threshold {nt:.1}"),
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let path = e.unwrap().path();
            (path.extension().is_some_and(|x| x == "csv")).then(|| {
                (
                    path.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&path).unwrap(),
                )
            })
        })
        .collect()
}

fn criterion_9(first: &Run, second: &Run) -> Verdict {
    let (a, b) = (csv_files(&first.dir), csv_files(&second.dir));
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    report(
        9,
        !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!(
            "{} metric CSVs compared byte for byte, {} differ {:?}",
            a.len(),
            differing.len(),
            differing
        ),
    )
}

fn main() -> ExitCode {
    // Criterion numbers on the command line select a subset; non-numeric
    // arguments (test-name filters, harness flags) are ignored.
    let mut selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    if selected.is_empty() {
        selected = (1..=9).collect();
    }
    let wants = |id: usize| selected.contains(&id);

    let mut verdicts = Vec::new();
    if wants(1) {
        verdicts.push(criterion_1());
    }
    if wants(2) {
        verdicts.push(criterion_2());
    }
    if (3..=9).any(wants) {
        let tmp = tempfile::tempdir().unwrap();
        match SEEDS
            .iter()
            .map(|&s| reproduce(tmp.path(), s))
            .collect::<Result<Vec<Run>, String>>()
        {
            Ok(runs) => {
                let checks: [(usize, &dyn Fn(&[Run]) -> Verdict); 6] = [
                    (3, &|r| criterion_3(&r[0])),
                    (4, &criterion_4),
                    (5, &criterion_5),
                    (6, &criterion_6),
                    (7, &criterion_7),
                    (8, &criterion_8),
                ];
                for (id, check) in checks {
                    if wants(id) {
                        verdicts.push(check(&runs));
                    }
                }
                if wants(9) {
                    match reproduce(&tmp.path().join("again"), 7) {
                        Ok(again) => verdicts.push(criterion_9(&runs[0], &again)),
                        Err(e) => verdicts.push(report(9, false, e)),
                    }
                }
            }
            Err(e) => {
                for id in (3..=9).filter(|&i| wants(i)) {
                    verdicts.push(report(id, false, e.clone()));
                }
            }
        }
    }

    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.pass).collect();
    println!(
        "{}/{} criteria passed",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    for v in &failed {
        eprintln!("criterion {} failed: {}", v.id, v.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
