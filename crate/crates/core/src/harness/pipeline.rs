use std::path::Path;

use log::info;

use super::artifacts::RunDir;
use super::config::ExperimentConfig;
use super::report::{trace_csv, write_csv};
use super::summary::{CorrelationRow, DownstreamRow, EvalSummary, MethodRow, RoundRow};
use crate::adv_pipeline::{
    build_adv_pairs, disagreement_reference, filter_candidates, train_adversarial_policy,
    train_ensemble, AdvDataset, AdvSample, AttackConfig, AttackTarget, RoundReport, ThresholdCache,
    ThresholdMode,
};
use crate::error::{Error, Result};
use crate::eval::{
    curve_from_trace, ensemble_objective, eval_target, evaluate_policy_attacks,
    hacking_curve_report, judge_responses, overoptimization_attack, pearson, rrm_augment,
    success_rate, token_perturbation_attack, AttackVerdict, EnsembleMode, HackingReport,
    PromptReferences, Selection, VerdictRecord,
};
use crate::policy_rl::{train_policy, PolicyNet, RewardFn, StepMetrics, TrainHooks};
use crate::reward_model::{
    disagreement_of_scores, train_rm, DisagreementMode, PairSource, PreferenceDataset, RewardNet,
};
use crate::rng::{derive_seed, stream};
use crate::scoring::{NormStats, Sample, Scorer};
use crate::synth_env::{
    build_world, gen_preference_dataset, make_sft_policy, reference_samples, Prompt, Response,
    World,
};

pub const STAGE_WORLD: &str = "gen-world";
pub const STAGE_POLICY: &str = "train-policy";
pub const STAGE_EVALUATE: &str = "evaluate";
pub const STAGE_REPORT: &str = "report";

pub fn stage_rm(round: usize) -> String {
    format!("train-rm-{round}")
}

pub fn stage_attack(round: usize) -> String {
    format!("attack-{round}")
}

pub fn stage_filter(round: usize) -> String {
    format!("filter-{round}")
}

pub fn stage_pairs(round: usize) -> String {
    format!("build-pairs-{round}")
}

fn rm_stem(round: usize, member: usize) -> String {
    format!("rm_r{round}_m{member}")
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| serde_json::to_string(x).expect("record serializes") + "\n")
        .collect()
}

fn from_jsonl<T: serde::de::DeserializeOwned>(text: &str, context: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse(context, e)))
        .collect()
}

/// A run directory plus the world it describes.
pub struct Lab {
    pub config: ExperimentConfig,
    pub dir: RunDir,
    pub world: World,
}

impl Lab {
    pub fn open(config: ExperimentConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let dir = RunDir::open(out, &config)?;
        let world = build_world(&config.world, config.seed)?;
        Ok(Self { config, dir, world })
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn reference(&self, sft: &PolicyNet) -> Vec<Sample> {
        reference_samples(
            sft,
            &self.world.train_prompts,
            self.config.data.reference_samples,
            self.seed(),
        )
    }

    /// SFT policy and reference samples, with gold calibrated on the latter.
    fn base(&mut self) -> Result<(PolicyNet, Vec<Sample>)> {
        let sft = self.dir.load_policy(STAGE_WORLD, "sft.json")?;
        let reference = self.reference(&sft);
        self.calibrate_gold(&reference)?;
        Ok((sft, reference))
    }

    fn calibrate_gold(&mut self, reference: &[Sample]) -> Result<()> {
        let g: Vec<f64> = reference
            .iter()
            .map(|s| self.world.gold.raw_score(&s.prompt, &s.response))
            .collect();
        self.world.gold.set_norm(NormStats::from_values(&g)?);
        Ok(())
    }

    pub fn gen_world(&mut self) -> Result<()> {
        let sft = make_sft_policy(&self.world, &self.config.sft, self.seed())?;
        let reference = self.reference(&sft);
        self.calibrate_gold(&reference)?;
        let dataset =
            gen_preference_dataset(&self.world, &sft, self.config.data.n_pairs, self.seed())?;
        self.dir.save_policy("sft.json", &sft)?;
        dataset.save(&self.dir.path("dataset.jsonl"))?;
        let prompts: Vec<&Prompt> = self.world.all_prompts().collect();
        self.dir.write_json("prompts.json", &prompts)?;
        self.dir
            .write_json("gold_norm.json", &self.world.gold.norm())?;
        info!("world ready: {} pairs", dataset.len());
        self.dir.mark(STAGE_WORLD)
    }

    /// Original pairs plus the adversarial pairs of every earlier round.
    fn dataset(&self, round: usize) -> Result<PreferenceDataset> {
        let mut ds = PreferenceDataset::from_jsonl(&self.dir.read(STAGE_WORLD, "dataset.jsonl")?)?;
        for r in 0..round {
            let pairs = PreferenceDataset::from_jsonl(
                &self
                    .dir
                    .read(&stage_pairs(r), &format!("pairs_r{r}.jsonl"))?,
            )?;
            ds.extend(pairs.pairs);
        }
        Ok(ds)
    }

    fn check_round(&self, round: usize) -> Result<()> {
        if round > self.config.rounds {
            return Err(Error::config(format!(
                "round {round} is beyond the configured last round {}",
                self.config.rounds
            )));
        }
        Ok(())
    }

    pub fn train_rm(&mut self, round: usize) -> Result<()> {
        self.check_round(round)?;
        let (_, reference) = self.base()?;
        let dataset = self.dataset(round)?;
        let members = train_ensemble(
            &dataset,
            &self.world,
            &self.config.rm,
            &self.config.ensemble,
            &reference,
            self.seed(),
            round,
        )?;
        for (k, m) in members.iter().enumerate() {
            self.dir.save_rm(&rm_stem(round, k), m)?;
        }
        self.dir.mark(&stage_rm(round))
    }

    pub fn ensemble(&self, round: usize) -> Result<Vec<RewardNet>> {
        (0..self.config.ensemble.size)
            .map(|k| {
                self.dir.load_rm(
                    &stage_rm(round),
                    &rm_stem(round, k),
                    self.world.features.clone(),
                )
            })
            .collect()
    }

    fn target<'a>(
        &self,
        members: &'a [RewardNet],
        sft: &PolicyNet,
        reference: &[Sample],
        lambda: f64,
        round: usize,
    ) -> Result<AttackTarget<'a>> {
        AttackTarget::prepare(
            &members[0],
            &members[1],
            lambda,
            sft,
            &self.world.train_prompts,
            reference,
            self.config.attack.threshold_samples,
            &mut ThresholdCache::new(),
            derive_seed(self.seed(), "round", round as u64),
        )
    }

    pub fn attack(&mut self, round: usize) -> Result<()> {
        self.check_round(round)?;
        let (sft, reference) = self.base()?;
        let members = self.ensemble(round)?;
        let target = self.target(&members, &sft, &reference, self.config.attack.lambda, round)?;
        let run = train_adversarial_policy(
            &self.world,
            &sft,
            &target,
            &self.config.attack_rl,
            &self.config.attack,
            derive_seed(self.seed(), "round", round as u64),
        )?;
        self.dir
            .save_policy(&format!("attack_r{round}.json"), &run.policy)?;
        self.dir.write(
            &format!("candidates_r{round}.jsonl"),
            &jsonl(&run.candidates),
        )?;
        write_csv(
            &self.dir.path(&format!("attack_trace_r{round}.csv")),
            &trace_csv(&run.trace),
        )?;
        let dataset = self.dataset(round)?;
        let report = RoundReport {
            round,
            dataset_pairs: dataset.len(),
            adversarial_pairs_in: dataset.count_source(PairSource::Adversarial),
            candidates: run.candidates.len(),
            passed_filter: run.candidates.iter().filter(|c| c.passed_filter).count(),
            retained: 0,
            pairs_built: 0,
            attack_failed: false,
            dominance_violations: run.dominance_violations.len(),
        };
        self.dir
            .write_json(&format!("round_r{round}.json"), &report)?;
        self.dir.mark(&stage_attack(round))
    }

    fn round_report(&self, stage: &str, round: usize) -> Result<RoundReport> {
        self.dir.read_json(stage, &format!("round_r{round}.json"))
    }

    pub fn filter(&mut self, round: usize) -> Result<()> {
        let stage = stage_attack(round);
        let candidates: Vec<AdvSample> = from_jsonl(
            &self
                .dir
                .read(&stage, &format!("candidates_r{round}.jsonl"))?,
            "candidates",
        )?;
        let mut report = self.round_report(&stage, round)?;
        let retained = match filter_candidates(&candidates, self.config.attack.filtering) {
            Ok(adv) => adv,
            Err(Error::AttackFailed(msg)) => {
                log::warn!("round {round}: attack failed ({msg})");
                report.attack_failed = true;
                AdvDataset::default()
            }
            Err(e) => return Err(e),
        };
        report.retained = retained.len();
        self.dir
            .write(&format!("retained_r{round}.jsonl"), &retained.to_jsonl())?;
        self.dir
            .write_json(&format!("round_r{round}.json"), &report)?;
        self.dir.mark(&stage_filter(round))
    }

    fn retained(&self, round: usize) -> Result<Vec<AdvSample>> {
        from_jsonl(
            &self
                .dir
                .read(&stage_filter(round), &format!("retained_r{round}.jsonl"))?,
            "retained candidates",
        )
    }

    pub fn build_pairs(&mut self, round: usize) -> Result<()> {
        let mut report = self.round_report(&stage_filter(round), round)?;
        let samples = self.retained(round)?;
        let pairs = if samples.is_empty() || !self.config.attack.filtering {
            Vec::new()
        } else {
            let (sft, reference) = self.base()?;
            let members = self.ensemble(round)?;
            let target =
                self.target(&members, &sft, &reference, self.config.attack.lambda, round)?;
            let adv = AdvDataset {
                samples,
                filtered: true,
            };
            build_adv_pairs(
                &adv,
                &self.world,
                &sft,
                &target,
                self.config.attack.pair_budget,
                derive_seed(self.seed(), "round", round as u64),
            )?
        };
        report.pairs_built = pairs.len();
        PreferenceDataset::new(pairs).save(&self.dir.path(&format!("pairs_r{round}.jsonl")))?;
        self.dir
            .write_json(&format!("round_r{round}.json"), &report)?;
        self.dir.mark(&stage_pairs(round))
    }

    /// Trains the round's ensemble, attacks it, filters and builds pairs.
    pub fn round(&mut self, round: usize) -> Result<()> {
        self.check_round(round)?;
        if round > 0 {
            let prev = self.round_report(&stage_pairs(round - 1), round - 1)?;
            if prev.attack_failed {
                return Err(Error::AttackFailed(format!(
                    "round {} produced no adversarial pairs; round {round} would repeat it",
                    round - 1
                )));
            }
        }
        self.train_rm(round)?;
        self.attack(round)?;
        self.filter(round)?;
        self.build_pairs(round)
    }

    fn rlhf(
        &self,
        sft: &PolicyNet,
        reward: &dyn RewardFn,
    ) -> Result<(PolicyNet, Vec<StepMetrics>)> {
        let mut policy = sft.clone();
        let trace = train_policy(
            &mut policy,
            reward,
            &self.world.train_prompts,
            &self.config.rlhf,
            self.rlhf_seed(),
            TrainHooks {
                gold: Some(&self.world.gold),
                ..Default::default()
            },
        )?;
        Ok((policy, trace))
    }

    fn rlhf_seed(&self) -> u64 {
        derive_seed(self.seed(), "rlhf", 0)
    }

    fn hacking(&self, trace: &[StepMetrics]) -> Result<HackingReport> {
        hacking_curve_report(
            &curve_from_trace(trace),
            self.config.eval.hacking_margin,
            self.config.eval.smoothing_window,
        )
    }

    /// Policy optimisation against the round-0 proxy.
    pub fn train_policy(&mut self) -> Result<()> {
        let (sft, _) = self.base()?;
        let members = self.ensemble(0)?;
        let rm1 = &members[0];
        let reward = |p: &Prompt, r: &Response| rm1.score(p, r, true).unwrap_or(f64::NAN);
        let (policy, trace) = self.rlhf(&sft, &reward)?;
        self.dir.save_policy("policy_baseline.json", &policy)?;
        write_csv(&self.dir.path("rlhf_baseline.csv"), &trace_csv(&trace))?;
        self.dir.write("rlhf_baseline.jsonl", &jsonl(&trace))?;
        self.dir.mark(STAGE_POLICY)
    }

    pub fn evaluate(&mut self) -> Result<EvalSummary> {
        let (sft, reference) = self.base()?;
        let cfg = self.config.clone();
        let seed = self.seed();
        let eval_seed = derive_seed(seed, "eval", 0);
        let prompts = self.world.eval_prompts.clone();
        let gold = &self.world.gold;
        let mut verdicts: Vec<VerdictRecord> = Vec::new();
        let mut record = |method: &str, ids: &[usize], vs: &[AttackVerdict]| {
            verdicts.extend(
                ids.iter()
                    .zip(vs)
                    .map(|(id, v)| VerdictRecord::new(*id, method, v)),
            );
        };
        let ids: Vec<usize> = prompts.iter().map(|p| p.id).collect();
        let rates = |vs: &[AttackVerdict]| -> Result<_> {
            let standard: Vec<bool> = vs.iter().map(|v| v.standard_success).collect();
            let strict: Vec<bool> = vs.iter().map(|v| v.strict_success).collect();
            Ok((success_rate(&standard)?, success_rate(&strict)?))
        };

        let mut rounds = Vec::new();
        let mut attacks = Vec::new();
        let mut ablations = Vec::new();
        let ensembles = (0..=cfg.rounds)
            .map(|r| self.ensemble(r))
            .collect::<Result<Vec<_>>>()?;
        let refs0 = PromptReferences::build(
            &sft,
            &ensembles[0][0],
            gold,
            &prompts,
            cfg.eval.reference_samples,
            eval_seed,
        )?;
        for (r, members) in ensembles.iter().enumerate() {
            let report = self.round_report(&stage_attack(r), r)?;
            let policy = self
                .dir
                .load_policy(&stage_attack(r), &format!("attack_r{r}.json"))?;
            let refs = if r == 0 {
                refs0.clone()
            } else {
                PromptReferences::build(
                    &sft,
                    &members[0],
                    gold,
                    &prompts,
                    cfg.eval.reference_samples,
                    eval_seed,
                )?
            };
            let unc =
                disagreement_reference(&members[0], &members[1], cfg.attack.lambda, &reference)?;
            let target = eval_target(&members[0], &members[1], cfg.attack.lambda, &refs, unc)?;
            let judged = evaluate_policy_attacks(
                &policy,
                &prompts,
                &target,
                gold,
                &refs,
                cfg.eval.attacks_per_prompt,
                Selection::Filtered,
                eval_seed,
            )?;
            let vs: Vec<AttackVerdict> = judged.iter().map(|(_, v)| *v).collect();
            record(&format!("adv_rm_round{r}"), &ids, &vs);
            let (standard, strict) = rates(&vs)?;
            rounds.push(RoundRow::new(&report, standard, strict));
            if r == 0 {
                attacks.push(MethodRow::new("adv_rm", standard, strict));
                ablations.push(MethodRow::new("full", standard, strict));
                let single = evaluate_policy_attacks(
                    &policy,
                    &prompts,
                    &target,
                    gold,
                    &refs,
                    1,
                    Selection::HighestU,
                    eval_seed,
                )?;
                let vs: Vec<AttackVerdict> = single.iter().map(|(_, v)| *v).collect();
                record("no_filtering", &ids, &vs);
                let (standard, strict) = rates(&vs)?;
                ablations.push(MethodRow::new("no_filtering", standard, strict));
            }
        }

        let rm1 = &ensembles[0][0];
        let perturbed = prompts
            .iter()
            .map(|p| {
                let base = &refs0.get(p.id)?.response;
                token_perturbation_attack(
                    p,
                    base,
                    rm1,
                    self.world.vocab(),
                    cfg.eval.perturb_variants,
                    cfg.eval.perturb_edits,
                    eval_seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let vs = judge_responses(&prompts, &perturbed, rm1, gold, &refs0)?;
        record("token_perturbation", &ids, &vs);
        let (standard, strict) = rates(&vs)?;
        attacks.push(MethodRow::new("token_perturbation", standard, strict));

        let baseline_policy = self.dir.load_policy(STAGE_POLICY, "policy_baseline.json")?;
        let baseline_trace: Vec<StepMetrics> = from_jsonl(
            &self.dir.read(STAGE_POLICY, "rlhf_baseline.jsonl")?,
            "baseline trace",
        )?;
        let baseline = self.hacking(&baseline_trace)?;
        let over = overoptimization_attack(
            &self.world,
            &sft,
            rm1,
            &cfg.rlhf,
            Some(baseline.best_step),
            Some((&baseline_policy, &baseline_trace)),
            self.rlhf_seed(),
        )?;
        let mut rng = stream(eval_seed, "eval/overopt", 0);
        let responses: Vec<Response> = prompts
            .iter()
            .map(|p| over.policy.sample(p, &mut rng).response)
            .collect();
        let vs = judge_responses(&prompts, &responses, rm1, gold, &refs0)?;
        record("over_optimization", &ids, &vs);
        let (standard, strict) = rates(&vs)?;
        attacks.push(MethodRow::new("over_optimization", standard, strict));
        let over_trace = &over.trace[..over.steps.min(over.trace.len())];
        write_csv(
            &self.dir.path("overoptimization.csv"),
            &trace_csv(over_trace),
        )?;
        let overoptimization =
            DownstreamRow::new("over_optimization", over.steps, &self.hacking(over_trace)?);

        if cfg.eval.ablations {
            let m0 = &ensembles[0];
            for (name, attack) in [
                (
                    "lambda_1",
                    AttackConfig {
                        lambda: 1.0,
                        ..cfg.attack.clone()
                    },
                ),
                (
                    "no_threshold",
                    AttackConfig {
                        threshold_mode: ThresholdMode::Disabled,
                        ..cfg.attack.clone()
                    },
                ),
            ] {
                let train_target = self.target(m0, &sft, &reference, attack.lambda, 0)?;
                let run = train_adversarial_policy(
                    &self.world,
                    &sft,
                    &train_target,
                    &cfg.attack_rl,
                    &attack,
                    derive_seed(seed, "round", 0),
                )?;
                let unc = disagreement_reference(&m0[0], &m0[1], attack.lambda, &reference)?;
                let target = eval_target(&m0[0], &m0[1], attack.lambda, &refs0, unc)?;
                let judged = evaluate_policy_attacks(
                    &run.policy,
                    &prompts,
                    &target,
                    gold,
                    &refs0,
                    cfg.eval.attacks_per_prompt,
                    Selection::Filtered,
                    eval_seed,
                )?;
                let vs: Vec<AttackVerdict> = judged.iter().map(|(_, v)| *v).collect();
                record(name, &ids, &vs);
                let (standard, strict) = rates(&vs)?;
                ablations.push(MethodRow::new(name, standard, strict));
            }
        }

        let correlations = self.correlations(&ensembles[0], &sft)?;

        let mut downstream = vec![DownstreamRow::new(
            "baseline",
            cfg.rlhf.max_steps,
            &baseline,
        )];
        let last = &ensembles[cfg.rounds][0];
        let mut run_downstream = |lab: &Self, name: &str, reward: &dyn RewardFn| -> Result<()> {
            let (_, trace) = lab.rlhf(&sft, reward)?;
            write_csv(
                &lab.dir.path(&format!("rlhf_{name}.csv")),
                &trace_csv(&trace),
            )?;
            downstream.push(DownstreamRow::new(
                name,
                cfg.rlhf.max_steps,
                &lab.hacking(&trace)?,
            ));
            Ok(())
        };
        run_downstream(self, "adv_rm", &|p: &Prompt, r: &Response| {
            last.score(p, r, true).unwrap_or(f64::NAN)
        })?;
        if cfg.eval.downstream_baselines {
            let m0: Vec<&RewardNet> = ensembles[0].iter().collect();
            let lambda = cfg.eval.ensemble_lambda;
            for (name, mode) in [
                ("ens_mean", EnsembleMode::Mean),
                ("ens_std", EnsembleMode::MeanMinusStd),
            ] {
                run_downstream(self, name, &|p: &Prompt, r: &Response| {
                    ensemble_objective(&m0, p, r, mode, lambda).unwrap_or(f64::NAN)
                })?;
            }
            let original = self.dataset(0)?;
            let augmented = rrm_augment(&original, cfg.eval.rrm_multiplier, &self.world, seed)?;
            let rrm = train_rm(
                &augmented,
                self.world.features.clone(),
                &self.world,
                &cfg.rm,
                derive_seed(seed, "rrm", 0),
                &reference,
            )?;
            run_downstream(self, "rrm", &|p: &Prompt, r: &Response| {
                rrm.score(p, r, true).unwrap_or(f64::NAN)
            })?;
        }

        let summary = EvalSummary {
            seed,
            attacks,
            rounds,
            ablations,
            correlations,
            overoptimization,
            downstream,
        };
        self.dir.write("verdicts.jsonl", &jsonl(&verdicts))?;
        self.dir.write_json("summary.json", &summary)?;
        self.dir.mark(STAGE_EVALUATE)?;
        Ok(summary)
    }

    /// Correlation between ensemble disagreement and gold on SFT samples, then
    /// on SFT samples plus retained round-0 attacks.
    fn correlations(&self, members: &[RewardNet], sft: &PolicyNet) -> Result<Vec<CorrelationRow>> {
        let n = self.config.eval.correlation_samples;
        let sft_set = reference_samples(
            sft,
            &self.world.train_prompts,
            n,
            derive_seed(self.seed(), "eval/corr", 0),
        );
        let adv = self.retained(0)?;
        let step = (adv.len() / n).max(1);
        let adv_set: Vec<Sample> =
            adv.iter()
                .step_by(step)
                .take(n)
                .map(|s| {
                    let prompt = self.world.prompt(s.prompt_id).ok_or_else(|| {
                        Error::state(format!("unknown prompt id {}", s.prompt_id))
                    })?;
                    Ok(Sample {
                        prompt: prompt.clone(),
                        response: s.response.clone(),
                    })
                })
                .collect::<Result<_>>()?;
        let point = |s: &Sample| -> Result<(f64, f64)> {
            let scores = members
                .iter()
                .map(|m| m.score(&s.prompt, &s.response, true))
                .collect::<Result<Vec<_>>>()?;
            let u = disagreement_of_scores(&scores, DisagreementMode::Std, None)?;
            Ok((u, self.world.gold.score(&s.prompt, &s.response, true)?))
        };
        let sft_points = sft_set.iter().map(point).collect::<Result<Vec<_>>>()?;
        let adv_points = adv_set.iter().map(point).collect::<Result<Vec<_>>>()?;
        let rows: Vec<(String, f64, f64)> = sft_points
            .iter()
            .map(|(u, g)| ("sft".to_string(), *u, *g))
            .chain(
                adv_points
                    .iter()
                    .map(|(u, g)| ("adversarial".to_string(), *u, *g)),
            )
            .collect();
        let mut csv = vec![vec!["set".to_string(), "u".to_string(), "gold".to_string()]];
        csv.extend(
            rows.iter()
                .map(|(s, u, g)| vec![s.clone(), u.to_string(), g.to_string()]),
        );
        write_csv(&self.dir.path("correlation_points.csv"), &csv)?;
        let (u, g): (Vec<f64>, Vec<f64>) = sft_points.iter().copied().unzip();
        let mut out = vec![CorrelationRow {
            set: "sft".into(),
            n: u.len(),
            pearson: pearson(&u, &g)?,
        }];
        if !adv_points.is_empty() {
            let (u, g): (Vec<f64>, Vec<f64>) =
                sft_points.iter().chain(&adv_points).copied().unzip();
            out.push(CorrelationRow {
                set: "sft_adv".into(),
                n: u.len(),
                pearson: pearson(&u, &g)?,
            });
        }
        Ok(out)
    }

    pub fn summary(&self) -> Result<EvalSummary> {
        self.dir.read_json(STAGE_EVALUATE, "summary.json")
    }

    /// Every stage in order.
    pub fn reproduce(&mut self) -> Result<EvalSummary> {
        self.gen_world()?;
        for r in 0..=self.config.rounds {
            self.round(r)?;
        }
        self.train_policy()?;
        let summary = self.evaluate()?;
        self.report()?;
        Ok(summary)
    }
}
