use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::pipeline::{Lab, STAGE_EVALUATE, STAGE_REPORT};
use super::summary::{DownstreamRow, EvalSummary, MethodRow};
use super::svg::{bar_chart, line_chart, scatter, Series};
use crate::error::{Error, Result};
use crate::eval::smooth;
use crate::policy_rl::StepMetrics;

pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    for r in rows {
        w.write_record(r)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn trace_csv(trace: &[StepMetrics]) -> Vec<Vec<String>> {
    let mut rows = vec![["step", "proxy", "gold", "length", "kl"]
        .map(String::from)
        .to_vec()];
    rows.extend(trace.iter().map(|m| {
        vec![
            m.step.to_string(),
            m.mean_train_reward.to_string(),
            m.mean_gold_reward.to_string(),
            m.mean_length.to_string(),
            m.mean_kl.to_string(),
        ]
    }));
    rows
}

fn read_columns(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let ctx = || path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(ctx(), e))?;
    let headers = r.headers().map_err(|e| Error::parse(ctx(), e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(ctx(), format!("no column {name}")))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::parse(ctx(), e))?;
            let num = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::parse(ctx(), e));
            Ok((num(ix)?, num(iy)?))
        })
        .collect()
}

fn method_table(out: &mut String, rows: &[MethodRow]) {
    out.push_str("| method | standard % | strict % | strict s.e. | n |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.1} | {:.1} | {:.1} | {} |",
            r.method, r.standard, r.strict, r.strict_se, r.n
        );
    }
}

fn downstream_table(out: &mut String, rows: &[DownstreamRow]) {
    out.push_str("| proxy | steps | best step | best gold | final gold | hacked |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.3} | {:.3} | {} |",
            r.method, r.steps, r.best_step, r.best_gold, r.final_gold, r.hacked
        );
    }
}

const TRAINED_ABLATIONS: [&str; 2] = ["lambda_1", "no_threshold"];

/// Markdown rendering of a summary; sections that were not run are marked.
pub fn render_markdown(s: &EvalSummary) -> String {
    let mut out = format!(
        "# Run report (seed {})\n\n## Attacks on the round-0 proxy\n\n",
        s.seed
    );
    method_table(&mut out, &s.attacks);
    out.push_str("\n## Adversarial rounds\n\n| round | strict % | s.e. | candidates | passed filter | pairs built | training pairs |\n|---|---|---|---|---|---|---|\n");
    for r in &s.rounds {
        let _ = writeln!(
            out,
            "| {} | {:.1} | {:.1} | {} | {} | {} | {} |",
            r.round,
            r.strict,
            r.strict_se,
            r.candidates,
            r.passed_filter,
            r.pairs_built,
            r.dataset_pairs
        );
    }
    out.push_str("\n## Ablations\n\n");
    method_table(&mut out, &s.ablations);
    for name in TRAINED_ABLATIONS {
        if s.ablation(name).is_none() {
            let _ = writeln!(out, "\n`{name}`: not run (disabled in the configuration).");
        }
    }
    out.push_str("\n## Disagreement against gold\n\n| set | n | pearson |\n|---|---|---|\n");
    for c in &s.correlations {
        let _ = writeln!(out, "| {} | {} | {:.3} |", c.set, c.n, c.pearson);
    }
    if s.correlation("sft_adv").is_none() {
        out.push_str("\n`sft_adv`: not available (no retained round-0 attacks).\n");
    }
    out.push_str("\n## Downstream optimisation\n\n");
    downstream_table(&mut out, std::slice::from_ref(&s.overoptimization));
    out.push('\n');
    downstream_table(&mut out, &s.downstream);
    if s.downstream("ens_mean").is_none() {
        out.push_str(
            "\nEnsemble and augmentation baselines: not run (disabled in the configuration).\n",
        );
    }
    out
}

impl Lab {
    /// CSV tables, SVG figures and a markdown report from the evaluation.
    pub fn report(&mut self) -> Result<()> {
        let s: EvalSummary = self.dir.read_json(STAGE_EVALUATE, "summary.json")?;
        let p = |name: &str| self.dir.path(name);
        write_rows(&p("table_attacks.csv"), &s.attacks)?;
        write_rows(&p("table_rounds.csv"), &s.rounds)?;
        write_rows(&p("table_ablations.csv"), &s.ablations)?;
        write_rows(&p("table_correlations.csv"), &s.correlations)?;
        let mut downstream = vec![s.overoptimization.clone()];
        downstream.extend(s.downstream.iter().cloned());
        write_rows(&p("table_downstream.csv"), &downstream)?;

        let window = self.config.eval.smoothing_window;
        let mut curves = Vec::new();
        for row in &s.downstream {
            let points = read_columns(&p(&format!("rlhf_{}.csv", row.method)), "step", "gold")?;
            let ys: Vec<f64> = smooth(&points.iter().map(|q| q.1).collect::<Vec<_>>(), window);
            curves.push(Series {
                name: row.method.clone(),
                points: points.iter().zip(ys).map(|(q, y)| (q.0, y)).collect(),
            });
        }
        self.dir.write(
            "fig_gold_curves.svg",
            &line_chart(
                "Gold reward during policy optimisation",
                "step",
                "gold (normalized)",
                &curves,
            ),
        )?;

        let bars: Vec<(String, f64)> = s
            .rounds
            .iter()
            .map(|r| (format!("round {}", r.round), r.strict))
            .collect();
        self.dir.write(
            "fig_rounds.svg",
            &bar_chart("Strict attack success by round", "strict success %", &bars),
        )?;

        let ctx = p("correlation_points.csv");
        let mut rdr =
            csv::Reader::from_path(&ctx).map_err(|e| Error::parse(ctx.display().to_string(), e))?;
        let mut sets: Vec<Series> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(ctx.display().to_string(), e))?;
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::parse(ctx.display().to_string(), e))
            };
            let (u, g) = (num(1)?, num(2)?);
            match sets.iter_mut().find(|s| s.name == rec[0]) {
                Some(s) => s.points.push((u, g)),
                None => sets.push(Series {
                    name: rec[0].to_string(),
                    points: vec![(u, g)],
                }),
            }
        }
        self.dir.write(
            "fig_uncertainty.svg",
            &scatter(
                "Ensemble disagreement against gold",
                "disagreement (std)",
                "gold (normalized)",
                &sets,
            ),
        )?;

        self.dir.write("report.md", &render_markdown(&s))?;
        self.dir.mark(STAGE_REPORT)
    }
}
