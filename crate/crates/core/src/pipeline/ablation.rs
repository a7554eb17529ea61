use std::fmt::Write as _;

use crate::error::Result;
use crate::metrics::EvalReport;
use crate::synthdata::Dataset;

use super::config::{Strategy, TrainConfig};
use super::train::{evaluate, train};

pub const STEP_SWEEP: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub config: TrainConfig,
    pub report: EvalReport,
}

/// The five ablation arms next to the full model, all sharing `base`'s seed.
pub fn ablation_arms(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let full = TrainConfig {
        no_gmf: false,
        no_tesa: false,
        no_lcr: false,
        no_kl: false,
        half: false,
        ..base.clone()
    };
    vec![
        ("full".into(), full.clone()),
        ("no_gmf".into(), TrainConfig { no_gmf: true, ..full.clone() }),
        ("no_tesa".into(), TrainConfig { no_tesa: true, ..full.clone() }),
        ("no_lcr".into(), TrainConfig { no_lcr: true, ..full.clone() }),
        ("no_kl".into(), TrainConfig { no_kl: true, ..full.clone() }),
        ("half".into(), TrainConfig { half: true, ..full }),
    ]
}

fn run_arm(name: String, cfg: TrainConfig, train_set: &Dataset, test: &Dataset) -> Result<AblationRow> {
    log::info!("arm={name} start=1");
    let outcome = train(train_set, &cfg)?;
    let report = evaluate(&outcome.model, test)?;
    log::info!("arm={name} srcc={:.6} rl2={:.6}", report.srcc, report.rl2);
    Ok(AblationRow {
        name,
        config: cfg,
        report,
    })
}

/// Step-count sweep on the full model. Reuses `known` for a step count already trained.
pub fn sweep_steps(
    base: &TrainConfig,
    steps: &[usize],
    train_set: &Dataset,
    test: &Dataset,
    known: Option<&AblationRow>,
) -> Result<Vec<AblationRow>> {
    steps
        .iter()
        .map(|&p| {
            let cfg = TrainConfig {
                steps: p,
                no_gmf: false,
                no_tesa: false,
                no_lcr: false,
                no_kl: false,
                half: false,
                ..base.clone()
            };
            let name = format!("steps_{p}");
            match known {
                Some(row) if row.config == cfg => Ok(AblationRow {
                    name,
                    config: cfg,
                    report: row.report.clone(),
                }),
                _ => run_arm(name, cfg, train_set, test),
            }
        })
        .collect()
}

/// Ablation matrix followed by the step sweep: `6 + |steps|` rows.
pub fn run_ablation(base: &TrainConfig, train_set: &Dataset, test: &Dataset) -> Result<Vec<AblationRow>> {
    let mut rows = ablation_arms(base)
        .into_iter()
        .map(|(name, cfg)| run_arm(name, cfg, train_set, test))
        .collect::<Result<Vec<_>>>()?;
    let sweep = sweep_steps(base, &STEP_SWEEP, train_set, test, rows.first())?;
    rows.extend(sweep);
    Ok(rows)
}

/// Trains both strategies from one base config.
pub fn compare_strategies(base: &TrainConfig, train_set: &Dataset, test: &Dataset) -> Result<Vec<AblationRow>> {
    [Strategy::TwoStage, Strategy::OneStage]
        .into_iter()
        .map(|strategy| {
            let cfg = TrainConfig {
                strategy,
                ..base.clone()
            };
            run_arm(strategy.as_str().to_string(), cfg, train_set, test)
        })
        .collect()
}

/// Tab-separated comparison table.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("arm\tsrcc\trl2\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.6}\t{:.6}", r.name, r.report.srcc, r.report.rl2);
    }
    out
}
