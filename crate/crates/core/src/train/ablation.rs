//! Four-variant ablation: every variant trained and evaluated under one seed and budget.

use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, identity_report, train, Sample, TrainConfig};
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::model::Variant;

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub param_count: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub report: MetricReport,
}

impl AblationRow {
    pub fn label(&self) -> &'static str {
        self.variant.label()
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    /// One row per variant, in [`Variant::ALL`] order.
    pub rows: Vec<AblationRow>,
    pub identity: MetricReport,
    pub seed: u64,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    variant: &'a str,
    label: &'a str,
    param_count: usize,
    steps: u64,
    final_loss: f64,
    mean_psnr_db: Option<f64>,
    mean_ssim: f64,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    seed: u64,
    identity_psnr_db: Option<f64>,
    identity_ssim: f64,
    rows: Vec<JsonRow<'a>>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Whether fusion with MSFF scores a higher mean PSNR than fusion at the last layer only.
    pub fn msff_helps(&self) -> Option<bool> {
        let with = self.row(Variant::Oucd)?.report.mean_psnr();
        let without = self.row(Variant::OucdNoMsff)?.report.mean_psnr();
        Some(with > without)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<22} {:>10} {:>7} {:>11} {:>9} {:>7}\n",
            "Method", "params", "steps", "final loss", "PSNR", "SSIM"
        );
        let _ = writeln!(
            out,
            "{:<22} {:>10} {:>7} {:>11} {:>9.3} {:>7.4}",
            "identity (y)",
            0,
            0,
            "-",
            self.identity.mean_psnr(),
            self.identity.mean_ssim()
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:>10} {:>7} {:>11.6} {:>9.3} {:>7.4}",
                r.label(),
                r.param_count,
                r.steps,
                r.final_loss,
                r.report.mean_psnr(),
                r.report.mean_ssim()
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let finite = |v: f64| v.is_finite().then_some(v);
        let report = JsonReport {
            seed: self.seed,
            identity_psnr_db: finite(self.identity.mean_psnr()),
            identity_ssim: self.identity.mean_ssim(),
            rows: self
                .rows
                .iter()
                .map(|r| JsonRow {
                    variant: r.variant.key(),
                    label: r.label(),
                    param_count: r.param_count,
                    steps: r.steps,
                    final_loss: r.final_loss,
                    mean_psnr_db: finite(r.report.mean_psnr()),
                    mean_ssim: r.report.mean_ssim(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&report).expect("report serializes")
    }
}

/// Trains each variant of `base` on `train_set` and evaluates it on `test_set`. Only the
/// variant differs between runs: seed, data order, budget and schedule are shared.
pub fn run_ablation(base: &TrainConfig, train_set: &[Sample], test_set: &[Sample]) -> Result<AblationReport> {
    run_ablation_with(base, train_set, test_set, |_| {})
}

/// [`run_ablation`] with a callback after each finished row.
pub fn run_ablation_with(
    base: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    let identity = identity_report(test_set)?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let outcome = train(base.clone().with_variant(variant), train_set)?;
        let row = AblationRow {
            variant,
            param_count: outcome.network.param_count(),
            steps: outcome.checkpoint.step,
            final_loss: outcome.log.last().map_or(f64::NAN, |l| l.loss as f64),
            report: evaluate(&outcome.network, test_set)?,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationReport { rows, identity, seed: base.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rain::RainParams;
    use crate::train::synthetic_samples;

    #[test]
    fn four_rows_in_table_order_under_one_budget() {
        let mut cfg = TrainConfig::default();
        cfg.max_steps = Some(1);
        let rain = RainParams::default().scaled_to(32, 32);
        let train_set = synthetic_samples(2, 32, 32, &rain, 0).unwrap();
        let test_set = synthetic_samples(1, 32, 32, &rain, 1).unwrap();
        let r = run_ablation(&cfg, &train_set, &test_set).unwrap();
        let labels: Vec<_> = r.rows.iter().map(|r| r.label()).collect();
        assert_eq!(labels, ["under complete UNet", "Overcomplete UNet", "OUCD w/o MSFF block", "OUCD w/ MSFF block"]);
        assert!(r.rows.iter().all(|row| row.steps == 1));
        assert!(r.row(Variant::Oucd).unwrap().param_count > r.row(Variant::OucdNoMsff).unwrap().param_count);
        assert!(r.msff_helps().is_some());

        let text = r.to_text();
        assert_eq!(text.lines().count(), 6);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<_> =
            json["rows"].as_array().unwrap().iter().map(|row| row["variant"].as_str().unwrap().to_string()).collect();
        assert_eq!(keys, ["undercomplete_only", "overcomplete_only", "oucd_no_msff", "oucd"]);
    }
}
