use serde::{Deserialize, Serialize};

use super::{fit, FitConfig, FitReport, HoldoutPlan, MeanMetrics};
use crate::error::{Error, Result};
use crate::exec;
use crate::repr::{match_param_budget, Family, RepConfig, Representation};
use crate::video::Video;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: Family,
    pub params: usize,
    pub reference_params: usize,
    pub rel_diff: f64,
    pub eval_mean: Option<MeanMetrics>,
    pub train_mean: Option<MeanMetrics>,
    /// Why this family has no result.
    pub error: Option<String>,
    pub report: Option<FitReport>,
}

impl ComparisonRow {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn eval_psnr(&self) -> Option<f64> {
        self.eval_mean.map(|m| m.psnr_db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub schema_version: u32,
    pub reference: RepConfig,
    pub plan: HoldoutPlan,
    pub fit_config: FitConfig,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, family: Family) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.family == family)
    }

    /// `family,params,rel_diff,eval_psnr_db,eval_ssim,train_psnr_db,error`.
    /// One line per family: `family,params,rel_diff,ssim,psnr_db,status`.
    /// Failed fits keep their row with empty metrics and `failed` status.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("family,params,rel_diff,ssim,psnr_db,status\n");
        for r in &self.rows {
            let status = if r.succeeded() { "ok" } else { "failed" };
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.family,
                r.params,
                r.rel_diff,
                opt(r.eval_mean.and_then(|m| m.ssim)),
                opt(r.eval_psnr()),
                status
            ));
        }
        s
    }
}

fn run_family(video: &Video, reference: &RepConfig, family: Family, plan: &HoldoutPlan, cfg: &FitConfig) -> ComparisonRow {
    let m = match_param_budget(reference, family);
    let mut row = ComparisonRow {
        family,
        params: m.params,
        reference_params: m.reference_params,
        rel_diff: m.rel_diff,
        eval_mean: None,
        train_mean: None,
        error: None,
        report: None,
    };
    if !m.within_tolerance {
        row.error = Some(
            Error::BudgetViolation {
                family: family.to_string(),
                params: m.params,
                reference: m.reference_params,
                rel_diff: m.rel_diff,
            }
            .to_string(),
        );
        return row;
    }
    let result = Representation::new(m.config).and_then(|mut rep| fit(&mut rep, video, plan, cfg));
    match result {
        Ok(report) => {
            row.eval_mean = report.eval_mean;
            row.train_mean = Some(report.train_mean);
            row.report = Some(report);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Fit every family in `families` under the same plan and seed, each sized
/// to the parameter budget of the tri-plane `reference`.
///
/// Families that miss the budget or fail to fit are reported in their row
/// rather than aborting the comparison. Fits run concurrently unless
/// deterministic mode is on.
pub fn run_comparison(
    video: &Video,
    reference: &RepConfig,
    families: &[Family],
    plan: &HoldoutPlan,
    cfg: &FitConfig,
) -> Result<ComparisonTable> {
    if reference.family != Family::TriPlane {
        return Err(Error::InvalidArgument(format!(
            "the comparison reference must be a triplane config, got {}",
            reference.family
        )));
    }
    reference.validate()?;
    cfg.validate()?;
    let rows = exec::map_indices(families.len(), |i| run_family(video, reference, families[i], plan, cfg));
    Ok(ComparisonTable {
        schema_version: SCHEMA_VERSION,
        reference: reference.clone(),
        plan: plan.clone(),
        fit_config: *cfg,
        rows,
    })
}
