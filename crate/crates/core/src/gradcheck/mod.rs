//! Central-difference gradient checking.
//!
//! [`finite_diff_check`] compares tape gradients of a scalar function with
//! central differences, entry by entry. The relative error of an entry is
//! `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
//!
//! The suites in [`run_suite`] apply it to randomized instances of every
//! differentiable operation. Inputs to piecewise operations are kept at least
//! [`INTEGER_MARGIN`] away from their breakpoints.

mod cases;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{SeededRng, STREAM_CHECK};
use crate::tensor::{Precision, Scalar, Tensor, PRECISION};
use crate::SCHEMA_VERSION;

/// Randomized trials per checked operation.
pub const MIN_TRIALS: usize = 100;

/// Minimum distance of sampling and warping coordinates from integers.
pub const INTEGER_MARGIN: f64 = 0.05;

/// Outcome of one [`finite_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub entries: usize,
    pub max_rel_error: f64,
    /// Entries that needed a smaller step to agree (a breakpoint fell
    /// inside the first difference interval).
    pub refined: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn step_refinements(precision: Precision) -> &'static [f64] {
    match precision {
        Precision::F64 => &[0.1, 0.01],
        Precision::F32 => &[0.5, 0.25],
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    let value = v.data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    Ok(value)
}

fn analytic<F>(f: &F, params: &[Tensor], fault: Option<(&str, Scalar)>) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some((op, factor)) = fault {
        tape.inject_fault(op, factor);
    }
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(format!("p{i}"), p.clone()))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::InvalidArgument("gradient check needs a scalar function".into()));
    }
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

fn central<F>(f: &F, params: &mut [Tensor], t: usize, i: usize, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let x = params[t].data()[i];
    params[t].data_mut()[i] = x + h as Scalar;
    let up = evaluate(f, params);
    params[t].data_mut()[i] = x - h as Scalar;
    let down = evaluate(f, params);
    params[t].data_mut()[i] = x;
    Ok((up? - down?) / (2.0 * h))
}

/// Compare the tape gradient of the scalar function `f` with central
/// differences of step `epsilon` for every entry of every tensor in
/// `params`.
///
/// An entry whose first estimate disagrees is re-estimated with smaller
/// steps, so a breakpoint of a piecewise operation that happens to fall
/// within `epsilon` does not count as a failure; a wrong gradient disagrees
/// at every step size.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], epsilon: f64, tolerance: f64) -> Result<CheckResult>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_with_fault(&f, params, epsilon, tolerance, None)
}

fn check_with_fault<F>(
    f: &F,
    params: &[Tensor],
    epsilon: f64,
    tolerance: f64,
    fault: Option<(&str, Scalar)>,
) -> Result<CheckResult>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    evaluate(f, params)?;
    let grads = analytic(f, params, fault)?;
    let mut work = params.to_vec();
    let mut result = CheckResult {
        entries: 0,
        max_rel_error: 0.0,
        refined: 0,
        passed: true,
    };
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let a = g.data()[i] as f64;
            let mut err = relative_error(a, central(f, &mut work, t, i, epsilon)?);
            if err > tolerance {
                for &r in step_refinements(PRECISION) {
                    let e = relative_error(a, central(f, &mut work, t, i, epsilon * r)?);
                    err = err.min(e);
                    if err <= tolerance {
                        result.refined += 1;
                        break;
                    }
                }
            }
            result.entries += 1;
            result.max_rel_error = result.max_rel_error.max(err);
        }
    }
    result.passed = result.max_rel_error <= tolerance;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Every differentiable tape primitive.
    Primitives,
    /// Forward warping, the flow decoder and the appearance recurrence.
    Warp,
    /// Full render-and-loss passes of every representation family.
    End2end,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Primitives, Scope::Warp, Scope::End2end];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Primitives => "primitives",
            Scope::Warp => "warp",
            Scope::End2end => "end2end",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scope::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown gradcheck scope `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Scale the backward rule of the named operation (negative control).
    pub fault: Option<(String, f64)>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            trials: MIN_TRIALS,
            seed: 0,
            epsilon: PRECISION.fd_epsilon(),
            tolerance: PRECISION.gradcheck_tolerance(),
            fault: None,
        }
    }
}

/// Worst case over all trials of one operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: String,
    pub trials: usize,
    pub entries: usize,
    pub refined: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub schema_version: u32,
    pub scope: Scope,
    pub precision: Precision,
    pub epsilon: f64,
    pub tolerance: f64,
    pub ops: Vec<OpReport>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn op(&self, name: &str) -> Option<&OpReport> {
        self.ops.iter().find(|o| o.op == name)
    }
}

/// One randomized instance: parameter values and the scalar function.
pub(crate) struct Trial {
    pub params: Vec<Tensor>,
    pub f: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
}

pub(crate) type CaseFn = fn(&mut SeededRng) -> Result<Trial>;

/// Names of the operations checked by `scope`, in report order.
pub fn suite_ops(scope: Scope) -> Vec<&'static str> {
    cases::cases(scope).iter().map(|(name, _)| *name).collect()
}

pub fn run_suite(scope: Scope, opts: &SuiteOptions) -> Result<GradcheckReport> {
    if opts.trials == 0 || !(opts.epsilon > 0.0) || !(opts.tolerance > 0.0) {
        return Err(Error::InvalidArgument("gradcheck needs trials, epsilon and tolerance > 0".into()));
    }
    let cases = cases::cases(scope);
    let fault = opts.fault.as_ref().map(|(op, f)| (op.as_str(), *f as Scalar));
    let reports = exec::map_indices(cases.len(), |c| -> Result<OpReport> {
        let (name, make) = cases[c];
        let mut rng = SeededRng::new(opts.seed.wrapping_add(c as u64), STREAM_CHECK);
        let mut report = OpReport {
            op: name.to_string(),
            trials: 0,
            entries: 0,
            refined: 0,
            max_rel_error: 0.0,
            passed: true,
        };
        for _ in 0..opts.trials {
            let trial = make(&mut rng)?;
            let r = check_with_fault(&trial.f, &trial.params, opts.epsilon, opts.tolerance, fault)?;
            report.trials += 1;
            report.entries += r.entries;
            report.refined += r.refined;
            report.max_rel_error = report.max_rel_error.max(r.max_rel_error);
        }
        report.passed = report.max_rel_error <= opts.tolerance;
        Ok(report)
    });
    let ops = reports.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport {
        schema_version: SCHEMA_VERSION,
        scope,
        precision: PRECISION,
        epsilon: opts.epsilon,
        tolerance: opts.tolerance,
        passed: ops.iter().all(|o| o.passed),
        ops,
    })
}
