//! Chi-square and Kolmogorov–Smirnov comparisons, plus the sum-rule and
//! no-signaling checks built on them.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::engine::EventLog;
use crate::error::{Error, Result};
use crate::eventlog::signal_columns;
use crate::histogram::{histogram, Binning, Gate, GatedHistogram};

pub const DEFAULT_ALPHA: f64 = 0.01;
/// Minimum expected count per cell before neighbouring bins are merged.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticKind {
    ChiSquare,
    Ks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub statistic_name: StatisticKind,
    pub statistic_value: f64,
    /// Degrees of freedom (chi-square) or sample size (KS).
    pub dof: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub verdict: Verdict,
}

impl ComparisonReport {
    fn new(kind: StatisticKind, statistic: f64, dof: f64, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        ComparisonReport {
            statistic_name: kind,
            statistic_value: statistic,
            dof,
            p_value,
            alpha,
            verdict: verdict_for(p_value, alpha),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.verdict == Verdict::Consistent
    }
}

/// `p > alpha` is consistent; the boundary counts as a rejection.
pub fn verdict_for(p_value: f64, alpha: f64) -> Verdict {
    if p_value > alpha {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    }
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, dof: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    gamma_ur(0.5 * dof, 0.5 * statistic)
}

/// Groups consecutive bins, left to right, until each group's smallest
/// expected count reaches [`MIN_EXPECTED`]; a short tail joins the last group.
fn merge_groups(min_expected: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    let mut acc = 0.0;
    for (i, &e) in min_expected.iter().enumerate() {
        acc += e;
        if acc >= MIN_EXPECTED {
            groups.push(start..i + 1);
            start = i + 1;
            acc = 0.0;
        }
    }
    if start < min_expected.len() {
        match groups.last_mut() {
            Some(last) => last.end = min_expected.len(),
            None => groups.push(0..min_expected.len()),
        }
    }
    groups
}

/// Two-sample chi-square on a 2×k contingency table with pooled expectations.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], alpha: f64) -> Result<ComparisonReport> {
    if a.len() != b.len() {
        return Err(Error::BinningMismatch);
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::LowStatistics {
            total: na.min(nb),
            required: 1,
        });
    }
    let n = (na + nb) as f64;
    let (fa, fb) = (na as f64 / n, nb as f64 / n);
    let min_expected: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x + y) as f64 * fa.min(fb))
        .collect();
    let groups = merge_groups(&min_expected);
    let mut statistic = 0.0;
    for g in &groups {
        let ra: u64 = a[g.clone()].iter().sum();
        let rb: u64 = b[g.clone()].iter().sum();
        let pooled = (ra + rb) as f64;
        if pooled == 0.0 {
            continue;
        }
        let (ea, eb) = (pooled * fa, pooled * fb);
        statistic += (ra as f64 - ea).powi(2) / ea + (rb as f64 - eb).powi(2) / eb;
    }
    let dof = groups.len().saturating_sub(1).max(1) as f64;
    Ok(ComparisonReport::new(
        StatisticKind::ChiSquare,
        statistic,
        dof,
        chi_square_sf(statistic, dof),
        alpha,
    ))
}

/// One-sample chi-square of `observed` counts against bin `probabilities`.
pub fn chi_square_goodness_of_fit(
    observed: &[u64],
    probabilities: &[f64],
    alpha: f64,
) -> Result<ComparisonReport> {
    if observed.len() != probabilities.len() {
        return Err(Error::BinningMismatch);
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::LowStatistics { total: 0, required: 1 });
    }
    let mass: f64 = probabilities.iter().sum();
    let expected: Vec<f64> = probabilities.iter().map(|p| n as f64 * p / mass).collect();
    let groups = merge_groups(&expected);
    let mut statistic = 0.0;
    for g in &groups {
        let o: u64 = observed[g.clone()].iter().sum();
        let e: f64 = expected[g.clone()].iter().sum();
        statistic += (o as f64 - e).powi(2) / e;
    }
    let dof = groups.len().saturating_sub(1).max(1) as f64;
    Ok(ComparisonReport::new(
        StatisticKind::ChiSquare,
        statistic,
        dof,
        chi_square_sf(statistic, dof),
        alpha,
    ))
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{j−1} exp(−2j²λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against Uniform(0, 1).
pub fn ks_uniform(samples: &[f64], alpha: f64) -> Result<ComparisonReport> {
    if samples.is_empty() {
        return Err(Error::LowStatistics { total: 0, required: 1 });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let p = kolmogorov_q((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
    Ok(ComparisonReport::new(StatisticKind::Ks, d, n, p, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SumRuleMode {
    /// All three histograms come from one log: a partition, checked exactly.
    Exact,
    /// Histograms from different logs: two-sample chi-square.
    Statistical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumRuleReport {
    pub mode: SumRuleMode,
    /// Bins where `d1 + d2 != ungated` (exact mode only).
    pub differing_bins: usize,
    pub comparison: ComparisonReport,
}

impl SumRuleReport {
    pub fn holds(&self) -> bool {
        match self.mode {
            SumRuleMode::Exact => self.differing_bins == 0,
            SumRuleMode::Statistical => self.comparison.is_consistent(),
        }
    }
}

/// Checks that the D1- and D2-gated histograms add up to the ungated one.
pub fn sum_rule_check(
    d1: &GatedHistogram,
    d2: &GatedHistogram,
    ungated: &GatedHistogram,
    alpha: f64,
) -> Result<SumRuleReport> {
    if !d1.same_binning(d2) || !d1.same_binning(ungated) {
        return Err(Error::BinningMismatch);
    }
    let summed: Vec<u64> = d1.counts.iter().zip(&d2.counts).map(|(a, b)| a + b).collect();
    let comparison = chi_square_two_sample(&summed, &ungated.counts, alpha)?;
    let same_source = !ungated.source.is_empty()
        && d1.source == ungated.source
        && d2.source == ungated.source;
    if same_source {
        let differing_bins = summed
            .iter()
            .zip(&ungated.counts)
            .filter(|(a, b)| a != b)
            .count();
        let mut comparison = comparison;
        if differing_bins > 0 {
            comparison.verdict = Verdict::Inconsistent;
        }
        Ok(SumRuleReport {
            mode: SumRuleMode::Exact,
            differing_bins,
            comparison,
        })
    } else {
        Ok(SumRuleReport {
            mode: SumRuleMode::Statistical,
            differing_bins: 0,
            comparison,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoSignalingReport {
    pub comparison: ComparisonReport,
    /// Whether the `pair_id,t_signal,u_signal` text of both logs is identical.
    pub signal_columns_identical: bool,
}

/// Compares the ungated D0 record of a run resolved with the splitter in
/// against one resolved with it out.
pub fn no_signaling_test(
    log_in: &EventLog,
    log_out: &EventLog,
    binning: Binning,
    alpha: f64,
) -> Result<NoSignalingReport> {
    log_in.ensure_resolved()?;
    log_out.ensure_resolved()?;
    let h_in = histogram(log_in, Gate::Ungated, binning)?;
    let h_out = histogram(log_out, Gate::Ungated, binning)?;
    let comparison = chi_square_two_sample(&h_in.counts, &h_out.counts, alpha)?;
    let signal_columns_identical = signal_columns(log_in) == signal_columns(log_out);
    Ok(NoSignalingReport {
        comparison,
        signal_columns_identical,
    })
}
