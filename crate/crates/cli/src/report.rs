//! Schema-versioned JSON report written next to every run.

use std::path::Path;

use anyhow::Context;
use qeraser_core::stats::ComparisonReport;
use qeraser_core::{ApparatusConfig, GatedHistogram, VisibilityFit};
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA: &str = "qeraser-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub label: String,
    pub seed: u64,
    pub n_pairs: u64,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub apparatus: ApparatusConfig,
    pub interarrival_mean_ns: f64,
    pub bins: usize,
    pub range: f64,
    pub alpha: f64,
    pub runs: Vec<RunEcho>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub name: String,
    pub gate: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl HistogramEntry {
    pub fn new(name: impl Into<String>, h: &GatedHistogram) -> Self {
        HistogramEntry {
            name: name.into(),
            gate: h.gate.label().to_string(),
            bin_edges: h.bin_edges.clone(),
            counts: h.counts.clone(),
            total: h.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub name: String,
    #[serde(flatten)]
    pub fit: VisibilityFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub name: String,
    #[serde(flatten)]
    pub report: ComparisonReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
    /// `|value − target| <= threshold`.
    #[serde(rename = "within")]
    Within,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub name: String,
    /// Where in the document `value` comes from.
    pub source: String,
    pub value: f64,
    pub op: Op,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub pass: bool,
}

impl VerdictEntry {
    pub fn new(name: impl Into<String>, source: impl Into<String>, value: f64, op: Op, threshold: f64) -> Self {
        let mut v = VerdictEntry {
            name: name.into(),
            source: source.into(),
            value,
            op,
            threshold,
            target: None,
            pass: false,
        };
        v.pass = v.evaluate();
        v
    }

    pub fn within(name: impl Into<String>, source: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        let mut v = Self::new(name, source, value, Op::Within, tol);
        v.target = Some(target);
        v.pass = v.evaluate();
        v
    }

    /// A yes/no property, recorded as 1 or 0.
    pub fn holds(name: impl Into<String>, source: impl Into<String>, ok: bool) -> Self {
        Self::new(name, source, if ok { 1.0 } else { 0.0 }, Op::Eq, 1.0)
    }

    /// Recomputes the outcome from the stored numbers.
    pub fn evaluate(&self) -> bool {
        match self.op {
            Op::Le => self.value <= self.threshold,
            Op::Ge => self.value >= self.threshold,
            Op::Gt => self.value > self.threshold,
            Op::Eq => self.value == self.threshold,
            Op::Within => self
                .target
                .is_some_and(|t| (self.value - t).abs() <= self.threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub command: String,
    pub config: ConfigEcho,
    pub histograms: Vec<HistogramEntry>,
    pub fits: Vec<FitEntry>,
    pub comparisons: Vec<ComparisonEntry>,
    pub verdicts: Vec<VerdictEntry>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub all_pass: bool,
}

impl ReportDocument {
    pub fn new(command: impl Into<String>, config: ConfigEcho) -> Self {
        ReportDocument {
            schema: REPORT_SCHEMA.to_string(),
            command: command.into(),
            config,
            histograms: Vec::new(),
            fits: Vec::new(),
            comparisons: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
            all_pass: true,
        }
    }

    pub fn histogram(&mut self, name: &str, h: &GatedHistogram) {
        self.histograms.push(HistogramEntry::new(name, h));
    }

    pub fn fit(&mut self, name: &str, fit: VisibilityFit) -> VisibilityFit {
        self.fits.push(FitEntry { name: name.to_string(), fit });
        fit
    }

    pub fn comparison(&mut self, name: &str, report: ComparisonReport) -> ComparisonReport {
        self.comparisons.push(ComparisonEntry {
            name: name.to_string(),
            report,
        });
        report
    }

    pub fn verdict(&mut self, v: VerdictEntry) -> bool {
        let pass = v.pass;
        self.all_pass &= pass;
        self.verdicts.push(v);
        pass
    }

    pub fn find_fit(&self, name: &str) -> Option<&VisibilityFit> {
        self.fits.iter().find(|f| f.name == name).map(|f| &f.fit)
    }

    pub fn find_comparison(&self, name: &str) -> Option<&ComparisonReport> {
        self.comparisons.iter().find(|c| c.name == name).map(|c| &c.report)
    }

    /// True when every stored verdict agrees with its own numbers and the
    /// summary flag agrees with the verdicts.
    pub fn is_self_consistent(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass == v.evaluate())
            && self.all_pass == self.verdicts.iter().all(|v| v.pass)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
