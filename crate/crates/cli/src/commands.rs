//! Batch subcommands: simulate, analyse, write artifacts, judge.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use qeraser_core::amplitude::DensityModel;
use qeraser_core::eventlog::signal_columns;
use qeraser_core::stats::{
    chi_square_goodness_of_fit, chi_square_two_sample, no_signaling_test, sum_rule_check, DEFAULT_ALPHA,
};
use qeraser_core::{
    fringe_visibility, gate_coincidences, histogram, phase_shift_estimate, run_experiment, run_idler_phase,
    run_signal_phase, ApparatusConfig, Binning, CoincidenceWindow, DelayedChoicePolicy, EventLog, Gate,
    GatedHistogram, PartialLog, RunConfig,
};

use crate::args::{CommonArgs, Phase2Args, Preset, RunArgs};
use crate::report::{ConfigEcho, Op, ReportDocument, RunEcho, VerdictEntry};

const INTERARRIVAL_MEAN_NS: f64 = 1000.0;
pub const PHASE1_LOG: &str = "phase1.log";
pub const PHASE1_HIST: &str = "phase1_hist_ungated.csv";

/// Where a command left its report and whether every verdict passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub report: PathBuf,
    pub all_pass: bool,
}

/// Seed of the independent comparison run paired with `seed`.
pub fn reference_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn policy_for(bs_in: bool) -> DelayedChoicePolicy {
    if bs_in {
        DelayedChoicePolicy::AlwaysIn
    } else {
        DelayedChoicePolicy::AlwaysOut
    }
}

fn policy_label(bs_in: bool) -> &'static str {
    if bs_in {
        "always-in"
    } else {
        "always-out"
    }
}

fn output_dir(root: &Path, name: &str) -> anyhow::Result<PathBuf> {
    let dir = root.join(name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_csv(dir: &Path, name: &str, h: &GatedHistogram) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, h.to_csv()).with_context(|| format!("writing {}", path.display()))
}

fn echo(cfg: &ApparatusConfig, binning: Binning, runs: Vec<RunEcho>) -> ConfigEcho {
    ConfigEcho {
        apparatus: *cfg,
        interarrival_mean_ns: INTERARRIVAL_MEAN_NS,
        bins: binning.bins,
        range: binning.range,
        alpha: DEFAULT_ALPHA,
        runs,
    }
}

fn simulate(cfg: &ApparatusConfig, n: u64, seed: u64, bs_in: bool) -> anyhow::Result<EventLog> {
    let run = RunConfig::new(*cfg, n, seed, policy_for(bs_in));
    Ok(run_experiment(&run)?)
}

fn finish(doc: &ReportDocument, dir: &Path, name: &str) -> anyhow::Result<Outcome> {
    let report = dir.join(name);
    doc.write(&report)?;
    Ok(Outcome {
        report,
        all_pass: doc.all_pass,
    })
}

pub fn cmd_run(args: &RunArgs) -> anyhow::Result<Vec<Outcome>> {
    let common = &args.common;
    match args.preset {
        Preset::Fig1 => Ok(vec![gated_preset(common, false, "fig1")?]),
        Preset::Fig3 => Ok(vec![gated_preset(common, true, "fig3")?]),
        Preset::Fig2 => Ok(vec![fig2(common)?]),
        Preset::Nosignal => Ok(vec![cmd_nosignal(common)?]),
        Preset::Redsox => {
            let mut out = vec![cmd_redsox_phase1(common)?];
            for choice in [true, false] {
                out.push(cmd_redsox_phase2(&Phase2Args {
                    choice,
                    checkpoint: None,
                    output: common.output.clone(),
                })?);
            }
            Ok(out)
        }
    }
}

/// Coincidence-gated analysis with the D1/D2 views, plus the lossless-gating check.
struct GatedViews {
    ungated: GatedHistogram,
    d1: GatedHistogram,
    d2: GatedHistogram,
}

fn gated_views(log: &EventLog, binning: Binning, doc: &mut ReportDocument) -> anyhow::Result<GatedViews> {
    let cc = gate_coincidences(log, &CoincidenceWindow::default())?;
    doc.verdict(VerdictEntry::new(
        "coincidence mismatches",
        "coincidence counter",
        cc.mismatched() as f64,
        Op::Eq,
        0.0,
    ));
    doc.verdict(VerdictEntry::new(
        "coincidence recovery fraction",
        "coincidence counter",
        cc.matched_fraction(),
        Op::Eq,
        1.0,
    ));
    let views = GatedViews {
        ungated: histogram(log, Gate::Ungated, binning)?,
        d1: qeraser_core::histogram::histogram_coincident(log, &cc, Gate::D1, binning),
        d2: qeraser_core::histogram::histogram_coincident(log, &cc, Gate::D2, binning),
    };
    doc.histogram("ungated", &views.ungated);
    doc.histogram("d1", &views.d1);
    doc.histogram("d2", &views.d2);
    Ok(views)
}

fn write_views(dir: &Path, prefix: &str, v: &GatedViews) -> anyhow::Result<()> {
    write_csv(dir, &format!("{prefix}hist_ungated.csv"), &v.ungated)?;
    write_csv(dir, &format!("{prefix}hist_d1.csv"), &v.d1)?;
    write_csv(dir, &format!("{prefix}hist_d2.csv"), &v.d2)
}

/// Fringe verdicts for a resolved run: present with the splitter in, absent without.
fn fringe_verdicts(
    doc: &mut ReportDocument,
    views: &GatedViews,
    cfg: &ApparatusConfig,
) -> anyhow::Result<()> {
    let v1 = doc.fit("d1", fringe_visibility(&views.d1, cfg)?).visibility;
    let v2 = doc.fit("d2", fringe_visibility(&views.d2, cfg)?).visibility;
    if cfg.beam_splitter_in {
        doc.verdict(VerdictEntry::new("D1-gated visibility", "fits.d1.visibility", v1, Op::Ge, 0.95));
        doc.verdict(VerdictEntry::new("D2-gated visibility", "fits.d2.visibility", v2, Op::Ge, 0.95));
        let shift = phase_shift_estimate(&views.d1, &views.d2, cfg)?;
        doc.notes.push(format!(
            "phase shift D2 relative to D1: {:.5} ± {:.5} period",
            shift.periods, shift.standard_error
        ));
        doc.verdict(VerdictEntry::within(
            "D1/D2 phase shift (periods)",
            "(fits.d2.phase - fits.d1.phase) / 2π mod 1",
            shift.periods,
            0.5,
            0.02,
        ));
        let sum = sum_rule_check(&views.d1, &views.d2, &views.ungated, DEFAULT_ALPHA)?;
        doc.verdict(VerdictEntry::new(
            "sum rule: bins where d1 + d2 != ungated",
            "histograms",
            sum.differing_bins as f64,
            Op::Eq,
            0.0,
        ));
    } else {
        doc.verdict(VerdictEntry::new("D1-gated visibility", "fits.d1.visibility", v1, Op::Le, 0.05));
        doc.verdict(VerdictEntry::new("D2-gated visibility", "fits.d2.visibility", v2, Op::Le, 0.05));
    }
    Ok(())
}

fn gated_preset(args: &CommonArgs, bs_in: bool, name: &str) -> anyhow::Result<Outcome> {
    let cfg = args.apparatus()?.with_beam_splitter(bs_in);
    let binning = args.binning(&cfg)?;
    let dir = output_dir(&args.output.out_dir, name)?;
    let log = simulate(&cfg, args.pairs, args.seed, bs_in)?;
    log.write_file(dir.join("events.log"))?;

    let runs = vec![RunEcho {
        label: name.into(),
        seed: args.seed,
        n_pairs: args.pairs,
        policy: policy_label(bs_in).into(),
    }];
    let mut doc = ReportDocument::new(format!("run --preset {name}"), echo(&cfg, binning, runs));
    let views = gated_views(&log, binning, &mut doc)?;
    write_views(&dir, "", &views)?;
    fringe_verdicts(&mut doc, &views, &cfg)?;

    if !bs_in {
        let model = DensityModel::new(&cfg)?;
        let probs = binning.integrate_bins(|u| model.marginal_normalized(u).unwrap_or(0.0));
        let gof = doc.comparison(
            "ungated vs analytic envelope",
            chi_square_goodness_of_fit(&views.ungated.counts, &probs, DEFAULT_ALPHA)?,
        );
        doc.verdict(VerdictEntry::new(
            "ungated consistent with envelope (p)",
            "comparisons.ungated vs analytic envelope.p_value",
            gof.p_value,
            Op::Gt,
            gof.alpha,
        ));
    }
    finish(&doc, &dir, "report.json")
}

fn fig2(args: &CommonArgs) -> anyhow::Result<Outcome> {
    let cfg = args.apparatus()?.with_beam_splitter(true);
    let binning = args.binning(&cfg)?;
    let dir = output_dir(&args.output.out_dir, "fig2")?;
    let ref_seed = reference_seed(args.seed);
    let log = simulate(&cfg, args.pairs, args.seed, true)?;
    log.write_file(dir.join("events.log"))?;
    let reference = simulate(&cfg.with_beam_splitter(false), args.pairs, ref_seed, false)?;

    let runs = vec![
        RunEcho {
            label: "fig2".into(),
            seed: args.seed,
            n_pairs: args.pairs,
            policy: policy_label(true).into(),
        },
        RunEcho {
            label: "fig1 reference".into(),
            seed: ref_seed,
            n_pairs: args.pairs,
            policy: policy_label(false).into(),
        },
    ];
    let mut doc = ReportDocument::new("run --preset fig2", echo(&cfg, binning, runs));
    doc.notes
        .push("no coincidence data is used: the D0 record alone is analysed".into());
    let ungated = histogram(&log, Gate::Ungated, binning)?;
    let ref_ungated = histogram(&reference, Gate::Ungated, binning)?;
    write_csv(&dir, "hist_ungated.csv", &ungated)?;
    write_csv(&dir, "reference_hist_ungated.csv", &ref_ungated)?;
    doc.histogram("ungated", &ungated);
    doc.histogram("fig1 reference ungated", &ref_ungated);
    let cmp = doc.comparison(
        "ungated vs fig1 reference",
        chi_square_two_sample(&ungated.counts, &ref_ungated.counts, DEFAULT_ALPHA)?,
    );
    doc.verdict(VerdictEntry::new(
        "indistinguishable from fig1 (p)",
        "comparisons.ungated vs fig1 reference.p_value",
        cmp.p_value,
        Op::Gt,
        cmp.alpha,
    ));
    finish(&doc, &dir, "report.json")
}

pub fn cmd_nosignal(args: &CommonArgs) -> anyhow::Result<Outcome> {
    let cfg = args.apparatus()?;
    let binning = args.binning(&cfg)?;
    let dir = output_dir(&args.output.out_dir, "nosignal")?;
    let ref_seed = reference_seed(args.seed);
    let inn = simulate(&cfg.with_beam_splitter(true), args.pairs, args.seed, true)?;
    let out = simulate(&cfg, args.pairs, args.seed, false)?;
    let out_independent = simulate(&cfg, args.pairs, ref_seed, false)?;

    let runs = vec![
        RunEcho {
            label: "in".into(),
            seed: args.seed,
            n_pairs: args.pairs,
            policy: policy_label(true).into(),
        },
        RunEcho {
            label: "out (shared seed)".into(),
            seed: args.seed,
            n_pairs: args.pairs,
            policy: policy_label(false).into(),
        },
        RunEcho {
            label: "out (independent seed)".into(),
            seed: ref_seed,
            n_pairs: args.pairs,
            policy: policy_label(false).into(),
        },
    ];
    let mut doc = ReportDocument::new("nosignal", echo(&cfg, binning, runs));

    let shared = no_signaling_test(&inn, &out, binning, DEFAULT_ALPHA)?;
    doc.comparison("shared seed: in vs out", shared.comparison);
    let columns = doc.verdict(VerdictEntry::holds(
        "shared seed: signal columns byte-identical",
        "event logs",
        shared.signal_columns_identical,
    ));

    let independent = no_signaling_test(&inn, &out_independent, binning, DEFAULT_ALPHA)?;
    let cmp = doc.comparison("independent seeds: in vs out", independent.comparison);
    let consistent = doc.verdict(VerdictEntry::new(
        "independent seeds: ungated consistent (p)",
        "comparisons.independent seeds: in vs out.p_value",
        cmp.p_value,
        Op::Gt,
        cmp.alpha,
    ));

    let ungated_in = histogram(&inn, Gate::Ungated, binning)?;
    let d1_in = histogram(&inn, Gate::D1, binning)?;
    let ungated_out = histogram(&out_independent, Gate::Ungated, binning)?;
    let sanity = doc.comparison(
        "sanity: D1-gated in vs ungated out",
        chi_square_two_sample(&d1_in.counts, &ungated_out.counts, DEFAULT_ALPHA)?,
    );
    let power = doc.verdict(VerdictEntry::new(
        "sanity: test detects fringes (p)",
        "comparisons.sanity: D1-gated in vs ungated out.p_value",
        sanity.p_value,
        Op::Le,
        sanity.alpha,
    ));
    doc.verdict(VerdictEntry::holds(
        "¬CWF does not imply VIP",
        "the three verdicts above",
        columns && consistent && power,
    ));

    for (name, h) in [
        ("hist_ungated_in.csv", &ungated_in),
        ("hist_d1_in.csv", &d1_in),
        ("hist_ungated_out_independent.csv", &ungated_out),
    ] {
        write_csv(&dir, name, h)?;
        doc.histogram(name.trim_end_matches(".csv"), h);
    }
    finish(&doc, &dir, "report.json")
}

pub fn cmd_redsox_phase1(args: &CommonArgs) -> anyhow::Result<Outcome> {
    let cfg = args.apparatus()?;
    let binning = args.binning(&cfg)?;
    let dir = output_dir(&args.output.out_dir, "redsox")?;
    let run = RunConfig::new(cfg, args.pairs, args.seed, DelayedChoicePolicy::Deferred);
    let partial = run_signal_phase(&run)?;
    partial.write_file(dir.join(PHASE1_LOG))?;

    let runs = vec![RunEcho {
        label: "phase 1".into(),
        seed: args.seed,
        n_pairs: args.pairs,
        policy: "deferred".into(),
    }];
    let mut doc = ReportDocument::new("redsox-phase1", echo(&cfg, binning, runs));
    let ungated = histogram(&partial.log, Gate::Ungated, binning)?;
    write_csv(&dir, PHASE1_HIST, &ungated)?;
    doc.histogram("phase1 ungated", &ungated);
    doc.verdict(VerdictEntry::holds(
        "every idler pending",
        "event log",
        partial.log.events.iter().all(|e| !e.is_resolved()),
    ));
    doc.notes
        .push("the ungated histogram is final: no later choice can change it".into());
    finish(&doc, &dir, "report_phase1.json")
}

/// Reads a histogram CSV written by this tool back into counts and binning.
pub fn read_histogram_csv(path: &Path) -> anyhow::Result<(Binning, Vec<u64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some("bin_lo,bin_hi,count") {
        bail!("{}: missing bin_lo,bin_hi,count header", path.display());
    }
    let mut lo_first = None;
    let mut hi_last = 0.0;
    let mut counts = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let [lo, hi, count] = fields[..] else {
            bail!("{}:{}: expected three fields", path.display(), i + 2);
        };
        let parse = |s: &str| s.parse::<f64>().with_context(|| format!("{}:{}", path.display(), i + 2));
        lo_first.get_or_insert(parse(lo)?);
        hi_last = parse(hi)?;
        counts.push(count.parse::<u64>().with_context(|| format!("{}:{}", path.display(), i + 2))?);
    }
    let binning = Binning::new(hi_last, counts.len())?;
    if lo_first.is_none_or(|lo| (lo + hi_last).abs() > 1e-9) {
        bail!("{}: bins are not symmetric about zero", path.display());
    }
    Ok((binning, counts))
}

pub fn cmd_redsox_phase2(args: &Phase2Args) -> anyhow::Result<Outcome> {
    let checkpoint = match &args.checkpoint {
        Some(p) => p.clone(),
        None => args.output.out_dir.join("redsox").join(PHASE1_LOG),
    };
    let dir = checkpoint
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let partial = PartialLog::read_file(&checkpoint)
        .with_context(|| format!("phase-1 checkpoint {} is unusable", checkpoint.display()))?;
    let (binning, phase1_counts) = read_histogram_csv(&dir.join(PHASE1_HIST))?;

    let cfg = partial.checkpoint.apparatus.with_beam_splitter(args.choice);
    let resolved = run_idler_phase(&partial, args.choice)?;
    let tag = if args.choice { "in" } else { "out" };
    resolved.write_file(dir.join(format!("phase2-{tag}.log")))?;

    let runs = vec![RunEcho {
        label: format!("phase 2 ({tag})"),
        seed: partial.checkpoint.seed,
        n_pairs: partial.checkpoint.n_pairs,
        policy: format!("deferred, resolved {}", policy_label(args.choice)),
    }];
    let mut doc = ReportDocument::new(format!("redsox-phase2 --choice {}", args.choice), echo(&cfg, binning, runs));
    let mut phase1 = GatedHistogram::empty(binning, Gate::Ungated);
    phase1.counts = phase1_counts;
    doc.histogram("phase1 ungated", &phase1);

    let views = gated_views(&resolved, binning, &mut doc)?;
    write_views(&dir, &format!("phase2-{tag}_"), &views)?;
    let differing = phase1
        .counts
        .iter()
        .zip(&views.ungated.counts)
        .filter(|(a, b)| a != b)
        .count();
    doc.verdict(VerdictEntry::new(
        "phase-1 ungated histogram == resolved ungated histogram (differing bins)",
        "histograms.phase1 ungated vs histograms.ungated",
        differing as f64,
        Op::Eq,
        0.0,
    ));
    doc.verdict(VerdictEntry::holds(
        "signal columns unchanged by resolution",
        "event logs",
        signal_columns(&resolved) == signal_columns(&partial.log),
    ));
    fringe_verdicts(&mut doc, &views, &cfg)?;
    finish(&doc, &dir, &format!("report_phase2-{tag}.json"))
}
