//! Command-line front end: JSON configuration with flag overrides, one
//! subcommand per workflow, CSV/JSON outputs with a sidecar of the resolved
//! configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    averaged_g2, distribution_at_od, fit_beta_to_points, od_to_atoms, sweep_g2_vs_od, G2Point, PreparationSpread,
    SpreadConfig,
};
use crate::error::{Error, Result};
use crate::oracle::{oracle_g2, OracleConfig};
use crate::photonstats::{
    bootstrap_error, fit_beta_saturation, histogram_timetags, mle_fit_g2, normalize_histogram, synth_histogram,
    synth_saturation, synth_timetags, CoincidenceHistogram, FitWindow, Likelihood, PulseGating, SaturationData,
    TimeTagStream,
};
use crate::transport::{chain_g2, od_per_atom};
use crate::types::{G2Curve, PhysicalParams, TauGrid, UnitScale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalSpec {
    pub beta: f64,
    pub gamma_mhz: f64,
    /// Probe detuning in units of Γ.
    pub detuning: f64,
}

impl Default for PhysicalSpec {
    fn default() -> Self {
        Self {
            beta: 0.0081,
            gamma_mhz: 5.2,
            detuning: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub tau_max_ns: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            tau_max_ns: 600.0,
            points: 601,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub ods: Vec<f64>,
    pub atoms: Vec<usize>,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            ods: vec![3.15, 5.13, 5.88, 6.75],
            atoms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AveragingSpec {
    pub enabled: bool,
    pub preparation: PreparationSpread,
    /// `null` for exactly known OD.
    pub photon_budget: Option<f64>,
}

impl Default for AveragingSpec {
    fn default() -> Self {
        let s = SpreadConfig::default();
        Self {
            enabled: true,
            preparation: s.preparation,
            photon_budget: s.photon_budget,
        }
    }
}

impl AveragingSpec {
    pub fn spread(&self) -> Option<SpreadConfig> {
        self.enabled.then_some(SpreadConfig {
            preparation: self.preparation,
            photon_budget: self.photon_budget,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub od_min: f64,
    pub od_max: f64,
    pub od_step: f64,
    /// CSV with columns od, g2_0 and optionally err.
    pub fit_data: Option<PathBuf>,
    pub beta_range: (f64, f64),
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            od_min: 0.0,
            od_max: 8.0,
            od_step: 0.05,
            fit_data: None,
            beta_range: (0.003, 0.03),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    Timetags,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub od: f64,
    /// Overrides `od` when set.
    pub atoms: Option<usize>,
    pub averaged: bool,
    pub rates_per_s: (f64, f64),
    pub duration_s: f64,
    pub seed: u64,
    pub mode: SynthMode,
    pub saturation: SaturationSpec,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        Self {
            od: 5.13,
            atoms: None,
            averaged: false,
            rates_per_s: (1e5, 1e5),
            duration_s: 0.6,
            seed: 1,
            mode: SynthMode::Timetags,
            saturation: SaturationSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaturationSpec {
    pub beta: f64,
    pub od0: f64,
    pub relative_noise: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub points: usize,
}

impl Default for SaturationSpec {
    fn default() -> Self {
        Self {
            beta: 0.0083,
            od0: 5.0,
            relative_noise: 0.05,
            s_min: 0.05,
            s_max: 20.0,
            points: 15,
        }
    }
}

impl SaturationSpec {
    pub fn saturations(&self) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n)
            .map(|i| self.s_min * (self.s_max / self.s_min).powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub bin_width_ns: f64,
    pub tau_max_ns: f64,
    pub tail_ns: f64,
    pub min_tail_counts: u64,
    pub dip_window_ns: f64,
    pub peak_window_ns: f64,
    /// `null` picks the window from the data.
    pub window_ns: Option<f64>,
    pub likelihood: Likelihood,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub gating: Option<PulseGating>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            bin_width_ns: 2.0,
            tau_max_ns: 400.0,
            tail_ns: 200.0,
            min_tail_counts: 100,
            dip_window_ns: 30.0,
            peak_window_ns: 15.0,
            window_ns: None,
            likelihood: Likelihood::default(),
            n_bootstrap: 50,
            seed: 7,
            gating: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitBetaSpec {
    pub od0: f64,
}

impl Default for FitBetaSpec {
    fn default() -> Self {
        Self { od0: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// Complete configuration of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physical: PhysicalSpec,
    pub grid: GridSpec,
    pub targets: TargetSpec,
    pub averaging: AveragingSpec,
    pub sweep: SweepSpec,
    pub synthesis: SynthesisSpec,
    pub analysis: AnalysisSpec,
    pub fit_beta: FitBetaSpec,
    pub oracle: OracleConfig,
    pub output: OutputSpec,
}

/// Where each default comes from: `paper` for experimental constants,
/// `convention` for choices made here.
const PROVENANCE: &[(&str, &str, &str)] = &[
    ("physical.beta", "paper", "fitted coupling 0.81%"),
    ("physical.gamma_mhz", "convention", "Cs D2 natural linewidth, Gamma/2pi"),
    ("physical.detuning", "paper", "resonant probe"),
    ("grid.tau_max_ns", "convention", ""),
    ("grid.points", "convention", ""),
    (
        "targets.ods",
        "paper",
        "optical depths of the four example correlation functions",
    ),
    ("targets.atoms", "convention", ""),
    ("averaging.enabled", "convention", ""),
    (
        "averaging.preparation",
        "convention",
        "preparation spread is not published",
    ),
    (
        "averaging.photon_budget",
        "convention",
        "per-run detected photons are not published",
    ),
    ("sweep.od_min", "paper", "OD binning range"),
    ("sweep.od_max", "paper", "OD binning range"),
    ("sweep.od_step", "convention", ""),
    ("sweep.fit_data", "convention", ""),
    ("sweep.beta_range", "convention", ""),
    ("synthesis.od", "paper", "OD of the deepest measured dip"),
    ("synthesis.atoms", "convention", ""),
    ("synthesis.averaged", "convention", ""),
    (
        "synthesis.rates_per_s",
        "convention",
        "with duration_s gives a g2(0) error near the measured 0.09",
    ),
    ("synthesis.duration_s", "convention", ""),
    ("synthesis.seed", "convention", ""),
    ("synthesis.mode", "convention", ""),
    (
        "synthesis.saturation.beta",
        "paper",
        "saturation-measured coupling 0.83%",
    ),
    ("synthesis.saturation.od0", "convention", ""),
    ("synthesis.saturation.relative_noise", "convention", ""),
    ("synthesis.saturation.s_min", "convention", ""),
    ("synthesis.saturation.s_max", "convention", ""),
    ("synthesis.saturation.points", "convention", ""),
    ("analysis.bin_width_ns", "paper", "2 ns histogram bins"),
    ("analysis.tau_max_ns", "convention", ""),
    ("analysis.tail_ns", "paper", "normalized to one beyond 200 ns"),
    ("analysis.min_tail_counts", "convention", ""),
    (
        "analysis.dip_window_ns",
        "paper",
        "fit window about 1/Gamma for antibunched data",
    ),
    ("analysis.peak_window_ns", "paper", "fit window for bunched data"),
    ("analysis.window_ns", "convention", "automatic dip/peak choice"),
    (
        "analysis.likelihood",
        "convention",
        "Poisson counts with tail-normalized baseline",
    ),
    ("analysis.n_bootstrap", "paper", "50 regenerated correlation functions"),
    ("analysis.seed", "convention", ""),
    (
        "analysis.gating",
        "paper",
        "1-9 us gate, first 20 of 350 pulses dropped, when enabled",
    ),
    ("fit_beta.od0", "convention", ""),
    ("oracle", "convention", ""),
    ("output.dir", "convention", ""),
    ("annotation.probe_saturation", "paper", "S0 = 0.02 at 2.35 pW input"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub source: String,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// Sidecar written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub provenance: BTreeMap<String, ProvenanceEntry>,
}

fn provenance(explicit: &[String]) -> BTreeMap<String, ProvenanceEntry> {
    PROVENANCE
        .iter()
        .map(|(key, source, note)| {
            let user = explicit.iter().any(|e| e == key || e.starts_with(&format!("{key}.")));
            let entry = if user {
                ProvenanceEntry {
                    source: "user".into(),
                    note: String::new(),
                }
            } else {
                ProvenanceEntry {
                    source: (*source).into(),
                    note: (*note).into(),
                }
            };
            (key.to_string(), entry)
        })
        .collect()
}

fn collect_keys(prefix: &str, value: &serde_json::Value, out: &mut Vec<String>) {
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            out.push(key.clone());
            if !matches!(k.as_str(), "preparation" | "likelihood" | "gating") {
                collect_keys(&key, v, out);
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cascade-g2",
    version,
    about = "Photon correlations behind a chiral chain of two-level atoms"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Detuning in units of Gamma.
    #[arg(long, global = true)]
    pub detuning: Option<f64>,
    #[arg(long, global = true)]
    pub gamma_mhz: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tau_max_ns: Option<f64>,
    #[arg(long, global = true)]
    pub points: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// g2(tau) curves for a list of ODs or atom numbers.
    Simulate {
        #[arg(long = "od", num_args = 1..)]
        ods: Vec<f64>,
        #[arg(long = "atoms", num_args = 1..)]
        atoms: Vec<usize>,
        /// Skip distribution averaging.
        #[arg(long)]
        ideal_only: bool,
    },
    /// g2(0) against OD, optionally fitting beta to measured points.
    Sweep {
        #[arg(long)]
        od_min: Option<f64>,
        #[arg(long)]
        od_max: Option<f64>,
        #[arg(long)]
        od_step: Option<f64>,
        #[arg(long)]
        ideal_only: bool,
        /// CSV with columns od, g2_0[, err].
        #[arg(long)]
        fit_data: Option<PathBuf>,
    },
    /// Brute-force master-equation g2(tau) next to the chain solution.
    Oracle {
        #[arg(long)]
        atoms: usize,
    },
    /// Synthetic detector data and a saturation scan.
    Synth {
        #[arg(long)]
        od: Option<f64>,
        #[arg(long)]
        atoms: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<SynthMode>,
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Histogram, normalize and fit g2(0) from time tags or a histogram.
    Analyze {
        #[arg(long, conflicts_with = "histogram", required_unless_present = "histogram")]
        tags: Option<PathBuf>,
        #[arg(long)]
        histogram: Option<PathBuf>,
        /// Fit half-width in ns; automatic when absent.
        #[arg(long)]
        window_ns: Option<f64>,
        #[arg(long)]
        gate: bool,
        #[arg(long)]
        n_bootstrap: Option<usize>,
    },
    /// Coupling strength from a saturation scan.
    FitBeta {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        od0: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::Oracle { .. } => "oracle",
            Command::Synth { .. } => "synth",
            Command::Analyze { .. } => "analyze",
            Command::FitBeta { .. } => "fit-beta",
        }
    }
}

/// Load the config file and apply flag overrides. Returns the dotted keys
/// set explicitly.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, Vec<String>)> {
    let mut explicit = Vec::new();
    let mut cfg = match &cli.common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            collect_keys("", &value, &mut explicit);
            serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let mut set = |key: &str| explicit.push(key.to_string());
    let c = &cli.common;
    if let Some(v) = &c.out {
        cfg.output.dir = v.clone();
        set("output.dir");
    }
    if let Some(v) = c.beta {
        cfg.physical.beta = v;
        set("physical.beta");
    }
    if let Some(v) = c.detuning {
        cfg.physical.detuning = v;
        set("physical.detuning");
    }
    if let Some(v) = c.gamma_mhz {
        cfg.physical.gamma_mhz = v;
        set("physical.gamma_mhz");
    }
    if let Some(v) = c.seed {
        cfg.synthesis.seed = v;
        cfg.analysis.seed = v;
        set("synthesis.seed");
        set("analysis.seed");
    }
    if let Some(v) = c.tau_max_ns {
        cfg.grid.tau_max_ns = v;
        set("grid.tau_max_ns");
    }
    if let Some(v) = c.points {
        cfg.grid.points = v;
        set("grid.points");
    }
    match &cli.command {
        Command::Simulate { ods, atoms, ideal_only } => {
            if !ods.is_empty() || !atoms.is_empty() {
                cfg.targets.ods = ods.clone();
                cfg.targets.atoms = atoms.clone();
                set("targets.ods");
                set("targets.atoms");
            }
            if *ideal_only {
                cfg.averaging.enabled = false;
                set("averaging.enabled");
            }
        }
        Command::Sweep {
            od_min,
            od_max,
            od_step,
            ideal_only,
            fit_data,
        } => {
            if let Some(v) = od_min {
                cfg.sweep.od_min = *v;
                set("sweep.od_min");
            }
            if let Some(v) = od_max {
                cfg.sweep.od_max = *v;
                set("sweep.od_max");
            }
            if let Some(v) = od_step {
                cfg.sweep.od_step = *v;
                set("sweep.od_step");
            }
            if *ideal_only {
                cfg.averaging.enabled = false;
                set("averaging.enabled");
            }
            if let Some(p) = fit_data {
                cfg.sweep.fit_data = Some(p.clone());
                set("sweep.fit_data");
            }
        }
        Command::Oracle { .. } => {}
        Command::Synth {
            od,
            atoms,
            mode,
            duration_s,
        } => {
            if let Some(v) = od {
                cfg.synthesis.od = *v;
                set("synthesis.od");
            }
            if let Some(v) = atoms {
                cfg.synthesis.atoms = Some(*v);
                set("synthesis.atoms");
            }
            if let Some(v) = mode {
                cfg.synthesis.mode = *v;
                set("synthesis.mode");
            }
            if let Some(v) = duration_s {
                cfg.synthesis.duration_s = *v;
                set("synthesis.duration_s");
            }
        }
        Command::Analyze {
            window_ns,
            gate,
            n_bootstrap,
            ..
        } => {
            if let Some(v) = window_ns {
                cfg.analysis.window_ns = Some(*v);
                set("analysis.window_ns");
            }
            if *gate {
                cfg.analysis.gating = Some(PulseGating::default());
                set("analysis.gating");
            }
            if let Some(v) = n_bootstrap {
                cfg.analysis.n_bootstrap = *v;
                set("analysis.n_bootstrap");
            }
        }
        Command::FitBeta { od0, .. } => {
            if let Some(v) = od0 {
                cfg.fit_beta.od0 = *v;
                set("fit_beta.od0");
            }
        }
    }
    validate_config(&cfg)?;
    Ok((cfg, explicit))
}

pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    PhysicalParams::new(cfg.physical.beta, 0)
        .with_detuning(cfg.physical.detuning)
        .validate()?;
    UnitScale::new(cfg.physical.gamma_mhz).map_err(|e| Error::Config(e.to_string()))?;
    if !(cfg.grid.tau_max_ns > 0.0) || cfg.grid.points < 2 {
        return Err(Error::Config("grid needs tau_max_ns > 0 and at least 2 points".into()));
    }
    if let PreparationSpread::Gaussian { relative_width } = cfg.averaging.preparation {
        if !(0.0..1.0).contains(&relative_width) {
            return Err(Error::Config(format!("relative width {relative_width} outside [0, 1)")));
        }
    }
    if let Some(b) = cfg.averaging.photon_budget {
        if !(b > 0.0) {
            return Err(Error::Config(format!("photon budget {b} must be positive")));
        }
    }
    let a = &cfg.analysis;
    if !(a.bin_width_ns > 0.0 && a.tau_max_ns > a.tail_ns && a.tail_ns > 0.0) {
        return Err(Error::Config(
            "analysis needs 0 < tail_ns < tau_max_ns and a positive bin width".into(),
        ));
    }
    cfg.oracle.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

struct Ctx {
    cfg: RunConfig,
    scale: UnitScale,
    command: String,
    explicit: Vec<String>,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    fn grid(&self) -> Result<TauGrid> {
        TauGrid::linspace(self.scale.to_gamma(self.cfg.grid.tau_max_ns), self.cfg.grid.points)
    }

    fn params(&self, n: usize) -> PhysicalParams {
        PhysicalParams::new(self.cfg.physical.beta, n).with_detuning(self.cfg.physical.detuning)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    fn write_curves(&mut self, name: &str, grid: &TauGrid, columns: &[(&str, &[f64])]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["tau_ns", "tau_gamma"];
        header.extend(columns.iter().map(|(n, _)| *n));
        w.write_record(&header)?;
        for (i, tau) in grid.values().iter().enumerate() {
            let mut row = vec![self.scale.to_ns(*tau).to_string(), tau.to_string()];
            row.extend(columns.iter().map(|(_, v)| v[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<PathBuf>> {
        let sidecar = Sidecar {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.cfg.clone(),
            provenance: provenance(&self.explicit),
        };
        let name = format!("{}.config.json", self.command);
        self.write_json(&name, &sidecar)?;
        Ok(self.written)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file", path.display()),
        )))
    }
}

fn label(x: f64) -> String {
    format!("{x}").replace('.', "p")
}

fn cmd_simulate(ctx: &mut Ctx) -> Result<()> {
    let grid = ctx.grid()?;
    let beta = ctx.cfg.physical.beta;
    let targets = ctx.cfg.targets.clone();
    if targets.ods.is_empty() && targets.atoms.is_empty() {
        return Err(Error::Config("simulate needs at least one OD or atom number".into()));
    }
    let spread = ctx.cfg.averaging.spread();
    for &od in &targets.ods {
        let n = od_to_atoms(od, beta)?.round() as usize;
        let ideal = chain_g2(ctx.params(n), &grid)?;
        let mut columns: Vec<(&str, Vec<f64>)> = vec![("g2_ideal", ideal.values().to_vec())];
        let mut summary = format!("OD {od}: N = {n}, g2(0) ideal {:.4}", ideal.g2_zero());
        if let Some(cfg) = spread {
            let dist = distribution_at_od(od, beta, &cfg)?;
            let avg = averaged_g2(&dist, ctx.params(0), &grid)?;
            summary += &format!(
                ", averaged {:.4} (N mean {:.1} sd {:.1})",
                avg.g2_zero(),
                dist.mean(),
                dist.std_dev()
            );
            columns.push(("g2_averaged", avg.values().to_vec()));
        }
        println!("{summary}");
        let cols: Vec<(&str, &[f64])> = columns.iter().map(|(n, v)| (*n, v.as_slice())).collect();
        ctx.write_curves(&format!("g2_od{}.csv", label(od)), &grid, &cols)?;
    }
    for &n in &targets.atoms {
        let ideal = chain_g2(ctx.params(n), &grid)?;
        println!("N = {n}: g2(0) {:.4}, T = {:.4e}", ideal.g2_zero(), ideal.transmission);
        ctx.write_curves(&format!("g2_n{n}.csv"), &grid, &[("g2_ideal", ideal.values())])?;
    }
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<G2Point>> {
    require_file(path)?;
    let mut out = Vec::new();
    for r in csv::Reader::from_path(path)?.deserialize() {
        let p: G2Point = r?;
        out.push(p);
    }
    Ok(out)
}

fn cmd_sweep(ctx: &mut Ctx) -> Result<()> {
    let s = ctx.cfg.sweep.clone();
    if !(s.od_step > 0.0) || s.od_max < s.od_min {
        return Err(Error::Config("sweep needs od_step > 0 and od_max >= od_min".into()));
    }
    let n = ((s.od_max - s.od_min) / s.od_step + 1e-9).floor() as usize;
    let ods: Vec<f64> = (0..=n)
        .map(|i| ((s.od_min + i as f64 * s.od_step) * 1e9).round() / 1e9)
        .collect();
    let spread = ctx.cfg.averaging.spread();
    let rows = sweep_g2_vs_od(ctx.cfg.physical.beta, &ods, spread)?;
    let path = ctx.path("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["od", "n_mean", "g2_0_ideal", "g2_0_averaged"])?;
    for r in &rows {
        w.write_record([
            r.od.to_string(),
            r.n_mean.to_string(),
            r.g2_0_ideal.to_string(),
            r.g2_0_averaged.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    ctx.written.push(path);
    let (lo, hi) = rows
        .iter()
        .map(|r| r.g2_0_averaged.unwrap_or(r.g2_0_ideal))
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    println!("{} ODs, g2(0) from {lo:.4} to {hi:.4}", rows.len());
    if let Some(data) = &s.fit_data {
        let points = read_points(data)?;
        let fit = fit_beta_to_points(&points, spread, s.beta_range.0, s.beta_range.1)?;
        println!(
            "fitted beta {:.5} over {} points (cost {:.4})",
            fit.beta, fit.n_points, fit.cost
        );
        ctx.write_json("sweep_fit.json", &fit)?;
    }
    Ok(())
}

fn cmd_oracle(ctx: &mut Ctx, atoms: usize) -> Result<()> {
    let grid = ctx.grid()?;
    let p = ctx.params(atoms);
    let oracle = oracle_g2(&ctx.cfg.oracle, p, &grid)?;
    let chain = chain_g2(p, &grid)?;
    let worst = oracle
        .values()
        .iter()
        .zip(chain.values())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
        .fold(0.0, f64::max);
    println!(
        "N = {atoms}, beta = {}: oracle g2(0) {:.6}, chain {:.6}, worst relative difference {worst:.2e}",
        p.beta,
        oracle.g2_zero(),
        chain.g2_zero()
    );
    ctx.write_curves(
        "oracle.csv",
        &grid,
        &[("g2_oracle", oracle.values()), ("g2_chain", chain.values())],
    )?;
    #[derive(Serialize)]
    struct Report {
        n_atoms: usize,
        beta: f64,
        detuning: f64,
        g2_zero_oracle: f64,
        g2_zero_chain: f64,
        tolerance: f64,
        max_relative_difference: f64,
    }
    let report = Report {
        n_atoms: atoms,
        beta: p.beta,
        detuning: p.detuning,
        g2_zero_oracle: oracle.g2_zero(),
        g2_zero_chain: chain.g2_zero(),
        tolerance: ctx.cfg.oracle.tolerance,
        max_relative_difference: worst,
    };
    ctx.write_json("oracle.json", &report)
}

fn synth_curve(ctx: &Ctx) -> Result<(G2Curve, usize)> {
    let s = &ctx.cfg.synthesis;
    let beta = ctx.cfg.physical.beta;
    let grid = TauGrid::linspace(ctx.scale.to_gamma(ctx.cfg.analysis.tau_max_ns + 50.0), 4001)?;
    let n = match s.atoms {
        Some(n) => n,
        None => od_to_atoms(s.od, beta)?.round() as usize,
    };
    let curve = match (s.averaged, ctx.cfg.averaging.spread(), s.atoms) {
        (true, Some(cfg), None) => averaged_g2(&distribution_at_od(s.od, beta, &cfg)?, ctx.params(0), &grid)?,
        _ => chain_g2(ctx.params(n), &grid)?,
    };
    Ok((curve, n))
}

fn cmd_synth(ctx: &mut Ctx) -> Result<()> {
    let s = ctx.cfg.synthesis.clone();
    let a = ctx.cfg.analysis.clone();
    let (curve, n) = synth_curve(ctx)?;
    let rates = (s.rates_per_s.0 * 1e-9, s.rates_per_s.1 * 1e-9);
    let duration_ns = s.duration_s * 1e9;
    match s.mode {
        SynthMode::Timetags => {
            let tags = synth_timetags(&curve, rates, duration_ns, &ctx.scale, s.seed)?;
            let path = ctx.path("timetags.csv");
            tags.write_csv(&path)?;
            ctx.written.push(path);
            println!("{} time tags over {} s", tags.len(), s.duration_s);
        }
        SynthMode::Histogram => {
            let layout = CoincidenceHistogram::zeros(a.bin_width_ns, a.tau_max_ns)?;
            let hist = synth_histogram(&curve, rates, duration_ns, &layout, &ctx.scale, s.seed)?;
            let path = ctx.path("histogram.csv");
            hist.write_csv(&path)?;
            ctx.written.push(path);
            println!("{} coincidences in {} bins", hist.total(), hist.counts().len());
        }
    }
    let sat = &s.saturation;
    let data = synth_saturation(sat.beta, sat.od0, &sat.saturations(), sat.relative_noise, s.seed)?;
    let path = ctx.path("saturation.csv");
    data.write_csv(&path)?;
    ctx.written.push(path);

    #[derive(Serialize)]
    struct Truth {
        n_atoms: usize,
        od: f64,
        g2_zero: f64,
        transmission: f64,
        saturation_beta: f64,
        saturation_od0: f64,
    }
    let truth = Truth {
        n_atoms: n,
        od: n as f64 * od_per_atom(ctx.cfg.physical.beta)?,
        g2_zero: curve.g2_zero(),
        transmission: curve.transmission,
        saturation_beta: sat.beta,
        saturation_od0: sat.od0,
    };
    println!("true g2(0) {:.4} at N = {n}", truth.g2_zero);
    ctx.write_json("truth.json", &truth)
}

fn cmd_analyze(ctx: &mut Ctx, tags: Option<&Path>, histogram: Option<&Path>) -> Result<()> {
    let a = ctx.cfg.analysis.clone();
    let hist = match (tags, histogram) {
        (Some(t), _) => {
            require_file(t)?;
            let stream = TimeTagStream::read_csv(t)?;
            let h = histogram_timetags(&stream, a.bin_width_ns, a.tau_max_ns, a.gating.as_ref())?;
            let path = ctx.path("histogram.csv");
            h.write_csv(&path)?;
            ctx.written.push(path);
            h
        }
        (None, Some(h)) => {
            require_file(h)?;
            CoincidenceHistogram::read_csv(h)?
        }
        (None, None) => return Err(Error::Config("analyze needs --tags or --histogram".into())),
    };
    let curve = normalize_histogram(&hist, a.tail_ns, a.min_tail_counts, &ctx.scale)?;
    ctx.write_curves("g2_measured.csv", &curve.grid.clone(), &[("g2", curve.values())])?;
    let window = match a.window_ns {
        Some(w) => FitWindow::HalfWidthNs(w),
        None if crate::photonstats::looks_bunched(&hist) => FitWindow::HalfWidthNs(a.peak_window_ns),
        None => FitWindow::HalfWidthNs(a.dip_window_ns),
    };
    let fit = mle_fit_g2(&hist, window, a.likelihood)?;
    let fit = bootstrap_error(&fit, &hist, a.n_bootstrap, a.seed)?;
    println!(
        "g2(0) = {:.4} +/- {:.4} (A = {:.4}, 1/gamma = {:.2} ns, window +/-{} ns)",
        fit.g2_zero,
        fit.a_err.unwrap_or(f64::NAN),
        fit.a,
        1.0 / fit.gamma_fit_per_ns,
        fit.window_ns
    );
    ctx.write_json("fit.json", &fit)
}

fn cmd_fit_beta(ctx: &mut Ctx, data: &Path) -> Result<()> {
    require_file(data)?;
    let data = SaturationData::read_csv(data)?;
    let fit = fit_beta_saturation(&data, ctx.cfg.fit_beta.od0)?;
    println!(
        "beta = {:.5} +/- {:.5} from {} points",
        fit.beta, fit.beta_err, fit.n_points
    );
    ctx.write_json("beta_fit.json", &fit)
}

/// Run a parsed command line; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let (cfg, explicit) = resolve_config(cli)?;
    fs::create_dir_all(&cfg.output.dir)?;
    let scale = UnitScale::new(cfg.physical.gamma_mhz)?;
    let mut ctx = Ctx {
        cfg,
        scale,
        command: cli.command.name().into(),
        explicit,
        written: Vec::new(),
    };
    match &cli.command {
        Command::Simulate { .. } => cmd_simulate(&mut ctx)?,
        Command::Sweep { .. } => cmd_sweep(&mut ctx)?,
        Command::Oracle { atoms } => cmd_oracle(&mut ctx, *atoms)?,
        Command::Synth { .. } => cmd_synth(&mut ctx)?,
        Command::Analyze { tags, histogram, .. } => cmd_analyze(&mut ctx, tags.as_deref(), histogram.as_deref())?,
        Command::FitBeta { data, .. } => cmd_fit_beta(&mut ctx, data)?,
    }
    ctx.finish()
}

/// Entry point for the binary: parse, run, map errors to exit codes.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
