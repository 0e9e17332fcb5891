//! Test Hamiltonians, ρ-sweeps comparing predicted stability times with
//! sampled escape times, exponent fits and plot data.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::dynamics::{escape_time, EscapeOptions, EscapeRecord, IntegratorOptions};
use crate::error::{Error, Result};
use crate::frequency::{diophantine_constant, golden_frequency, EnumerationBudget, Frequency};
use crate::normal_form::WorkingPrecision;
use crate::pipeline::{
    coeff_norm_max, diffusion_time_reference, parameter_schedule, predicted_stability_time, run_pipeline, schedule_a,
    schedule_b, taylor_split, BoundConstants, PipelineOptions, ScheduleFlags,
};
use crate::series::FourierTaylorSeries;
use crate::smoothing::{lacunary_series, HolderClass};

type Series = FourierTaylorSeries<f64>;

/// Default number of lacunary levels `J_max`.
pub const DEFAULT_LEVELS: u32 = 8;

/// Multi-indices `m ∈ N^d` with `|m|_1 = order`, in lexicographic order.
pub fn multi_indices(dim: usize, order: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == dim {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(dim, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        rec(dim, order, &mut Vec::new(), &mut out);
    }
    out
}

/// `ω·I + Σ_{2 ≤ |m|_1 ≤ ⌊ℓ⌋−2} a_m(θ) I^m` with lacunary coefficients of
/// `levels + 1` levels, phases drawn from one seeded stream in the order of
/// [`multi_indices`].
pub fn build_test_hamiltonian_with(
    omega: &Frequency<f64>,
    hc: &HolderClass<f64>,
    seed: u64,
    amplitude: f64,
    levels: u32,
) -> Series {
    let d = omega.dim();
    let mut h = Series::linear_action(omega.as_slice());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for order in 2..=hc.poly_order() {
        for m in multi_indices(d, order) {
            h = &h + &lacunary_series(d, hc.ell, levels, amplitude, &m, &mut rng);
        }
    }
    h
}

/// The test Hamiltonian with the golden frequency (d = 2) and `J_max = 8`.
pub fn build_test_hamiltonian(dim: usize, hc: &HolderClass<f64>, seed: u64, amplitude: f64) -> Result<Series> {
    let omega = golden_frequency(dim)?;
    Ok(build_test_hamiltonian_with(&omega, hc, seed, amplitude, DEFAULT_LEVELS))
}

/// Range `[L, U]` of `ρ̃` for which the schedule passes every condition
/// except `ρ < e^{−6}` at each `ρ` in `rhos`.
///
/// `s ≤ 1` needs `ρ̃ ≥ ρ(b|log ρ|)^{1/a}` and `ρ ≤ s` needs
/// `ρ̃ ≤ ρ^{1−1/a}(b|log ρ|)^{1/a}`. An empty range is an error.
pub fn certifying_rho_tilde_range(ell: f64, tau: f64, rhos: &[f64]) -> Result<(f64, f64)> {
    if rhos.is_empty() {
        return Err(Error::InvalidArgument("no rho values".into()));
    }
    let a = schedule_a(tau);
    let b = schedule_b(ell, tau);
    let mut lower = 0.0f64;
    let mut upper = f64::INFINITY;
    for &rho in rhos {
        let big = (b * rho.ln()).abs().powf(1.0 / a);
        lower = lower.max(rho * big);
        upper = upper.min(rho.powf(1.0 - 1.0 / a) * big);
    }
    if lower > upper {
        return Err(Error::Parameters(format!(
            "no amplitude certifies all rho: rho_tilde would need to lie in [{lower:e}, {upper:e}]"
        )));
    }
    Ok((lower, upper))
}

/// Amplitude of the test family whose schedule has the given `ρ̃`
/// (`ρ̃` is inversely proportional to the amplitude).
pub fn amplitude_for_rho_tilde(
    omega: &Frequency<f64>,
    hc: &HolderClass<f64>,
    gamma: f64,
    rho_tilde: f64,
    consts: &BoundConstants,
    levels: u32,
) -> Result<f64> {
    let unit = build_test_hamiltonian_with(omega, hc, 0, 1.0, levels);
    let f = &unit - &Series::linear_action(omega.as_slice());
    let cmax_unit = coeff_norm_max(&taylor_split(&f, hc, 1.0)?, hc)?;
    Ok(gamma / (256.0 * consts.xi * consts.c0 * consts.c_b * cmax_unit * rho_tilde))
}

/// Amplitude placing `ρ̃` at the geometric mean of
/// [`certifying_rho_tilde_range`], checked against the schedule at every `ρ`.
pub fn certifying_amplitude(
    omega: &Frequency<f64>,
    hc: &HolderClass<f64>,
    tau: f64,
    gamma: f64,
    rhos: &[f64],
    consts: &BoundConstants,
    levels: u32,
) -> Result<f64> {
    let (lower, upper) = certifying_rho_tilde_range(hc.ell, tau, rhos)?;
    let amplitude = amplitude_for_rho_tilde(omega, hc, gamma, (lower * upper).sqrt(), consts, levels)?;
    let h = build_test_hamiltonian_with(omega, hc, 0, amplitude, levels);
    let f = &h - &Series::linear_action(omega.as_slice());
    let cmax = coeff_norm_max(&taylor_split(&f, hc, 1.0)?, hc)?;
    for &rho in rhos {
        let s = parameter_schedule(rho, gamma, tau, hc, consts, cmax)?;
        if !s.certified_relaxed() {
            return Err(Error::Parameters(format!(
                "amplitude {amplitude:e} fails {:?} at rho = {rho}",
                s.failures()
            )));
        }
    }
    Ok(amplitude)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    /// Schedule flags without the `ρ < e^{−6}` gate, escape sampling only.
    Dynamics,
    /// Full pipeline including the normal form.
    Pipeline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub ell: f64,
    pub tau: f64,
    /// Defaults to the golden frequency.
    pub omega: Option<Vec<f64>>,
    /// Defaults to `γ_K` of `ω` at `K = gamma_cutoff`.
    pub gamma: Option<f64>,
    pub gamma_cutoff: u32,
    pub rho_list: Vec<f64>,
    pub constants_file: Option<PathBuf>,
    pub constants: BoundConstants,
    /// Defaults to `min(0.01, 0.01/‖ω‖_∞)`.
    pub dt: Option<f64>,
    /// Defaults to `10⁶ dt`.
    pub t_cap: Option<f64>,
    /// Stop each trajectory at `min(t_pred, t_cap)`.
    pub cap_at_prediction: bool,
    pub n_samples: usize,
    pub seed: u64,
    /// Fraction of `ρ` defining escape (0.5 for `ρ/2`, 2 for `2ρ`).
    pub threshold_factor: f64,
    /// Defaults to the certifying amplitude for `rho_list`.
    pub amplitude: Option<f64>,
    pub levels: u32,
    pub kmax: Option<u64>,
    pub mmax: Option<u32>,
    pub mode: SweepMode,
    pub diffusion_epsilon: f64,
    pub diffusion_t0: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 2,
            ell: 6.5,
            tau: 1.0,
            omega: None,
            gamma: None,
            gamma_cutoff: 200,
            rho_list: vec![0.1, 0.05, 0.025],
            constants_file: None,
            constants: BoundConstants::default(),
            dt: None,
            t_cap: None,
            cap_at_prediction: true,
            n_samples: 50,
            seed: 0,
            threshold_factor: 0.5,
            amplitude: None,
            levels: DEFAULT_LEVELS,
            kmax: None,
            mmax: None,
            mode: SweepMode::Dynamics,
            diffusion_epsilon: 0.1,
            diffusion_t0: 1.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every key accepted by [`ExperimentConfig::from_text`].
pub const CONFIG_KEYS: [&str; 23] = [
    "d",
    "ell",
    "tau",
    "omega",
    "gamma",
    "gamma_cutoff",
    "rho_list",
    "xi",
    "constants",
    "dt",
    "t_cap",
    "cap_at_prediction",
    "n_samples",
    "seed",
    "threshold_factor",
    "amplitude",
    "levels",
    "kmax",
    "mmax",
    "mode",
    "diffusion_epsilon",
    "diffusion_t0",
    "output_dir",
];

impl ExperimentConfig {
    /// Parses `key = value` text. Relative paths (`constants`, `output_dir`)
    /// are resolved against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&CONFIG_KEYS)?;
        let mut c = ExperimentConfig::default();
        c.dim = kv.get_or("d", c.dim)?;
        c.ell = kv.get_or("ell", c.ell)?;
        c.tau = kv.get_or("tau", c.tau)?;
        c.omega = kv.get_list("omega")?;
        c.gamma = kv.get("gamma")?;
        c.gamma_cutoff = kv.get_or("gamma_cutoff", c.gamma_cutoff)?;
        if let Some(list) = kv.get_list("rho_list")? {
            c.rho_list = list;
        }
        if let Some(path) = kv.raw("constants") {
            let path = base.join(path);
            let text = fs::read_to_string(&path)?;
            c.constants = BoundConstants::parse(&text)?;
            c.constants_file = Some(path);
        }
        if let Some(xi) = kv.get("xi")? {
            c.constants.xi = xi;
        }
        c.dt = kv.get("dt")?;
        c.t_cap = kv.get("t_cap")?;
        c.cap_at_prediction = kv.get_or("cap_at_prediction", c.cap_at_prediction)?;
        c.n_samples = kv.get_or("n_samples", c.n_samples)?;
        c.seed = kv.get_or("seed", c.seed)?;
        c.threshold_factor = kv.get_or("threshold_factor", c.threshold_factor)?;
        c.amplitude = kv.get("amplitude")?;
        c.levels = kv.get_or("levels", c.levels)?;
        c.kmax = kv.get("kmax")?;
        c.mmax = kv.get("mmax")?;
        if let Some(mode) = kv.raw("mode") {
            c.mode = match mode {
                "dynamics" => SweepMode::Dynamics,
                "pipeline" => SweepMode::Pipeline,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "mode must be `dynamics` or `pipeline`, got {other:?}"
                    )))
                }
            };
        }
        c.diffusion_epsilon = kv.get_or("diffusion_epsilon", c.diffusion_epsilon)?;
        c.diffusion_t0 = kv.get_or("diffusion_t0", c.diffusion_t0)?;
        if let Some(dir) = kv.raw("output_dir") {
            c.output_dir = base.join(dir);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        HolderClass::new(self.ell, self.dim)?;
        self.constants.validate()?;
        if self.rho_list.is_empty() {
            return Err(Error::InvalidArgument("rho_list is empty".into()));
        }
        if self.rho_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidArgument("rho_list must be strictly decreasing".into()));
        }
        let limit = match self.mode {
            SweepMode::Pipeline => (-6.0f64).exp(),
            SweepMode::Dynamics => 1.0,
        };
        if let Some(bad) = self.rho_list.iter().find(|&&r| !(r > 0.0 && r < limit)) {
            return Err(Error::InvalidArgument(format!("rho = {bad} outside (0, {limit:e})")));
        }
        if self.n_samples == 0 || !(self.threshold_factor > 0.0) {
            return Err(Error::InvalidArgument(
                "n_samples and threshold_factor must be positive".into(),
            ));
        }
        if let Some(w) = &self.omega {
            if w.len() != self.dim {
                return Err(Error::InvalidArgument("omega length differs from d".into()));
            }
        }
        Ok(())
    }

    pub fn holder_class(&self) -> Result<HolderClass<f64>> {
        HolderClass::new(self.ell, self.dim)
    }

    pub fn frequency(&self) -> Result<Frequency<f64>> {
        match &self.omega {
            Some(w) => Frequency::new(w.clone()),
            None => golden_frequency(self.dim),
        }
    }

    pub fn gamma_value(&self, omega: &Frequency<f64>) -> Result<f64> {
        match self.gamma {
            Some(g) => Ok(g),
            None => {
                let budget = EnumerationBudget {
                    max_points: crate::frequency::ball_size(self.dim, self.gamma_cutoff),
                };
                Ok(diophantine_constant(omega, self.tau, self.gamma_cutoff, budget)?.gamma)
            }
        }
    }

    pub fn time_step(&self, omega: &Frequency<f64>) -> f64 {
        self.dt
            .unwrap_or_else(|| IntegratorOptions::default_dt(omega.sup_norm()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    /// `C₁/(ρ^{1+(ℓ−1)/(τ+1)}|log ρ|^{ℓ−1})`; `+∞` for an integrable run.
    pub t_pred: f64,
    pub t_star: f64,
    pub t_diff_ref: f64,
    /// Integration horizon actually used.
    pub t_cap: f64,
    pub min_escape: Option<f64>,
    pub censored_fraction: f64,
    pub max_drift: f64,
    pub max_energy_drift: f64,
    pub ballistic_bound: f64,
    /// Failed schedule conditions joined by `;`, empty when all pass.
    pub schedule_flags: String,
    pub contraction: Option<f64>,
    pub nf_certified: Option<bool>,
    pub error: Option<String>,
}

impl SweepRow {
    fn blank(rho: f64) -> Self {
        SweepRow {
            rho,
            t_pred: f64::NAN,
            t_star: f64::NAN,
            t_diff_ref: f64::NAN,
            t_cap: f64::NAN,
            min_escape: None,
            censored_fraction: f64::NAN,
            max_drift: f64::NAN,
            max_energy_drift: f64::NAN,
            ballistic_bound: f64::NAN,
            schedule_flags: String::new(),
            contraction: None,
            nf_certified: None,
            error: None,
        }
    }

    /// No sample drifted by the threshold before `t_pred` (vacuous when the
    /// horizon stops short of `t_pred`).
    pub fn no_escape_before_prediction(&self) -> bool {
        self.min_escape.map_or(true, |t| t >= self.t_pred)
    }
}

fn failed_flags(flags: &ScheduleFlags, relaxed: bool) -> String {
    let mut out = Vec::new();
    if !flags.smallness_ok {
        out.push("smallness_ok");
    }
    if !flags.rho_ok {
        out.push("rho_ok");
    }
    if !flags.ks_ok {
        out.push("Ks_ok");
    }
    if !flags.s_in_range {
        out.push("s_in_range");
    }
    if !relaxed && !flags.below_threshold {
        out.push("rho_below_exp(-6)");
    }
    out.join(";")
}

/// Everything a sweep needs besides the per-row work.
#[derive(Clone, Debug)]
pub struct SweepSetup {
    pub omega: Frequency<f64>,
    pub hc: HolderClass<f64>,
    pub gamma: f64,
    pub amplitude: f64,
    pub hamiltonian: Series,
    pub dt: f64,
    pub t_cap: f64,
}

impl SweepSetup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let omega = config.frequency()?;
        let hc = config.holder_class()?;
        let gamma = config.gamma_value(&omega)?;
        let amplitude = match config.amplitude {
            Some(a) => a,
            None => certifying_amplitude(
                &omega,
                &hc,
                config.tau,
                gamma,
                &config.rho_list,
                &config.constants,
                config.levels,
            )?,
        };
        let hamiltonian = build_test_hamiltonian_with(&omega, &hc, config.seed, amplitude, config.levels);
        let dt = config.time_step(&omega);
        let t_cap = config.t_cap.unwrap_or(1e6 * dt);
        Ok(SweepSetup {
            omega,
            hc,
            gamma,
            amplitude,
            hamiltonian,
            dt,
            t_cap,
        })
    }
}

fn sweep_row(config: &ExperimentConfig, setup: &SweepSetup, rho: f64) -> Result<SweepRow> {
    let mut row = SweepRow::blank(rho);
    let consts = &config.constants;
    let f = &setup.hamiltonian - &Series::linear_action(setup.omega.as_slice());
    let integrable = f.is_empty();
    let times = predicted_stability_time(rho, config.ell, config.tau, consts)?;
    row.t_diff_ref = diffusion_time_reference(
        rho,
        config.ell,
        config.tau,
        config.diffusion_epsilon,
        config.diffusion_t0,
    )?;
    if integrable {
        row.t_pred = f64::INFINITY;
        row.t_star = f64::INFINITY;
    } else {
        row.t_pred = times.t_theorem;
        row.t_star = times.t_star;
        let relaxed = config.mode == SweepMode::Dynamics;
        match config.mode {
            SweepMode::Dynamics => {
                let split = taylor_split(&f, &setup.hc, rho)?;
                let cmax = coeff_norm_max(&split, &setup.hc)?;
                let schedule = parameter_schedule(rho, setup.gamma, config.tau, &setup.hc, consts, cmax)?;
                row.schedule_flags = failed_flags(&schedule.flags, relaxed);
            }
            SweepMode::Pipeline => {
                let options = PipelineOptions {
                    precision: (config.kmax.is_some() || config.mmax.is_some()).then_some(WorkingPrecision {
                        kmax: config.kmax,
                        mmax: config.mmax,
                    }),
                    ..PipelineOptions::default()
                };
                let report = run_pipeline(
                    &setup.hamiltonian,
                    &setup.omega,
                    setup.gamma,
                    config.tau,
                    &setup.hc,
                    rho,
                    consts,
                    &options,
                )?;
                if let Some(s) = &report.schedule {
                    row.schedule_flags = failed_flags(&s.flags, relaxed);
                }
                if let Some(nf) = &report.normal_form {
                    row.contraction = Some(nf.contraction);
                    row.nf_certified = Some(nf.certified);
                }
            }
        }
    }
    let t_cap = if config.cap_at_prediction {
        setup.t_cap.min(row.t_pred)
    } else {
        setup.t_cap
    };
    let mut opts = EscapeOptions::new(rho, t_cap, setup.dt);
    opts.threshold = config.threshold_factor * rho;
    opts.n_samples = config.n_samples;
    opts.seed = config.seed;
    let record = escape_time(&setup.hamiltonian, &opts)?;
    fill_escape(&mut row, &record);
    Ok(row)
}

fn fill_escape(row: &mut SweepRow, record: &EscapeRecord<f64>) {
    row.t_cap = record.t_cap;
    row.min_escape = record.min_escape;
    row.censored_fraction = record.censored_fraction();
    row.max_drift = record.max_drift();
    row.max_energy_drift = record.max_energy_drift;
    row.ballistic_bound = record.ballistic_bound;
}

/// Runs one row per `ρ` in order, handing each finished row to `sink`
/// before starting the next. Row failures are recorded in the row.
pub fn sweep_with_setup(
    config: &ExperimentConfig,
    setup: &SweepSetup,
    mut sink: impl FnMut(&SweepRow) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(config.rho_list.len());
    for &rho in &config.rho_list {
        let row = sweep_row(config, setup, rho).unwrap_or_else(|e| {
            log::warn!("row rho = {rho} failed: {e}");
            let mut r = SweepRow::blank(rho);
            r.error = Some(e.to_string());
            r
        });
        sink(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn sweep(config: &ExperimentConfig, sink: impl FnMut(&SweepRow) -> Result<()>) -> Result<Vec<SweepRow>> {
    let setup = SweepSetup::new(config)?;
    sweep_with_setup(config, &setup, sink)
}

/// First line of every sweep CSV.
pub const CSV_VERSION_LINE: &str = "# torstab sweep csv v1";
pub const CSV_HEADER: &str = "rho,t_pred,t_star,t_diff_ref,t_cap,min_escape,censored_fraction,max_drift,\
max_energy_drift,ballistic_bound,schedule_failures,contraction,nf_certified,error";

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn sanitize(s: &str) -> String {
    s.replace([',', '\n', '\r'], " ")
}

pub fn csv_line(row: &SweepRow) -> String {
    [
        fmt_f(row.rho),
        fmt_f(row.t_pred),
        fmt_f(row.t_star),
        fmt_f(row.t_diff_ref),
        fmt_f(row.t_cap),
        row.min_escape.map_or_else(String::new, fmt_f),
        fmt_f(row.censored_fraction),
        fmt_f(row.max_drift),
        fmt_f(row.max_energy_drift),
        fmt_f(row.ballistic_bound),
        row.schedule_flags.clone(),
        row.contraction.map_or_else(String::new, fmt_f),
        fmt_opt(row.nf_certified),
        row.error.as_deref().map(sanitize).unwrap_or_default(),
    ]
    .join(",")
}

pub fn write_csv_header<W: Write>(mut out: W) -> Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    writeln!(out, "{CSV_HEADER}")?;
    Ok(())
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    write_csv_header(&mut out)?;
    for row in rows {
        writeln!(out, "{}", csv_line(row))?;
    }
    Ok(())
}

fn parse_num(field: &str, line: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad number {field:?}"),
    })
}

fn parse_opt_num(field: &str, line: usize) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_num(field, line).map(Some)
    }
}

pub fn read_rows_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if !seen_header {
            if l != CSV_HEADER {
                return Err(Error::Parse {
                    line,
                    message: "unexpected sweep CSV header".into(),
                });
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Parse {
                line,
                message: format!("expected 14 fields, found {}", f.len()),
            });
        }
        rows.push(SweepRow {
            rho: parse_num(f[0], line)?,
            t_pred: parse_num(f[1], line)?,
            t_star: parse_num(f[2], line)?,
            t_diff_ref: parse_num(f[3], line)?,
            t_cap: parse_num(f[4], line)?,
            min_escape: parse_opt_num(f[5], line)?,
            censored_fraction: parse_num(f[6], line)?,
            max_drift: parse_num(f[7], line)?,
            max_energy_drift: parse_num(f[8], line)?,
            ballistic_bound: parse_num(f[9], line)?,
            schedule_flags: f[10].to_string(),
            contraction: parse_opt_num(f[11], line)?,
            nf_certified: match f[12].trim() {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("bad boolean {other:?}"),
                    })
                }
            },
            error: (!f[13].is_empty()).then(|| f[13].to_string()),
        });
    }
    if !seen_header {
        return Err(Error::Parse {
            line: 0,
            message: "missing sweep CSV header".into(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitModel {
    /// `log t = c₀ − p log ρ`.
    PurePower,
    /// `log t = c₀ − p log ρ − (ℓ−1) log|log ρ|` with the log exponent fixed.
    PowerWithLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitSource {
    Predicted,
    /// Uncensored minimum escape times.
    Escape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub model: FitModel,
    pub p: f64,
    pub c0: f64,
    pub residuals: Vec<f64>,
    pub rms: f64,
    /// Residuals too large or too patterned for the model to describe the data.
    pub model_mismatch: bool,
}

/// Least-squares fit of `t(ρ)` over rows with a finite positive value.
pub fn fit_points(points: &[(f64, f64)], model: FitModel, ell: f64) -> Result<FitReport> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(r, t)| r > 0.0 && r < 1.0 && t.is_finite() && t > 0.0)
        .collect();
    if usable.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "fit needs at least 4 usable rows, found {}",
            usable.len()
        )));
    }
    let xs: Vec<f64> = usable.iter().map(|(r, _)| r.ln()).collect();
    let ys: Vec<f64> = usable
        .iter()
        .map(|&(r, t)| match model {
            FitModel::PurePower => t.ln(),
            FitModel::PowerWithLog => t.ln() + (ell - 1.0) * r.ln().abs().ln(),
        })
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all rows share one rho".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let c0 = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (c0 + slope * x)).collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let scale = ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
    Ok(FitReport {
        model,
        p: -slope,
        c0,
        model_mismatch: rms > 1e-9 * scale,
        residuals,
        rms,
    })
}

pub fn fit_exponent(rows: &[SweepRow], model: FitModel, source: FitSource, ell: f64) -> Result<FitReport> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| match source {
            FitSource::Predicted => Some((r.rho, r.t_pred)),
            FitSource::Escape => r.min_escape.map(|t| (r.rho, t)),
        })
        .collect();
    fit_points(&points, model, ell)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotFiles {
    pub t_pred: PathBuf,
    pub min_escape: PathBuf,
    pub min_escape_censored: PathBuf,
    pub script: PathBuf,
}

fn write_points(path: &Path, title: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut text = format!("# {title}\n# log(rho) log(t)\n");
    for (x, y) in points {
        let _ = writeln!(text, "{x:e} {y:e}");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes `t_pred.dat`, `min_escape.dat`, `min_escape_censored.dat`
/// (natural logs, two columns) and a gnuplot script into `dir`.
pub fn emit_plots(rows: &[SweepRow], dir: &Path) -> Result<PlotFiles> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows to plot".into()));
    }
    fs::create_dir_all(dir)?;
    let files = PlotFiles {
        t_pred: dir.join("t_pred.dat"),
        min_escape: dir.join("min_escape.dat"),
        min_escape_censored: dir.join("min_escape_censored.dat"),
        script: dir.join("plot.gp"),
    };
    let pred: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.t_pred.is_finite() && r.t_pred > 0.0)
        .map(|r| (r.rho.ln(), r.t_pred.ln()))
        .collect();
    let escaped: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.min_escape.map(|t| (r.rho.ln(), t.ln())))
        .collect();
    let censored: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.min_escape.is_none() && r.t_cap.is_finite() && r.t_cap > 0.0)
        .map(|r| (r.rho.ln(), r.t_cap.ln()))
        .collect();
    write_points(&files.t_pred, "predicted stability time", &pred)?;
    write_points(&files.min_escape, "minimum sampled escape time", &escaped)?;
    write_points(
        &files.min_escape_censored,
        "no escape before t_cap (censored)",
        &censored,
    )?;
    let script = "set xlabel 'log rho'\nset ylabel 'log t'\nset key top right\n\
plot 't_pred.dat' using 1:2 with linespoints title 't_pred', \\\n     \
'min_escape.dat' using 1:2 with points pt 7 title 'min escape', \\\n     \
'min_escape_censored.dat' using 1:2 with points pt 6 title 'censored at t_cap'\n";
    fs::write(&files.script, script)?;
    Ok(files)
}

/// Reads a two-column data file written by [`emit_plots`].
pub fn read_plot_data(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = l.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected two columns".into(),
            });
        }
        out.push((parse_num(cols[0], idx + 1)?, parse_num(cols[1], idx + 1)?));
    }
    Ok(out)
}
