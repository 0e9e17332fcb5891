use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use torstab::config::KeyValueWriter;
use torstab::dynamics::{
    escape_time, integrate, write_escape_csv, write_trajectory_csv, EscapeOptions, IntegratorOptions,
};
use torstab::experiment::{
    build_test_hamiltonian_with, certifying_amplitude, csv_line, emit_plots, fit_exponent, read_rows_csv, sweep,
    write_csv_header, ExperimentConfig, FitModel, FitSource, DEFAULT_LEVELS,
};
use torstab::frequency::{ball_size, diophantine_constant, golden_frequency, smallest_divisor, EnumerationBudget};
use torstab::normal_form::{resonant_normal_form, NormalFormParams};
use torstab::pipeline::{
    predicted_stability_time, remainder_bounds, rho_tilde, schedule_with_rho_tilde, write_bounds, write_schedule,
    write_times, BoundConstants,
};
use torstab::series::{parse_series, write_series};
use torstab::smoothing::{dyadic_widths, fourier_norm_bound_check, lacunary_series, smooth, verify_smoothing_estimate};
use torstab::{Error, Frequency, HolderClass, Series, Widths};

/// Environment variable holding the worker-thread count.
const WORKERS_ENV: &str = "TORSTAB_WORKERS";

#[derive(Parser)]
#[command(
    name = "torstab",
    version,
    about = "Effective stability laboratory for Hölder Hamiltonians near Diophantine tori"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diophantine constant γ_K of a frequency vector.
    Dioph {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        omega: Vec<f64>,
        #[arg(long)]
        tau: f64,
        #[arg(long = "K")]
        k: u32,
        /// Largest number of lattice points to enumerate.
        #[arg(long)]
        budget: Option<u128>,
    },
    /// Writes the lacunary test Hamiltonian as a series file.
    Hamiltonian {
        #[arg(long, default_value_t = 6.5)]
        ell: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coefficient amplitude; defaults to the amplitude certifying `--rho`.
        #[arg(long)]
        amplitude: Option<f64>,
        /// ρ values the schedule must certify (dynamics-only conditions).
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_LEVELS)]
        levels: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sharp Fourier truncation of a pure-angle series at |k|_1 ≤ 1/s.
    Smooth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smoothing error scaling on the lacunary family.
    SmoothVerify {
        #[arg(long)]
        ell: f64,
        #[arg(long)]
        p: u32,
        #[arg(long, value_enum, default_value_t = Family::Lacunary)]
        family: Family,
        #[arg(long, default_value_t = 2.0f64.powi(-10))]
        s_min: f64,
        #[arg(long, default_value_t = 0.125)]
        s_max: f64,
        #[arg(long, default_value_t = 24)]
        levels: u32,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resonant normal form of a Hamiltonian ω·I + f.
    Nf {
        #[arg(long)]
        ham: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        omega: Vec<f64>,
        #[arg(long = "K")]
        k: u32,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 2.0)]
        xi: f64,
        /// Non-resonance threshold; defaults to min |ω·k| over 0 < |k|_1 ≤ K.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, default_value_t = 6)]
        lie_order: usize,
        /// Directory for h, f_star and generator series files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Parameter schedule, remainder bounds and predicted stability time.
    Predict {
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        ell: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        constants: Option<PathBuf>,
        /// Largest Hölder majorant of the polynomial coefficients.
        #[arg(long, default_value_t = 1.0)]
        coeff_norm: f64,
        /// Use this ρ̃ instead of the one implied by the coefficient norm.
        #[arg(long)]
        rho_tilde: Option<f64>,
    },
    /// Monte-Carlo escape times from T^d × B_ρ.
    Escape {
        #[arg(long)]
        ham: PathBuf,
        #[arg(long)]
        rho: f64,
        /// Escape drift; defaults to ρ/2.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        tcap: f64,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to min(0.01, 0.01/‖ω‖_∞) with ω read from the linear terms.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump the trajectory of sample 0 as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// ρ-sweep of predicted stability times against sampled escapes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; defaults to `sweep.csv` in the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits the stability exponent from a sweep CSV.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, value_enum, default_value_t = SourceArg::Predicted)]
        source: SourceArg,
        #[arg(long, default_value_t = 6.5)]
        ell: f64,
    },
    /// Writes gnuplot data files from a sweep CSV.
    Plots {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Lacunary,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    PurePower,
    PowerWithLog,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Predicted,
    Escape,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numerical));
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}

fn configure_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{WORKERS_ENV} = {v:?} is not a count"))?;
        if n == 0 {
            bail!("{WORKERS_ENV} must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn read_series(path: &Path) -> anyhow::Result<Series> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_series(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn save_series(series: &Series, path: &Path) -> anyhow::Result<()> {
    let mut file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_series(series, &mut file)?;
    Ok(())
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

/// The linear part `ω·I` read off the terms `k = 0`, `|m|_1 = 1`.
fn linear_frequency(h: &Series) -> Vec<f64> {
    (0..h.dim())
        .map(|i| {
            let mut m = vec![0; h.dim()];
            m[i] = 1;
            h.get(&vec![0; h.dim()], &m).re
        })
        .collect()
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Dioph { omega, tau, k, budget } => {
            let w = Frequency::new(omega)?;
            let budget = budget.map_or_else(EnumerationBudget::default, |max_points| EnumerationBudget {
                max_points,
            });
            let cert = diophantine_constant(&w, tau, k, budget)?;
            let witness: Vec<String> = cert.witness.iter().map(i32::to_string).collect();
            print!(
                "{}",
                KeyValueWriter::new()
                    .entry("tau", cert.tau)
                    .entry("K", cert.cutoff)
                    .entry("gamma_K", cert.gamma)
                    .entry("alpha", cert.alpha())
                    .entry("witness", witness.join(" "))
                    .finish()
            );
        }
        Command::Hamiltonian {
            ell,
            seed,
            amplitude,
            rho,
            tau,
            levels,
            out,
        } => {
            let w = golden_frequency(2)?;
            let hc = HolderClass::new(ell, 2)?;
            let amplitude = match amplitude {
                Some(a) => a,
                None => {
                    let gamma = diophantine_constant(&w, tau, 200, EnumerationBudget::default())?.gamma;
                    certifying_amplitude(&w, &hc, tau, gamma, &rho, &BoundConstants::default(), levels)?
                }
            };
            let h = build_test_hamiltonian_with(&w, &hc, seed, amplitude, levels);
            let mut sink = output(out.as_deref())?;
            writeln!(
                sink,
                "# test Hamiltonian: ell = {ell}, seed = {seed}, amplitude = {amplitude:e}, levels = {levels}"
            )?;
            write_series(&h, &mut sink)?;
        }
        Command::Smooth { input, s, out } => {
            let g = read_series(&input)?;
            let r = smooth(&g, s)?;
            match out {
                Some(p) => save_series(&r.g_s, &p)?,
                None => write_series(&r.g_s, io::stdout().lock())?,
            }
            eprintln!(
                "s = {s:e} kept = {} dropped = {} dropped_mass = {:e} fourier_norm = {:e}",
                r.g_s.len(),
                r.dropped.len(),
                r.dropped_tail_mass,
                r.fourier_norm_at_s
            );
        }
        Command::SmoothVerify {
            ell,
            p,
            family: Family::Lacunary,
            s_min,
            s_max,
            levels,
            d,
            seed,
            out,
        } => {
            if !(s_min > 0.0 && s_min <= s_max && s_max <= 1.0) {
                bail!(Error::InvalidArgument(format!(
                    "need 0 < s_min <= s_max <= 1, got {s_min}, {s_max}"
                )));
            }
            let hc = HolderClass::new(ell, d)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Series = lacunary_series(d, ell, levels, 1.0, &vec![0; d], &mut rng);
            let lo = (-s_max.log2()).round() as u32;
            let hi = (-s_min.log2()).round() as u32;
            let widths = dyadic_widths(lo, hi);
            let report = verify_smoothing_estimate(&g, &hc, p, &widths)?;
            let mut sink = output(out.as_deref())?;
            writeln!(sink, "s,error,norm_ratio")?;
            for pt in &report.points {
                writeln!(sink, "{:e},{:e},{:e}", pt.s, pt.error, pt.norm_ratio)?;
            }
            let slope = report
                .slope
                .map_or_else(|| "saturated".to_string(), |x| format!("{x:.4}"));
            eprintln!("slope = {slope} target = {} pass = {}", report.target, report.pass);
            if widths.len() >= 3 {
                let nb = fourier_norm_bound_check(&g, &hc, &widths)?;
                eprintln!("norm ratio sup = {:e} bounded = {}", nb.sup_ratio, nb.pass);
            }
        }
        Command::Nf {
            ham,
            omega,
            k,
            sigma,
            rho,
            xi,
            alpha,
            max_iter,
            lie_order,
            out_dir,
        } => {
            let h = read_series(&ham)?;
            let w = Frequency::new(omega)?;
            let budget = EnumerationBudget {
                max_points: ball_size(w.dim(), k).max(EnumerationBudget::default().max_points),
            };
            let alpha = match alpha {
                Some(a) => a,
                None => smallest_divisor(&w, k, budget)?.0,
            };
            let mut params = NormalFormParams::new(alpha, k, Widths::new(sigma, rho)?, xi, 0.0)?;
            params.lie_order = lie_order;
            params.budget = budget;
            let r = resonant_normal_form(&h, &w, &params, max_iter.unwrap_or(2 * k as usize))?;
            fs::create_dir_all(&out_dir)?;
            save_series(&r.h, &out_dir.join("h.series"))?;
            save_series(&r.f_star, &out_dir.join("f_star.series"))?;
            for (j, chi) in r.generators.iter().enumerate() {
                save_series(chi, &out_dir.join(format!("chi_{}.series", j + 1)))?;
            }
            let mut w = KeyValueWriter::new();
            w.entry("certificate", if r.certified { "CERTIFIED" } else { "NOT-CERTIFIED" })
                .entry("alpha", alpha)
                .entry("K", k)
                .entry("f_norm", r.f_norm)
                .entry("f_star_norm", r.f_star_norm)
                .entry("loss_norm", r.loss_norm)
                .entry("contraction", r.contraction)
                .entry("contraction_target", r.contraction_target)
                .entry("action_ratio", r.action_ratio(&params))
                .entry("action_ratio_cap", 1.0 / (32.0 * xi))
                .entry("angle_ratio", r.angle_ratio(&params))
                .entry("angle_ratio_cap", 1.0 / (24.0 * xi))
                .entry("a_priori_action_ratio", r.a_priori_action_ratio)
                .entry("a_priori_angle_ratio", r.a_priori_angle_ratio)
                .entry("nonresonant_residue", r.nonresonant_residue)
                .entry("iterations", r.iterations)
                .entry("generators", r.generators.len())
                .comment("closeness is checked on (sigma/6, rho/2); intermediate domains are those of this iteration");
            for (i, d) in r.diagnostics.iter().enumerate() {
                w.entry(&format!("diagnostic.{i}"), d);
            }
            print!("{}", w.finish());
        }
        Command::Predict {
            rho,
            ell,
            tau,
            gamma,
            constants,
            coeff_norm,
            rho_tilde: rt,
        } => {
            let consts = match constants {
                Some(p) => {
                    BoundConstants::parse(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?
                }
                None => BoundConstants::default(),
            };
            let rt = rt.unwrap_or_else(|| rho_tilde(gamma, tau, &consts, coeff_norm));
            let schedule = schedule_with_rho_tilde(rho, rt, gamma, tau, ell, &consts, coeff_norm)?;
            let bounds = remainder_bounds(rho, ell, tau, &consts)?;
            let times = predicted_stability_time(rho, ell, tau, &consts)?;
            let mut w = KeyValueWriter::new();
            w.entry("rho", rho)
                .entry("ell", ell)
                .entry("tau", tau)
                .entry("gamma", gamma);
            write_schedule(&mut w, &schedule);
            w.entry("schedule.certified", schedule.certified());
            write_bounds(&mut w, &bounds);
            write_times(&mut w, &times);
            print!("{}", w.finish());
        }
        Command::Escape {
            ham,
            rho,
            threshold,
            tcap,
            n,
            seed,
            dt,
            out,
            trajectory,
        } => {
            let h = read_series(&ham)?;
            let omega = linear_frequency(&h);
            let sup = omega.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let dt = dt.unwrap_or_else(|| IntegratorOptions::default_dt(sup));
            let mut opts = EscapeOptions::new(rho, tcap, dt);
            if let Some(t) = threshold {
                opts.threshold = t;
            }
            opts.n_samples = n;
            opts.seed = seed;
            let record = escape_time(&h, &opts)?;
            write_escape_csv(&record, output(out.as_deref())?)?;
            let min = record
                .min_escape
                .map_or_else(|| format!("censored at {:e}", record.t_cap), |t| format!("{t:e}"));
            eprintln!(
                "min_escape = {min} censored = {}/{} ballistic_bound = {:e} max_energy_drift = {:e}",
                record.censored_count(),
                record.n_samples,
                record.ballistic_bound,
                record.max_energy_drift
            );
            if let Some(path) = trajectory {
                let s0 = &record.samples[0];
                let io = IntegratorOptions::new(dt).with_sample_cap(s0.time);
                let tr = integrate(&h, &s0.theta0, &s0.action0, s0.time, &io)?;
                write_trajectory_csv(&tr, output(Some(&path))?)?;
            }
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = match out {
                Some(p) => p,
                None => {
                    fs::create_dir_all(&cfg.output_dir)?;
                    cfg.output_dir.join("sweep.csv")
                }
            };
            let mut sink =
                io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            write_csv_header(&mut sink)?;
            sink.flush()?;
            let rows = sweep(&cfg, |row| {
                writeln!(sink, "{}", csv_line(row))?;
                sink.flush()?;
                Ok(())
            })?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            let violations = rows.iter().filter(|r| !r.no_escape_before_prediction()).count();
            eprintln!(
                "{} rows written to {} ({failed} failed, {violations} with escapes before t_pred)",
                rows.len(),
                path.display()
            );
        }
        Command::Fit {
            csv,
            model,
            source,
            ell,
        } => {
            let rows = read_rows_csv(&fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?)?;
            let model = match model {
                ModelArg::PurePower => FitModel::PurePower,
                ModelArg::PowerWithLog => FitModel::PowerWithLog,
            };
            let source = match source {
                SourceArg::Predicted => FitSource::Predicted,
                SourceArg::Escape => FitSource::Escape,
            };
            let fit = fit_exponent(&rows, model, source, ell)?;
            let residuals: Vec<String> = fit.residuals.iter().map(|r| format!("{r:e}")).collect();
            print!(
                "{}",
                KeyValueWriter::new()
                    .entry("p", fit.p)
                    .entry("c0", fit.c0)
                    .entry("rms", fit.rms)
                    .entry("model_mismatch", fit.model_mismatch)
                    .entry("residuals", residuals.join(", "))
                    .finish()
            );
        }
        Command::Plots { csv, out_dir } => {
            let rows = read_rows_csv(&fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?)?;
            let dir = out_dir.unwrap_or_else(|| csv.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
            let files = emit_plots(&rows, &dir)?;
            for p in [
                &files.t_pred,
                &files.min_escape,
                &files.min_escape_censored,
                &files.script,
            ] {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
