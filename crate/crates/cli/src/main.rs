use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use edgekit::detect::cached_null_table;
use edgekit::ensemble_sim::{ks_against_tw, run_monte_carlo, EnsembleConfig, EntryDistribution};
use edgekit::green_flow::{comparison_functional, run_manifest, CheckManifest, CheckSpec, EdgeWindow, Status};
use edgekit::population::{check_subcritical, edge_params, MARGIN_THRESHOLD, XI_TOL};
use edgekit::stieltjes::{density, edge_exponent_probe, DEFAULT_ETA0};
use edgekit::tracy_widom::{cache_dir, cached_tw_table, TwGrid};
use edgekit::{EdgeError, PopulationSpectrum};

const EXIT_USAGE: u8 = 1;
const EXIT_DOMAIN: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;
const EXIT_VERIFY_FAIL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "edgekit", version, about = "Edge statistics of sample covariance matrices")]
struct Cli {
    /// Worker threads (default: available parallelism). Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for CSV/JSON files and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// xi_+, E_+, gamma_0 and the subcriticality margin of a spectrum.
    Edge {
        #[command(flatten)]
        spectrum: SpectrumArg,
    },
    /// Density of the deformed Marchenko-Pastur law on a grid.
    Density {
        #[command(flatten)]
        spectrum: SpectrumArg,
        /// Grid as lo:hi:points (default 400 cell midpoints of [0, 1.1 E_+]).
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ETA0)]
        eta0: f64,
    },
    /// Tracy-Widom F1/F2 table (cached under EDGEKIT_CACHE).
    TwTable {
        #[arg(long, default_value_t = TwGrid::default().s_min, allow_hyphen_values = true)]
        s_min: f64,
        #[arg(long, default_value_t = TwGrid::default().s_max)]
        s_max: f64,
        #[arg(long, default_value_t = TwGrid::default().step)]
        step: f64,
    },
    /// Monte Carlo samples of the rescaled top eigenvalues.
    Simulate {
        #[command(flatten)]
        spectrum: SpectrumArg,
        #[command(flatten)]
        run: RunArgs,
        /// Number of top eigenvalues per replicate.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// gaussian, rademacher or skewed.
        #[arg(long, default_value = "gaussian")]
        entries: String,
        /// Also write the KS distance of s1 to F1.
        #[arg(long)]
        ks: bool,
    },
    /// Green-function flow checks from a JSON check manifest (default suite if omitted).
    FlowVerify {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Edge window eta = N^{-eta_exp} for the Monte Carlo checks.
        #[arg(long)]
        eta_exp: Option<f64>,
    },
    /// Ratio-statistic signal detection against a GOE null table.
    Detect {
        /// Top three eigenvalues mu1,mu2,mu3.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Option<Vec<f64>>,
        /// Draw one data matrix from this spectrum instead of passing --mu.
        #[arg(long)]
        spectrum: Option<String>,
        /// Size of the GOE null matrices (default: N of the spectrum, else 400).
        #[arg(long = "N")]
        n: Option<usize>,
        /// Null-table replicates.
        #[arg(long = "reps", visible_alias = "null-reps", default_value_t = 5000)]
        null_reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Comparison functional of the rescaled model against W at the edge.
    Compare {
        #[command(flatten)]
        spectrum: SpectrumArg,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, allow_hyphen_values = true)]
        e1: f64,
        #[arg(long, allow_hyphen_values = true)]
        e2: f64,
        #[arg(long)]
        eta_exp: Option<f64>,
    },
    /// Re-run the command recorded in a manifest.json.
    Replay { manifest: PathBuf },
}

#[derive(Args, Debug)]
struct SpectrumArg {
    /// Descriptor (identity:M=..,N=.. | twopoint:a=..,b=..,w=..,M=..,N=.. |
    /// uniform:lo=..,hi=..,M=..,N=..) or spectrum file.
    #[arg(long)]
    spectrum: String,
    /// Overrides N of the spectrum.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long, default_value_t = MARGIN_THRESHOLD)]
    margin_threshold: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    command: String,
    /// Arguments without `--threads` and `--out`, so that the echo (and every
    /// other output file) is the same whatever directory or pool size is used.
    args: Vec<String>,
    parameters: BTreeMap<String, String>,
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Edge(EdgeError),
    Verification(usize),
}

impl From<EdgeError> for Failure {
    fn from(e: EdgeError) -> Self {
        Failure::Edge(e)
    }
}

type CliResult<T> = Result<T, Failure>;

impl SpectrumArg {
    fn load(&self) -> CliResult<PopulationSpectrum> {
        let spec = PopulationSpectrum::from_arg(&self.spectrum)?;
        Ok(match self.n {
            Some(n) => spec.with_n(n)?,
            None => spec,
        })
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Drops `--threads`/`--out` (and their values) so the echo is independent of them.
fn portable_args(raw: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in raw.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--threads" || a == "--out" {
            skip = true;
            continue;
        }
        if a.starts_with("--threads=") || a.starts_with("--out=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

fn parameters(args: &[String]) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    let mut i = 1;
    while i < args.len() {
        if let Some(key) = args[i].strip_prefix("--") {
            if let Some((k, v)) = key.split_once('=') {
                map.insert(k.to_string(), v.to_string());
            } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
                map.insert(key.to_string(), args[i + 1].clone());
                i += 1;
            } else {
                map.insert(key.to_string(), "true".to_string());
            }
        }
        i += 1;
    }
    map
}

fn write_manifest(dir: &Path, args: &[String], seed: Option<u64>) -> CliResult<()> {
    let manifest = RunManifest {
        command: args.first().cloned().unwrap_or_default(),
        args: args.to_vec(),
        parameters: parameters(args),
        seed,
    };
    write(dir, "manifest.json", &to_json(&manifest))
}

fn out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("edgekit_out"))
}

fn edge_json(spec: &PopulationSpectrum, threshold: f64) -> CliResult<serde_json::Value> {
    let p = edge_params(spec, XI_TOL)?;
    check_subcritical(spec, p.xi_plus, threshold)?;
    Ok(json!({
        "M": spec.m(),
        "N": spec.n(),
        "xi_plus": p.xi_plus,
        "E_plus": p.e_plus,
        "gamma0": p.gamma0,
        "margin": p.margin,
        "margin_threshold": threshold,
    }))
}

fn parse_grid(s: &str) -> CliResult<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::Usage(format!("grid must be lo:hi:points, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(hi > lo) || n < 2 {
        return Err(bad());
    }
    Ok((lo, hi, n))
}

fn window_from_exp(eta_exp: Option<f64>) -> CliResult<Option<EdgeWindow>> {
    match eta_exp {
        None => Ok(None),
        Some(e) if e > 0.0 => Ok(Some(EdgeWindow {
            eps: e - 2.0 / 3.0,
            ..EdgeWindow::default()
        })),
        Some(e) => Err(Failure::Usage(format!("--eta-exp must be positive, got {e}"))),
    }
}

fn run(cli: Cli, args: &[String]) -> CliResult<()> {
    let out = out_dir(&cli.out);
    match cli.command {
        Command::Edge { spectrum } => {
            let value = edge_json(&spectrum.load()?, spectrum.margin_threshold)?;
            let text = to_json(&value);
            print!("{text}");
            if cli.out.is_some() {
                write(&out, "edge.json", &text)?;
                write_manifest(&out, args, None)?;
            }
        }
        Command::Density { spectrum, grid, eta0 } => {
            let spec = spectrum.load()?;
            let edge = edge_json(&spec, spectrum.margin_threshold)?;
            let e_plus = edge["E_plus"].as_f64().expect("number");
            let energies: Vec<f64> = match grid {
                Some(g) => {
                    let (lo, hi, n) = parse_grid(&g)?;
                    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
                }
                // cell midpoints keep E = 0, where rho may blow up, off the grid
                None => (0..400).map(|k| 1.1 * e_plus * (k as f64 + 0.5) / 400.0).collect(),
            };
            let n = energies.len();
            let curve = density(&spec, &energies, eta0)?;
            let probe = edge_exponent_probe(&spec, eta0)?;
            write(&out, "density.csv", &curve.to_csv())?;
            let summary = json!({"edge": edge, "mass": curve.mass(), "failures": curve.failures, "edge_fit": probe});
            write(&out, "density.json", &to_json(&summary))?;
            write_manifest(&out, args, None)?;
            println!("wrote {} points to {}", n, out.join("density.csv").display());
        }
        Command::TwTable { s_min, s_max, step } => {
            let grid = TwGrid { s_min, s_max, step };
            let (table, cached) = cached_tw_table(&grid, cache_dir().as_deref())?;
            write(&out, "tw_table.csv", &table.to_csv())?;
            let info = json!({
                "grid": grid,
                "cache_key": grid.cache_key(),
                "cache_file": cached.map(|p| p.display().to_string()),
            });
            write(&out, "tw_table.json", &to_json(&info))?;
            write_manifest(&out, args, None)?;
            println!("wrote {} rows to {}", table.grid.len(), out.join("tw_table.csv").display());
        }
        Command::Simulate {
            spectrum,
            run,
            k,
            entries,
            ks,
        } => {
            let spec = spectrum.load()?;
            let law: EntryDistribution = entries.parse()?;
            let mut config = EnsembleConfig::new(spec, law, run.reps, k, run.seed);
            config.margin_threshold = spectrum.margin_threshold;
            let samples = run_monte_carlo(&config)?;
            write(&out, "samples.csv", &samples.to_csv())?;
            if ks {
                let (table, cached) = cached_tw_table(&TwGrid::default(), cache_dir().as_deref())?;
                let reference = cached.map_or_else(|| "in-memory".to_string(), |p| p.display().to_string());
                let report = ks_against_tw(&samples.column(0), &table, 1, &reference)?;
                write(&out, "ks.json", &to_json(&report))?;
                println!("KS distance of s1 to F1: {:.4} ({} samples)", report.statistic, report.n);
            }
            write_manifest(&out, args, Some(run.seed))?;
            println!("wrote {} replicates to {}", run.reps, out.join("samples.csv").display());
        }
        Command::FlowVerify { manifest, eta_exp } => {
            let mut checks = match manifest {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
                    serde_json::from_str::<CheckManifest>(&text)
                        .map_err(|e| Failure::Usage(format!("bad check manifest {}: {e}", path.display())))?
                }
                None => CheckManifest::default(),
            };
            if let Some(w) = window_from_exp(eta_exp)? {
                for c in &mut checks.checks {
                    if let CheckSpec::Decoupling(m) | CheckSpec::Optical(m) | CheckSpec::Cancellation(m) = c {
                        m.window = w;
                    }
                }
            }
            let reports = run_manifest(&checks)?;
            write(&out, "checks.json", &to_json(&checks))?;
            write(&out, "flow_reports.json", &to_json(&reports))?;
            let mut summary = String::from("check,N,t,status,residual,leading,ci\n");
            let mut fails = 0;
            for r in &reports {
                summary.push_str(&format!(
                    "{},{},{:e},{},{:e},{:e},{:e}\n",
                    r.check, r.n, r.t, r.status, r.residual, r.leading, r.ci
                ));
                if r.status == Status::Fail {
                    fails += 1;
                }
            }
            write(&out, "flow_summary.csv", &summary)?;
            write_manifest(&out, args, None)?;
            let count = |s: Status| reports.iter().filter(|r| r.status == s).count();
            for r in reports.iter().filter(|r| r.status != Status::Pass || r.ci > 0.0) {
                println!("{:<24} N={:<4} {:<12} residual {:.3e} leading {:.3e} ci {:.3e}", r.check, r.n, r.status, r.residual, r.leading, r.ci);
            }
            println!(
                "{} checks: {} PASS, {} FAIL, {} INCONCLUSIVE",
                reports.len(),
                count(Status::Pass),
                count(Status::Fail),
                count(Status::Inconclusive)
            );
            if fails > 0 {
                return Err(Failure::Verification(fails));
            }
        }
        Command::Detect {
            mu,
            spectrum,
            n,
            null_reps,
            seed,
        } => {
            let (mus, sample_n) = match (mu, spectrum) {
                (Some(m), None) if m.len() == 3 => (m, None),
                (None, Some(s)) => {
                    let spec = PopulationSpectrum::from_arg(&s)?;
                    let config = EnsembleConfig::new(spec.clone(), EntryDistribution::Gaussian, 1, 3, seed);
                    let samples = run_monte_carlo(&config)?;
                    (samples.raw[0].clone(), Some(spec.n()))
                }
                _ => return Err(Failure::Usage("detect needs either --mu mu1,mu2,mu3 or --spectrum".into())),
            };
            let null_n = n.or(sample_n).unwrap_or(400);
            let (table, _) = cached_null_table(null_n, null_reps, seed, cache_dir().as_deref())?;
            let result = table.detect(mus[0], mus[1], mus[2])?;
            let text = to_json(&json!({"mu": mus, "result": result}));
            write(&out, "detect.json", &text)?;
            write_manifest(&out, args, Some(seed))?;
            print!("{text}");
        }
        Command::Compare {
            spectrum,
            run,
            e1,
            e2,
            eta_exp,
        } => {
            let spec = spectrum.load()?;
            let window = window_from_exp(eta_exp)?.unwrap_or_default();
            let report = comparison_functional(&spec, e1, e2, &window, run.reps, run.seed)?;
            let text = to_json(&report);
            write(&out, "compare.json", &text)?;
            write_manifest(&out, args, Some(run.seed))?;
            print!("{text}");
        }
        Command::Replay { .. } => unreachable!("handled before dispatch"),
    }
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some_and(|n| n != 1) {
        log::warn!("built without the parallel feature; --threads ignored");
    }
    Ok(())
}

fn replay_argv(raw: &[String]) -> Option<Result<Vec<String>, String>> {
    let cli = Cli::try_parse_from(raw).ok()?;
    let Command::Replay { manifest } = cli.command else {
        return None;
    };
    let read = || -> Result<Vec<String>, String> {
        let text = std::fs::read_to_string(&manifest).map_err(|e| format!("cannot read {}: {e}", manifest.display()))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| format!("bad run manifest: {e}"))?;
        let mut argv = vec![raw[0].clone()];
        argv.extend(m.args);
        if let Some(t) = cli.threads {
            argv.push(format!("--threads={t}"));
        }
        // default: next to the manifest being replayed
        let dir = cli.out.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
        argv.push(format!("--out={}", dir.display()));
        Ok(argv)
    };
    Some(read())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut raw: Vec<String> = std::env::args().collect();
    match replay_argv(&raw) {
        Some(Ok(argv)) => raw = argv,
        Some(Err(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
        None => {}
    }
    let cli = match Cli::try_parse_from(&raw) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args = portable_args(&raw);
    let result = configure_threads(cli.threads).and_then(|_| run(cli, &args));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Verification(n)) => {
            eprintln!("verification failed: {n} check(s) FAIL");
            ExitCode::from(EXIT_VERIFY_FAIL)
        }
        Err(Failure::Edge(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                EdgeError::Convergence { .. } => EXIT_CONVERGENCE,
                ref e if e.is_domain_rejection() => EXIT_DOMAIN,
                _ => EXIT_USAGE,
            };
            ExitCode::from(code)
        }
    }
}
