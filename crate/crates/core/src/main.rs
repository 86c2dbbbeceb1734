use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blockmix::dataset::{read_labels, write_labels};
use blockmix::{
    ari, crosstab, fit_joint, generate, regressor_refine, search, two_structures_spec, BlockParams,
    Dataset, EmControl, Error, GaControl, GeneratorSpec, JointFit, ModelSpec, SearchOutcome,
};

#[derive(Parser)]
#[command(
    name = "blockmix",
    version,
    about = "Model-based clustering and clusterwise regression over variable blocks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; when omitted one is drawn from entropy and printed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for fitting (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one fully specified joint model to a dataset.
    Fit(FitArgs),
    /// Search partitions, component counts and structures by genetic algorithm.
    Search(SearchArgs),
    /// Sample a synthetic dataset from a generator specification.
    Simulate(SimulateArgs),
    /// Cross-classify two label files and report the adjusted Rand index.
    Eval(EvalArgs),
}

#[derive(Args)]
struct EmArgs {
    /// EM convergence tolerance on the log-likelihood.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Random restarts on top of the k-means start.
    #[arg(long, default_value_t = 10)]
    n_starts: usize,
}

impl EmArgs {
    fn control(&self, seed: u64) -> EmControl {
        EmControl {
            tol: self.tol,
            max_iter: self.max_iter,
            n_starts: self.n_starts,
            seed,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Model specification JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Write the fitted joint model as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// True-label files, one per informative block, for aRi reporting.
    #[arg(long)]
    truth: Vec<PathBuf>,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Args)]
struct SearchArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 120)]
    n1: usize,
    #[arg(long, default_value_t = 80)]
    n2: usize,
    #[arg(long, default_value_t = 30)]
    d1max: usize,
    #[arg(long, default_value_t = 20)]
    d2max: usize,
    #[arg(long, default_value_t = 3)]
    k1max: usize,
    #[arg(long, default_value_t = 3)]
    k2max: usize,
    #[arg(long, default_value_t = 0.8)]
    crossover_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    mutation_prob: f64,
    /// Search covariance structures as well.
    #[arg(long)]
    parsimonious: bool,
    /// Refine regressor subsets around the selected model.
    #[arg(long)]
    refine: bool,
    /// Write the best model as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the fitness trace as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// EM restarts per block fit inside the search.
    #[arg(long, default_value_t = 2)]
    n_starts: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator specification JSON.
    #[arg(long, conflicts_with = "builtin")]
    spec: Option<PathBuf>,
    /// A bundled design: `two-structures`.
    #[arg(long)]
    builtin: Option<String>,
    #[arg(long)]
    n: usize,
    /// Output dataset CSV; label files are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// First label file.
    #[arg(long)]
    a: PathBuf,
    /// Second label file.
    #[arg(long)]
    b: PathBuf,
    /// Also write the contingency table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let seed = cli.seed.unwrap_or_else(|| {
        let s: u64 = rand::random();
        println!("seed: {s} (drawn from entropy; pass --seed {s} to reproduce)");
        s
    });
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args, seed),
        Command::Search(args) => cmd_search(args, seed),
        Command::Simulate(args) => cmd_simulate(args, seed, cli.seed.is_some()),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn summarize_joint(fit: &JointFit, n: usize, truth: &[Vec<usize>]) -> blockmix::Result<String> {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(&mut out, "partition: {}", fit.spec.partition).unwrap();
    let g = fit.spec.partition.g();
    for (idx, block) in fit.blocks.iter().enumerate() {
        let name = block_name(&fit.spec, idx);
        let detail = match &block.params {
            BlockParams::Gmm(p) => format!("K={} cov={:?}", p.k, p.cov_param),
            BlockParams::CwReg(p) => format!("K={} cov={:?}", p.k, p.cov_param),
            BlockParams::LinReg(p) => format!("form={:?}", p.sigma_form),
        };
        writeln!(
            &mut out,
            "{name}: {detail} loglik={:.3} npar={}",
            block.loglik, block.npar
        )
        .unwrap();
    }
    writeln!(
        &mut out,
        "loglik={:.3} npar={} bic={:.2} (n={n})",
        fit.loglik, fit.npar, fit.bic
    )
    .unwrap();
    for (b, labels) in truth.iter().enumerate() {
        if b >= g {
            break;
        }
        let index = ari(labels, &fit.assignments[b])?;
        writeln!(&mut out, "aRi block {} vs truth: {index:.3}", b + 1).unwrap();
    }
    Ok(out)
}

fn block_name(spec: &ModelSpec, idx: usize) -> String {
    let g = spec.partition.g();
    if idx < g {
        format!("S{}", idx + 1)
    } else if idx == g && !spec.partition.uninformative().is_empty() {
        "U".to_string()
    } else {
        "I".to_string()
    }
}

fn cmd_fit(args: FitArgs, seed: u64) -> blockmix::Result<u8> {
    let data = Dataset::read_csv(&args.data)?;
    let spec: ModelSpec = serde_json::from_str(&fs::read_to_string(&args.spec)?)?;
    let ctrl = args.em.control(seed);
    let fit = fit_joint(&data, &spec, &ctrl)?;
    let truth = args
        .truth
        .iter()
        .map(read_labels)
        .collect::<blockmix::Result<Vec<_>>>()?;
    print!("{}", summarize_joint(&fit, data.n(), &truth)?);
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&fit)?)?;
        println!("model written to {}", out.display());
    }
    Ok(0)
}

fn cmd_search(args: SearchArgs, seed: u64) -> blockmix::Result<u8> {
    let data = Dataset::read_csv(&args.data)?;
    let ctrl = GaControl {
        n1: args.n1,
        n2: args.n2,
        d1max: args.d1max,
        d2max: args.d2max,
        k1max: args.k1max,
        k2max: args.k2max,
        crossover_prob: args.crossover_prob,
        mutation_prob: args.mutation_prob,
        parsimonious: args.parsimonious,
        seed,
        em: EmControl {
            tol: args.tol,
            max_iter: args.max_iter,
            n_starts: args.n_starts,
            seed,
        },
    };
    let SearchOutcome {
        mut best,
        history,
        truncated,
    } = search(&data, &ctrl)?;
    println!("selected: {}", best.spec.partition);
    println!(
        "K = {:?}, cov = {:?}, noise = {:?}",
        best.spec.components, best.spec.covariances, best.spec.noise_form
    );
    println!("bic = {:.2}", best.bic);
    if args.refine {
        best = regressor_refine(&data, &best, &ctrl.em)?;
        println!("refined: {}", best.spec.partition);
        for g in 1..best.spec.partition.g() {
            println!(
                "  S{} regressors: {:?}",
                g + 1,
                best.spec.partition.regressors_for_block(g)
            );
        }
        if !best.spec.partition.uninformative().is_empty() {
            println!(
                "  U regressors: {:?}",
                best.spec.partition.u_regressor_set()
            );
        }
        println!("refined bic = {:.2}", best.bic);
    }
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&best)?)?;
        println!("model written to {}", out.display());
    }
    if let Some(path) = &args.history {
        let mut csv = String::from("phase,generation,best_bic,mean_bic\n");
        for rec in &history {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                rec.phase, rec.generation, rec.best_bic, rec.mean_bic
            ));
        }
        fs::write(path, csv)?;
        println!("history written to {}", path.display());
    }
    if truncated {
        println!("note: generation cap reached while fitness was still improving");
        return Ok(4);
    }
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs, seed: u64, seed_given: bool) -> blockmix::Result<u8> {
    let mut spec: GeneratorSpec = match (&args.spec, &args.builtin) {
        (Some(path), None) => serde_json::from_str(&fs::read_to_string(path)?)?,
        (None, Some(name)) => match name.as_str() {
            "two-structures" => two_structures_spec(seed),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown builtin design `{other}` (available: two-structures)"
                )))
            }
        },
        _ => {
            return Err(Error::InvalidInput(
                "pass exactly one of --spec and --builtin".into(),
            ))
        }
    };
    if seed_given {
        spec.seed = seed;
    }
    if args.n == 0 {
        return Err(Error::InvalidInput("need n >= 1".into()));
    }
    let (data, labels) = generate(&spec, args.n)?;
    data.write_csv(&args.out)?;
    println!(
        "wrote {}x{} dataset to {}",
        data.n(),
        data.l(),
        args.out.display()
    );
    for (g, block_labels) in labels.iter().enumerate() {
        let path = labels_path(&args.out, g + 1);
        write_labels(&path, block_labels)?;
        println!("block {} labels written to {}", g + 1, path.display());
    }
    Ok(0)
}

fn labels_path(out: &Path, block: usize) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    out.with_file_name(format!("{stem}.labels{block}.csv"))
}

fn cmd_eval(args: EvalArgs) -> blockmix::Result<u8> {
    let a = read_labels(&args.a)?;
    let b = read_labels(&args.b)?;
    let table = crosstab(&a, &b)?;
    print!("{table}");
    println!("aRi = {:.3}", ari_checked(&a, &b)?);
    if let Some(path) = &args.csv {
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        fs::write(path, buf)?;
        println!("table written to {}", path.display());
    }
    Ok(0)
}

fn ari_checked(a: &[usize], b: &[usize]) -> blockmix::Result<f64> {
    ari(a, b)
}
