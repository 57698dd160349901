//! Command-line interface for representation-reliability scoring.
//!
//! Exit codes: 0 success, 1 runtime or certification failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use reprel::io::{self, ModelBlob, RunConfig};
use reprel::{
    baselines, consistency, eval, mixture, synth, DistanceMetric, EnsembleEmbeddings, Error,
    LabeledDataset, MemberPair, NcScale, ReliabilityMetric, Result, ScoreVector, SetSimilarity,
};

#[derive(Parser)]
#[command(
    name = "reprel",
    version,
    about = "Reliability scores for ensembles of pre-trained embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score test points against reference embeddings.
    Score(ScoreArgs),
    /// Fit a mixture model on reference embeddings and persist it.
    FitMixture(FitMixtureArgs),
    /// Compute ground-truth reliability from downstream linear heads.
    Reli(ReliArgs),
    /// Correlate a score CSV with a reliability CSV (Kendall tau-b).
    Eval(EvalArgs),
    /// Rank several ensembles by score agreement with ground truth.
    Rank(RankArgs),
    /// Generate a synthetic clustered ensemble and write it to disk.
    Synth(SynthArgs),
    /// Certify the structural guarantees on synthetic instances.
    Certify(CertifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Nc,
    Dist,
    Norm,
    Ll,
    Fv,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => DistanceMetric::Euclidean,
            MetricArg::Cosine => DistanceMetric::Cosine,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimArg {
    Jaccard,
    Overlap,
}

impl From<SimArg> for SetSimilarity {
    fn from(s: SimArg) -> Self {
        match s {
            SimArg::Jaccard => SetSimilarity::Jaccard,
            SimArg::Overlap => SetSimilarity::Overlap,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReliMetricArg {
    Variance,
    Brier,
    Entropy,
}

impl From<ReliMetricArg> for ReliabilityMetric {
    fn from(m: ReliMetricArg) -> Self {
        match m {
            ReliMetricArg::Variance => ReliabilityMetric::NegVariance,
            ReliMetricArg::Brier => ReliabilityMetric::NegBrier,
            ReliMetricArg::Entropy => ReliabilityMetric::NegEntropy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Vmf,
}

#[derive(Parser)]
struct ScoreArgs {
    /// Reference embedding files, one per ensemble member.
    #[arg(long, num_args = 1.., required = true)]
    refs: Vec<PathBuf>,
    /// Test embedding files, aligned with --refs.
    #[arg(long, num_args = 1.., required = true)]
    tests: Vec<PathBuf>,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Optional key=value config file (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Neighborhood size for nc / averaging size for dist.
    #[arg(long)]
    k: Option<usize>,
    /// Radius for the ε-neighborhood variant of nc. Passing this switches
    /// nc from k-NN to ε-neighborhoods.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    sim: Option<SimArg>,
    /// L2-normalize all rows at load (norm scores stay unnormalized).
    #[arg(long)]
    normalize: bool,
    /// Rescale nc by the pair count so it saturates at 1.
    #[arg(long)]
    nc_normalized: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Parser)]
struct FitMixtureArgs {
    /// Reference embedding file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// L2-normalize rows before fitting (required for vmf unless the file
    /// already holds unit rows).
    #[arg(long)]
    normalize: bool,
    /// Output model blob path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Parser)]
struct ReliArgs {
    #[arg(long, num_args = 1.., required = true)]
    refs: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    tests: Vec<PathBuf>,
    /// Reference labels (one integer per row).
    #[arg(long)]
    ref_labels: PathBuf,
    /// Test labels (one integer per row).
    #[arg(long)]
    test_labels: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Performance metric behind the ground truth.
    #[arg(long, value_enum)]
    reli_metric: Option<ReliMetricArg>,
    /// Use the single C-way task instead of the one-vs-one decomposition.
    #[arg(long)]
    multiclass: bool,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Parser)]
struct EvalArgs {
    /// Score CSV produced by `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Reliability CSV produced by `reli`.
    #[arg(long)]
    reli: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Method name recorded in the report (defaults to the score file stem).
    #[arg(long)]
    method_name: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Parser)]
struct RankArgs {
    /// One score CSV per model, aligned with --relis.
    #[arg(long, num_args = 2.., required = true)]
    scores: Vec<PathBuf>,
    /// One reliability CSV per model.
    #[arg(long, num_args = 2.., required = true)]
    relis: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Parser)]
struct SynthArgs {
    /// key=value file with generator parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the generated files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Parser)]
struct CertifyArgs {
    /// Randomized trials for the neighbor-bound harness.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(args) => cmd_score(args),
        Command::FitMixture(args) => cmd_fit_mixture(args),
        Command::Reli(args) => cmd_reli(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Rank(args) => cmd_rank(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Certify(args) => cmd_certify(args),
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let map = io::parse_config_file(p)?;
        cfg.apply_file(&map)?;
    }
    Ok(cfg)
}

fn flag_override<T: PartialEq + std::fmt::Debug + Copy>(slot: &mut T, flag: Option<T>, name: &str) {
    if let Some(v) = flag {
        if *slot != v {
            log::info!("flag overrides {name}: {:?} -> {:?}", *slot, v);
            *slot = v;
        }
    }
}

/// Loads M aligned (reference, test) pairs, applying the shared reference
/// subsample cap. Returns the ensemble and the kept reference-row indices
/// (None when no subsampling happened).
fn load_ensemble(
    refs: &[PathBuf],
    tests: &[PathBuf],
    n_ref_limit: usize,
    seed: u64,
) -> Result<(EnsembleEmbeddings, Option<Vec<usize>>)> {
    if refs.len() != tests.len() {
        return Err(Error::Shape(format!(
            "{} reference files but {} test files",
            refs.len(),
            tests.len()
        )));
    }
    let ref_mats = refs.iter().map(|p| io::read_embeddings(p)).collect::<Result<Vec<_>>>()?;
    let test_mats = tests.iter().map(|p| io::read_embeddings(p)).collect::<Result<Vec<_>>>()?;
    let kept = io::subsample_indices(ref_mats[0].rows(), n_ref_limit, seed);
    if let Some(idx) = &kept {
        log::info!(
            "subsampling reference set: {} -> {} rows (seed {seed})",
            ref_mats[0].rows(),
            idx.len()
        );
    }
    let members = ref_mats
        .into_iter()
        .zip(test_mats)
        .map(|(r, t)| {
            let r = match &kept {
                Some(idx) => io::select_rows(&r, idx)?,
                None => r,
            };
            MemberPair::new(r, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((EnsembleEmbeddings::new(members)?, kept))
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let mut cfg = load_run_config(args.config.as_deref())?;
    flag_override(&mut cfg.k, args.k, "k");
    flag_override(&mut cfg.eps, args.eps, "eps");
    flag_override(&mut cfg.metric, args.metric.map(Into::into), "metric");
    flag_override(&mut cfg.sim, args.sim.map(Into::into), "sim");
    flag_override(&mut cfg.seed, args.seed, "seed");
    if args.normalize {
        flag_override(&mut cfg.normalize, Some(true), "normalize");
    }
    if args.nc_normalized {
        flag_override(&mut cfg.nc_normalized, Some(true), "nc_normalized");
    }

    let (raw, _) = load_ensemble(&args.refs, &args.tests, cfg.n_ref_limit, cfg.seed)?;
    let ens = if cfg.normalize { raw.normalized()? } else { raw.clone() };
    let scale = if cfg.nc_normalized { NcScale::MeanPairwise } else { NcScale::Standard };

    let scores: ScoreVector = match args.method {
        MethodArg::Nc => {
            if args.eps.is_some() {
                consistency::nc_eps_batch_scaled(&ens, cfg.eps, cfg.metric, cfg.sim, scale)?
            } else {
                consistency::nc_k_batch_scaled(&ens, cfg.k, cfg.metric, cfg.sim, scale)?
            }
        }
        MethodArg::Dist => {
            let per_member = ens
                .members()
                .iter()
                .map(|m| baselines::dist_k_scores(&m.reference, &m.test, cfg.dist_k, cfg.metric))
                .collect::<Result<Vec<_>>>()?;
            baselines::ensemble_average(&per_member)?
        }
        MethodArg::Norm => {
            // Norm is meaningful only on unnormalized representations.
            let per_member = raw
                .members()
                .iter()
                .map(|m| baselines::norm_scores(&m.test))
                .collect::<Result<Vec<_>>>()?;
            baselines::ensemble_average(&per_member)?
        }
        MethodArg::Ll => {
            let per_member = ens
                .members()
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let em = mixture::EmConfig {
                        components: cfg.components,
                        seed: cfg.seed.wrapping_add(i as u64),
                        ..Default::default()
                    };
                    let model = if cfg.normalize {
                        mixture::MixtureModel::Vmf(mixture::fit_vmf_mixture(&m.reference, &em)?.0)
                    } else {
                        mixture::MixtureModel::Gaussian(mixture::fit_gmm(&m.reference, &em)?.0)
                    };
                    mixture::ll_scores(&model, &m.test)
                })
                .collect::<Result<Vec<_>>>()?;
            baselines::ensemble_average(&per_member)?
        }
        MethodArg::Fv => baselines::feature_variance_batch(&ens)?,
    };

    io::write_score_csv(&scores, &args.output)?;
    println!(
        "wrote {} scores ({}) to {}",
        scores.len(),
        scores.polarity(),
        args.output.display()
    );
    Ok(())
}

fn cmd_fit_mixture(args: FitMixtureArgs) -> Result<()> {
    let mut cfg = load_run_config(args.config.as_deref())?;
    flag_override(&mut cfg.components, args.components, "components");
    flag_override(&mut cfg.seed, args.seed, "seed");
    if args.normalize {
        flag_override(&mut cfg.normalize, Some(true), "normalize");
    }

    let mut refs = io::read_embeddings(&args.input)?;
    if let Some(idx) = io::subsample_indices(refs.rows(), cfg.n_ref_limit, cfg.seed) {
        log::info!("subsampling reference set: {} -> {} rows", refs.rows(), idx.len());
        refs = io::select_rows(&refs, &idx)?;
    }
    if cfg.normalize {
        refs = refs.normalized()?;
    }
    let em = mixture::EmConfig { components: cfg.components, seed: cfg.seed, ..Default::default() };
    let (blob, trace) = match args.family {
        FamilyArg::Gaussian => {
            let (g, t) = mixture::fit_gmm(&refs, &em)?;
            (ModelBlob::Gaussian(g), t)
        }
        FamilyArg::Vmf => {
            let (v, t) = mixture::fit_vmf_mixture(&refs, &em)?;
            (ModelBlob::Vmf(v), t)
        }
    };
    io::write_model_blob(&blob, &args.output)?;
    println!(
        "fitted in {} iterations (converged: {}), final log-likelihood {}; wrote {}",
        trace.iterations,
        trace.converged,
        trace.log_likelihood.last().copied().unwrap_or(f64::NAN),
        args.output.display()
    );
    Ok(())
}

fn cmd_reli(args: ReliArgs) -> Result<()> {
    let mut cfg = load_run_config(args.config.as_deref())?;
    flag_override(
        &mut cfg.reliability_metric,
        args.reli_metric.map(Into::into),
        "reliability_metric",
    );
    flag_override(&mut cfg.seed, args.seed, "seed");
    if args.multiclass {
        flag_override(&mut cfg.multiclass, Some(true), "multiclass");
    }
    if args.normalize {
        flag_override(&mut cfg.normalize, Some(true), "normalize");
    }

    let (raw, kept) = load_ensemble(&args.refs, &args.tests, cfg.n_ref_limit, cfg.seed)?;
    let ens = if cfg.normalize { raw.normalized()? } else { raw };

    let mut ref_label_values = io::read_labels(&args.ref_labels)?;
    if let Some(idx) = &kept {
        ref_label_values = idx.iter().map(|&i| ref_label_values[i]).collect();
    }
    let test_label_values = io::read_labels(&args.test_labels)?;
    let num_classes = ref_label_values
        .iter()
        .chain(&test_label_values)
        .max()
        .map(|&m| m + 1)
        .unwrap_or(0)
        .max(2);
    let ref_labels = LabeledDataset::new(ref_label_values, num_classes)?;
    let test_labels = LabeledDataset::new(test_label_values, num_classes)?;

    let tasks = if cfg.multiclass {
        reprel::multiclass_task()
    } else {
        reprel::ovo_tasks(num_classes)?
    };
    let reli = reprel::compute_reliability(
        &ens,
        &ref_labels,
        &test_labels,
        &tasks,
        cfg.reliability_metric,
        &cfg.head,
    )?;
    io::write_reli_csv(&reli, &args.output)?;
    println!(
        "wrote {} reliability values ({}, {} tasks) to {}",
        reli.len(),
        reli.metric(),
        tasks.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_run_config(args.config.as_deref())?;
    let scores = io::read_score_csv(&args.scores)?;
    let reli = io::read_reli_csv(&args.reli)?;
    let method = args.method_name.unwrap_or_else(|| {
        args.scores
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "score".to_string())
    });
    let report = eval::correlate(&scores, &reli, &method, &cfg.digest())?;
    io::write_report_csv(std::slice::from_ref(&report), &args.output)?;
    println!("method       metric     n_points        tau");
    println!(
        "{:<12} {:<10} {:>8} {:>10.4}",
        report.method, report.reliability_metric, report.n_points, report.tau
    );
    Ok(())
}

fn cmd_rank(args: RankArgs) -> Result<()> {
    if args.scores.len() != args.relis.len() {
        return Err(Error::Shape(format!(
            "{} score files but {} reliability files",
            args.scores.len(),
            args.relis.len()
        )));
    }
    let scores = args
        .scores
        .iter()
        .map(|p| io::read_score_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let relis = args
        .relis
        .iter()
        .map(|p| io::read_reli_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let ranking = eval::rank_models(&scores, &relis)?;
    io::write_rank_csv(&ranking, &args.output)?;
    println!("model  mean_score  mean_reliability");
    for (i, (s, r)) in ranking
        .per_model_mean_score
        .iter()
        .zip(&ranking.per_model_mean_reliability)
        .enumerate()
    {
        println!("{i:<6} {s:>11.4} {r:>17.4}");
    }
    println!(
        "mean per-point tau: {:.4} over {} points",
        ranking.mean_per_point_tau, ranking.n_points_evaluated
    );
    match ranking.aggregate_tau {
        Some(t) => println!("rank agreement tau (mean vectors): {t:.4}"),
        None => println!("rank agreement tau (mean vectors): undefined"),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let map = match &args.config {
        Some(p) => io::parse_config_file(p)?,
        None => io::ConfigMap::new(),
    };
    let mut cfg = io::synth_config_from_map(&map)?;
    flag_override(&mut cfg.seed, args.seed, "seed");

    let data = synth::gen_clustered_ensemble(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (i, member) in data.ensemble.members().iter().enumerate() {
        io::write_embeddings(&member.reference, &args.out_dir.join(format!("ref_{i}.emb")))?;
        io::write_embeddings(&member.test, &args.out_dir.join(format!("test_{i}.emb")))?;
    }
    io::write_labels(data.ref_labels.labels(), &args.out_dir.join("ref_labels.txt"))?;
    io::write_labels(data.test_labels.labels(), &args.out_dir.join("test_labels.txt"))?;
    let ood: Vec<usize> = data.test_is_ood.iter().map(|&b| usize::from(b)).collect();
    io::write_labels(&ood, &args.out_dir.join("test_ood_mask.txt"))?;
    println!(
        "wrote {} members (n_ref={}, n_test={}, dim={}) to {}",
        cfg.members,
        cfg.n_ref,
        cfg.n_test,
        cfg.dim,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_certify(args: CertifyArgs) -> Result<()> {
    let mut failures = 0;

    // Check 1: representation variance can exceed any target while all
    // member heads predict identically.
    let spec = synth::CounterexampleSpec::generate(16, 4, 4.0, 200, 32, args.seed)?;
    let ce = synth::gen_counterexample(&spec)?;
    let fv = baselines::feature_variance(&ce.ensemble, ce.designated_row)?;
    let preds: Vec<Vec<f64>> = (0..ce.ensemble.num_members())
        .map(|i| ce.heads[i].logits(ce.ensemble.member(i).test.row(ce.designated_row)))
        .collect();
    let pred_var = reprel::downstream::pairwise_variance(&preds);
    report_check(
        &mut failures,
        format!("counterexample: representation variance {fv:.4} >= 4"),
        fv >= 4.0,
    );
    report_check(
        &mut failures,
        format!("counterexample: downstream prediction variance {pred_var:.3e} <= 1e-12"),
        pred_var <= 1e-12,
    );

    // Check 2: the consistent-neighbor bound holds on every randomized trial.
    let harness = synth::HarnessConfig { trials: args.trials, seed: args.seed, ..Default::default() };
    let reports = synth::theorem2_harness(&harness)?;
    let satisfied = reports.iter().filter(|r| r.satisfied).count();
    report_check(
        &mut failures,
        format!(
            "neighbor bound: {satisfied}/{} reports satisfied across {} trials",
            reports.len(),
            harness.trials
        ),
        satisfied == reports.len(),
    );

    if failures > 0 {
        Err(Error::InvalidData(format!("{failures} certification check(s) failed")))
    } else {
        println!("all certification checks passed");
        Ok(())
    }
}

fn report_check(failures: &mut usize, line: String, ok: bool) {
    if ok {
        println!("ok   {line}");
    } else {
        println!("FAIL {line}");
        *failures += 1;
    }
}
