use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use pibp_core::cluster::{build_tree, permuted_labels, permuted_tree, Metric};
use pibp_core::experiments::{
    derive_seed, make_sim1_truth, make_sim2_truth, run_prior_mass_study, run_replicated, run_scaling,
    sim1_superblocks, standard_mass_truths, write_mass_csv, ExperimentConfig, ExperimentTable, PriorKind, Scenario,
    SIM2_BLOCKS,
};
use pibp_core::io;
use pibp_core::model::{
    factor_decomposition, generate_data, similarity_error, truncated_feature_count, BinaryFactorMatrix, NoiseParams,
};
use pibp_core::newick::{parse_newick, to_newick};
use pibp_core::prior::AlphaMode;
use pibp_core::sampler::{run_chain, similarity_csv, write_samples_jsonl, ChainRun, SamplerConfig, Truncation};
use pibp_core::tree::{flat_tree, group_tree};

use crate::manifest::Run;
use crate::settings::Settings;
use crate::{
    BuildTreeArgs, Cli, CliError, Command, ExperimentArgs, ExperimentScenario, FitArgs, Linkage, MetricArg,
    SimScenario, SimulateArgs,
};

const STREAM_SIM_DATA: u64 = 101;
const STREAM_SIM_TRUTH: u64 = 102;
const STREAM_FIT_CHAIN: u64 = 103;

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let seed = s.get("seed", cli.seed, 0u64)?;
    let out_dir: PathBuf = s.get("out_dir", cli.out_dir, PathBuf::from("."))?;
    let name = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::BuildTree(_) => "build-tree",
        Command::Fit(_) => "fit",
        Command::Experiment(_) => "experiment",
    };
    let mut run = Run::start(name, &out_dir)?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &mut s, seed, &mut run)?,
        Command::BuildTree(a) => build(a, &mut s, &mut run)?,
        Command::Fit(a) => fit(a, &mut s, seed, &mut run)?,
        Command::Experiment(a) => experiment(a, &mut s, seed, &mut run)?,
    }
    let path = run.finish(seed, s.resolved().clone())?;
    eprintln!("pibp {name}: wrote {}", path.display());
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> pibp_core::Result<()>) -> Result<()> {
    let mut w = io::create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_binary(path: &Path, run: &mut Run) -> Result<BinaryFactorMatrix> {
    run.input(path);
    Ok(io::read_binary_matrix(io::open(path)?)?)
}

#[derive(Serialize)]
struct TruthSummary {
    scenario: SimScenario,
    n: usize,
    p: usize,
    k0: usize,
    sigma_a_sq: f64,
    sigma_x_sq: f64,
    data_seed: u64,
    truth_seed: Option<u64>,
    k01: Option<usize>,
    k02: Option<usize>,
    k0_star: Option<usize>,
}

fn simulate(a: SimulateArgs, s: &mut Settings, seed: u64, run: &mut Run) -> Result<()> {
    let scenario = s.get("scenario", a.scenario, SimScenario::Sim1)?;
    let n: usize = s.required("n", a.n)?;
    let p: usize = s.required("p", a.p)?;
    let sa = s.get("sigma_a_sq", a.sigma_a_sq, 1.0)?;
    let sx = s.get("sigma_x_sq", a.sigma_x_sq, 0.5)?;
    let params = NoiseParams::new(sa, sx).map_err(|e| CliError::Usage(e.to_string()))?;
    if p == 0 {
        return Err(CliError::Usage("--p must be positive".into()));
    }
    let data_seed = derive_seed(seed, STREAM_SIM_DATA, 0);
    let (z0, labels, truth_seed) = match scenario {
        SimScenario::Sim1 => {
            let (z0, labels) = make_sim1_truth(n).map_err(|e| CliError::Usage(e.to_string()))?;
            (z0, labels, None)
        }
        SimScenario::Sim2 => {
            let ts = derive_seed(seed, STREAM_SIM_TRUTH, 0);
            let z0 = make_sim2_truth(n, ts).map_err(|e| CliError::Usage(e.to_string()))?;
            (z0, (0..n).map(|i| i * SIM2_BLOCKS / n).collect(), Some(ts))
        }
    };
    let x = generate_data(&z0, params, p, data_seed)?;
    write_file(&run.output("X.csv"), |w| io::write_data_matrix(w, &x))?;
    write_file(&run.output("Z0.csv"), |w| io::write_binary_matrix(w, &z0))?;
    write_file(&run.output("labels.csv"), |w| io::write_labels(w, &labels))?;
    let d = match scenario {
        SimScenario::Sim1 => Some(factor_decomposition(&z0, &sim1_superblocks(&labels))?),
        SimScenario::Sim2 => None,
    };
    let summary = TruthSummary {
        scenario,
        n,
        p,
        k0: z0.k(),
        sigma_a_sq: sa,
        sigma_x_sq: sx,
        data_seed,
        truth_seed,
        k01: d.map(|d| d.k01),
        k02: d.map(|d| d.k02),
        k0_star: d.map(|d| d.k0_star),
    };
    write_json(&run.output("truth.json"), &summary)
}

fn build(a: BuildTreeArgs, s: &mut Settings, run: &mut Run) -> Result<()> {
    s.get("linkage", a.linkage, Linkage::Complete)?;
    let two_group: Option<f64> = s.optional("two_group", a.two_group)?;
    let permute: Option<u64> = s.optional("permute", a.permute)?;
    let tree = if let Some(eta) = two_group {
        let path: PathBuf = s.required("partition", a.partition)?;
        run.input(&path);
        let mut labels = io::read_labels(io::open(&path)?)?;
        if let Some(seed) = permute {
            labels = permuted_labels(&labels, seed);
        }
        if !(0.0..1.0).contains(&eta) {
            return Err(CliError::Usage(format!("--two-group must lie in [0, 1), got {eta}")));
        }
        group_tree(&labels, eta)?
    } else {
        let path: PathBuf = s.required("input", a.input)?;
        run.input(&path);
        let source = io::read_data_matrix(io::open(&path)?)?;
        let binary = source.values().iter().all(|&v| v == 0.0 || v == 1.0);
        let default = if binary { MetricArg::Hamming } else { MetricArg::Euclidean };
        let metric = match s.get("metric", a.metric, default)? {
            MetricArg::Hamming => Metric::Hamming,
            MetricArg::Euclidean => Metric::Euclidean,
        };
        let built = match permute {
            Some(seed) => permuted_tree(&source, metric, seed)?,
            None => build_tree(&source, metric)?,
        };
        if built.degenerate {
            eprintln!("pibp build-tree: warning: all rows are identical, writing the flat tree");
        }
        built.tree
    };
    let text = to_newick(&tree) + "\n";
    let out = run.output("tree.nwk");
    std::fs::write(&out, text).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

#[derive(Serialize)]
struct MapSummary {
    chain: usize,
    chain_seed: u64,
    iteration: usize,
    log_posterior: f64,
    log_likelihood: f64,
    alpha: f64,
    sigma_a_sq: f64,
    sigma_x_sq: f64,
    k_plus: usize,
    k_hat: usize,
    min_share: usize,
    f_norm: Option<f64>,
}

fn fit(a: FitArgs, s: &mut Settings, seed: u64, run: &mut Run) -> Result<()> {
    let x_path: PathBuf = s.required("x", a.x)?;
    run.input(&x_path);
    let x = io::read_data_matrix(io::open(&x_path)?)?;
    let tree_path: Option<PathBuf> = s.optional("tree", a.tree)?;
    let normalize = s.flag("normalize_depth", a.normalize_depth)?;
    let tree = match &tree_path {
        Some(p) => {
            run.input(p);
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            parse_newick(&text, normalize)?
        }
        None => flat_tree(x.n())?,
    };
    if tree.leaf_count() != x.n() {
        return Err(CliError::Data(format!("tree has {} leaves but X has {} rows", tree.leaf_count(), x.n())));
    }
    let truth_path: Option<PathBuf> = s.optional("truth", a.truth)?;
    let truth = truth_path.as_deref().map(|p| read_binary(p, run)).transpose()?;
    let defaults = SamplerConfig::default();
    let mut config = SamplerConfig {
        iterations: s.get("steps", a.steps, defaults.iterations)?,
        burn_in: s.get("burn_in", a.burn_in, defaults.burn_in)?,
        thin: s.get("thin", a.thin, defaults.thin)?,
        fixed_alpha: s.optional("alpha", a.alpha)?,
        ..defaults
    };
    if let Some(k) = s.optional("truncate", a.truncate)? {
        config.truncation = Truncation::Finite(k);
    }
    match (s.optional("fixed_sigma_a_sq", a.fixed_sigma_a_sq)?, s.optional("fixed_sigma_x_sq", a.fixed_sigma_x_sq)?) {
        (Some(sa), Some(sx)) => {
            config.fixed_params = Some(NoiseParams::new(sa, sx).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        (None, None) => {}
        _ => return Err(CliError::Usage("fixed variances must be given together".into())),
    }
    config.validate()?;
    let chains: usize = s.get("chains", a.chains, 1)?;
    if chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }
    let min_share = s.get("min_share", a.min_share, 5)?;
    let seeds: Vec<u64> = (0..chains).map(|c| derive_seed(seed, STREAM_FIT_CHAIN, c as u64)).collect();
    let runs: Vec<ChainRun> = seeds
        .par_iter()
        .map(|&cs| run_chain(&x, &tree, &SamplerConfig { seed: cs, ..config.clone() }))
        .collect::<pibp_core::Result<_>>()?;

    for (c, r) in runs.iter().enumerate() {
        let name = if chains == 1 { "samples.jsonl".to_owned() } else { format!("samples-chain{c}.jsonl") };
        write_file(&run.output(&name), |w| write_samples_jsonl(&r.samples, w))?;
    }
    let trace_path = run.output("trace.csv");
    write_file(&trace_path, |w| {
        writeln!(w, "chain,iteration,k_plus,alpha,log_posterior")?;
        for (c, r) in runs.iter().enumerate() {
            for t in &r.trace {
                writeln!(w, "{c},{},{},{},{}", t.iteration, t.k_plus, t.alpha, t.log_posterior)?;
            }
        }
        Ok(())
    })?;

    // Highest log posterior over all chains; ties go to the lower chain, then the earlier sample.
    let mut best: Option<(usize, &pibp_core::sampler::PosteriorSample)> = None;
    for (c, r) in runs.iter().enumerate() {
        for smp in &r.samples {
            if best.is_none_or(|(_, b)| smp.log_posterior > b.log_posterior) {
                best = Some((c, smp));
            }
        }
    }
    let (chain, map) = best.ok_or_else(|| CliError::Usage("no samples were retained".into()))?;
    let f_norm = truth.as_ref().map(|z0| similarity_error(&map.z, z0)).transpose()?;
    let summary = MapSummary {
        chain,
        chain_seed: seeds[chain],
        iteration: map.iteration,
        log_posterior: map.log_posterior,
        log_likelihood: map.log_likelihood,
        alpha: map.alpha,
        sigma_a_sq: map.params.sigma_a_sq,
        sigma_x_sq: map.params.sigma_x_sq,
        k_plus: map.k_plus(),
        k_hat: truncated_feature_count(&map.z, min_share),
        min_share,
        f_norm,
    };
    write_json(&run.output("map.json"), &summary)?;
    let sim = similarity_csv(&map.similarity()) + "\n";
    let sim_path = run.output("map_similarity.csv");
    std::fs::write(&sim_path, sim).map_err(|e| CliError::Data(format!("{}: {e}", sim_path.display())))?;
    write_file(&run.output("map_z.csv"), |w| io::write_binary_matrix(w, &map.z))
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|t| t.trim().parse().map_err(|_| CliError::Usage(format!("--{flag}: cannot parse {t:?}"))))
        .collect()
}

/// Parses "(192,30),(192,200)".
pub fn parse_rows(text: &str) -> Result<Vec<(usize, usize)>> {
    let bad = || CliError::Usage(format!("--rows: expected pairs like \"(192,30),(192,200)\", got {text:?}"));
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let inner = compact.strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
    inner
        .split("),(")
        .map(|pair| {
            let (n, p) = pair.split_once(',').ok_or_else(bad)?;
            Ok((n.parse().map_err(|_| bad())?, p.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn table_rows(scenario: ExperimentScenario) -> Vec<(usize, usize)> {
    let (ns, ps): (&[usize], &[usize]) = match scenario {
        ExperimentScenario::Table2 => (&[120, 180, 240], &[15, 30, 60]),
        _ => (&[192, 288, 384], &[20, 30, 100, 200]),
    };
    ps.iter().flat_map(|&p| ns.iter().map(move |&n| (n, p))).collect()
}

fn parse_priors(text: &str, eta: f64, mis_eta: f64) -> Result<Vec<PriorKind>> {
    text.split(',')
        .map(|t| match t.trim() {
            "ibp" => Ok(PriorKind::Ibp),
            "pibp" => Ok(PriorKind::Pibp { eta }),
            "mispibp" => Ok(PriorKind::Mispibp { eta: mis_eta }),
            other => Err(CliError::Usage(format!("unknown prior {other:?}"))),
        })
        .collect()
}

fn experiment(a: ExperimentArgs, s: &mut Settings, seed: u64, run: &mut Run) -> Result<()> {
    let scenario: ExperimentScenario = s.required("scenario", a.scenario)?;
    if scenario == ExperimentScenario::PriorMass {
        let n = s.get("n", a.n, 6usize)?;
        let draws = s.get("draws", a.draws, 1_000_000u64)?;
        let etas: Vec<f64> = parse_list("etas", &s.get("etas", a.etas, "0,0.5".to_owned())?)?;
        let hyper = s.flag("alpha_hyperprior", a.alpha_hyperprior)?;
        let alpha = s.get("alpha", a.alpha, 1.0)?;
        let mode = if hyper { AlphaMode::GammaHyperprior } else { AlphaMode::Fixed(alpha) };
        let truths = standard_mass_truths(n).map_err(|e| CliError::Usage(e.to_string()))?;
        let rows = run_prior_mass_study(&truths, &etas, draws, mode, seed)?;
        write_file(&run.output("prior_mass.csv"), |w| write_mass_csv(&rows, w))?;
        return write_json(&run.output("prior_mass.json"), &rows);
    }
    let sim = if scenario == ExperimentScenario::Table2 { Scenario::Sim2 } else { Scenario::Sim1 };
    let default_priors = if scenario == ExperimentScenario::Scaling { "ibp,pibp" } else { "ibp,pibp,mispibp" };
    let eta = s.get("eta", a.eta, 0.8)?;
    let mis_default = if sim == Scenario::Sim1 { 0.5 } else { 0.8 };
    let mis_eta = s.get("mis_eta", a.mis_eta, mis_default)?;
    let priors = parse_priors(&s.get("priors", a.priors, default_priors.to_owned())?, eta, mis_eta)?;
    let default_reps = if scenario == ExperimentScenario::Scaling { 10 } else { 40 };
    let replicates = s.get("replicates", a.replicates, default_reps)?;
    let mcmc_defaults = SamplerConfig::default();
    let mcmc = SamplerConfig {
        iterations: s.get("steps", a.steps, mcmc_defaults.iterations)?,
        burn_in: s.get("burn_in", a.burn_in, mcmc_defaults.burn_in)?,
        ..mcmc_defaults
    };
    let min_share = s.get("min_share", a.min_share, 5)?;
    let base = |n: usize, p: usize, prior: PriorKind| ExperimentConfig {
        replicates,
        mcmc: mcmc.clone(),
        master_seed: seed,
        min_share,
        ..ExperimentConfig::new(sim, n, p, prior)
    };

    if scenario == ExperimentScenario::Scaling {
        let n = s.get("n", a.n, 192usize)?;
        let grid: Vec<usize> = parse_list("p-grid", &s.get("p_grid", a.p_grid, "20,30,100,200".to_owned())?)?;
        let table = run_scaling(&base(n, grid[0], priors[0]), &priors, &grid)?;
        for d in &table.detail {
            run.sections.insert(format!("{}_n{}_p{}", d.row.prior, d.row.n, d.row.p), d.seconds);
        }
        write_file(&run.output("scaling.csv"), |w| table.write_csv(w))?;
        return write_json(&run.output("scaling.json"), &table);
    }

    let rows = match s.optional("rows", a.rows)? {
        Some(text) => parse_rows(&text)?,
        None => table_rows(scenario),
    };
    let mut table = ExperimentTable::default();
    for &(n, p) in &rows {
        for &prior in &priors {
            let result = run_replicated(&base(n, p, prior))?;
            run.sections.insert(format!("{}_n{n}_p{p}", prior.label()), result.seconds);
            eprintln!(
                "pibp experiment: ({n},{p}) {}: F-norm {:.2} ({:.2}), K̂ {:.1} ({:.1}), {} failed",
                prior.label(),
                result.row.f_norm_mean,
                result.row.f_norm_sd,
                result.row.k_hat_mean,
                result.row.k_hat_sd,
                result.row.failed
            );
            table.rows.push(result);
        }
    }
    write_file(&run.output("table.csv"), |w| table.write_csv(w))?;
    write_json(&run.output("table.json"), &table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_parse() {
        assert_eq!(parse_rows("(192,30)").unwrap(), vec![(192, 30)]);
        assert_eq!(parse_rows(" (192, 30), (288,200) ").unwrap(), vec![(192, 30), (288, 200)]);
        for bad in ["192,30", "(192)", "(a,b)", "(1,2),(3)"] {
            assert!(parse_rows(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn default_tables() {
        assert_eq!(table_rows(ExperimentScenario::Table1).len(), 12);
        assert_eq!(table_rows(ExperimentScenario::Table2).len(), 9);
    }

    #[test]
    fn priors_parse() {
        let p = parse_priors("ibp, mispibp", 0.8, 0.5).unwrap();
        assert_eq!(p, vec![PriorKind::Ibp, PriorKind::Mispibp { eta: 0.5 }]);
        assert!(parse_priors("dp", 0.8, 0.5).is_err());
    }
}
