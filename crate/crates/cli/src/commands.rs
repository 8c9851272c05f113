use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::ValueEnum;
use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use beamopt::baseline::{rzf, zf, zf_square};
use beamopt::channel::{purpose, rayleigh_channels, ChannelRng};
use beamopt::dataset::{
    augment_pad, generate_augmented, generate_labels, read_dataset, split_paths, write_dataset,
    LabelSpec, LabeledRecord,
};
use beamopt::evalsim::{
    benchmark, certify, robustness_sweep, staleness_sim, Method, StalenessScenario,
};
use beamopt::model::{db, from_db, min_sinr};
use beamopt::nn::{load_weights, predict_duals, Head, NetworkWeights};
use beamopt::recover::{recover_from_lambda_mu, recover_from_mu};
use beamopt::subgrad::subgradient_solve;
use beamopt::{BeamformingMatrix, CMatrix, DualVariables, Error, ProblemInstance, SolverConfig};

use crate::args::{Cli, Command, Global, MethodArg, SweepArg};
use crate::output::{num, read_manifest, write_manifest, Table};

/// Bad invocation detected after argument parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if g.k == 0 || g.nt == 0 {
        return Err(usage("--k and --nt must be at least 1"));
    }
    if !(g.n0 > 0.0 && g.n0.is_finite()) || !g.snr_db.is_finite() {
        return Err(usage("--n0 must be positive and --snr-db finite"));
    }
    if let Some(n) = g.jobs {
        if n == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;

    let config = SolverConfig::default();
    let name = match &cli.command {
        Command::GenChannels { count } => {
            gen_channels(g, *count)?;
            "gen-channels"
        }
        Command::Solve {
            method,
            weights,
            count,
        } => {
            solve(g, *method, weights.as_deref(), *count, &config)?;
            "solve"
        }
        Command::Certify => {
            certify_previous(&g.out, &config)?;
            "certify"
        }
        Command::GenDataset { count, split, name } => {
            gen_dataset(g, *count, *split, name, &config)?;
            "gen-dataset"
        }
        Command::Augment {
            kmax,
            ntmax,
            input,
            count,
            name,
        } => {
            augment(g, *kmax, *ntmax, input.as_deref(), *count, name, &config)?;
            "augment"
        }
        Command::Eval {
            sweep,
            values,
            count,
            weights,
        } => {
            eval(g, *sweep, values, *count, weights.as_deref(), &config)?;
            "eval"
        }
        Command::SimulateStale { scenario, weights } => {
            simulate_stale(g, scenario.as_deref(), weights.as_deref(), &config)?;
            "simulate-stale"
        }
    };
    write_manifest(cli, name)
}

fn power(g: &Global, snr_db: f64) -> f64 {
    g.n0 * from_db(snr_db)
}

fn instance(g: &Global, index: usize, k: usize, snr_db: f64) -> Result<ProblemInstance> {
    let mut rng = ChannelRng::for_record(g.seed, index as u64, purpose::CHANNEL);
    let h = rayleigh_channels(k, g.nt, &mut rng);
    Ok(ProblemInstance::with_uniform_power(
        h,
        power(g, snr_db),
        g.n0,
    )?)
}

fn instances(g: &Global, count: usize, k: usize, snr_db: f64) -> Result<Vec<ProblemInstance>> {
    (0..count).map(|i| instance(g, i, k, snr_db)).collect()
}

fn load_network(path: Option<&Path>, g: &Global, k: usize) -> Result<Arc<NetworkWeights>> {
    let path = path.ok_or_else(|| usage("this method needs --weights <file>"))?;
    let w = load_weights(path).with_context(|| format!("loading {}", path.display()))?;
    if w.meta.k_max < k || w.meta.nt_max < g.nt {
        return Err(usage(format!(
            "network container {}x{} is smaller than K = {k}, N_t = {}",
            w.meta.k_max, w.meta.nt_max, g.nt
        )));
    }
    Ok(Arc::new(w))
}

fn gen_channels(g: &Global, count: usize) -> Result<()> {
    let mut t = Table::create(
        &g.out,
        "channels.csv",
        &["instance", "user", "antenna", "re", "im"],
    )?;
    for i in 0..count {
        let inst = instance(g, i, g.k, g.snr_db)?;
        let h = inst.channels();
        for k in 0..h.nrows() {
            for n in 0..h.ncols() {
                t.row([
                    i.to_string(),
                    k.to_string(),
                    n.to_string(),
                    num(h[(k, n)].re),
                    num(h[(k, n)].im),
                ])?;
            }
        }
    }
    t.finish()
}

struct Solved {
    w: BeamformingMatrix,
    dual: Option<DualVariables>,
}

fn solve_one(
    inst: &ProblemInstance,
    method: MethodArg,
    net: Option<&NetworkWeights>,
    config: &SolverConfig,
) -> beamopt::Result<Solved> {
    Ok(match method {
        MethodArg::Subgradient => {
            let r = subgradient_solve(inst, config)?;
            Solved {
                w: r.w,
                dual: Some(r.dual),
            }
        }
        MethodArg::Zf => {
            let w = if inst.users() == inst.antennas() {
                zf_square(inst)?.0
            } else {
                zf(inst)?
            };
            Solved { w, dual: None }
        }
        MethodArg::Rzf => Solved {
            w: rzf(inst)?,
            dual: None,
        },
        MethodArg::NnMu | MethodArg::NnLambdaMu => {
            let net = net.expect("network loaded for nn methods");
            let rec = match predict_duals(inst, net)? {
                (None, mu) => recover_from_mu(inst, &mu, config)?,
                (Some(lambda), mu) => {
                    recover_from_lambda_mu(inst, &DualVariables::new(lambda, mu), config)?
                }
            };
            Solved {
                w: rec.w,
                dual: Some(rec.dual),
            }
        }
    })
}

fn solve(
    g: &Global,
    method: MethodArg,
    weights: Option<&Path>,
    count: usize,
    config: &SolverConfig,
) -> Result<()> {
    let net = match method {
        MethodArg::NnMu | MethodArg::NnLambdaMu => {
            let net = load_network(weights, g, g.k)?;
            let want = if method == MethodArg::NnMu {
                Head::Mu
            } else {
                Head::LambdaMu
            };
            if net.meta.head != want {
                return Err(usage(format!(
                    "weight file has head {:?}, method needs {want:?}",
                    net.meta.head
                )));
            }
            Some(net)
        }
        _ => None,
    };
    let insts = instances(g, count, g.k, g.snr_db)?;
    let solved: Vec<Solved> = insts
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            solve_one(inst, method, net.as_deref(), config).map_err(|e| Error::at_record(i, e))
        })
        .collect::<beamopt::Result<_>>()?;

    let method_name = method
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let mut header = vec![
        "instance".to_string(),
        "method".into(),
        "min_sinr".into(),
        "min_sinr_db".into(),
    ];
    header.extend((0..g.nt).map(|n| format!("p_{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut summary = Table::create(&g.out, "solve.csv", &header)?;
    let mut bf = Table::create(
        &g.out,
        "beamformers.csv",
        &["instance", "antenna", "user", "re", "im"],
    )?;
    let mut duals = None;
    for (i, (inst, s)) in insts.iter().zip(&solved).enumerate() {
        let gamma = min_sinr(inst, &s.w)?;
        let mut row = vec![
            i.to_string(),
            method_name.clone(),
            num(gamma),
            num(db(gamma)),
        ];
        row.extend(s.w.per_antenna_powers().iter().map(|&p| num(p)));
        summary.row(row)?;
        let w = s.w.entries();
        for n in 0..w.nrows() {
            for k in 0..w.ncols() {
                bf.row([
                    i.to_string(),
                    n.to_string(),
                    k.to_string(),
                    num(w[(n, k)].re),
                    num(w[(n, k)].im),
                ])?;
            }
        }
        if let Some(d) = &s.dual {
            let t = match &mut duals {
                Some(t) => t,
                None => duals.insert(Table::create(
                    &g.out,
                    "duals.csv",
                    &["instance", "kind", "index", "value"],
                )?),
            };
            for (j, v) in d.lambda.iter().enumerate() {
                t.row([i.to_string(), "lambda".into(), j.to_string(), num(*v)])?;
            }
            for (j, v) in d.mu.iter().enumerate() {
                t.row([i.to_string(), "mu".into(), j.to_string(), num(*v)])?;
            }
        }
    }
    summary.finish()?;
    bf.finish()?;
    if let Some(t) = duals {
        t.finish()?;
    } else {
        let stale = g.out.join("duals.csv");
        if stale.exists() {
            fs::remove_file(stale)?;
        }
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.records().collect::<std::result::Result<_, _>>()?)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let s = rec
        .get(i)
        .ok_or_else(|| anyhow!("missing column {i} in {rec:?}"))?;
    Ok(s.parse()?)
}

fn certify_previous(dir: &Path, config: &SolverConfig) -> Result<()> {
    let solve = read_manifest(dir, "solve").map_err(|e| {
        usage(format!(
            "certify needs a previous solve in this directory: {e:#}"
        ))
    })?;
    let g = &solve.global;
    let mut ws: BTreeMap<usize, CMatrix> = BTreeMap::new();
    for rec in read_csv(&dir.join("beamformers.csv"))? {
        let (i, n, k): (usize, usize, usize) = (field(&rec, 0)?, field(&rec, 1)?, field(&rec, 2)?);
        let w = ws.entry(i).or_insert_with(|| CMatrix::zeros(g.nt, g.k));
        w[(n, k)] = Complex64::new(field(&rec, 3)?, field(&rec, 4)?);
    }
    let mut duals: BTreeMap<usize, DualVariables> = BTreeMap::new();
    let dual_path = dir.join("duals.csv");
    if dual_path.exists() {
        for rec in read_csv(&dual_path)? {
            let (i, kind, j): (usize, String, usize) =
                (field(&rec, 0)?, field(&rec, 1)?, field(&rec, 2)?);
            let d = duals
                .entry(i)
                .or_insert_with(|| DualVariables::new(DVector::zeros(g.k), DVector::zeros(g.nt)));
            let v: f64 = field(&rec, 3)?;
            match kind.as_str() {
                "lambda" => d.lambda[j] = v,
                "mu" => d.mu[j] = v,
                other => return Err(anyhow!("unknown dual kind `{other}`")),
            }
        }
    }

    let rows: Vec<(usize, beamopt::evalsim::Certificate)> = ws
        .into_par_iter()
        .map(|(i, w)| {
            let inst = instance(g, i, g.k, g.snr_db).map_err(|e| anyhow!("{e}"))?;
            let dual = match duals.get(&i) {
                Some(d) => d.clone(),
                None => {
                    subgradient_solve(&inst, config)
                        .map_err(|e| Error::at_record(i, e))?
                        .dual
                }
            };
            let c = certify(&inst, &BeamformingMatrix::new(w), &dual, config.ridge)
                .map_err(|e| Error::at_record(i, e))?;
            Ok((i, c))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::create(
        dir,
        "certify.csv",
        &["instance", "gamma_primal", "gamma_dual", "gap_db"],
    )?;
    for (i, c) in rows {
        t.row([
            i.to_string(),
            num(c.gamma_primal),
            num(c.gamma_dual),
            num(c.gap_db),
        ])?;
    }
    t.finish()
}

fn label_spec(g: &Global) -> LabelSpec {
    LabelSpec {
        users: g.k,
        antennas: g.nt,
        power: power(g, g.snr_db),
        noise_power: g.n0,
        base_seed: g.seed,
    }
}

/// Writes the good records and a summary table; fails afterwards if any
/// record could not be labeled.
fn write_labeled(
    dir: &Path,
    file: &Path,
    results: Vec<beamopt::Result<LabeledRecord>>,
    first: u64,
) -> Result<()> {
    let mut good = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (offset, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => good.push(rec),
            Err(e) => failed.push(Error::at_record(first as usize + offset, e)),
        }
    }
    write_dataset(file, &good)?;
    let stem = file
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .trim_end_matches(".ndj");
    let mut t = Table::create(
        dir,
        &format!("{stem}.summary.csv"),
        &[
            "index",
            "k_active",
            "nt_active",
            "gamma_label",
            "gap_db",
            "flagged",
        ],
    )?;
    for r in &good {
        t.row([
            r.index.to_string(),
            r.k_active.to_string(),
            r.nt_active.to_string(),
            num(r.gamma_label),
            r.gap_db().map(num).unwrap_or_default(),
            r.flagged.to_string(),
        ])?;
    }
    t.finish()?;
    match failed.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn gen_dataset(
    g: &Global,
    count: usize,
    split: Option<(usize, usize)>,
    name: &str,
    config: &SolverConfig,
) -> Result<()> {
    let spec = label_spec(g);
    match split {
        Some((train, test)) => {
            let (train_path, test_path) = split_paths(&g.out, name);
            write_labeled(
                &g.out,
                &train_path,
                generate_labels(&spec, 0, train, config),
                0,
            )?;
            write_labeled(
                &g.out,
                &test_path,
                generate_labels(&spec, train as u64, test, config),
                train as u64,
            )
        }
        None => write_labeled(
            &g.out,
            &g.out.join(format!("{name}.ndj")),
            generate_labels(&spec, 0, count, config),
            0,
        ),
    }
}

fn augment(
    g: &Global,
    kmax: usize,
    ntmax: usize,
    input: Option<&Path>,
    count: usize,
    name: &str,
    config: &SolverConfig,
) -> Result<()> {
    if kmax == 0 || ntmax == 0 {
        return Err(usage("--kmax and --ntmax must be at least 1"));
    }
    let out = g.out.join(format!("{name}.ndj"));
    match input {
        Some(path) => {
            let records =
                read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
            let padded = records
                .iter()
                .enumerate()
                .map(|(i, r)| augment_pad(r, kmax, ntmax).map_err(|e| Error::at_record(i, e)))
                .collect::<beamopt::Result<Vec<_>>>()?;
            write_dataset(&out, &padded)?;
            Ok(())
        }
        None => write_labeled(
            &g.out,
            &out,
            generate_augmented(&label_spec(g), kmax, ntmax, 0, count, config),
            0,
        ),
    }
}

fn eval(
    g: &Global,
    sweep: SweepArg,
    values: &[f64],
    count: usize,
    weights: Option<&Path>,
    config: &SolverConfig,
) -> Result<()> {
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let values: Vec<f64> = if values.is_empty() {
        match sweep {
            SweepArg::Power => vec![0.0, 5.0, 10.0, 15.0, 20.0],
            SweepArg::Users => (1..=g.nt).map(|k| k as f64).collect(),
            SweepArg::Sigma => vec![0.0, 0.05, 0.1, 0.2, 0.3],
        }
    } else {
        values.to_vec()
    };
    let max_k = match sweep {
        SweepArg::Users => {
            let bad = values
                .iter()
                .find(|&&v| v < 1.0 || v.fract() != 0.0 || v as usize > g.nt);
            if let Some(v) = bad {
                return Err(usage(format!(
                    "user counts must be integers in 1..={}, got {v}",
                    g.nt
                )));
            }
            values.iter().fold(0.0f64, |a, &b| a.max(b)) as usize
        }
        _ => {
            if g.k > g.nt {
                return Err(usage("the baselines need --k <= --nt"));
            }
            if sweep == SweepArg::Sigma && !values.iter().all(|&s| s >= 0.0) {
                return Err(usage("sigma values must be nonnegative"));
            }
            g.k
        }
    };
    let mut methods = vec![Method::Subgradient, Method::Zf, Method::Rzf];
    if weights.is_some() {
        methods.push(Method::Network(load_network(weights, g, max_k)?));
    }

    let sweep_name = sweep
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let file = format!("eval_{sweep_name}.csv");
    let mut t = Table::create(
        &g.out,
        &file,
        &[
            "sweep",
            "value",
            "method",
            "mean_min_sinr",
            "mean_min_sinr_db",
        ],
    )?;
    let mut emit = |v: f64, method: &str, mean: f64| {
        t.row([
            sweep_name.clone(),
            num(v),
            method.to_string(),
            num(mean),
            num(db(mean)),
        ])
    };
    match sweep {
        SweepArg::Power | SweepArg::Users => {
            for &v in &values {
                let (k, snr) = if sweep == SweepArg::Power {
                    (g.k, v)
                } else {
                    (v as usize, g.snr_db)
                };
                let insts = instances(g, count, k, snr)?;
                let exact: Vec<(f64, f64)> = insts
                    .par_iter()
                    .enumerate()
                    .map(|(i, inst)| {
                        subgradient_solve(inst, config)
                            .map(|r| (r.gamma_primal, r.gamma_dual))
                            .map_err(|e| Error::at_record(i, e))
                    })
                    .collect::<beamopt::Result<_>>()?;
                let n = exact.len() as f64;
                emit(v, "subgradient", exact.iter().map(|e| e.0).sum::<f64>() / n)?;
                for s in benchmark(&insts, &methods[1..], config)? {
                    emit(v, &s.method, s.mean_min_sinr)?;
                }
                emit(v, "dual_bound", exact.iter().map(|e| e.1).sum::<f64>() / n)?;
            }
        }
        SweepArg::Sigma => {
            let insts = instances(g, count, g.k, g.snr_db)?;
            for row in robustness_sweep(&insts, &values, &methods, g.seed, config)? {
                emit(row.sigma, &row.method, row.mean_min_sinr)?;
            }
        }
    }
    t.finish()
}

fn simulate_stale(
    g: &Global,
    scenario: Option<&Path>,
    weights: Option<&Path>,
    config: &SolverConfig,
) -> Result<()> {
    let scenario: StalenessScenario = match scenario {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid scenario {}: {e}", path.display())))?
        }
        None => StalenessScenario {
            users: g.k,
            antennas: g.nt,
            noise_power: g.n0,
            ..StalenessScenario::default()
        },
    };
    scenario.validate().map_err(|e| usage(e.to_string()))?;
    let net = match weights {
        Some(_) => {
            let probe = Global {
                nt: scenario.antennas,
                ..g.clone()
            };
            Some(load_network(weights, &probe, scenario.users)?)
        }
        None => None,
    };
    let rows = staleness_sim(&scenario, g.seed, config, net)?;
    let mut t = Table::create(
        &g.out,
        "stale.csv",
        &["method", "latency_s", "power_gain_db", "user", "ber"],
    )?;
    for r in rows {
        t.row([
            r.method,
            num(r.latency),
            num(r.power_gain_db),
            r.user.to_string(),
            num(r.ber),
        ])?;
    }
    t.finish()
}
