//! Command execution. Parameters are checked before any data is read.

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use tknn_core::accountant::Accountant;
use tknn_core::dataset::{add_feature_noise, flip_labels, generate_gaussian_synthetic, load_csv, CsvOptions};
use tknn_core::dp::{dp_knn_shapley_all, dp_tknn_shapley_all, old_knn_sensitivity, DpParams, COUNT_SENSITIVITY};
use tknn_core::eval::{bench_runtime, run_detection, write_bench_csv, Method};
use tknn_core::knn::knn_shapley_all;
use tknn_core::mia::{mia_attack, MiaConfig, ValueFunction};
use tknn_core::rng::derive_seed;
use tknn_core::tknn::tknn_shapley_all;
use tknn_core::{Dataset, DistanceMetric, KnnConfig, KnnVariant, TknnConfig};

use crate::args::*;
use crate::Usage;

/// Seeds a run used, all derived from `master`.
#[derive(Debug, Default, Serialize)]
pub struct Seeds {
    pub master: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<u64>,
}

impl Seeds {
    fn derived(master: u64) -> Self {
        Seeds {
            master,
            data: Some(derive_seed(master, &[100])),
            corruption: Some(derive_seed(master, &[101])),
            method: Some(derive_seed(master, &[102])),
        }
    }
}

pub enum Output {
    Json(Value),
    Csv(String),
}

macro_rules! ensure_usage {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(Usage(format!($($msg)+)).into());
        }
    };
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    ensure_usage!((0.0..=1.0).contains(&v), "--{name} must lie in [0, 1], got {v}");
    Ok(())
}

fn check_hyper(h: &Hyper, uses_tau: bool) -> Result<()> {
    ensure_usage!(h.k >= 1, "--k must be at least 1");
    if uses_tau {
        let (lo, hi) = h.metric.range();
        ensure_usage!(
            h.tau.is_finite() && h.tau >= lo && h.tau <= hi,
            "--tau {} is outside the metric range [{lo}, {hi}]",
            h.tau
        );
    }
    Ok(())
}

fn check_privacy(p: &Privacy) -> Result<()> {
    ensure_usage!(p.epsilon > 0.0 && p.epsilon.is_finite(), "--epsilon must be positive");
    ensure_usage!(p.delta > 0.0 && p.delta < 1.0, "--delta must lie in (0, 1)");
    ensure_usage!(p.q > 0.0 && p.q <= 1.0, "--q must lie in (0, 1]");
    ensure_usage!(p.grid_step > 0.0 && p.grid_step.is_finite(), "--grid-step must be positive");
    if let Some(s) = p.sigma {
        ensure_usage!(s >= 0.0 && s.is_finite(), "--sigma must be finite and nonnegative");
    }
    Ok(())
}

fn accountant(p: &Privacy) -> Accountant {
    Accountant {
        grid_step: p.grid_step,
        ..Accountant::default()
    }
}

fn csv_options(c: &CsvArgs) -> CsvOptions {
    CsvOptions {
        label_column: c.label_column.parse().expect("infallible"),
        l2_normalize: !c.no_normalize,
        num_classes: None,
    }
}

fn load(path: &std::path::Path, opts: &CsvOptions) -> Result<Dataset> {
    load_csv(path, opts).with_context(|| format!("reading {}", path.display()))
}

/// Splits consecutive blocks of `sizes` rows off `all`.
fn split(all: &Dataset, sizes: &[usize]) -> Vec<Dataset> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = all.select(&(start..start + len).collect::<Vec<_>>());
            start += len;
            part
        })
        .collect()
}

/// Train and validation sets, both sharing one class count.
fn train_validation(data: &DataArgs, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = match (&data.synthetic, &data.train, &data.validation) {
        (Some(s), _, _) => {
            let nval = s.nval.unwrap_or(100);
            ensure_usage!(s.n >= 1 && s.d >= 1 && nval >= 1, "--synthetic needs n, d and nval of at least 1");
            let all = generate_gaussian_synthetic(s.n + nval, s.d, seed)?;
            let mut parts = split(&all, &[s.n, nval]).into_iter();
            (parts.next().unwrap(), parts.next().unwrap())
        }
        (None, Some(t), Some(v)) => {
            let opts = csv_options(&data.csv);
            (load(t, &opts)?, load(v, &opts)?)
        }
        _ => return Err(Usage("give --train and --validation, or --synthetic".into()).into()),
    };
    let c = train.num_classes().max(val.num_classes());
    Ok((train.with_num_classes(c)?, val.with_num_classes(c)?))
}

fn exact(method: ExactMethod, h: &Hyper) -> Method {
    match method {
        ExactMethod::Knn => Method::Knn { k: h.k, variant: KnnVariant::Refined },
        ExactMethod::KnnOld => Method::Knn { k: h.k, variant: KnnVariant::Old },
        ExactMethod::Tknn => Method::Tknn { tau: h.tau },
    }
}

pub fn value(a: &ValueArgs) -> Result<(Output, Seeds)> {
    check_hyper(&a.hyper, a.method == ExactMethod::Tknn)?;
    let seeds = Seeds::derived(a.seed);
    let (train, val) = train_validation(&a.data, seeds.data.unwrap())?;
    let h = &a.hyper;
    let result = match a.method {
        ExactMethod::Knn => knn_shapley_all(&train, &KnnConfig::new(h.k, h.metric, KnnVariant::Refined), &val)?,
        ExactMethod::KnnOld => knn_shapley_all(&train, &KnnConfig::new(h.k, h.metric, KnnVariant::Old), &val)?,
        ExactMethod::Tknn => tknn_shapley_all(&train, &TknnConfig::new(h.tau, h.metric), &val)?,
    };
    Ok((Output::Json(serde_json::to_value(result)?), seeds))
}

pub fn dp_value(a: &DpValueArgs) -> Result<(Output, Seeds)> {
    check_hyper(&a.hyper, a.baseline == Baseline::DpTknn)?;
    check_privacy(&a.privacy)?;
    let seeds = Seeds::derived(a.seed);
    let (train, val) = train_validation(&a.data, seeds.data.unwrap())?;
    let (p, h) = (&a.privacy, &a.hyper);
    let acc = accountant(p);
    let m = val.len();
    let seed = seeds.method.unwrap();
    let sensitivity = match a.baseline {
        Baseline::DpTknn => COUNT_SENSITIVITY,
        Baseline::DpKnn => old_knn_sensitivity(h.k),
    };
    let params = match p.sigma {
        Some(sigma) => DpParams::with_sigma(sigma, p.delta, p.q, seed)?,
        None => DpParams::accounted(p.epsilon, p.delta, sensitivity, p.q, m, seed, &acc)?,
    };
    let (result, released) = match a.baseline {
        Baseline::DpTknn => {
            let (r, counts) = dp_tknn_shapley_all(&train, &TknnConfig::new(h.tau, h.metric), &val, &params)?;
            (r, Some(counts))
        }
        Baseline::DpKnn => {
            let cfg = KnnConfig::new(h.k, h.metric, KnnVariant::Old);
            (dp_knn_shapley_all(&train, &cfg, &val, &params, p.q < 1.0)?, None)
        }
    };
    let report = acc.report(sensitivity, params.sigma, p.q, m, p.delta)?;
    let mut out = json!({ "result": result, "accountant": report });
    if let Some(counts) = released {
        out["released_counts"] = serde_json::to_value(counts)?;
    }
    Ok((Output::Json(out), seeds))
}

fn any_method(method: AnyMethod, h: &Hyper, p: &Privacy) -> Method {
    match method {
        AnyMethod::Knn => exact(ExactMethod::Knn, h),
        AnyMethod::KnnOld => exact(ExactMethod::KnnOld, h),
        AnyMethod::Tknn => exact(ExactMethod::Tknn, h),
        AnyMethod::DpTknn => Method::DpTknn { tau: h.tau, epsilon: p.epsilon, delta: p.delta, q: p.q },
        AnyMethod::DpKnn => Method::DpKnn {
            k: h.k,
            epsilon: p.epsilon,
            delta: p.delta,
            q: p.q,
            subsampled: p.q < 1.0,
        },
    }
}

pub fn detect(a: &DetectArgs) -> Result<(Output, Seeds)> {
    check_hyper(&a.hyper, matches!(a.method, AnyMethod::Tknn | AnyMethod::DpTknn))?;
    check_privacy(&a.privacy)?;
    check_probability("rate", a.rate)?;
    ensure_usage!(
        a.privacy.sigma.is_none() && a.privacy.grid_step == 1e-4,
        "detect calibrates noise from --epsilon on the default grid; --sigma and --grid-step apply to dp-value"
    );
    let seeds = Seeds::derived(a.seed);
    let (train, val) = train_validation(&a.data, seeds.data.unwrap())?;
    let (corrupted, record) = match a.corruption {
        Corruption::Flip => flip_labels(&train, a.rate, seeds.corruption.unwrap())?,
        Corruption::Noise => add_feature_noise(&train, a.rate, seeds.corruption.unwrap())?,
    };
    let method = any_method(a.method, &a.hyper, &a.privacy);
    let report = run_detection(&corrupted, &record, &method, &val, a.hyper.metric, seeds.method.unwrap())?;
    Ok((Output::Json(serde_json::to_value(report)?), seeds))
}

pub fn attack(a: &AttackArgs) -> Result<(Output, Seeds)> {
    check_hyper(&a.hyper, matches!(a.target, Target::Tknn | Target::DpTknn))?;
    check_privacy(&a.privacy)?;
    check_probability("label-noise", a.label_noise)?;
    ensure_usage!(a.shadows >= 2, "--shadows must be at least 2");
    let seeds = Seeds::derived(a.seed);
    let (members, nonmembers, pool, val) = match (&a.synthetic, &a.members) {
        (Some(s), _) => {
            let nval = s.nval.unwrap_or(50);
            let pool = a.pool_size.unwrap_or((s.n * 5).div_ceil(4));
            ensure_usage!(s.n >= 1 && s.d >= 1 && nval >= 1, "--synthetic needs n, d and nval of at least 1");
            let all = generate_gaussian_synthetic(2 * s.n + pool + nval, s.d, seeds.data.unwrap())?;
            let all = if a.label_noise > 0.0 {
                flip_labels(&all, a.label_noise, seeds.corruption.unwrap())?.0
            } else {
                all
            };
            let mut p = split(&all, &[s.n, s.n, pool, nval]).into_iter();
            (p.next().unwrap(), p.next().unwrap(), p.next().unwrap(), p.next().unwrap())
        }
        (None, Some(m)) => {
            ensure_usage!(a.label_noise == 0.0, "--label-noise applies to --synthetic data only");
            let opts = csv_options(&a.csv);
            let path = |p: &Option<std::path::PathBuf>| p.clone().expect("required by clap");
            let sets = [m.clone(), path(&a.nonmembers), path(&a.pool), path(&a.validation)]
                .iter()
                .map(|p| load(p, &opts))
                .collect::<Result<Vec<_>>>()?;
            let c = sets.iter().map(Dataset::num_classes).max().unwrap();
            let mut p = sets.into_iter().map(|d| d.with_num_classes(c)).collect::<Result<Vec<_>, _>>()?.into_iter();
            (p.next().unwrap(), p.next().unwrap(), p.next().unwrap(), p.next().unwrap())
        }
        _ => return Err(Usage("give --members/--nonmembers/--pool/--validation, or --synthetic".into()).into()),
    };
    let (h, p) = (&a.hyper, &a.privacy);
    let value_fn = match a.target {
        Target::Knn => ValueFunction::Knn { k: h.k, variant: KnnVariant::Refined, metric: h.metric },
        Target::KnnOld => ValueFunction::Knn { k: h.k, variant: KnnVariant::Old, metric: h.metric },
        Target::Tknn => ValueFunction::Tknn { tau: h.tau, metric: h.metric },
        Target::DpTknn => {
            let sigma = match p.sigma {
                Some(s) => s,
                None => accountant(p).calibrate_sigma(COUNT_SENSITIVITY, p.q, val.len(), p.epsilon, p.delta)?,
            };
            ValueFunction::DpTknn { tau: h.tau, metric: h.metric, sigma, q: p.q }
        }
        Target::Constant => ValueFunction::Constant,
    };
    let cfg = MiaConfig {
        shadow_count: a.shadows,
        shadow_size: a.shadow_size,
        seed: seeds.method.unwrap(),
        ..MiaConfig::default()
    };
    let report = mia_attack(&value_fn, &members, &nonmembers, &pool, &members, &cfg, &val)?;
    let out = json!({ "value_function": value_fn, "report": report });
    Ok((Output::Json(out), seeds))
}

pub fn bench(a: &BenchArgs) -> Result<(Output, Seeds)> {
    ensure_usage!(!a.ns.is_empty() && a.ns.iter().all(|&n| n >= 1), "--ns needs positive sizes");
    ensure_usage!(a.ns.windows(2).all(|w| w[0] <= w[1]), "--ns must be ascending");
    ensure_usage!(a.d >= 1 && a.nval >= 1, "--d and --nval must be at least 1");
    ensure_usage!(a.repeats >= 3, "--repeats must be at least 3");
    ensure_usage!(a.hyper.metric == DistanceMetric::NegativeCosine, "bench always uses negative-cosine");
    check_hyper(&a.hyper, a.methods.contains(&ExactMethod::Tknn))?;
    let methods: Vec<Method> = a.methods.iter().map(|&m| exact(m, &a.hyper)).collect();
    let rows = bench_runtime(&a.ns, a.d, a.nval, &methods, a.repeats, a.seed)?;
    let mut buf = Vec::new();
    write_bench_csv(&rows, &mut buf)?;
    let seeds = Seeds {
        master: a.seed,
        ..Seeds::default()
    };
    Ok((Output::Csv(String::from_utf8(buf)?), seeds))
}

pub fn account(a: &AccountArgs) -> Result<(Output, Seeds)> {
    ensure_usage!(a.mechanisms >= 1, "--mechanisms must be at least 1");
    ensure_usage!(a.sensitivity > 0.0 && a.sensitivity.is_finite(), "--sensitivity must be positive");
    let p = Privacy {
        epsilon: a.epsilon.unwrap_or(1.0),
        sigma: a.sigma,
        delta: a.delta,
        q: a.q,
        grid_step: a.grid_step,
    };
    check_privacy(&p)?;
    ensure_usage!(a.sigma.is_none_or(|s| s > 0.0), "--sigma must be positive");
    let acc = accountant(&p);
    let sigma = match a.sigma {
        Some(s) => s,
        None => acc.calibrate_sigma(a.sensitivity, a.q, a.mechanisms, p.epsilon, a.delta)?,
    };
    let report = acc.report(a.sensitivity, sigma, a.q, a.mechanisms, a.delta)?;
    Ok((Output::Json(serde_json::to_value(report)?), Seeds::default()))
}

pub fn execute(cmd: &Command) -> Result<(Output, Seeds)> {
    match cmd {
        Command::Value(a) => value(a),
        Command::DpValue(a) => dp_value(a),
        Command::Detect(a) => detect(a),
        Command::Attack(a) => attack(a),
        Command::Bench(a) => bench(a),
        Command::Account(a) => account(a),
    }
}
