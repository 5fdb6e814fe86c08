use evict::estimation::{daily_counts, estimate_all};
use evict::hjb::train_hjb;
use evict::neural::Mlp;
use evict::policies::{Policy, PolicyConfig};
use evict::sim::{run, Metrics, MetricsReport, SimConfig, SimData};
use evict::surrogate::{gen_samples, rmse, train_surrogate, write_samples, Surrogate, SurrogateConfig};
use evict::synth::{synth_corpus, Corpus};
use serde::{Deserialize, Serialize};

use crate::artifact::{read_json, write_rows, Dir, Meta, Stamped};
use crate::config::{PipelineConfig, Stage};
use crate::failure::Failure;

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub dir: Dir,
}

fn csv_fail(e: evict::Error) -> Failure {
    Failure::Other(e.to_string())
}

fn h_tag(h: f64) -> String {
    format!("h{h}")
}

fn g_name(h: f64) -> String {
    format!("g_{}.ckpt", h_tag(h))
}

#[derive(Serialize, Deserialize)]
pub struct CorpusSummary {
    pub days: u32,
    pub records: usize,
    pub arrivals_per_day: f64,
}

pub fn synth(ctx: &Ctx) -> Result<(), Failure> {
    let meta = Meta::new(&ctx.cfg, "synth", Stage::Synth);
    let corpus = synth_corpus(&ctx.cfg.synth, meta.stage_seed)?;
    ctx.dir.write_csv("corpus.csv", &meta, |f| corpus.write_records(f).map_err(csv_fail))?;
    let summary = CorpusSummary {
        days: corpus.days,
        records: corpus.records.len(),
        arrivals_per_day: corpus.records.len() as f64 / corpus.days as f64,
    };
    ctx.dir.write_json("corpus.json", &meta, &summary)?;
    println!("synth: {} orders over {} days", summary.records, summary.days);
    Ok(())
}

/// Records from `corpus.csv`; the arrival pool is rebuilt from received days.
fn load_corpus(ctx: &Ctx) -> Result<Corpus, Failure> {
    let path = ctx.dir.require("corpus.csv", "synth")?;
    let records = Corpus::read_records_csv(&path)
        .map_err(|e| Failure::Missing(format!("{} is not a readable corpus: {e}", path.display())))?;
    let k = ctx.cfg.synth.k;
    let days = ctx.cfg.synth.days;
    if records.iter().any(|r| r.zone == 0 || r.zone > k || r.received_day >= days) {
        return Err(Failure::Config(format!("{} does not match synth.k = {k} and synth.days = {days}", path.display())));
    }
    let counts = daily_counts(&records, k, days);
    let arrival_pool = (0..days as usize).map(|d| counts.iter().map(|c| c[d] as u32).collect()).collect();
    Ok(Corpus { k, days, records, arrival_pool })
}

pub fn estimate(ctx: &Ctx) -> Result<(), Failure> {
    let corpus = load_corpus(ctx)?;
    let meta = Meta::new(&ctx.cfg, "estimate", Stage::Synth);
    let report = estimate_all(&corpus.records, corpus.k, corpus.days)?;
    ctx.dir.write_json("estimates.json", &meta, &report)?;
    let rows: Vec<Vec<String>> = report
        .arrivals
        .iter()
        .enumerate()
        .map(|(c, a)| vec![(c + 1).to_string(), a.lambda.to_string(), a.sigma.to_string(), a.std_error().to_string()])
        .collect();
    ctx.dir.write_csv("estimates_arrivals.csv", &meta, |f| write_rows(f, &["class", "lambda", "sigma", "std_error"], &rows))?;
    println!(
        "estimate: cancel rate {:.5}/day, travel beta {:.4} min/km",
        report.cancellation.rate, report.travel_beta
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub samples: usize,
    pub holdout: usize,
    pub prize_cap_h: f64,
    pub train: SurrogateConfig,
    pub final_loss: f64,
    pub train_rmse: f64,
    pub holdout_rmse: Option<f64>,
}

pub fn train_surrogate_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let corpus = load_corpus(ctx)?;
    let stage = &cfg.surrogate;
    let cap_h = stage.prize_cap_h.unwrap_or(cfg.model.h);
    let catalog = cfg.catalog(&corpus, cap_h);
    let meta = Meta::new(cfg, "train-surrogate", Stage::Samples);
    let samples = gen_samples(&catalog, &cfg.sim.cost, &stage.routing, stage.samples, meta.stage_seed)?;
    ctx.dir.write_csv("surrogate_samples.csv", &meta, |f| write_samples(&samples, f).map_err(csv_fail))?;

    let n_hold = (samples.len() as f64 * stage.holdout).floor() as usize;
    let (train, test) = samples.split_at(samples.len() - n_hold);
    let train_cfg = SurrogateConfig { seed: cfg.stage_seed(Stage::SurrogateTrain), ..stage.train.clone() };
    let (net, losses) = train_surrogate(train, &train_cfg)?;
    let meta = Meta::new(cfg, "train-surrogate", Stage::SurrogateTrain);
    net.save_with_meta(ctx.dir.path("surrogate.ckpt"), Some(serde_json::to_value(&meta)?))?;
    let rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]).collect();
    ctx.dir.write_csv("surrogate_loss.csv", &meta, |f| write_rows(f, &["iteration", "loss"], &rows))?;
    let summary = SurrogateSummary {
        samples: samples.len(),
        holdout: n_hold,
        prize_cap_h: cap_h,
        train: train_cfg,
        final_loss: *losses.last().unwrap_or(&f64::NAN),
        train_rmse: rmse(&net, train),
        holdout_rmse: (!test.is_empty()).then(|| rmse(&net, test)),
    };
    if !summary.train_rmse.is_finite() {
        return Err(Failure::Numeric("surrogate training produced a non-finite error".into()));
    }
    ctx.dir.write_json("surrogate.json", &meta, &summary)?;
    println!("train-surrogate: {} samples, train rmse {:.4}", summary.samples, summary.train_rmse);
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct HjbSummary {
    pub h: f64,
    pub iterations_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_penalty: f64,
    pub diverged_at: Option<usize>,
}

pub fn train_hjb_cmd(ctx: &Ctx, h: Option<f64>) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let h = h.unwrap_or(cfg.model.h);
    let path = ctx.dir.require("surrogate.ckpt", "train-surrogate")?;
    let net = Mlp::<f64>::load(&path).map_err(|e| Failure::Missing(format!("{}: {e}", path.display())))?;
    let params = cfg.model_params(h).map_err(Failure::config)?;
    let holding: Vec<f64> = (0..params.dim()).map(|i| params.holding_rate(i)).collect();
    let surrogate = Surrogate::new(net, params.kappa, holding).map_err(|e| {
        Failure::Config(format!("surrogate.ckpt does not fit {} classes: {e}", params.dim()))
    })?;
    let out = train_hjb(&params, &surrogate, &cfg.hjb_config(h))?;
    let meta = Meta::new(cfg, "train-hjb", Stage::Hjb);
    let tag = h_tag(h);
    let rows: Vec<Vec<String>> =
        out.log.iter().map(|r| vec![r.iteration.to_string(), r.loss.to_string(), r.penalty.to_string()]).collect();
    ctx.dir.write_csv(&format!("hjb_{tag}_log.csv"), &meta, |f| write_rows(f, &["iteration", "loss", "penalty"], &rows))?;
    let summary = HjbSummary {
        h,
        iterations_run: out.log.len(),
        initial_loss: out.log.first().map_or(f64::NAN, |r| r.loss),
        final_loss: out.log.last().map_or(f64::NAN, |r| r.loss),
        final_penalty: out.log.last().map_or(f64::NAN, |r| r.penalty),
        diverged_at: out.diverged_at,
    };
    ctx.dir.write_json(&format!("hjb_{tag}.json"), &meta, &summary)?;
    if let Some(i) = out.diverged_at {
        return Err(Failure::Numeric(format!("HJB loss became non-finite at iteration {i}; checkpoints not written")));
    }
    let m = Some(serde_json::to_value(&meta)?);
    out.g.save_with_meta(ctx.dir.path(&g_name(h)), m.clone())?;
    out.v.save_with_meta(ctx.dir.path(&format!("v_{tag}.ckpt")), m)?;
    println!("train-hjb: h = {h}, loss {:.4} -> {:.4}", summary.initial_loss, summary.final_loss);
    Ok(())
}

fn policy_label(p: &PolicyConfig, h: f64) -> String {
    match p {
        PolicyConfig::Proposed { .. } => format!("proposed_{}", h_tag(h)),
        PolicyConfig::Urgency { .. } => "urgency".into(),
        PolicyConfig::Threshold(_) => "threshold".into(),
    }
}

fn policy_kind(p: &PolicyConfig) -> &'static str {
    match p {
        PolicyConfig::Proposed { .. } => "proposed",
        PolicyConfig::Urgency { .. } => "urgency",
        PolicyConfig::Threshold(_) => "threshold",
    }
}

fn build_policy(ctx: &Ctx, p: &PolicyConfig, h: f64) -> Result<Policy, Failure> {
    let g = match p {
        PolicyConfig::Proposed { .. } => {
            let name = g_name(h);
            let path = ctx.dir.require(&name, &format!("train-hjb --h {h}"))?;
            Some(Mlp::<f64>::load(&path).map_err(|e| Failure::Missing(format!("{}: {e}", path.display())))?)
        }
        _ => None,
    };
    Ok(p.build(ctx.cfg.synth.k, g)?)
}

fn simulate_one(
    policy: &Policy,
    sim: &SimConfig,
    catalog: &evict::catalog::ClassCatalog,
    data: &SimData,
) -> Result<MetricsReport, Failure> {
    let report = run(sim, policy, catalog, data)?;
    if !report.conservation_holds() {
        return Err(Failure::Numeric(format!("{}: order conservation violated", policy.name())));
    }
    Ok(report)
}

pub fn simulate(ctx: &Ctx, only: Option<&str>, h: Option<f64>) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let h = h.unwrap_or(cfg.model.h);
    let chosen: Vec<&PolicyConfig> = cfg.policies.iter().filter(|p| only.is_none_or(|n| n == policy_kind(p))).collect();
    if chosen.is_empty() {
        return Err(Failure::Config(format!("no configured policy named {}", only.unwrap_or(""))));
    }
    let corpus = load_corpus(ctx)?;
    let catalog = cfg.catalog(&corpus, h);
    let data = SimData::from_corpus(&corpus)?;
    let sim = cfg.sim_config();
    let meta = Meta::new(cfg, "simulate", Stage::Sim);
    for p in chosen {
        let policy = build_policy(ctx, p, h)?;
        let report = simulate_one(&policy, &sim, &catalog, &data)?;
        let label = policy_label(p, h);
        ctx.dir.write_json(&format!("sim_{label}.json"), &meta, &report)?;
        ctx.dir.write_csv(&format!("sim_{label}.csv"), &meta, |f| write_rows(f, &METRIC_HEADER, &metric_rows(&label, &report)))?;
        println!(
            "simulate {label}: miss {:.2}% (+/- {:.2}), served/day {:.2}",
            report.mean.miss_pct, report.half_width.miss_pct, report.mean.served_per_day
        );
    }
    Ok(())
}

const METRIC_HEADER: [&str; 4] = ["policy", "metric", "mean", "half_width"];

fn metric_rows(label: &str, r: &MetricsReport) -> Vec<Vec<String>> {
    Metrics::NAMES
        .iter()
        .zip(r.mean.to_vec())
        .zip(r.half_width.to_vec())
        .map(|((name, m), hw)| vec![label.to_string(), name.to_string(), m.to_string(), hw.to_string()])
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    H,
    Vehicles,
    Hours,
    Extension,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::H => "h",
            SweepParam::Vehicles => "vehicles",
            SweepParam::Hours => "hours",
            SweepParam::Extension => "extension",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub policy: String,
    pub mean: Metrics,
    pub half_width: Metrics,
    /// change in miss% from the previous value for the same policy
    pub miss_delta_prev: Option<f64>,
    /// whether the 95% intervals of this and the previous value overlap
    pub ci_overlap_prev: Option<bool>,
}

#[derive(Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

pub fn sweep(ctx: &Ctx, param: SweepParam, values: Option<Vec<f64>>) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let values = values.unwrap_or_else(|| match param {
        SweepParam::H => cfg.sweep.h.clone(),
        SweepParam::Vehicles => cfg.sweep.vehicles.clone(),
        SweepParam::Hours => cfg.sweep.hours.clone(),
        SweepParam::Extension => cfg.sweep.extension.clone(),
    });
    if values.is_empty() {
        return Err(Failure::Config(format!("no values to sweep for {}", param.name())));
    }
    let integral = matches!(param, SweepParam::Vehicles | SweepParam::Extension);
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0) || (integral && v.fract() != 0.0)) {
        return Err(Failure::Config(format!("bad {} values {values:?}", param.name())));
    }
    let policies: Vec<&PolicyConfig> = match param {
        SweepParam::H => cfg.policies.iter().filter(|p| matches!(p, PolicyConfig::Proposed { .. })).collect(),
        _ => cfg.policies.iter().collect(),
    };
    if policies.is_empty() {
        return Err(Failure::Config("an h sweep needs a proposed policy in the config".into()));
    }
    let corpus = load_corpus(ctx)?;
    let data = SimData::from_corpus(&corpus)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &v in &values {
        let mut sim = cfg.sim_config();
        let mut h = cfg.model.h;
        match param {
            SweepParam::H => h = v,
            SweepParam::Vehicles => sim.vehicles = v as usize,
            SweepParam::Hours => sim.daily_hours = v,
            SweepParam::Extension => sim.deadline_extension_days = v as u32,
        }
        sim.validate().map_err(Failure::config)?;
        let catalog = cfg.catalog(&corpus, h);
        for p in &policies {
            let policy = build_policy(ctx, p, h)?;
            let report = simulate_one(&policy, &sim, &catalog, &data)?;
            let label = policy_kind(p).to_string();
            let prev = rows.iter().rev().find(|r| r.policy == label);
            let (delta, overlap) = match prev {
                Some(q) => {
                    let (a, b) = (report.mean.miss_pct, q.mean.miss_pct);
                    let (ha, hb) = (report.half_width.miss_pct, q.half_width.miss_pct);
                    let overlap = (ha.is_finite() && hb.is_finite()).then(|| (a - b).abs() <= ha + hb);
                    (Some(a - b), overlap)
                }
                None => (None, None),
            };
            println!("sweep {}={v} {label}: miss {:.2}%", param.name(), report.mean.miss_pct);
            rows.push(SweepRow {
                value: v,
                policy: label,
                mean: report.mean,
                half_width: report.half_width,
                miss_delta_prev: delta,
                ci_overlap_prev: overlap,
            });
        }
    }
    let meta = Meta::new(cfg, "sweep", Stage::Sim);
    let name = param.name();
    ctx.dir.write_json(&format!("sweep_{name}.json"), &meta, &SweepResult { param, rows: rows.clone() })?;
    let (header, table) = sweep_table(name, &rows);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.dir.write_csv(&format!("sweep_{name}.csv"), &meta, |f| write_rows(f, &header, &table))?;
    Ok(())
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn sweep_table(param: &str, rows: &[SweepRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![param.to_string(), "policy".into()];
    for n in Metrics::NAMES {
        header.push(n.into());
        header.push(format!("{n}_half_width"));
    }
    header.push("miss_delta_prev".into());
    header.push("ci_overlap_prev".into());
    let table = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.value.to_string(), r.policy.clone()];
            for (m, hw) in r.mean.to_vec().into_iter().zip(r.half_width.to_vec()) {
                row.push(m.to_string());
                row.push(hw.to_string());
            }
            row.push(opt(r.miss_delta_prev));
            row.push(opt(r.ci_overlap_prev));
            row
        })
        .collect();
    (header, table)
}

/// Collects every simulation and sweep artifact into plot-ready CSVs. Refuses
/// inputs produced under a different config than the current one.
pub fn report(ctx: &Ctx) -> Result<(), Failure> {
    let mut names: Vec<String> = std::fs::read_dir(&ctx.dir.root)?
        .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
        .filter(|n| n.ends_with(".json") && (n.starts_with("sim_") || n.starts_with("sweep_")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Failure::missing(&ctx.dir.path("sim_*.json"), "simulate"));
    }
    let expected = ctx.cfg.hash();
    let mut policy_rows = Vec::new();
    let mut sweeps: Vec<(String, SweepResult)> = Vec::new();
    let mut mismatched = Vec::new();
    for n in &names {
        let path = ctx.dir.path(n);
        if n.starts_with("sim_") {
            let s: Stamped<MetricsReport> = read_json(&path)?;
            if s.meta.config_hash != expected {
                mismatched.push(format!("{n} ({})", &s.meta.config_hash[..12.min(s.meta.config_hash.len())]));
                continue;
            }
            let label = n.trim_start_matches("sim_").trim_end_matches(".json");
            policy_rows.extend(metric_rows(label, &s.body));
        } else {
            let s: Stamped<SweepResult> = read_json(&path)?;
            if s.meta.config_hash != expected {
                mismatched.push(format!("{n} ({})", &s.meta.config_hash[..12.min(s.meta.config_hash.len())]));
                continue;
            }
            sweeps.push((s.body.param.name().to_string(), s.body));
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure::Config(format!(
            "refusing to mix configs: current hash {} but {}",
            &expected[..12],
            mismatched.join(", ")
        )));
    }
    let meta = Meta::new(&ctx.cfg, "report", Stage::Sim);
    if !policy_rows.is_empty() {
        ctx.dir.write_csv("report_policies.csv", &meta, |f| write_rows(f, &METRIC_HEADER, &policy_rows))?;
    }
    for (name, s) in &sweeps {
        let (header, table) = sweep_table(name, &s.rows);
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        ctx.dir.write_csv(&format!("report_sweep_{name}.csv"), &meta, |f| write_rows(f, &header, &table))?;
    }
    println!("report: {} inputs", names.len());
    Ok(())
}
