//! The `afford` subcommands. Each one reads and writes plain files under
//! the output directory:
//!
//! ```text
//! demos/NNNN/              collect
//! memory/                  collect
//! collect.tsv              collect
//! checkpoints/<variant>/   train
//! loss_<variant>.tsv       train
//! episodes_<splits>_<guidance>.tsv, results_<splits>_<guidance>.tsv   eval
//! ablation.tsv, ablation_episodes.tsv                                 ablate
//! plot_scatter.tsv, plot_summary.tsv                                  plot
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use afford_core::affordance::AffordanceMemory;
use afford_core::descriptor::SyntheticProvider;
use afford_core::geometry::io::format_real;
use afford_core::policy::{demo, train as train_policy, DemoDataset, PolicyConfig, PolicyNetwork};
use afford_core::sampler::{GuidanceMode, NoiseSchedule};

use crate::config::{EvalPolicy, RunConfig};
use crate::error::CliError;
use crate::protocol::{collect as collect_demos, prepare, run_episode, EpisodeRecord, PreparedEpisode, Split, STANDARD_SPLITS};
use crate::report::{self, convex_hull_area, RateRow};

/// Policy conditioning variants compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Contact point only.
    ContactOnly,
    /// Contact point and post-contact trajectory.
    Full,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ContactOnly => "contact_only",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "contact_only" => Ok(Variant::ContactOnly),
            "full" => Ok(Variant::Full),
            other => Err(CliError::Config(format!("unknown variant `{other}`"))),
        }
    }

    fn policy_config(self, base: &PolicyConfig) -> PolicyConfig {
        PolicyConfig {
            use_trajectory: self == Variant::Full,
            ..base.clone()
        }
    }
}

pub fn demos_dir(out: &Path) -> PathBuf {
    out.join("demos")
}

pub fn memory_dir(out: &Path) -> PathBuf {
    out.join("memory")
}

pub fn checkpoint_dir(out: &Path, variant: Variant) -> PathBuf {
    out.join("checkpoints").join(variant.name())
}

fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule, CliError> {
    Ok(NoiseSchedule::cosine(cfg.policy.train_steps, cfg.inference_steps)?)
}

pub fn collect(cfg: &RunConfig, out: &Path) -> Result<usize, CliError> {
    let provider = SyntheticProvider::default();
    let c = collect_demos(cfg, &provider)?;
    let demos = demos_dir(out);
    if demos.exists() {
        std::fs::remove_dir_all(&demos)?;
    }
    std::fs::create_dir_all(&demos)?;
    demo::save_episodes(&demos, &c.episodes)?;
    let memory = memory_dir(out);
    if memory.exists() {
        std::fs::remove_dir_all(&memory)?;
    }
    c.memory.save(&memory)?;
    let mut text = report::preamble(&cfg.hash(), cfg.seed);
    text.push_str("demo\tseed\tobject\tfeasible\tsuccess\n");
    for (d, seed, id, feasible, success) in &c.attempts {
        let _ = writeln!(text, "{d}\t{seed}\t{id}\t{}\t{}", u8::from(*feasible), u8::from(*success));
    }
    report::write(&out.join("collect.tsv"), &text)?;
    log::info!("collected {} demonstrations and {} memory entries", c.episodes.len(), c.memory.len());
    Ok(c.episodes.len())
}

/// Trains one variant on the collected demos; returns the loss curve.
pub fn train(cfg: &RunConfig, out: &Path, variant: Variant) -> Result<Vec<f64>, CliError> {
    let dir = demos_dir(out);
    let episodes = demo::load_episodes(&dir).map_err(|e| CliError::Data(format!("demos at {}: {e}", dir.display())))?;
    let pcfg = variant.policy_config(&cfg.policy);
    let data = DemoDataset::from_episodes(&episodes, &pcfg)?;
    let mut net = PolicyNetwork::new(pcfg, data.normalizer.clone(), cfg.network_seed)?;
    let curve = train_policy(&mut net, &data, &schedule(cfg)?, &cfg.train)?;
    net.save(
        &checkpoint_dir(out, variant),
        &[("config_hash".to_string(), cfg.hash()), ("variant".to_string(), variant.name().to_string())],
    )?;
    let mut text = report::preamble(&cfg.hash(), cfg.seed);
    text.push_str("epoch\tloss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(text, "{i}\t{}", format_real(*l));
    }
    report::write(&out.join(format!("loss_{}.tsv", variant.name())), &text)?;
    Ok(curve)
}

pub fn load_policy(out: &Path, variant: Variant) -> Result<PolicyNetwork, CliError> {
    let dir = checkpoint_dir(out, variant);
    if !dir.exists() {
        return Err(CliError::Data(format!(
            "missing `{}` checkpoint at {}; run `afford train --variant {}`",
            variant.name(),
            dir.display(),
            variant.name()
        )));
    }
    Ok(PolicyNetwork::load(&dir)?.0)
}

fn load_memory(out: &Path) -> Result<AffordanceMemory, CliError> {
    let dir = memory_dir(out);
    AffordanceMemory::load(&dir).map_err(|e| CliError::Data(format!("memory at {}: {e}", dir.display())))
}

fn split_episodes(cfg: &RunConfig, split: Split) -> usize {
    if split == Split::Spatial {
        cfg.spatial_episodes
    } else {
        cfg.eval_episodes
    }
}

/// Transfers affordances for every episode of `splits`.
pub fn prepare_all(cfg: &RunConfig, memory: &AffordanceMemory, splits: &[Split]) -> Result<Vec<PreparedEpisode>, CliError> {
    let provider = SyntheticProvider::default();
    let mut out = Vec::new();
    for &s in splits {
        for i in 0..split_episodes(cfg, s) {
            out.push(prepare(cfg, memory, &provider, s, i)?);
        }
    }
    Ok(out)
}

fn run_all(
    cfg: &RunConfig,
    net: Option<&PolicyNetwork>,
    prepared: &[PreparedEpisode],
    mode: GuidanceMode,
) -> Result<Vec<EpisodeRecord>, CliError> {
    let sched = schedule(cfg)?;
    prepared.iter().map(|p| run_episode(cfg, net, &sched, p, mode)).collect()
}

fn rows_for(label: &str, splits: &[Split], records: &[EpisodeRecord]) -> Vec<RateRow> {
    splits
        .iter()
        .map(|s| {
            let rs: Vec<&EpisodeRecord> = records.iter().filter(|r| r.split == *s).collect();
            RateRow::from_records(label, s.name(), &rs)
        })
        .collect()
}

pub fn splits_tag(splits: &[Split]) -> String {
    if splits == STANDARD_SPLITS {
        "all".to_string()
    } else {
        splits.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
    }
}

/// Full-pipeline evaluation of the `full` checkpoint (or the scripted
/// expert when `eval.policy = expert`).
pub fn eval(cfg: &RunConfig, out: &Path, splits: &[Split]) -> Result<Vec<RateRow>, CliError> {
    let memory = load_memory(out)?;
    let net = match cfg.eval_policy {
        EvalPolicy::Network => Some(load_policy(out, Variant::Full)?),
        EvalPolicy::Expert => None,
    };
    let mode = cfg.guidance.mode;
    let prepared = prepare_all(cfg, &memory, splits)?;
    let records = run_all(cfg, net.as_ref(), &prepared, mode)?;
    let label = match cfg.eval_policy {
        EvalPolicy::Network => format!("full+{mode}"),
        EvalPolicy::Expert => "expert".to_string(),
    };
    let rows = rows_for(&label, splits, &records);
    let tag = format!("{}_{}", splits_tag(splits), mode);
    let head = report::preamble(&cfg.hash(), cfg.seed);
    report::write(&out.join(format!("episodes_{tag}.tsv")), &(head.clone() + &report::episodes_table(&records)))?;
    report::write(&out.join(format!("results_{tag}.tsv")), &(head + &report::rates_table(&rows)))?;
    Ok(rows)
}

/// Contact-only, contact + trajectory, and contact + trajectory + guidance
/// over the standard splits, with shared transfers and seeds.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<RateRow>, CliError> {
    let memory = load_memory(out)?;
    let contact = load_policy(out, Variant::ContactOnly)?;
    let full = load_policy(out, Variant::Full)?;
    let guided = match cfg.guidance.mode {
        GuidanceMode::None => GuidanceMode::Spherical,
        m => m,
    };
    let prepared = prepare_all(cfg, &memory, &STANDARD_SPLITS)?;
    let variants = [
        ("contact_only", &contact, GuidanceMode::None),
        ("+trajectory", &full, GuidanceMode::None),
        ("+guidance", &full, guided),
    ];
    let mut rows = Vec::new();
    let mut episodes = String::new();
    for (label, net, mode) in variants {
        let records = run_all(cfg, Some(net), &prepared, mode)?;
        rows.extend(rows_for(label, &STANDARD_SPLITS, &records));
        for line in report::episodes_table(&records).lines().skip(usize::from(!episodes.is_empty())) {
            if episodes.is_empty() {
                let _ = writeln!(episodes, "variant\t{line}");
            } else {
                let _ = writeln!(episodes, "{label}\t{line}");
            }
        }
    }
    let head = report::preamble(&cfg.hash(), cfg.seed);
    report::write(&out.join("ablation.tsv"), &(head.clone() + &ablation_grid(&rows)))?;
    report::write(&out.join("ablation_episodes.tsv"), &(head + &episodes))?;
    Ok(rows)
}

/// Three variant rows by three split columns of success rates.
pub fn ablation_grid(rows: &[RateRow]) -> String {
    let mut out = String::from("variant");
    for s in STANDARD_SPLITS {
        let _ = write!(out, "\t{s}");
    }
    out.push('\n');
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    for l in labels {
        out.push_str(l);
        for s in STANDARD_SPLITS {
            let rate = rows.iter().find(|r| r.label == l && r.split == s.name()).map_or(0.0, RateRow::rate);
            let _ = write!(out, "\t{rate:.4}");
        }
        out.push('\n');
    }
    out
}

/// Spatial-generalization scatter from `episodes_spatial_none.tsv` and
/// `episodes_spatial_<guided>.tsv` plus the demo handle positions.
pub fn plot(cfg: &RunConfig, out: &Path, guided: GuidanceMode) -> Result<(usize, usize), CliError> {
    let demos = demo::load_episodes(&demos_dir(out))
        .map_err(|e| CliError::Data(format!("demos at {}: {e}", demos_dir(out).display())))?;
    let demo_points: Vec<(f64, f64)> = demos.iter().map(|e| (e.contact.x, e.contact.y)).collect();
    let layers = [GuidanceMode::None, guided];
    let mut successes: Vec<Vec<(f64, f64)>> = Vec::new();
    for mode in layers {
        let path = out.join(format!("episodes_spatial_{mode}.tsv"));
        let (header, rows) = report::read_table(&path)?;
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::Data(format!("{} lacks column `{name}`", path.display())))
        };
        let (x, y, s) = (col("handle_x")?, col("handle_y")?, col("success")?);
        let parse = |v: &str| v.parse::<f64>().map_err(|_| CliError::Data(format!("bad number `{v}` in {}", path.display())));
        let mut pts = Vec::new();
        for r in &rows {
            if r[s] == "1" {
                pts.push((parse(&r[x])?, parse(&r[y])?));
            }
        }
        successes.push(pts);
    }
    let head = report::preamble(&cfg.hash(), cfg.seed);
    let mut scatter = head.clone() + "layer\tx\ty\n";
    let mut push = |layer: &str, pts: &[(f64, f64)]| {
        for (x, y) in pts {
            let _ = writeln!(scatter, "{layer}\t{}\t{}", format_real(*x), format_real(*y));
        }
    };
    push("demo", &demo_points);
    push("success_none", &successes[0]);
    push(&format!("success_{guided}"), &successes[1]);
    report::write(&out.join("plot_scatter.tsv"), &scatter)?;
    let mut summary = head + "layer\tcount\thull_area\n";
    for (name, pts) in [
        ("demo".to_string(), &demo_points),
        ("success_none".to_string(), &successes[0]),
        (format!("success_{guided}"), &successes[1]),
    ] {
        let _ = writeln!(summary, "{name}\t{}\t{}", pts.len(), format_real(convex_hull_area(pts)));
    }
    report::write(&out.join("plot_summary.tsv"), &summary)?;
    Ok((successes[0].len(), successes[1].len()))
}
