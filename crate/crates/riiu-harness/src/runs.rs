//! Command drivers: training, ablations, calibration, verification.
//!
//! Every command writes its resolved configuration plus CSV logs into
//! its own subdirectory of the configured output directory, and
//! returns a summary struct the acceptance suite asserts against.

use crate::config::RunConfig;
use crate::csvio;
use crate::svg::{self, Panel, Series};
use crate::verify;
use anyhow::{Context, Result};
use riiu_core::agent::{
    recovery_latency_vs_target, repair_latency, train, EpisodeRow, StepRow, TrainOutput,
};
use riiu_core::env::optimal_return;
use riiu_core::params::save_checkpoint;
use riiu_core::RngStream;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Median with the average-of-middles convention.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn late_phase<'a>(
    episodes: &'a [EpisodeRow],
    from_episode: usize,
) -> impl Iterator<Item = &'a EpisodeRow> {
    episodes.iter().filter(move |r| r.episode > from_episode)
}

fn late_median_phi(episodes: &[EpisodeRow], from_episode: usize) -> f64 {
    let v: Vec<f64> = late_phase(episodes, from_episode)
        .map(|r| r.phi_rel_percent)
        .collect();
    if v.is_empty() {
        0.0
    } else {
        median(v)
    }
}

fn late_median_return(episodes: &[EpisodeRow], from_episode: usize) -> f64 {
    let v: Vec<f64> = late_phase(episodes, from_episode)
        .map(|r| r.mean_return)
        .collect();
    if v.is_empty() {
        0.0
    } else {
        median(v)
    }
}

/// One trained seed with its wall time.
pub struct SeedRun {
    pub seed: u64,
    pub output: TrainOutput,
    pub wall_secs: f64,
}

fn train_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let stack = cfg.stack_config();
    let env = cfg.env_config()?;
    let tc = cfg.train_config(seed);
    let t0 = Instant::now();
    let output = train(&tc, &stack, &env).with_context(|| format!("training seed {seed}"))?;
    Ok(SeedRun {
        seed,
        output,
        wall_secs: t0.elapsed().as_secs_f64(),
    })
}

/// Per-seed statistics of a finished run.
pub struct SeedStats {
    pub seed: u64,
    pub final_return: f64,
    pub late_return_median: f64,
    pub late_phi_median: f64,
    pub wall_secs: f64,
}

pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub per_seed: Vec<SeedStats>,
    pub median_final_return: f64,
    pub median_late_return: f64,
    pub median_late_phi: f64,
}

impl TrainSummary {
    pub fn summary_line(&self) -> String {
        format!(
            "train: {} seeds, median final return {:.3}, median late-phase return {:.3}, median late-phase phi {:.3}%",
            self.per_seed.len(),
            self.median_final_return,
            self.median_late_return,
            self.median_late_phi
        )
    }
}

/// Train the stock configuration over the configured seeds: logs,
/// per-seed checkpoints, and the return/surrogate plot with the
/// damage marker.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dir = Path::new(&cfg.run.out_dir).join("train");
    cfg.write_resolved(&dir)?;
    let late_from = cfg.metrics.late_phase_from_episode;

    let mut runs: Vec<SeedRun> = Vec::new();
    for &seed in &cfg.run.seeds {
        runs.push(train_seed(cfg, seed)?);
    }

    let episode_rows: Vec<(String, u64, &[EpisodeRow])> = runs
        .iter()
        .map(|r| ("riiu".to_string(), r.seed, r.output.episodes.as_slice()))
        .collect();
    csvio::write_episodes(&dir.join("episodes.csv"), &episode_rows)?;
    let step_rows: Vec<(String, u64, &[StepRow])> = runs
        .iter()
        .map(|r| ("riiu".to_string(), r.seed, r.output.steps.as_slice()))
        .collect();
    csvio::write_steps(&dir.join("steps.csv"), &step_rows)?;
    for r in &runs {
        let f = std::fs::File::create(dir.join(format!("checkpoint-seed{}.txt", r.seed)))?;
        save_checkpoint(&r.output.params, std::io::BufWriter::new(f))?;
    }

    // plot: first seed, raw plus 10-episode moving average
    let first = &runs[0].output;
    let returns: Vec<(f64, f64)> = first
        .episodes
        .iter()
        .map(|e| (e.episode as f64, e.mean_return))
        .collect();
    let phis: Vec<(f64, f64)> = first
        .episodes
        .iter()
        .map(|e| (e.episode as f64, e.phi_rel_percent))
        .collect();
    let damage_episode = first
        .episodes
        .iter()
        .find(|e| e.damaged)
        .map(|e| e.episode as f64);
    let panel = Panel {
        title: "episode return and integration signal",
        x_label: "episode",
        y_label: "return / phi (%)",
        series: vec![
            Series { name: "return".into(), color: "#9ecae1", points: returns.clone() },
            Series { name: "return (ma10)".into(), color: "#1f77b4", points: svg::moving_average(&returns, 10) },
            Series { name: "phi %".into(), color: "#fdd0a2", points: phis.clone() },
            Series { name: "phi % (ma10)".into(), color: "#ff7f0e", points: svg::moving_average(&phis, 10) },
        ],
        vline: damage_episode.map(|x| (x, "damage")),
    };
    std::fs::write(dir.join("return_phi.svg"), svg::render(&[panel]))?;

    let per_seed: Vec<SeedStats> = runs
        .iter()
        .map(|r| SeedStats {
            seed: r.seed,
            final_return: r.output.episodes.last().map(|e| e.mean_return).unwrap_or(0.0),
            late_return_median: late_median_return(&r.output.episodes, late_from),
            late_phi_median: late_median_phi(&r.output.episodes, late_from),
            wall_secs: r.wall_secs,
        })
        .collect();
    Ok(TrainSummary {
        out_dir: dir,
        median_final_return: median(per_seed.iter().map(|s| s.final_return).collect()),
        median_late_return: median(per_seed.iter().map(|s| s.late_return_median).collect()),
        median_late_phi: median(per_seed.iter().map(|s| s.late_phi_median).collect()),
        per_seed,
    })
}

pub struct BufferVariant {
    pub buf_len: usize,
    pub late_phi_median: f64,
    pub late_return_median: f64,
    pub final_return: f64,
}

pub struct BufferSummary {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub variants: Vec<BufferVariant>,
}

impl BufferSummary {
    pub fn summary_line(&self) -> String {
        let parts: Vec<String> = self
            .variants
            .iter()
            .map(|v| format!("buf{}: phi {:.3}% return {:.3}", v.buf_len, v.late_phi_median, v.late_return_median))
            .collect();
        format!("ablate-buffer (seed {}): {}", self.seed, parts.join("; "))
    }
}

/// Three runs differing only in the window length.
pub fn cmd_ablate_buffer(cfg: &RunConfig) -> Result<BufferSummary> {
    let dir = Path::new(&cfg.run.out_dir).join("ablate-buffer");
    cfg.write_resolved(&dir)?;
    let late_from = cfg.metrics.late_phase_from_episode;
    let seed = *cfg.run.seeds.first().context("need at least one seed")?;

    let mut outputs: Vec<(usize, TrainOutput)> = Vec::new();
    for buf in [8usize, 32, 64] {
        let mut varied = cfg.clone();
        varied.stack.buf_len = buf;
        let stack = varied.stack_config();
        let env = varied.env_config()?;
        let tc = varied.train_config(seed);
        outputs.push((buf, train(&tc, &stack, &env)?));
    }

    let episode_rows: Vec<(String, u64, &[EpisodeRow])> = outputs
        .iter()
        .map(|(b, o)| (format!("buf{b}"), seed, o.episodes.as_slice()))
        .collect();
    csvio::write_episodes(&dir.join("episodes.csv"), &episode_rows)?;
    let step_rows: Vec<(String, u64, &[StepRow])> = outputs
        .iter()
        .map(|(b, o)| (format!("buf{b}"), seed, o.steps.as_slice()))
        .collect();
    csvio::write_steps(&dir.join("steps.csv"), &step_rows)?;

    let colors = ["#2ca02c", "#1f77b4", "#d62728"];
    let mk_series = |value: &dyn Fn(&EpisodeRow) -> f64| -> Vec<Series> {
        outputs
            .iter()
            .enumerate()
            .map(|(i, (b, o))| {
                let pts: Vec<(f64, f64)> = o
                    .episodes
                    .iter()
                    .map(|e| (e.episode as f64, value(e)))
                    .collect();
                Series {
                    name: format!("buf {b}"),
                    color: colors[i],
                    points: svg::moving_average(&pts, 10),
                }
            })
            .collect()
    };
    let panels = [
        Panel {
            title: "episode return by window length (ma10)",
            x_label: "episode",
            y_label: "return",
            series: mk_series(&|e| e.mean_return),
            vline: None,
        },
        Panel {
            title: "integration signal by window length (ma10)",
            x_label: "episode",
            y_label: "phi (%)",
            series: mk_series(&|e| e.phi_rel_percent),
            vline: None,
        },
    ];
    std::fs::write(dir.join("buffer_ablation.svg"), svg::render(&panels))?;

    let variants: Vec<BufferVariant> = outputs
        .iter()
        .map(|(b, o)| BufferVariant {
            buf_len: *b,
            late_phi_median: late_median_phi(&o.episodes, late_from),
            late_return_median: late_median_return(&o.episodes, late_from),
            final_return: o.episodes.last().map(|e| e.mean_return).unwrap_or(0.0),
        })
        .collect();
    let lines: Vec<String> = variants
        .iter()
        .map(|v| {
            format!(
                "buf{},{},{},{}",
                v.buf_len, v.late_phi_median, v.late_return_median, v.final_return
            )
        })
        .collect();
    csvio::write_lines(
        &dir.join("buffer_compare.csv"),
        "variant,late_phi_median_percent,late_return_median,final_return",
        &lines,
    )?;
    Ok(BufferSummary {
        out_dir: dir,
        seed,
        variants,
    })
}

pub struct MetaSeedRow {
    pub seed: u64,
    pub full_recovery_steps: u64,
    pub nometa_recovery_steps: u64,
    pub full_repair_steps: Option<usize>,
    pub nometa_repair_steps: Option<usize>,
    pub full_late_phi: f64,
    pub nometa_late_phi: f64,
    pub full_final_return: f64,
    pub nometa_final_return: f64,
}

pub struct MetaSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<MetaSeedRow>,
    pub median_recovery_ratio: f64,
    pub median_full_phi: f64,
    pub median_nometa_phi: f64,
    pub phi_ratio: f64,
}

impl MetaSummary {
    pub fn summary_line(&self) -> String {
        format!(
            "ablate-meta: {} seeds, median recovery-latency ratio {:.2}, late-phase phi {:.3}% vs {:.3}% (ratio {:.2})",
            self.rows.len(),
            self.median_recovery_ratio,
            self.median_full_phi,
            self.median_nometa_phi,
            self.phi_ratio
        )
    }
}

/// Paired runs, full unit against the no-meta ablation, at the stock
/// configuration. Reports the recovery latency against the optimal
/// return (the attainable level is identical before and after damage
/// here), the own-level step repair latency for reference, and the
/// late-phase surrogate levels.
pub fn cmd_ablate_meta(cfg: &RunConfig) -> Result<MetaSummary> {
    let dir = Path::new(&cfg.run.out_dir).join("ablate-meta");
    cfg.write_resolved(&dir)?;
    let late_from = cfg.metrics.late_phase_from_episode;
    let env = cfg.env_config()?;
    let target = cfg.metrics.recovery_target_fraction * optimal_return(&env, true);
    let window = cfg.metrics.recovery_window_episodes;

    let mut rows: Vec<MetaSeedRow> = Vec::new();
    let mut all_eps: Vec<(String, u64, TrainOutput)> = Vec::new();
    for &seed in &cfg.run.seeds {
        let full = train_seed(cfg, seed)?;
        let mut ablated_cfg = cfg.clone();
        ablated_cfg.stack.meta_enabled = false;
        let nometa = {
            let stack = ablated_cfg.stack_config();
            let tc = ablated_cfg.train_config(seed);
            train(&tc, &stack, &env)?
        };

        let full_rec = recovery_latency_vs_target(
            &full.output.episodes,
            env.damage_step,
            target,
            window,
        )?;
        let nometa_rec =
            recovery_latency_vs_target(&nometa.episodes, env.damage_step, target, window)?;
        let full_rep = repair_latency(
            &full.output.steps,
            cfg.metrics.smoothing_window_steps,
            cfg.metrics.pre_window_steps,
        )
        .ok();
        let nometa_rep = repair_latency(
            &nometa.steps,
            cfg.metrics.smoothing_window_steps,
            cfg.metrics.pre_window_steps,
        )
        .ok();

        rows.push(MetaSeedRow {
            seed,
            full_recovery_steps: full_rec,
            nometa_recovery_steps: nometa_rec,
            full_repair_steps: full_rep,
            nometa_repair_steps: nometa_rep,
            full_late_phi: late_median_phi(&full.output.episodes, late_from),
            nometa_late_phi: late_median_phi(&nometa.episodes, late_from),
            full_final_return: full
                .output
                .episodes
                .last()
                .map(|e| e.mean_return)
                .unwrap_or(0.0),
            nometa_final_return: nometa.episodes.last().map(|e| e.mean_return).unwrap_or(0.0),
        });
        all_eps.push(("riiu".to_string(), seed, full.output));
        all_eps.push(("no-meta".to_string(), seed, nometa));
    }

    let episode_rows: Vec<(String, u64, &[EpisodeRow])> = all_eps
        .iter()
        .map(|(v, s, o)| (v.clone(), *s, o.episodes.as_slice()))
        .collect();
    csvio::write_episodes(&dir.join("episodes.csv"), &episode_rows)?;
    let step_rows: Vec<(String, u64, &[StepRow])> = all_eps
        .iter()
        .map(|(v, s, o)| (v.clone(), *s, o.steps.as_slice()))
        .collect();
    csvio::write_steps(&dir.join("steps.csv"), &step_rows)?;

    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.full_recovery_steps,
                r.nometa_recovery_steps,
                r.full_repair_steps.map_or(-1i64, |v| v as i64),
                r.nometa_repair_steps.map_or(-1i64, |v| v as i64),
                r.full_late_phi,
                r.nometa_late_phi,
                r.full_final_return,
                r.nometa_final_return
            )
        })
        .collect();
    csvio::write_lines(
        &dir.join("meta_compare.csv"),
        "seed,full_recovery_steps,nometa_recovery_steps,full_repair_steps,nometa_repair_steps,full_late_phi_percent,nometa_late_phi_percent,full_final_return,nometa_final_return",
        &lines,
    )?;

    let ratios: Vec<f64> = rows
        .iter()
        .map(|r| r.nometa_recovery_steps as f64 / (r.full_recovery_steps as f64).max(1.0))
        .collect();
    let median_full_phi = median(rows.iter().map(|r| r.full_late_phi).collect());
    let median_nometa_phi = median(rows.iter().map(|r| r.nometa_late_phi).collect());
    Ok(MetaSummary {
        out_dir: dir,
        median_recovery_ratio: median(ratios),
        phi_ratio: median_full_phi / median_nometa_phi.max(1e-9),
        median_full_phi,
        median_nometa_phi,
        rows,
    })
}

pub struct CalibrationSummary {
    pub out_dir: PathBuf,
    pub spearman: f64,
    pub n_systems: usize,
}

impl CalibrationSummary {
    pub fn summary_line(&self) -> String {
        format!(
            "calibrate: spearman {:.4} over {} systems",
            self.spearman, self.n_systems
        )
    }
}

/// Score the surrogate against the exhaustive bipartition oracle.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<CalibrationSummary> {
    let dir = Path::new(&cfg.run.out_dir).join("calibrate");
    cfg.write_resolved(&dir)?;
    let mut rng = RngStream::new(cfg.calibrate.seed);
    let report = riiu_core::oracle::calibrate(cfg.calibrate.n_systems, &mut rng)?;
    csvio::write_scatter(&dir.join("scatter.csv"), &report.rows)?;
    csvio::write_lines(
        &dir.join("summary.csv"),
        "n_systems,spearman",
        &[format!("{},{}", report.rows.len(), report.spearman)],
    )?;
    Ok(CalibrationSummary {
        out_dir: dir,
        spearman: report.spearman,
        n_systems: report.rows.len(),
    })
}

/// Run the verification suites and write the report.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Vec<verify::SuiteReport>> {
    let dir = Path::new(&cfg.run.out_dir).join("verify");
    cfg.write_resolved(&dir)?;
    let reports = verify::run_all();
    let lines: Vec<String> = reports.iter().map(|r| r.line()).collect();
    csvio::write_lines(&dir.join("report.txt"), "verification suites", &lines)?;
    Ok(reports)
}
