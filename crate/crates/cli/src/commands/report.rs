use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adaptile::costmodel::{
    builtin_profiles, estimate_with_overhead, find_profile, mean_tile_count, read_profiles, DeviceProfile,
};
use adaptile::dataset::ImageAnnotations;
use adaptile::detector::{load_fused, Detection};
use adaptile::metrics::{aggregate, evaluate_image, Aggregate, EvalInput, EvalReport, MatchMode, REPORT_FORMAT};
use adaptile::pipeline::simulate_image;
use adaptile::tiling::{plan_dataset, TilePlan};
use adaptile::{Error, FORMAT_VERSION};
use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use super::detect::fuse_image;
use crate::config::{DetectorSource, FusionMethod, RunConfig, StrategySpec};
use crate::files::{load_images, pretty_json, read_text, write_text};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Fused detections from `fuse`.
    #[arg(long)]
    pub fused: PathBuf,
    /// JSON report [default: <output-dir>/eval.json].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Per-image CSV table [default: the report path with a `.csv` extension].
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON results [default: <output-dir>/sweep.json].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// CSV table [default: the results path with a `.csv` extension].
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Comma-separated average tile counts; otherwise they are planned from
    /// the dataset at every `--nba-list` entry.
    #[arg(long, value_delimiter = ',')]
    pub avg_tiles: Option<Vec<f64>>,
    /// Report every known profile instead of `--profile`.
    #[arg(long)]
    pub all_profiles: bool,
    /// Also write the rows as JSON.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn csv_beside(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

fn evaluate_all(images: &[ImageAnnotations], fused: &BTreeMap<String, Vec<Detection>>, mode: MatchMode) -> Result<(Vec<adaptile::metrics::ImageEval>, Aggregate)> {
    let none: Vec<Detection> = Vec::new();
    let per_image: Vec<_> = images
        .par_iter()
        .map(|img| {
            let preds = fused.get(&img.image_id).unwrap_or(&none);
            evaluate_image(
                &EvalInput {
                    image_id: &img.image_id,
                    preds,
                    gt: &img.boxes,
                },
                mode,
            )
        })
        .collect();
    let agg = aggregate(&per_image)?;
    Ok((per_image, agg))
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let images = load_images(cfg)?;
    let text = read_text(&args.fused)?;
    let fused = load_fused(&text).with_context(|| format!("reading {}", args.fused.display()))?;
    let known: std::collections::HashSet<&str> = images.iter().map(|i| i.image_id.as_str()).collect();
    if let Some(id) = fused.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::UnknownImage(id.clone()).into());
    }
    let mode = cfg.match_mode();
    let (per_image, agg) = evaluate_all(&images, &fused, mode)?;
    let report = EvalReport {
        format: REPORT_FORMAT.into(),
        version: FORMAT_VERSION,
        match_mode: mode,
        config: cfg.echo(),
        aggregate: agg,
        per_image,
    };
    let json = pretty_json(&report)?;
    let table = report.to_csv()?;
    let out = cfg.output_path(args.output.as_deref(), "eval.json");
    let csv = args.csv.clone().unwrap_or_else(|| csv_beside(&out));
    write_text(&out, &json)?;
    write_text(&csv, &table)?;
    let a = &report.aggregate;
    println!(
        "{}: F1 {:.4}  precision {:.4}  recall {:.4}  count MAE {:.3}  ({mode})",
        out.display(),
        a.f1,
        a.precision,
        a.recall,
        a.count_mae
    );
    Ok(())
}

fn load_profiles(extra: Option<&Path>) -> Result<Vec<DeviceProfile>> {
    let mut profiles = builtin_profiles();
    if let Some(path) = extra {
        for p in read_profiles(path)? {
            match profiles.iter_mut().find(|q| q.name == p.name) {
                Some(q) => *q = p,
                None => profiles.push(p),
            }
        }
    }
    Ok(profiles)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    /// Percent.
    pub t_nba: f64,
    pub strategy: String,
    pub avg_tiles: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub mae: f64,
    pub fps: f64,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    format: &'static str,
    version: u32,
    config: serde_json::Value,
    profile: &'a DeviceProfile,
    rows: &'a [SweepRow],
}

fn strategy_label(cfg: &RunConfig, spec: &StrategySpec) -> String {
    match cfg.fusion_method {
        FusionMethod::Match => spec.to_string(),
        FusionMethod::Adjacency => "adjacency".into(),
    }
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<()> {
    if cfg.detector != DetectorSource::Simulate {
        return Err(Error::InvalidValue(
            "sweep re-plans tiles and therefore needs the `simulate` detector".into(),
        )
        .into());
    }
    if cfg.nba_list.is_empty() || cfg.strategies.is_empty() {
        return Err(Error::InvalidValue("sweep needs at least one target area and one strategy".into()).into());
    }
    let images = load_images(cfg)?;
    if images.is_empty() {
        return Err(Error::Empty("dataset").into());
    }
    let profiles = load_profiles(cfg.profiles.as_deref())?;
    let profile = find_profile(&profiles, &cfg.profile)?;
    let sim = cfg.sim_config();
    // Adjacency merging ignores the match strategy: one row per target area.
    let strategies = match cfg.fusion_method {
        FusionMethod::Match => &cfg.strategies[..],
        FusionMethod::Adjacency => &cfg.strategies[..1],
    };
    let mut rows = Vec::new();
    for nba in &cfg.nba_list {
        let plans = plan_dataset(&images, nba.0, cfg.input_resolution, cfg.stats_source(), cfg.plan_options())?;
        let avg_tiles = mean_tile_count(&plans)?;
        let cost = estimate_with_overhead(avg_tiles, profile, cfg.overhead_ms / 1000.0)?;
        let per_tile = images
            .par_iter()
            .zip(&plans)
            .map(|(gt, plan)| simulate_image(gt, plan, &sim, cfg.detector_kind))
            .collect::<adaptile::Result<Vec<_>>>()?;
        for spec in strategies {
            let mut run = cfg.clone();
            run.strategy = spec.strategy;
            run.threshold = Some(spec.threshold);
            let fused = plans
                .par_iter()
                .zip(&per_tile)
                .map(|(plan, tiles)| Ok((plan.image_id.clone(), fuse_image(&run, plan, tiles)?)))
                .collect::<adaptile::Result<BTreeMap<_, _>>>()?;
            let (_, agg) = evaluate_all(&images, &fused, cfg.match_mode())?;
            rows.push(SweepRow {
                t_nba: nba.0.percent(),
                strategy: strategy_label(cfg, spec),
                avg_tiles,
                f1: agg.f1,
                precision: agg.precision,
                recall: agg.recall,
                mae: agg.count_mae,
                fps: cost.fps,
            });
        }
    }
    let report = SweepReport {
        format: "adaptile-sweep",
        version: FORMAT_VERSION,
        config: cfg.echo(),
        profile,
        rows: &rows,
    };
    let json = pretty_json(&report)?;
    let table = sweep_csv(&rows)?;
    let out = cfg.output_path(args.output.as_deref(), "sweep.json");
    let csv = args.csv.clone().unwrap_or_else(|| csv_beside(&out));
    write_text(&out, &json)?;
    write_text(&csv, &table)?;
    print!("{}", sweep_table(&rows, &profile.name));
    Ok(())
}

fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut s = String::from("t_nba,strategy,avg_tiles,f1,precision,recall,mae,fps\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.t_nba, r.strategy, r.avg_tiles, r.f1, r.precision, r.recall, r.mae, r.fps
        )?;
    }
    Ok(s)
}

fn sweep_table(rows: &[SweepRow], profile: &str) -> String {
    let mut s = format!(
        "{:>7}  {:<22} {:>9} {:>7} {:>7} {:>7} {:>8} {:>7}\n",
        "t_nba%", "strategy", "avg_tiles", "F1", "Pr", "Re", "MAE", "fps"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>7.2}  {:<22} {:>9.1} {:>7.3} {:>7.3} {:>7.3} {:>8.3} {:>7.1}",
            r.t_nba, r.strategy, r.avg_tiles, r.f1, r.precision, r.recall, r.mae, r.fps
        );
    }
    let _ = writeln!(s, "fps estimated with profile `{profile}`");
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub profile: String,
    /// Percent; absent when the tile count was given directly.
    pub t_nba: Option<f64>,
    pub avg_tiles: f64,
    pub latency_ms: f64,
    pub fps: f64,
    pub energy_mj: Option<f64>,
}

#[derive(Serialize)]
struct CostReport<'a> {
    format: &'static str,
    version: u32,
    config: serde_json::Value,
    rows: &'a [CostRow],
}

pub fn cost(cfg: &RunConfig, args: &CostArgs) -> Result<()> {
    let profiles = load_profiles(cfg.profiles.as_deref())?;
    let selected: Vec<&DeviceProfile> = if args.all_profiles {
        profiles.iter().collect()
    } else {
        vec![find_profile(&profiles, &cfg.profile)?]
    };
    let overhead = cfg.overhead_ms / 1000.0;
    let mut inputs: Vec<(Option<f64>, f64, &DeviceProfile)> = Vec::new();
    match &args.avg_tiles {
        Some(list) => {
            for p in &selected {
                inputs.extend(list.iter().map(|&n| (None, n, *p)));
            }
        }
        None => {
            let images = load_images(cfg)?;
            if images.is_empty() {
                return Err(Error::Empty("dataset").into());
            }
            for p in &selected {
                let input = p.input_resolution.unwrap_or(cfg.input_resolution);
                for nba in &cfg.nba_list {
                    let plans: Vec<TilePlan> =
                        plan_dataset(&images, nba.0, input, cfg.stats_source(), cfg.plan_options())?;
                    inputs.push((Some(nba.0.percent()), mean_tile_count(&plans)?, *p));
                }
            }
        }
    }
    let rows = inputs
        .into_iter()
        .map(|(t_nba, n, p)| {
            let e = estimate_with_overhead(n, p, overhead)?;
            Ok(CostRow {
                profile: p.name.clone(),
                t_nba,
                avg_tiles: n,
                latency_ms: e.latency_per_image * 1e3,
                fps: e.fps,
                energy_mj: e.energy_per_image.map(|j| j * 1e3),
            })
        })
        .collect::<adaptile::Result<Vec<_>>>()?;
    let json = match &args.output {
        Some(_) => Some(pretty_json(&CostReport {
            format: "adaptile-cost",
            version: FORMAT_VERSION,
            config: cfg.echo(),
            rows: &rows,
        })?),
        None => None,
    };
    if let (Some(path), Some(json)) = (&args.output, json) {
        write_text(path, &json)?;
    }
    print!("{}", cost_table(&rows));
    Ok(())
}

fn cost_table(rows: &[CostRow]) -> String {
    let mut s = format!(
        "{:<22} {:>7} {:>9} {:>11} {:>7} {:>10}\n",
        "profile", "t_nba%", "avg_tiles", "latency_ms", "fps", "energy_mJ"
    );
    for r in rows {
        let t = r.t_nba.map_or("-".into(), |v| format!("{v:.2}"));
        let e = r.energy_mj.map_or("-".into(), |v| format!("{v:.3}"));
        let _ = writeln!(
            s,
            "{:<22} {:>7} {:>9.1} {:>11.2} {:>7.1} {:>10}",
            r.profile, t, r.avg_tiles, r.latency_ms, r.fps, e
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_table_rounds_like_the_reference_table() {
        let profiles = builtin_profiles();
        let p = find_profile(&profiles, "tinyissimoyolo-gap9").unwrap();
        let rows: Vec<CostRow> = [4.1, 10.1, 21.6, 27.8]
            .iter()
            .map(|&n| {
                let e = estimate_with_overhead(n, p, 0.0).unwrap();
                CostRow {
                    profile: p.name.clone(),
                    t_nba: None,
                    avg_tiles: n,
                    latency_ms: e.latency_per_image * 1e3,
                    fps: e.fps,
                    energy_mj: None,
                }
            })
            .collect();
        let table = cost_table(&rows);
        let fps: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().nth(4).unwrap()).collect();
        assert_eq!(fps, ["15.1", "6.1", "2.9", "2.2"]);
    }

    #[test]
    fn sweep_csv_has_stable_columns() {
        let rows = [SweepRow {
            t_nba: 0.8,
            strategy: "iou@0.25".into(),
            avg_tiles: 4.0,
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
            mae: 0.0,
            fps: 15.0,
        }];
        let csv = sweep_csv(&rows).unwrap();
        assert_eq!(
            csv,
            "t_nba,strategy,avg_tiles,f1,precision,recall,mae,fps\n0.8,iou@0.25,4,1,1,1,0,15\n"
        );
    }
}
