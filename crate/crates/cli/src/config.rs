//! Run configuration: a flat JSON file whose keys mirror the command-line
//! flags. Precedence is flags, then file, then built-in defaults. The resolved
//! configuration is echoed into every output.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adaptile::dataset::{Layout, SynthConfig};
use adaptile::detector::SimDetectorConfig;
use adaptile::fusion::{FusionConfig, MatchStrategy, ReducePolicy};
use adaptile::metrics::MatchMode;
use adaptile::pipeline::DetectorKind;
use adaptile::tiling::{PlanOptions, StatsSource, DEFAULT_MAX_TILES};
use adaptile::{Error, Nba};
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A normalized area given either as a fraction (`0.008`) or a percentage
/// (`"0.8%"`), on the command line or in the config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbaArg(pub Nba);

impl FromStr for NbaArg {
    type Err = Error;

    fn from_str(s: &str) -> adaptile::Result<Self> {
        Nba::parse(s).map(NbaArg)
    }
}

impl Serialize for NbaArg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0.value())
    }
}

impl<'de> Deserialize<'de> for NbaArg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let nba = match Raw::deserialize(d)? {
            Raw::Number(v) => Nba::new(v),
            Raw::Text(s) => Nba::parse(&s),
        };
        nba.map(NbaArg).map_err(serde::de::Error::custom)
    }
}

/// A fusion strategy with an optional explicit threshold: `iou`, `iou@0.5`,
/// `one_way_ratio@0.8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategySpec {
    pub strategy: MatchStrategy,
    pub threshold: f64,
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> adaptile::Result<Self> {
        let (name, threshold) = match s.split_once('@') {
            Some((n, t)) => {
                let t = t
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidValue(format!("bad threshold in `{s}`")))?;
                (n, Some(t))
            }
            None => (s, None),
        };
        let strategy: MatchStrategy = name.parse()?;
        let threshold = threshold.unwrap_or_else(|| strategy.default_threshold());
        FusionConfig::new(strategy, threshold)?;
        Ok(StrategySpec { strategy, threshold })
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.strategy.name(), self.threshold)
    }
}

/// Serde through `Display`/`FromStr`.
mod text {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for StrategySpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        text::serialize(self, s)
    }
}

impl<'de> Deserialize<'de> for StrategySpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        text::deserialize(d)
    }
}

/// Newtype so the match mode appears as `"centroid_in_box"` / `"iou@0.5"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchModeArg(pub MatchMode);

impl FromStr for MatchModeArg {
    type Err = Error;

    fn from_str(s: &str) -> adaptile::Result<Self> {
        s.parse().map(MatchModeArg)
    }
}

impl Serialize for MatchModeArg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        text::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for MatchModeArg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        text::deserialize(d).map(MatchModeArg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum StatsMode {
    /// Object statistics of each image, dataset mean for images without boxes.
    #[default]
    PerImage,
    /// Dataset-wide object statistics for every image.
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DetectorSource {
    /// Built-in simulated detector.
    #[default]
    Simulate,
    /// Per-tile predictions read from `predictions`.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum FusionMethod {
    /// Pairwise matching, clustering and reduction across tiles.
    #[default]
    Match,
    /// Per-tile merging of touching boxes, no cross-tile fusion.
    Adjacency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Canonical dataset JSON; when absent, `synth` generates one.
    pub dataset: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub target_nba: NbaArg,
    pub input_resolution: u32,
    pub stats: StatsMode,
    pub max_tiles: usize,
    pub detector: DetectorSource,
    /// Per-tile predictions file for the external detector.
    pub predictions: Option<PathBuf>,
    pub detector_kind: DetectorKind,
    pub miss_rate: f64,
    pub jitter_sigma: f64,
    pub fp_per_tile: f64,
    pub visibility_threshold: f64,
    pub fusion_method: FusionMethod,
    pub strategy: MatchStrategy,
    /// Defaults to the strategy's own default threshold.
    pub threshold: Option<f64>,
    pub reduce_policy: ReducePolicy,
    /// Defaults to centroid-in-box for grid detectors, IoU 0.5 otherwise.
    pub match_mode: Option<MatchModeArg>,
    pub nba_list: Vec<NbaArg>,
    pub strategies: Vec<StrategySpec>,
    pub profile: String,
    /// Extra device profiles (JSON list); entries replace built-ins of the same name.
    pub profiles: Option<PathBuf>,
    pub overhead_ms: f64,
    /// Drives both synthetic generation and the simulated detector.
    pub seed: u64,
    /// Where outputs go when no explicit path is given. Not echoed, so runs
    /// that differ only in location produce identical files.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pct = |p: f64| NbaArg(Nba::from_percent(p).expect("valid default"));
        RunConfig {
            dataset: None,
            synth: None,
            target_nba: pct(0.8),
            input_resolution: 192,
            stats: StatsMode::PerImage,
            max_tiles: DEFAULT_MAX_TILES,
            detector: DetectorSource::Simulate,
            predictions: None,
            detector_kind: DetectorKind::Box,
            miss_rate: 0.0,
            jitter_sigma: 0.0,
            fp_per_tile: 0.0,
            visibility_threshold: 0.25,
            fusion_method: FusionMethod::Match,
            strategy: MatchStrategy::OneWayRatio,
            threshold: None,
            reduce_policy: ReducePolicy::LargestBox,
            match_mode: None,
            nba_list: [0.8, 2.0, 4.0, 6.0].into_iter().map(pct).collect(),
            strategies: vec![
                StrategySpec {
                    strategy: MatchStrategy::OneWayRatio,
                    threshold: MatchStrategy::OneWayRatio.default_threshold(),
                },
                StrategySpec {
                    strategy: MatchStrategy::Iou,
                    threshold: MatchStrategy::Iou.default_threshold(),
                },
            ],
            profile: "tinyissimoyolo-gap9".into(),
            profiles: None,
            overhead_ms: 0.0,
            seed: 0,
            output_dir: None,
        }
    }
}

/// Flags that override config-file keys of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Canonical dataset JSON.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub dataset: Option<PathBuf>,
    /// Target normalized object area, e.g. `0.8%` or `0.008`.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub target_nba: Option<NbaArg>,
    /// Square network input side in pixels.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub input_resolution: Option<u32>,
    #[arg(long, global = true, value_enum, help_heading = "Run configuration")]
    pub stats: Option<StatsMode>,
    /// Upper bound on tiles per image.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub max_tiles: Option<usize>,
    #[arg(long, global = true, value_enum, help_heading = "Run configuration")]
    pub detector: Option<DetectorSource>,
    /// Per-tile predictions of an external detector.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub predictions: Option<PathBuf>,
    /// Simulated detector output: `box` or `grid`.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub detector_kind: Option<DetectorKind>,
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub miss_rate: Option<f64>,
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub jitter_sigma: Option<f64>,
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub fp_per_tile: Option<f64>,
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub visibility_threshold: Option<f64>,
    #[arg(long, global = true, value_enum, help_heading = "Run configuration")]
    pub fusion_method: Option<FusionMethod>,
    /// `one_way_ratio` or `iou`.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub strategy: Option<MatchStrategy>,
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub threshold: Option<f64>,
    /// `largest_box` or `max_confidence`.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub reduce_policy: Option<ReducePolicy>,
    /// `centroid_in_box`, `iou` or `iou@<t>`.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub match_mode: Option<MatchModeArg>,
    /// Comma-separated target areas for `sweep` and `cost`.
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Run configuration")]
    pub nba_list: Option<Vec<NbaArg>>,
    /// Comma-separated strategies for `sweep`, e.g. `one_way_ratio@0.8,iou@0.25`.
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Run configuration")]
    pub strategies: Option<Vec<StrategySpec>>,
    /// Device profile name.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub profile: Option<String>,
    /// Extra device profiles (JSON list); entries replace built-ins of the same name.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub profiles: Option<PathBuf>,
    /// Fixed per-image overhead added to the estimated latency.
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub overhead_ms: Option<f64>,
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub seed: Option<u64>,
    #[arg(long, global = true, help_heading = "Run configuration")]
    pub output_dir: Option<PathBuf>,

    #[command(flatten)]
    pub synth: SynthOverrides,
}

/// Flags for synthetic data; any of them enables the synthetic source.
#[derive(Debug, Clone, Default, Args)]
pub struct SynthOverrides {
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub width: Option<u32>,
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub height: Option<u32>,
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub images: Option<usize>,
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub count_min: Option<usize>,
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub count_max: Option<usize>,
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub extent_min: Option<u32>,
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub extent_max: Option<u32>,
    #[arg(long, global = true, help_heading = "Synthetic data")]
    pub min_spacing: Option<u32>,
    /// `scatter` or `rows`.
    #[arg(long, global = true, value_parser = parse_layout, help_heading = "Synthetic data")]
    pub layout: Option<Layout>,
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    match s {
        "scatter" => Ok(Layout::Scatter),
        "rows" => Ok(Layout::Rows),
        _ => Err(format!("unknown layout `{s}` (expected scatter or rows)")),
    }
}

impl SynthOverrides {
    fn any(&self) -> bool {
        self.width.is_some()
            || self.height.is_some()
            || self.images.is_some()
            || self.count_min.is_some()
            || self.count_max.is_some()
            || self.extent_min.is_some()
            || self.extent_max.is_some()
            || self.min_spacing.is_some()
            || self.layout.is_some()
    }

    fn apply(&self, cfg: &mut SynthConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(width, height, images, count_min, count_max, extent_min, extent_max, min_spacing, layout);
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { cfg.$f = v.clone(); })*};
        }
        macro_rules! set_opt {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { cfg.$f = Some(v.clone()); })*};
        }
        set!(
            target_nba, input_resolution, stats, max_tiles, detector, detector_kind, miss_rate,
            jitter_sigma, fp_per_tile, visibility_threshold, fusion_method, strategy, reduce_policy,
            nba_list, strategies, profile, overhead_ms, seed
        );
        set_opt!(dataset, predictions, profiles, threshold, match_mode, output_dir);
        if self.synth.any() {
            self.synth.apply(cfg.synth.get_or_insert_with(SynthConfig::default));
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with the config file (if any), overlaid with flags,
    /// then resolved and validated.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::io(path, e))
                    .with_context(|| "reading run configuration".to_string())?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(Error::from)
                    .with_context(|| format!("invalid run configuration {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        overrides.apply(&mut cfg);
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills derived defaults so that the echo is fully explicit.
    fn resolve(&mut self) {
        if self.threshold.is_none() {
            self.threshold = Some(self.strategy.default_threshold());
        }
        if self.match_mode.is_none() {
            let mode = match (self.detector, self.detector_kind) {
                (DetectorSource::Simulate, DetectorKind::Grid) => MatchMode::CentroidInBox,
                _ => MatchMode::IouAt(0.5),
            };
            self.match_mode = Some(MatchModeArg(mode));
        }
        if let Some(s) = &mut self.synth {
            s.seed = self.seed;
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_resolution == 0 {
            bail!(Error::InvalidValue("input resolution must be positive".into()));
        }
        if self.max_tiles == 0 {
            bail!(Error::InvalidValue("max tiles must be positive".into()));
        }
        match (self.detector, &self.predictions) {
            (DetectorSource::External, None) => bail!(Error::InvalidValue(
                "the external detector needs a predictions file".into()
            )),
            (DetectorSource::Simulate, Some(_)) => bail!(Error::InvalidValue(
                "a predictions file was given but the detector is `simulate`; choose one source".into()
            )),
            _ => {}
        }
        self.sim_config().validate()?;
        self.fusion_config()?;
        if !(self.overhead_ms.is_finite() && self.overhead_ms >= 0.0) {
            bail!(Error::InvalidValue(format!(
                "per-image overhead must be non-negative, got {}",
                self.overhead_ms
            )));
        }
        for path in [&self.dataset, &self.predictions, &self.profiles].into_iter().flatten() {
            if !path.exists() {
                bail!(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")
                ));
            }
        }
        Ok(())
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run configuration serializes")
    }

    pub fn sim_config(&self) -> SimDetectorConfig {
        SimDetectorConfig {
            miss_rate: self.miss_rate,
            jitter_sigma: self.jitter_sigma,
            fp_per_tile: self.fp_per_tile,
            visibility_threshold: self.visibility_threshold,
            seed: self.seed,
        }
    }

    pub fn fusion_config(&self) -> adaptile::Result<FusionConfig> {
        let t = self.threshold.unwrap_or_else(|| self.strategy.default_threshold());
        Ok(FusionConfig::new(self.strategy, t)?.with_policy(self.reduce_policy))
    }

    pub fn match_mode(&self) -> MatchMode {
        self.match_mode.map_or(MatchMode::IouAt(0.5), |m| m.0)
    }

    pub fn stats_source(&self) -> StatsSource {
        match self.stats {
            StatsMode::PerImage => StatsSource::PerImage,
            StatsMode::Dataset => StatsSource::Dataset,
        }
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            max_tiles: self.max_tiles,
        }
    }

    /// Output path: the explicit one, else `name` under the output directory.
    pub fn output_path(&self, explicit: Option<&Path>, name: &str) -> PathBuf {
        match explicit {
            Some(p) => p.to_path_buf(),
            None => self.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(name),
        }
    }
}
