use std::path::PathBuf;

use adaptile::dataset::{dataset_to_json_with_config, load_dataset, synth_generate, DimsSource, ParseOptions};
use adaptile::{Error, ImageDims};
use anyhow::{Context, Result};
use clap::Args;

use crate::config::RunConfig;
use crate::files::{synth_config, write_text};

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Dataset root holding `ImageSets/` and `Annotations/`.
    #[arg(long)]
    pub root: PathBuf,
    /// Split name, read from `ImageSets/<split>.txt`.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Fixed image size `WIDTHxHEIGHT` for every image.
    #[arg(long, value_parser = parse_dims, conflicts_with = "dims_index")]
    pub dims: Option<ImageDims>,
    /// Sidecar file with `image_id width height` lines.
    #[arg(long)]
    pub dims_index: Option<PathBuf>,
    /// Reject inverted corners instead of swapping them.
    #[arg(long)]
    pub no_swap: bool,
    /// Output dataset file [default: <output-dir>/dataset.json].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset file [default: <output-dir>/dataset.json].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// CARPK frames are 1280x720.
const DEFAULT_DIMS: (u32, u32) = (1280, 720);

fn parse_dims(s: &str) -> Result<ImageDims, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    ImageDims::new(w, h).map_err(|e| e.to_string())
}

pub fn ingest(cfg: &RunConfig, args: &IngestArgs) -> Result<()> {
    let dims = match (&args.dims, &args.dims_index) {
        (_, Some(index)) => DimsSource::Index(index.clone()),
        (Some(d), None) => DimsSource::Fixed(*d),
        (None, None) => DimsSource::Fixed(ImageDims::new(DEFAULT_DIMS.0, DEFAULT_DIMS.1)?),
    };
    let opts = ParseOptions {
        swap_corners: !args.no_swap,
    };
    let images = load_dataset(&args.root, &args.split, &dims, opts)
        .with_context(|| format!("ingesting split `{}` from {}", args.split, args.root.display()))?;
    let text = dataset_to_json_with_config(&images, cfg.echo())?;
    let out = cfg.output_path(args.output.as_deref(), "dataset.json");
    write_text(&out, &text)?;
    let objects: usize = images.iter().map(|i| i.len()).sum();
    println!("{}: {} images, {objects} objects", out.display(), images.len());
    Ok(())
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    if cfg.dataset.is_some() {
        return Err(Error::InvalidValue("synth generates a dataset; do not pass --dataset".into()).into());
    }
    let mut cfg = cfg.clone();
    cfg.synth = Some(synth_config(&cfg));
    let images = synth_generate(&synth_config(&cfg))?;
    let text = dataset_to_json_with_config(&images, cfg.echo())?;
    let out = cfg.output_path(args.output.as_deref(), "dataset.json");
    write_text(&out, &text)?;
    let objects: usize = images.iter().map(|i| i.len()).sum();
    println!("{}: {} images, {objects} objects", out.display(), images.len());
    Ok(())
}
