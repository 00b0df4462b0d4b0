use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hide_core::layout::{compact_image, recompose, RecomposeMode};
use hide_core::metrics::evaluate;
use hide_core::overlay::render_overlay;
use hide_core::regions::{boxes_from_purified, purified_maps};
use hide_core::synth::{generate, write_samples, SynthSpec};
use hide_core::{
    aggregate_overlay, read_boxes, read_bundle, write_boxes, write_bundle, AttentionMap, BoxSet, Connectivity,
    Error, Result, SmoothingConfig, ThresholdConfig,
};
use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::{CompactArgs, EvalArgs, Mode, PipelineArgs, PurifyArgs, RegionsArgs, SmoothingArgs, SynthArgs, ThresholdArgs};

fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Image(image::ImageError::IoError(io)) => {
            Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display())))
        }
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    at_path(path, image::open(path).map(|i| i.to_rgb8()).map_err(Error::from))
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    at_path(path, img.save_with_format(path, image::ImageFormat::Png).map_err(Error::from))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    at_path(path, fs::write(path, text).map_err(Error::from))
}

fn create_dir(path: &Path) -> Result<()> {
    at_path(path, fs::create_dir_all(path).map_err(Error::from))
}

fn smoothing(args: &SmoothingArgs) -> Result<SmoothingConfig> {
    SmoothingConfig::new(args.sigma())
}

fn threshold(args: &ThresholdArgs, preset_alpha: f64) -> Result<ThresholdConfig> {
    ThresholdConfig::new(
        args.alpha.unwrap_or(preset_alpha),
        Connectivity::from_neighbors(args.connectivity)?,
        args.min_area,
    )
}

fn mode(mode: Mode, seed: u64) -> RecomposeMode {
    match mode {
        Mode::Sequence => RecomposeMode::SequenceTiling,
        Mode::Random => RecomposeMode::RandomTiling { seed },
        Mode::Mask => RecomposeMode::Masking,
        Mode::Layout => RecomposeMode::LayoutNoCompaction,
        Mode::Compact => RecomposeMode::LayoutCompact,
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let threads = threads.or_else(|| std::env::var("HIDE_NUM_THREADS").ok()?.parse().ok());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Parameter("HIDE_NUM_THREADS must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Io(io::Error::other(e.to_string())))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = at_path(dir, fs::read_dir(dir).map_err(Error::from))?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Runs `job` over `items` on the pool, logging failures by tag, and
/// returns the first error in input order.
fn run_batch<T: Sync>(pool: &rayon::ThreadPool, items: &[T], tag: impl Fn(&T) -> String + Sync, job: impl Fn(&T) -> Result<()> + Sync) -> Result<()> {
    let results: Vec<Result<()>> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let r = job(item);
                if let Err(e) = &r {
                    eprintln!("[{}] error: {e}", tag(item));
                }
                r
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn purify(args: PurifyArgs) -> Result<()> {
    let cfg = smoothing(&args.smoothing)?;
    let mut bundle = at_path(&args.input, read_bundle(&args.input))?;
    if bundle.purified {
        return Err(Error::Validation(format!("{}: bundle is already purified", args.input.display())));
    }
    let maps = purified_maps(&bundle, &cfg)?;
    for ((_, slot), m) in bundle.key_maps.iter_mut().zip(maps) {
        *slot = m;
    }
    bundle.noise_maps.clear();
    bundle.purified = true;
    at_path(&args.out, write_bundle(&bundle, &args.out))
}

fn regions_one(input: &Path, out: &Path, cfg: &SmoothingConfig, thresh: &ThresholdConfig) -> Result<usize> {
    let bundle = at_path(input, read_bundle(input))?;
    let maps = purified_maps(&bundle, cfg)?;
    let boxes = boxes_from_purified(&bundle, &maps, thresh);
    at_path(out, write_boxes(&boxes, out))?;
    Ok(boxes.len())
}

pub fn regions(args: RegionsArgs) -> Result<()> {
    let cfg = smoothing(&args.smoothing)?;
    let thresh = threshold(&args.threshold, args.smoothing.preset.alpha())?;
    if !args.input.is_dir() {
        regions_one(&args.input, &args.out, &cfg, &thresh)?;
        return Ok(());
    }
    create_dir(&args.out)?;
    let inputs: Vec<PathBuf> = sorted_entries(&args.input)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "hab"))
        .collect();
    let tag = |p: &PathBuf| p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    run_batch(&thread_pool(None)?, &inputs, tag, |input| {
        let out = args.out.join(format!("{}.json", tag(input)));
        let n = regions_one(input, &out, &cfg, &thresh)?;
        eprintln!("[{}] {n} boxes", tag(input));
        Ok(())
    })
}

pub fn compact(args: CompactArgs) -> Result<()> {
    let image = open_rgb(&args.image)?;
    let boxes = at_path(&args.boxes, read_boxes(&args.boxes))?;
    if boxes.is_empty() {
        eprintln!("warning: no boxes; passing the original image through unchanged");
    }
    match args.mode {
        Mode::Compact => {
            let out = compact_image(&image, &boxes, args.fill)?;
            save_png(&out.raster, &args.out)?;
            let sidecar = args.provenance.unwrap_or_else(|| args.out.with_extension("json"));
            write_text(&sidecar, &out.provenance.to_json()?)
        }
        m => save_png(&recompose(&image, &boxes, mode(m, args.seed), args.fill)?, &args.out),
    }
}

struct PipelineSettings {
    smoothing: SmoothingConfig,
    threshold: ThresholdConfig,
    fill: Rgb<u8>,
    mode: RecomposeMode,
}

fn pipeline_one(tag: &str, image_path: &Path, bundle_path: &Path, out_dir: &Path, s: &PipelineSettings) -> Result<BoxSet> {
    let bundle = at_path(bundle_path, read_bundle(bundle_path))?;
    let image = open_rgb(image_path)?;
    if image.dimensions() != (bundle.image_width, bundle.image_height) {
        return Err(Error::Dimension(format!(
            "image {} is {}x{} but the bundle describes {}x{}",
            image_path.display(),
            image.width(),
            image.height(),
            bundle.image_width,
            bundle.image_height
        )));
    }
    let maps = purified_maps(&bundle, &s.smoothing)?;
    let boxes = boxes_from_purified(&bundle, &maps, &s.threshold);
    create_dir(out_dir)?;
    let boxes_path = out_dir.join("boxes.json");
    at_path(&boxes_path, write_boxes(&boxes, &boxes_path))?;

    let refs: Vec<&AttentionMap> = maps.iter().collect();
    let heat = aggregate_overlay(&refs)?;
    save_png(&render_overlay(&image, &heat), &out_dir.join("overlay.png"))?;

    if boxes.is_empty() {
        eprintln!("[{tag}] warning: no boxes; the compact image is the original");
    }
    let compact_path = out_dir.join("compact.png");
    if s.mode == RecomposeMode::LayoutCompact {
        let out = compact_image(&image, &boxes, s.fill)?;
        save_png(&out.raster, &compact_path)?;
        write_text(&out_dir.join("provenance.json"), &out.provenance.to_json()?)?;
    } else {
        save_png(&recompose(&image, &boxes, s.mode, s.fill)?, &compact_path)?;
    }
    Ok(boxes)
}

pub fn pipeline(args: PipelineArgs) -> Result<()> {
    let settings = PipelineSettings {
        smoothing: smoothing(&args.smoothing)?,
        threshold: threshold(&args.threshold, args.smoothing.preset.alpha())?,
        fill: args.fill,
        mode: mode(args.mode, args.seed),
    };

    let Some(batch) = &args.batch else {
        let (image, bundle) = (args.image.as_ref().unwrap(), args.bundle.as_ref().unwrap());
        pipeline_one("pipeline", image, bundle, &args.out_dir, &settings)?;
        return Ok(());
    };
    let samples: Vec<PathBuf> = sorted_entries(batch)?
        .into_iter()
        .filter(|p| p.join("bundle.hab").is_file())
        .collect();
    let tag = |p: &PathBuf| p.file_name().unwrap_or_default().to_string_lossy().into_owned();
    run_batch(&thread_pool(args.threads)?, &samples, tag, |dir| {
        let id = tag(dir);
        let boxes = pipeline_one(&id, &dir.join("image.png"), &dir.join("bundle.hab"), &args.out_dir.join(&id), &settings)?;
        eprintln!("[{id}] {} boxes", boxes.len());
        Ok(())
    })
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        seed: args.seed,
        n_samples: args.samples,
        patch_rows: args.patch_rows,
        patch_cols: args.patch_cols,
        image_width: args.width,
        image_height: args.height,
        n_tokens: args.tokens,
        n_noise_tokens: args.noise_tokens,
        blob_min: args.blob_min,
        blob_max: args.blob_max,
        signal_amplitude: args.signal,
        sink_amplitude: args.sink,
        sink_size: args.sink_size,
        noise_std: args.noise,
        ..SynthSpec::default()
    };
    let samples = generate(&spec)?;
    create_dir(&args.out_dir)?;
    at_path(&args.out_dir, write_samples(&samples, &args.out_dir))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut pairs = Vec::new();
    if args.gt.is_dir() {
        for dir in sorted_entries(&args.gt)? {
            let gt_path = dir.join("gt.json");
            if !gt_path.is_file() {
                continue;
            }
            let id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let pred_path = args.pred.join(&id).join("boxes.json");
            let gt = at_path(&gt_path, read_boxes(&gt_path))?;
            let pred = at_path(&pred_path, read_boxes(&pred_path))?;
            pairs.push((id, pred, gt));
        }
    } else {
        let gt = at_path(&args.gt, read_boxes(&args.gt))?;
        let pred = at_path(&args.pred, read_boxes(&args.pred))?;
        let id = args.gt.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        pairs.push((id, pred, gt));
    }
    let report = evaluate(pairs.iter().map(|(id, p, g)| (id.clone(), p, g)), args.iou)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match &args.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
