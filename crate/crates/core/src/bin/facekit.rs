use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use facekit::anchors::anchors_for;
use facekit::config::Config;
use facekit::das::draw_plan;
use facekit::eval::evaluate_subset;
use facekit::gradcheck::run_gradcheck;
use facekit::maps::{ImageMaps, MapsFile, ScoreMaps};
use facekit::pipeline::{training_losses, training_targets, TrainingTargets};
use facekit::postprocess::detect;
use facekit::synth::{image_rng, synth_e2e};
use facekit::wider::{
    parse_keep_list, read_annotations_file, read_detection_dir, validate_annotations,
    write_detection_dir, ImageRecord,
};
use facekit::AnchorSet;

#[derive(Parser)]
#[command(name = "facekit", version, about = "Two-step face detector toolkit")]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. --set nms.iou=0.4
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ImageSize {
    /// Input width; defaults to the maps entry or the extent of the faces
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Score maps used for refinement (JSON); zero maps otherwise
    #[arg(long)]
    maps: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one anchor per line: `level cx cy w h`
    GenAnchors {
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label counts and matched anchors per face for one image
    Assign {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        image: String,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        step: u8,
        #[command(flatten)]
        size: ImageSize,
    },
    /// Draw data-anchor-sampling plans:
    /// `image_idx face_idx i_anchor i_target S_star crop_x crop_y`
    Sample {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
    },
    /// Loss breakdown for every image of a maps file
    Losses {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Finite-difference check of every analytic gradient
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        instances: usize,
    },
    /// Attention mask of one level as rows of 0/1
    Attmask {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        image: String,
        #[arg(long)]
        level: String,
        #[command(flatten)]
        size: ImageSize,
    },
    /// Decode a maps file into WIDER detection files
    Decode {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average precision of a detection directory
    Evaluate {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        keep: Option<PathBuf>,
        /// PR curve CSV
        #[arg(long)]
        report: PathBuf,
    },
    /// Counts and anomalies of an annotation file
    ValidateAnnotations { file: PathBuf },
    /// Oracle maps → decode → NMS → evaluate on synthetic layouts
    SynthE2e {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        images: usize,
        #[arg(long, default_value_t = 6)]
        max_faces: usize,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn find_record<'a>(records: &'a [ImageRecord], name: &str) -> Result<&'a ImageRecord> {
    records
        .iter()
        .find(|r| r.relative_path == name)
        .ok_or_else(|| anyhow!("image {name:?} not found in annotations"))
}

/// Annotations carry no image size; the faces' extent is the fallback.
fn face_extent(record: &ImageRecord) -> (u32, u32) {
    let (mut w, mut h) = (1.0f64, 1.0f64);
    for f in &record.faces {
        w = w.max(f.bbox.x_max);
        h = h.max(f.bbox.y_max);
    }
    (w.ceil() as u32, h.ceil() as u32)
}

fn read_maps(path: &Path) -> Result<MapsFile> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(MapsFile::from_reader(BufReader::new(f))?)
}

fn image_targets(
    cfg: &Config,
    records: &[ImageRecord],
    image: &str,
    size: &ImageSize,
) -> Result<(AnchorSet, TrainingTargets)> {
    let record = find_record(records, image)?;
    let from_maps: Option<ImageMaps> = match &size.maps {
        Some(p) => Some(
            read_maps(p)?
                .images
                .into_iter()
                .find(|m| m.path == image)
                .ok_or_else(|| anyhow!("image {image:?} not found in {}", p.display()))?,
        ),
        None => None,
    };
    let (ew, eh) = match &from_maps {
        Some(m) => (m.width, m.height),
        None => face_extent(record),
    };
    let (w, h) = (size.width.unwrap_or(ew), size.height.unwrap_or(eh));
    let anchors = anchors_for(&cfg.anchors, w, h)?;
    let maps = match from_maps {
        Some(m) => m.maps,
        None => ScoreMaps::zeros(&anchors, cfg.cp, cfg.cn),
    };
    let targets = training_targets(&maps, &anchors, &record.valid_boxes(), cfg)?;
    Ok((anchors, targets))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());

    match &cli.command {
        Command::GenAnchors { width, height, out: path } => {
            let anchors = anchors_for(&cfg.anchors, *width, *height)?;
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(f);
            let names: Vec<String> = anchors.levels().iter().map(|l| l.name()).collect();
            for (b, &l) in anchors.boxes.iter().zip(&anchors.level_of) {
                let (cx, cy) = b.center();
                writeln!(w, "{} {:.6} {:.6} {:.6} {:.6}", names[l], cx, cy, b.width(), b.height())?;
            }
            w.flush()?;
            writeln!(out, "{} anchors written to {}", anchors.len(), path.display())?;
        }
        Command::Assign { annotations, image, step, size } => {
            let records = read_annotations_file(annotations)?;
            let (anchors, targets) = image_targets(&cfg, &records, image, size)?;
            let result = if *step == 1 { &targets.first } else { &targets.second };
            let num_gts = find_record(&records, image)?.valid_boxes().len();
            writeln!(out, "image: {image}")?;
            writeln!(out, "step: {step}")?;
            writeln!(out, "anchors: {}", anchors.len())?;
            writeln!(out, "faces: {num_gts}")?;
            writeln!(out, "positive: {}", result.num_positive())?;
            writeln!(out, "negative: {}", result.num_negative())?;
            writeln!(out, "ignored: {}", result.num_ignored())?;
            let per_gt = result.matches_per_gt(num_gts);
            let max = per_gt.iter().copied().max().unwrap_or(0);
            let mut hist = vec![0usize; max + 1];
            for &c in &per_gt {
                hist[c] += 1;
            }
            writeln!(out, "matched_anchors faces")?;
            for (c, n) in hist.iter().enumerate().filter(|(_, &n)| n > 0) {
                writeln!(out, "{c} {n}")?;
            }
        }
        Command::Sample { annotations, seed, count } => {
            let records = read_annotations_file(annotations)?;
            let usable: Vec<usize> = (0..records.len())
                .filter(|&i| records[i].faces.iter().any(|f| !f.is_invalid() && f.bbox.area() > 0.0))
                .collect();
            if usable.is_empty() {
                bail!("no image has a usable face");
            }
            let sampler = cfg.sampler();
            let lines: Vec<String> = (0..*count)
                .into_par_iter()
                .map(|k| -> Result<String> {
                    let mut rng = image_rng(*seed, k);
                    let idx = usable[rand::Rng::random_range(&mut rng, 0..usable.len())];
                    let rec = &records[idx];
                    let faces: Vec<usize> = (0..rec.faces.len())
                        .filter(|&j| !rec.faces[j].is_invalid() && rec.faces[j].bbox.area() > 0.0)
                        .collect();
                    let boxes: Vec<_> = faces.iter().map(|&j| rec.faces[j].bbox).collect();
                    let (w, h) = face_extent(rec);
                    let plan = draw_plan((w as f64, h as f64), &boxes, &sampler, &mut rng)?;
                    Ok(format!(
                        "{} {} {} {} {:.6} {:.3} {:.3}",
                        idx,
                        faces[plan.selected_face],
                        plan.i_anchor,
                        plan.i_target,
                        plan.scale,
                        plan.crop_origin.0,
                        plan.crop_origin.1
                    ))
                })
                .collect::<Result<_>>()?;
            for l in lines {
                writeln!(out, "{l}")?;
            }
        }
        Command::Losses { maps, annotations } => {
            let records = read_annotations_file(annotations)?;
            let file = read_maps(maps)?;
            let rows: Vec<(String, facekit::LossBreakdown)> = file
                .images
                .par_iter()
                .map(|m| -> Result<_> {
                    let rec = find_record(&records, &m.path)?;
                    let anchors = anchors_for(&cfg.anchors, m.width, m.height)?;
                    let b = training_losses(&m.maps, &anchors, &rec.valid_boxes(), &cfg)?;
                    Ok((m.path.clone(), b))
                })
                .collect::<Result<_>>()?;
            let mut sums = [0.0f64; 4];
            writeln!(out, "image stc str att total")?;
            for (path, b) in &rows {
                writeln!(out, "{path} {:.10} {:.10} {:.10} {:.10}", b.stc, b.str, b.att, b.total)?;
                for (s, v) in sums.iter_mut().zip([b.stc, b.str, b.att, b.total]) {
                    *s += v;
                }
            }
            writeln!(
                out,
                "sum {:.10} {:.10} {:.10} {:.10}",
                sums[0], sums[1], sums[2], sums[3]
            )?;
        }
        Command::Gradcheck { seed, points, instances } => {
            let report = run_gradcheck(*seed, *points, *instances, &cfg)?;
            write!(out, "{report}")?;
        }
        Command::Attmask { annotations, image, level, size } => {
            let records = read_annotations_file(annotations)?;
            let (anchors, targets) = image_targets(&cfg, &records, image, size)?;
            let l = anchors
                .levels()
                .iter()
                .position(|s| s.name().eq_ignore_ascii_case(level))
                .ok_or_else(|| {
                    let names: Vec<String> = anchors.levels().iter().map(|s| s.name()).collect();
                    anyhow!("unknown level {level:?}; available: {}", names.join(", "))
                })?;
            write!(out, "{}", targets.masks.levels[l].to_text())?;
        }
        Command::Decode { maps, out: dir } => {
            let file = read_maps(maps)?;
            let params = cfg.decode_params();
            let results: Vec<_> = file
                .images
                .par_iter()
                .map(|m| -> Result<_> {
                    let anchors = anchors_for(&cfg.anchors, m.width, m.height)?;
                    let dets = detect(&m.maps, &anchors, (m.width as f64, m.height as f64), &params)?;
                    Ok((m.path.clone(), dets))
                })
                .collect::<Result<_>>()?;
            write_detection_dir(dir, &results)?;
            let total: usize = results.iter().map(|(_, d)| d.len()).sum();
            writeln!(out, "{} images, {total} detections written to {}", results.len(), dir.display())?;
        }
        Command::Evaluate { dets, gt, keep, report } => {
            let records = read_annotations_file(gt)?;
            let detections = read_detection_dir(dets)?;
            let keep = match keep {
                Some(p) => Some(parse_keep_list(BufReader::new(
                    File::open(p).with_context(|| format!("opening {}", p.display()))?,
                ))?),
                None => None,
            };
            let curve = evaluate_subset(&detections, &records, keep.as_deref(), &cfg.eval_params())?;
            write_file(report, &curve.to_csv())?;
            writeln!(out, "AP: {:.6}", curve.ap)?;
        }
        Command::ValidateAnnotations { file } => {
            let records = read_annotations_file(file)?;
            write!(out, "{}", validate_annotations(&records))?;
        }
        Command::SynthE2e { seed, images, max_faces } => {
            let report = synth_e2e(*seed, *images, *max_faces, &cfg)?;
            write!(out, "{report}")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
