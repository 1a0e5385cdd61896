//! Pipeline commands behind the `dcan` binary.
//!
//! Each function wraps one stage and works purely on files, so stages can be
//! run, cached and tested independently. Dataset directories hold
//! `<stem>.ppm` images with `<stem>.imask` annotations and, optionally,
//! `<stem>.contour.imask` contour labels written by `make-labels`.

pub mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dcan_core::augment::Sample;
use dcan_core::fusion::{segment, segment_objects_only, FusionParams};
use dcan_core::gradcheck::{run_suite, GradCheck};
use dcan_core::io;
use dcan_core::metrics::{evaluate, rank_teams, HausdorffMode, MetricsReport, RankRow, TeamScores, CRITERIA};
use dcan_core::morphology::extract_contour_labels;
use dcan_core::net::checkpoint::{load_model, save_model};
use dcan_core::net::{predict_tiled, train_with_progress, DcanModel, TrainReport, TrainingSample};
use dcan_core::synth::generate_dataset;
use dcan_core::{BinaryMask, InstanceMask, RngState, Tensor};

pub use config::{reference_page, RunConfig};

const CONTOUR_SUFFIX: &str = ".contour.imask";

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

/// Writes through `f` and flushes, attributing failures to `path`.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> dcan_core::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out).with_context(|| format!("writing {}", path.display()))?;
    out.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in config {}", p.display()))
        }
    }
}

pub fn read_image(path: &Path, channels: usize) -> Result<Tensor> {
    let img = io::read_pnm(&mut open(path)?).with_context(|| format!("reading image {}", path.display()))?;
    io::to_channels(img, channels).with_context(|| format!("image {}", path.display()))
}

pub fn read_instances(path: &Path) -> Result<InstanceMask> {
    io::read_imask(&mut open(path)?).with_context(|| format!("reading mask {}", path.display()))
}

pub fn read_contours(path: &Path) -> Result<BinaryMask> {
    io::read_binary_mask(&mut open(path)?).with_context(|| format!("reading contour mask {}", path.display()))
}

/// Writes `synth.count` scenes plus `manifest.txt` into `out_dir`.
pub fn gen_data(config: &RunConfig, out_dir: &Path) -> Result<usize> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let mut rng = RngState::new(config.seed);
    let (samples, manifest) = generate_dataset(&config.synth, config.synth_count, &mut rng)?;
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("scene_{i:03}");
        write_file(&out_dir.join(format!("{stem}.ppm")), |w| io::write_pnm(w, &s.image))?;
        write_file(&out_dir.join(format!("{stem}.imask")), |w| io::write_imask(w, &s.instances))?;
    }
    fs::write(out_dir.join("manifest.txt"), manifest.to_text())
        .with_context(|| format!("writing manifest in {}", out_dir.display()))?;
    Ok(samples.len())
}

pub fn make_labels(mask_in: &Path, contour_out: &Path, radius: usize) -> Result<()> {
    let inst = read_instances(mask_in)?;
    let contours = extract_contour_labels(&inst, radius);
    write_file(contour_out, |w| io::write_binary_mask(w, &contours))
}

/// Image stems of a dataset directory, sorted, each with its annotation.
pub fn dataset_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ppm" || e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        bail!("no .ppm or .pgm images in {}", dir.display());
    }
    Ok(stems)
}

fn image_path(dir: &Path, stem: &str) -> PathBuf {
    let ppm = dir.join(format!("{stem}.ppm"));
    if ppm.exists() {
        ppm
    } else {
        dir.join(format!("{stem}.pgm"))
    }
}

pub fn load_training_set(config: &RunConfig, dir: &Path) -> Result<Vec<TrainingSample>> {
    let size = config.net.input_size;
    dataset_stems(dir)?
        .iter()
        .map(|stem| {
            let image = read_image(&image_path(dir, stem), config.net.in_channels)?;
            let instances = read_instances(&dir.join(format!("{stem}.imask")))?;
            let sample = Sample::new(image, instances).with_context(|| format!("sample {stem}"))?;
            let contour_path = dir.join(format!("{stem}{CONTOUR_SUFFIX}"));
            Ok(if contour_path.exists() {
                TrainingSample::with_contours(&sample, read_contours(&contour_path)?, size)
                    .with_context(|| format!("sample {stem}"))?
            } else {
                TrainingSample::new(&sample, config.contour_radius, size)
            })
        })
        .collect()
}

/// Trains a fresh model on `data_dir` and saves it to `ckpt_out`. `log`
/// receives a progress line every 100 iterations.
pub fn train(config: &RunConfig, data_dir: &Path, ckpt_out: &Path, mut log: impl FnMut(&str)) -> Result<TrainReport> {
    let data = load_training_set(config, data_dir)?;
    let mut rng = RngState::new(config.seed);
    let mut model = DcanModel::build(config.net.clone(), &mut rng)?;
    let augment = config.augment_enabled.then_some(&config.augment);
    let report = train_with_progress(&mut model, &data, &config.train, augment, &mut rng, |t, r| {
        if (t + 1) % 100 == 0 || t + 1 == config.train.max_iters {
            let n = r.losses.len().min(100);
            let mean = r.losses[r.losses.len() - n..].iter().sum::<f64>() / n as f64;
            log(&format!(
                "iter {} loss {mean:.3} lr {:e} w_a {:e}",
                t + 1,
                r.lr[t],
                r.aux_weight[t]
            ));
        }
    })?;
    write_file(ckpt_out, |w| save_model(w, &model))?;
    Ok(report)
}

pub fn infer(ckpt: &Path, image_in: &Path, maps_out: &Path, tile: usize, stride: usize) -> Result<()> {
    let model = load_model(&mut open(ckpt)?, tile).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let image = read_image(image_in, model.config().in_channels)?;
    let maps = predict_tiled(&model, &image, tile, stride)?;
    write_file(maps_out, |w| io::write_pmap(w, &maps))
}

pub fn fuse(maps_in: &Path, instances_out: &Path, params: &FusionParams, objects_only: bool) -> Result<usize> {
    let maps = io::read_pmap(&mut open(maps_in)?).with_context(|| format!("reading {}", maps_in.display()))?;
    let inst = if objects_only {
        segment_objects_only(&maps.p_o, maps.width, maps.height, params)?
    } else {
        segment(&maps.p_o, &maps.p_c, maps.width, maps.height, params)?
    };
    write_file(instances_out, |w| io::write_imask(w, &inst))?;
    Ok(inst.num_objects())
}

/// Pairs every annotation `<stem>.imask` in `gt_dir` with the segmentation
/// of the same name in `seg_dir`.
pub fn eval(seg_dir: &Path, gt_dir: &Path, report_csv: &Path, mode: HausdorffMode) -> Result<MetricsReport> {
    let mut names = Vec::new();
    for entry in fs::read_dir(gt_dir).with_context(|| format!("cannot list {}", gt_dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".imask") && !name.ends_with(CONTOUR_SUFFIX) {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        bail!("no .imask annotations in {}", gt_dir.display());
    }
    let mut images = Vec::with_capacity(names.len());
    for name in names {
        let gt = read_instances(&gt_dir.join(&name))?;
        let seg_path = seg_dir.join(&name);
        if !seg_path.exists() {
            bail!("no segmentation {} for annotation {name}", seg_path.display());
        }
        let seg = read_instances(&seg_path)?;
        let stem = name.trim_end_matches(".imask").to_string();
        images.push((stem, seg, gt));
    }
    let report = evaluate(&images, mode)?;
    fs::write(report_csv, report.to_csv()).with_context(|| format!("writing {}", report_csv.display()))?;
    Ok(report)
}

/// Parses `team,f1_a,f1_b,dice_a,dice_b,haus_a,haus_b` rows.
pub fn parse_scores(text: &str) -> Result<Vec<TeamScores>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = std::iter::once("team").chain(CRITERIA).collect();
    if header != expected {
        bail!("scores header {:?} should be {:?}", header.join(","), expected.join(","));
    }
    let mut teams = Vec::new();
    for record in reader.records() {
        let record = record.context("malformed scores file")?;
        let line = record.position().map_or(0, |p| p.line());
        let mut v = [0.0; 6];
        for (slot, f) in v.iter_mut().zip(record.iter().skip(1)) {
            *slot = f
                .parse()
                .with_context(|| format!("scores line {line}: bad number {f:?}"))?;
        }
        teams.push(TeamScores {
            team: record[0].to_string(),
            f1_a: v[0],
            f1_b: v[1],
            dice_a: v[2],
            dice_b: v[3],
            haus_a: v[4],
            haus_b: v[5],
        });
    }
    Ok(teams)
}

pub fn ranking_csv(rows: &[RankRow]) -> String {
    let mut s = format!(
        "team,{},sum,final_rank\n",
        CRITERIA.iter().map(|c| format!("{c}_rank")).collect::<Vec<_>>().join(",")
    );
    for r in rows {
        let ranks: Vec<String> = r.ranks.iter().map(usize::to_string).collect();
        s.push_str(&format!("{},{},{},{}\n", r.team, ranks.join(","), r.sum, r.final_rank));
    }
    s
}

pub fn rank(scores_csv: &Path, ranking_out: &Path) -> Result<Vec<RankRow>> {
    let text = fs::read_to_string(scores_csv).with_context(|| format!("cannot read {}", scores_csv.display()))?;
    let rows = rank_teams(&parse_scores(&text)?)?;
    fs::write(ranking_out, ranking_csv(&rows)).with_context(|| format!("writing {}", ranking_out.display()))?;
    Ok(rows)
}

pub fn gradcheck(config: &RunConfig, seeds: &[u64], samples: usize) -> Result<Vec<GradCheck>> {
    Ok(run_suite(&config.net, seeds, samples)?)
}
