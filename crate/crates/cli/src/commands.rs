use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use evmcnn::cnn::{
    format_train_log, load_model, predict_hr, predict_many, save_model, split_indices, train, Model,
    TrainConfig,
};
use evmcnn::featex::{read_fim, read_labels_csv, write_fim, write_labels_csv, Extractor, FeatureConfig, FeatureImage, LabelRecord};
use evmcnn::frames::FrameFormat;
use evmcnn::frames::list_frames;
use evmcnn::ingest::{load_manifest, windows, ManifestEntry};
use evmcnn::metrics::{
    evaluate, short_time_protocol, EvalReport, HrPairSeries, REPORT_CSV_HEADER, REPORT_TABLE_HEADER,
};
use evmcnn::roi::RoiIndices;
use evmcnn::synth::{clip_dir, corpus_specs, coverage, generate, write_corpus_manifest, CoverageReport, HrTimeline, SynthSpec};

use crate::args::{BenchArgs, EvalArgs, ExtractArgs, FeatureArgs, FrameFormatArg, PredictArgs, SplitBy, SynthArgs, TrainArgs};
use crate::error::{CliError, CliResult};

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| evmcnn::Error::io(p, e).into())
}

fn write_text(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).map_err(|e| evmcnn::Error::io(p, e).into())
}

impl FeatureArgs {
    pub fn config_for(&self, entry_fps: usize) -> CliResult<FeatureConfig> {
        let cfg = FeatureConfig {
            pyramid_level: self.pyramid_level,
            fps: self.fps.unwrap_or(entry_fps),
            f_low: self.f_low,
            f_high: self.f_high,
            ..FeatureConfig::default()
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

impl Default for FeatureArgs {
    fn default() -> Self {
        let d = FeatureConfig::default();
        FeatureArgs {
            fps: None,
            pyramid_level: d.pyramid_level,
            f_low: d.f_low,
            f_high: d.f_high,
        }
    }
}

// ---------------------------------------------------------------- synth

#[derive(Debug)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub clips: usize,
    pub coverage: CoverageReport,
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<SynthSummary> {
    let template = SynthSpec {
        duration_s: a.duration,
        fps: a.fps,
        gt_rate: a.gt_rate,
        noise_sigma: a.noise,
        drift: (a.drift_x, a.drift_y),
        seed: a.seed,
        format: match a.format {
            FrameFormatArg::Float => FrameFormat::Float32,
            FrameFormatArg::Png => FrameFormat::Png8,
        },
        ..SynthSpec::default()
    };
    template.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let mut specs =
        corpus_specs(a.clips, (a.hr_min, a.hr_max), &template).map_err(|e| CliError::usage(e.to_string()))?;
    if let (Some(at), Some(to)) = (a.step_at, a.step_to) {
        for s in &mut specs {
            let before = s.hr.bpm_at(0.0);
            s.hr = HrTimeline::step(at, before, to).map_err(|e| CliError::usage(e.to_string()))?;
        }
    }
    create_dir(&a.out)?;
    let idx = RoiIndices::default();
    let entries = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| generate(s, &clip_dir(&a.out, i), &idx))
        .collect::<evmcnn::Result<Vec<_>>>()?;
    let manifest = write_corpus_manifest(&a.out, &entries)?;
    let cov = coverage(&specs, (a.hr_min, a.hr_max));
    info!("{cov}");
    Ok(SynthSummary {
        manifest,
        clips: specs.len(),
        coverage: cov,
    })
}

// -------------------------------------------------------------- extract

/// One extracted window of one video.
#[derive(Debug, Clone)]
pub struct VideoWindow {
    pub video: String,
    pub second: usize,
    pub label_bpm: f64,
    pub features: FeatureImage,
}

fn check_unique_ids(entries: &[ManifestEntry]) -> CliResult<()> {
    let mut seen = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        if let Some(j) = seen.insert(e.video_id(), i) {
            return Err(CliError::data(format!(
                "ingest: entries {} and {} share the video id `{}`",
                j + 1,
                i + 1,
                e.video_id()
            )));
        }
    }
    Ok(())
}

/// Stage 1 for a whole manifest: windows of every entry, feature images
/// computed in parallel over windows. Output is in manifest order.
pub fn extract_manifest(manifest: &Path, feats: &FeatureArgs) -> CliResult<(Vec<VideoWindow>, usize)> {
    let m = load_manifest(manifest)?;
    check_unique_ids(&m.entries)?;
    let idx = RoiIndices::default();
    let per_entry = m
        .entries
        .par_iter()
        .map(|entry| -> CliResult<(Vec<VideoWindow>, usize)> {
            let ex = Extractor::new(feats.config_for(entry.fps)?)?;
            let ws = windows(entry, &idx)?;
            let video = entry.video_id();
            let out = ws
                .windows
                .par_iter()
                .map(|w| {
                    Ok(VideoWindow {
                        video: video.clone(),
                        second: w.window_index,
                        label_bpm: w.label_bpm,
                        features: ex.extract(&w.roi_window)?,
                    })
                })
                .collect::<evmcnn::Result<Vec<_>>>()?;
            Ok((out, ws.skipped.len()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let skipped = per_entry.iter().map(|p| p.1).sum();
    Ok((per_entry.into_iter().flat_map(|p| p.0).collect(), skipped))
}

pub fn fim_name(video: &str, second: usize) -> PathBuf {
    PathBuf::from(video).join(format!("s{second:05}.fim"))
}

#[derive(Debug)]
pub struct ExtractSummary {
    pub labels: PathBuf,
    pub windows: usize,
    pub skipped: usize,
}

pub fn cmd_extract(a: &ExtractArgs) -> CliResult<ExtractSummary> {
    let (ws, skipped) = extract_manifest(&a.manifest, &a.features)?;
    create_dir(&a.out)?;
    let mut records = Vec::with_capacity(ws.len());
    for w in &ws {
        let rel = fim_name(&w.video, w.second);
        let path = a.out.join(&rel);
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        write_fim(&path, &w.features)?;
        records.push(LabelRecord {
            fim_path: rel,
            label_bpm: w.label_bpm,
        });
    }
    let labels = a.out.join("labels.csv");
    write_labels_csv(&labels, &records)?;
    if skipped > 0 {
        warn!("{skipped} windows skipped by ROI checks");
    }
    Ok(ExtractSummary {
        labels,
        windows: ws.len(),
        skipped,
    })
}

// ---------------------------------------------------------------- train

/// `(video, second)` from a feature path of the form `<video>/sNNNNN.fim`.
pub fn parse_fim_path(p: &Path) -> CliResult<(String, usize)> {
    let bad = || CliError::data(format!("featex: cannot read video and second from {}", p.display()));
    let video = p
        .parent()
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
        .ok_or_else(bad)?;
    let second = p
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix('s'))
        .and_then(|s| s.parse().ok())
        .ok_or_else(bad)?;
    Ok((video.to_string(), second))
}

fn load_labelled(labels: &Path) -> CliResult<Vec<(LabelRecord, FeatureImage)>> {
    let records = read_labels_csv(labels)?;
    records
        .into_par_iter()
        .map(|r| {
            let f = read_fim(&r.fim_path)?;
            Ok((r, f))
        })
        .collect()
}

/// Indices of the `(train, test)` parts of `videos` (one entry per sample).
pub fn test_split(videos: &[String], fraction: f64, by: SplitBy, seed: u64) -> (Vec<usize>, Vec<usize>) {
    match by {
        SplitBy::Window => split_indices(videos.len(), fraction, seed),
        SplitBy::Video => {
            let mut ids: Vec<&String> = videos.iter().collect();
            ids.sort();
            ids.dedup();
            let (_, test_ids) = split_indices(ids.len(), fraction, seed);
            let test: std::collections::BTreeSet<&String> = test_ids.into_iter().map(|i| ids[i]).collect();
            (0..videos.len()).partition(|&i| !test.contains(&videos[i]))
        }
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub best_iteration: usize,
    pub best_val_loss: Option<f64>,
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<TrainSummary> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(CliError::usage("--test-fraction must be in [0, 1)"));
    }
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        max_iterations: a.iters,
        base_lr: a.lr,
        lr_step: a.lr_step,
        seed: a.seed,
        val_fraction: a.val_fraction,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let data = load_labelled(&a.labels)?;
    if data.is_empty() {
        return Err(CliError::data(format!("featex: {} lists no feature images", a.labels.display())));
    }
    let videos = data
        .iter()
        .map(|(r, _)| parse_fim_path(&r.fim_path).map(|p| p.0))
        .collect::<CliResult<Vec<_>>>()?;
    let (train_idx, test_idx) = test_split(&videos, a.test_fraction, a.split_by, a.seed);
    let set: Vec<(FeatureImage, f64)> = train_idx.iter().map(|&i| (data[i].1.clone(), data[i].0.label_bpm)).collect();

    let outcome = train(Model::table_one(a.seed), &set, &cfg)?;
    create_dir(&a.out)?;
    let model = a.out.join("model.evmc");
    save_model(&outcome.model, &model)?;
    write_text(&a.out.join("train_log.csv"), &format_train_log(&outcome.log))?;
    let pick = |ix: &[usize]| {
        ix.iter()
            .map(|&i| LabelRecord {
                fim_path: std::path::absolute(&data[i].0.fim_path).unwrap_or_else(|_| data[i].0.fim_path.clone()),
                label_bpm: data[i].0.label_bpm,
            })
            .collect::<Vec<_>>()
    };
    write_labels_csv(&a.out.join("train_labels.csv"), &pick(&train_idx))?;
    write_labels_csv(&a.out.join("test_labels.csv"), &pick(&test_idx))?;
    Ok(TrainSummary {
        model,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        best_iteration: outcome.best_iteration,
        best_val_loss: outcome.best_val_loss,
    })
}

// -------------------------------------------------------------- predict

/// Per-second predictions of one video, ordered by second.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPredictions {
    pub video: String,
    /// `(second, predicted bpm, ground-truth bpm)`
    pub rows: Vec<(usize, f64, f64)>,
}

impl VideoPredictions {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("second,pred_bpm,gt_bpm\n");
        for (sec, p, g) in &self.rows {
            s.push_str(&format!("{sec},{p:.6},{g:.6}\n"));
        }
        s
    }

    pub fn parse_csv(video: &str, text: &str) -> CliResult<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || CliError::data(format!("format: {video}.csv line {}: expected `second,pred_bpm,gt_bpm`", i + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            rows.push((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
            ));
        }
        rows.sort_by_key(|r| r.0);
        Ok(VideoPredictions {
            video: video.to_string(),
            rows,
        })
    }

    pub fn pred(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.1).collect()
    }

    pub fn gt(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.2).collect()
    }
}

pub fn group_predictions(items: &[(String, usize, f64)], preds: &[f64]) -> Vec<VideoPredictions> {
    let mut by: BTreeMap<&str, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for ((v, s, g), p) in items.iter().zip(preds) {
        by.entry(v).or_default().push((*s, *p, *g));
    }
    by.into_iter()
        .map(|(v, mut rows)| {
            rows.sort_by_key(|r| r.0);
            VideoPredictions { video: v.to_string(), rows }
        })
        .collect()
}

#[derive(Debug)]
pub struct PredictSummary {
    pub videos: usize,
    pub predictions: usize,
}

pub fn predict_videos(model: &Model, a: &PredictArgs) -> CliResult<Vec<VideoPredictions>> {
    let (items, feats): (Vec<(String, usize, f64)>, Vec<FeatureImage>) = if let Some(labels) = &a.labels {
        load_labelled(labels)?
            .into_iter()
            .map(|(r, f)| parse_fim_path(&r.fim_path).map(|(v, s)| ((v, s, r.label_bpm), f)))
            .collect::<CliResult<Vec<_>>>()?
            .into_iter()
            .unzip()
    } else {
        let manifest = a.manifest.as_ref().ok_or_else(|| CliError::usage("need --labels or --manifest"))?;
        extract_manifest(manifest, &a.features)?
            .0
            .into_iter()
            .map(|w| ((w.video, w.second, w.label_bpm), w.features))
            .unzip()
    };
    let preds: Vec<f64> = feats
        .par_chunks(256)
        .map(|c| predict_many(model, c))
        .collect::<evmcnn::Result<Vec<_>>>()?
        .concat();
    Ok(group_predictions(&items, &preds))
}

pub fn cmd_predict(a: &PredictArgs) -> CliResult<PredictSummary> {
    let model = load_model(&a.model)?;
    let videos = predict_videos(&model, a)?;
    create_dir(&a.out)?;
    for v in &videos {
        write_text(&a.out.join(format!("{}.csv", v.video)), &v.to_csv())?;
    }
    Ok(PredictSummary {
        videos: videos.len(),
        predictions: videos.iter().map(|v| v.rows.len()).sum(),
    })
}

// ----------------------------------------------------------------- eval

pub fn read_predictions(dir: &Path) -> CliResult<Vec<VideoPredictions>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| evmcnn::Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| evmcnn::Error::io(p, e))?;
            let video = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            VideoPredictions::parse_csv(video, &text)
        })
        .collect()
}

fn population_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// The `fraction` of videos with the largest ground-truth SD, at least one.
pub fn most_varying(videos: &[VideoPredictions], fraction: f64) -> Vec<&VideoPredictions> {
    let mut v: Vec<(f64, &VideoPredictions)> = videos
        .iter()
        .filter(|v| !v.rows.is_empty())
        .map(|v| (population_sd(&v.gt()), v))
        .collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.video.cmp(&b.1.video)));
    let k = ((fraction * v.len() as f64).ceil() as usize).clamp(1.min(v.len()), v.len());
    v.into_iter().take(k).map(|x| x.1).collect()
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub rows: Vec<(String, EvalReport)>,
    pub per_video: Vec<(String, EvalReport)>,
}

impl EvalOutcome {
    pub fn csv(&self) -> String {
        let mut s = format!("{REPORT_CSV_HEADER}\n");
        for (name, r) in &self.rows {
            s.push_str(&r.csv_row(name));
            s.push('\n');
        }
        s
    }

    pub fn per_video_csv(&self) -> String {
        let mut s = String::from("video,n,me,sde,rmse,me_rate,rho\n");
        for (name, r) in &self.per_video {
            s.push_str(&r.csv_row(name));
            s.push('\n');
        }
        s
    }

    pub fn report(&self, name: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.0 == name).map(|r| &r.1)
    }
}

impl fmt::Display for EvalOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{REPORT_TABLE_HEADER}", "protocol")?;
        for (name, r) in &self.rows {
            writeln!(f, "{name:<16}{r}")?;
        }
        let rhos: Vec<f64> = self.per_video.iter().filter_map(|p| p.1.rho).collect();
        if !rhos.is_empty() {
            writeln!(
                f,
                "mean per-video rho {:.4} over {} videos",
                rhos.iter().sum::<f64>() / rhos.len() as f64,
                rhos.len()
            )?;
        }
        Ok(())
    }
}

pub fn evaluate_videos(videos: &[VideoPredictions], windows: &[usize], short_fraction: f64) -> CliResult<EvalOutcome> {
    let mut rows = Vec::new();
    let mut pooled = HrPairSeries::default();
    let mut averages = Vec::new();
    let mut per_video = Vec::new();
    for v in videos.iter().filter(|v| !v.rows.is_empty()) {
        let s = HrPairSeries::from_slices(&v.pred(), &v.gt())?;
        pooled.extend(&s);
        let n = v.rows.len() as f64;
        averages.push((v.pred().iter().sum::<f64>() / n, v.gt().iter().sum::<f64>() / n));
        per_video.push((v.video.clone(), evaluate(&s)?));
    }
    if pooled.is_empty() {
        return Err(CliError::data("metrics: no predictions to evaluate"));
    }
    rows.push(("per_second".to_string(), evaluate(&pooled)?));
    rows.push(("average_hr".to_string(), evaluate(&HrPairSeries::new(averages))?));

    let selected = most_varying(videos, short_fraction);
    for &w in windows {
        if ![4, 6, 8].contains(&w) {
            warn!("short-time window of {w} s is outside the usual 4/6/8 s");
        }
        let mut acc = HrPairSeries::default();
        for v in &selected {
            if v.rows.len() < w {
                warn!("{} has {} s of predictions, shorter than the {w} s window", v.video, v.rows.len());
                continue;
            }
            acc.extend(&short_time_protocol(&v.pred(), &v.gt(), w)?);
        }
        if acc.is_empty() {
            warn!("no video long enough for the {w} s window");
            continue;
        }
        rows.push((format!("short_{w}s"), evaluate(&acc)?));
    }
    Ok(EvalOutcome { rows, per_video })
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<EvalOutcome> {
    if a.window.iter().any(|&w| w == 0) {
        return Err(CliError::usage("--window must be positive"));
    }
    if !(a.short_fraction > 0.0 && a.short_fraction <= 1.0) {
        return Err(CliError::usage("--short-fraction must be in (0, 1]"));
    }
    let videos = read_predictions(&a.pred)?;
    let out = evaluate_videos(&videos, &a.window, a.short_fraction)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("report.csv"), &out.csv())?;
    write_text(&a.out.join("report.txt"), &out.to_string())?;
    write_text(&a.out.join("per_video.csv"), &out.per_video_csv())?;
    Ok(out)
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub windows: usize,
    pub threads: usize,
    pub stage1_serial_fps: Option<f64>,
    pub stage1_parallel_fps: Option<f64>,
    pub stage2_serial_pps: Option<f64>,
    pub stage2_parallel_pps: Option<f64>,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.windows == 0 {
            return writeln!(f, "no windows to benchmark");
        }
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        writeln!(f, "windows {} frames {} threads {}", self.windows, self.frames, self.threads)?;
        writeln!(f, "stage,unit,serial,parallel")?;
        writeln!(f, "features,frames/s,{},{}", show(self.stage1_serial_fps), show(self.stage1_parallel_fps))?;
        writeln!(f, "inference,predictions/s,{},{}", show(self.stage2_serial_pps), show(self.stage2_parallel_pps))
    }
}

fn stage1_serial(entries: &[ManifestEntry], feats: &FeatureArgs) -> CliResult<Vec<FeatureImage>> {
    let idx = RoiIndices::default();
    let mut out = Vec::new();
    for e in entries {
        let ex = Extractor::new(feats.config_for(e.fps)?)?;
        for w in windows(e, &idx)?.windows {
            out.push(ex.extract(&w.roi_window)?);
        }
    }
    Ok(out)
}

pub fn cmd_bench(a: &BenchArgs) -> CliResult<BenchReport> {
    let model = load_model(&a.model)?;
    let m = load_manifest(&a.manifest)?;
    let frames: usize = m
        .entries
        .iter()
        .map(|e| list_frames(&e.frames_dir).map(|f| f.len() / e.fps * e.fps))
        .sum::<evmcnn::Result<usize>>()?;

    let t = Instant::now();
    let feats = stage1_serial(&m.entries, &a.features)?;
    let s1_serial = t.elapsed().as_secs_f64();
    let mut report = BenchReport {
        frames,
        windows: feats.len(),
        threads: rayon::current_num_threads(),
        ..BenchReport::default()
    };
    if feats.is_empty() {
        return finish_bench(a, report);
    }
    let t = Instant::now();
    extract_manifest(&a.manifest, &a.features)?;
    let s1_par = t.elapsed().as_secs_f64();

    let t = Instant::now();
    for f in &feats {
        predict_hr(&model, f)?;
    }
    let s2_serial = t.elapsed().as_secs_f64();
    let t = Instant::now();
    feats
        .par_iter()
        .map(|f| predict_hr(&model, f))
        .collect::<evmcnn::Result<Vec<_>>>()?;
    let s2_par = t.elapsed().as_secs_f64();

    let rate = |n: usize, s: f64| Some(n as f64 / s.max(1e-9));
    report.stage1_serial_fps = rate(frames, s1_serial);
    report.stage1_parallel_fps = rate(frames, s1_par);
    report.stage2_serial_pps = rate(feats.len(), s2_serial);
    report.stage2_parallel_pps = rate(feats.len(), s2_par);
    finish_bench(a, report)
}

fn finish_bench(a: &BenchArgs, r: BenchReport) -> CliResult<BenchReport> {
    if let Some(p) = &a.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_text(p, &r.to_string())?;
    }
    Ok(r)
}
