//! Dataset-level commands and their on-disk output layout.
//!
//! A run directory holds `masks/`, `boxes/`, `reports/`,
//! `effective_config.json` and `provenance.jsonl`. While a run is in
//! progress the directory contains a `.incomplete` marker; it is removed only
//! after every output has been written. Single-file outputs are written to a
//! `.partial` sibling and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{
    export_coco, load_manifest, load_pair, synth_scene, write_scene, DatasetManifest, ImageEntry,
    NamingConvention, SyntheticSceneSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{instance_boxes, object_report, pixel_report, scene_scores, LabeledObjects, ObjectReport, PixelReport};
use crate::geometry::BoundingBox;
use crate::inference::mock::{MockBackend, MockSettings};
use crate::inference::remote::{RemoteClient, RemoteConfig, BACKEND_URL_ENV};
use crate::inference::Backends;
use crate::mask::{DamageLevelMask, EvalMask};
use crate::pipeline::{generate_pseudo_labels, localize_buildings, run_end_to_end, select_top_confident, ClassifiedRecord};
use crate::proposals::{ProvenanceRecord, StageCounts};
use crate::raster::{load_rgb, save_rgb};
use crate::scoring::ScoreBreakdown;

pub const MOCK_WORLD_FILE: &str = "mock_world.json";
pub const INCOMPLETE_MARKER: &str = ".incomplete";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock,
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendSpec::Mock),
            _ => match s.strip_prefix("remote:") {
                Some(url) if !url.is_empty() => Ok(BackendSpec::Remote(url.to_string())),
                _ => Err(Error::Config(format!("backend must be `mock` or `remote:URL`, got `{s}`"))),
            },
        }
    }
}

/// Mock settings from the run config, else `<data>/mock_world.json`.
pub fn mock_settings(config: &PipelineConfig, data: Option<&Path>) -> Result<MockSettings> {
    if let Some(m) = &config.mock {
        return Ok(m.clone());
    }
    if let Some(dir) = data {
        let dir = if dir.is_file() { dir.parent().unwrap_or(Path::new(".")) } else { dir };
        let path = dir.join(MOCK_WORLD_FILE);
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let settings: MockSettings =
                serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            settings.validate_noise()?;
            return Ok(settings);
        }
    }
    Err(Error::Config(format!(
        "mock backend needs a seed: add a `mock` section to the config or a {MOCK_WORLD_FILE} next to the data"
    )))
}

/// Backends for a run. For `remote`, the environment variable
/// `UBDD_BACKEND_URL` overrides the URL given on the command line.
pub fn build_backends(spec: &BackendSpec, config: &PipelineConfig, data: Option<&Path>) -> Result<Backends> {
    match spec {
        BackendSpec::Mock => Ok(Backends::uniform(MockBackend::new(mock_settings(config, data)?))),
        BackendSpec::Remote(url) => {
            let url = std::env::var(BACKEND_URL_ENV).ok().filter(|u| !u.is_empty()).unwrap_or_else(|| url.clone());
            let client = RemoteClient::new(RemoteConfig::new(url));
            Ok(Backends::uniform(client))
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Write `bytes` to `path` through a `.partial` sibling.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Output directory of one run.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create the layout, mark it incomplete and echo the config.
    pub fn begin(root: &Path, config: &PipelineConfig) -> Result<Self> {
        for sub in ["masks", "boxes", "reports"] {
            create_dir(&root.join(sub))?;
        }
        write_file(&root.join(INCOMPLETE_MARKER), b"run in progress or failed\n")?;
        write_file(&root.join("effective_config.json"), &config.to_json_pretty())?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn finish(self) -> Result<()> {
        let marker = self.root.join(INCOMPLETE_MARKER);
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))
    }
}

/// Per-box record written to `boxes/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub logit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationsFile {
    pub sigma_tilde: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub records: Vec<ClassifiedRecord>,
}

#[derive(Serialize)]
struct SceneLine<'a> {
    scene_id: &'a str,
    boxes: usize,
    building_pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    damaged_pixels: Option<usize>,
}

fn jsonl<T: Serialize>(lines: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut out, &l)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn first_error<T>(ids: &[&str], results: Vec<Result<T>>) -> Result<Vec<T>> {
    let failed: Vec<&str> = ids.iter().zip(&results).filter(|(_, r)| r.is_err()).map(|(id, _)| *id).collect();
    if !failed.is_empty() {
        log::error!("{} of {} scenes failed: {}", failed.len(), ids.len(), failed.join(", "));
    }
    results.into_iter().collect()
}

/// Baseline localization: building boxes and binary masks per scene.
pub fn run_localize(manifest: &DatasetManifest, out: &Path, config: &PipelineConfig, backends: &Backends) -> Result<()> {
    let run = RunDir::begin(out, config)?;
    let ids: Vec<&str> = manifest.scenes.iter().map(|s| s.scene_id.as_str()).collect();
    let results: Vec<Result<(usize, usize)>> = manifest
        .scenes
        .par_iter()
        .map(|rec| {
            let pre = load_rgb(&rec.pre)?;
            let loc = localize_buildings(&pre, backends, config).map_err(|e| scene_context(&rec.scene_id, e))?;
            loc.building_mask.save_png(&run.path(&format!("masks/{}.png", rec.scene_id)))?;
            let boxes: Vec<BoxRecord> =
                loc.boxes.iter().map(|b| BoxRecord { bbox: b.bbox, logit: b.logit, label: None, score: None }).collect();
            write_file(&run.path(&format!("boxes/{}.json", rec.scene_id)), &json_bytes(&boxes)?)?;
            Ok((loc.boxes.len(), loc.building_mask.count_nonzero()))
        })
        .collect();
    let stats = first_error(&ids, results)?;
    let lines = ids.iter().zip(&stats).map(|(id, (n, px))| SceneLine {
        scene_id: id,
        boxes: *n,
        building_pixels: *px,
        damaged_pixels: None,
    });
    write_file(&run.path("provenance.jsonl"), &jsonl(lines)?)?;
    run.finish()
}

fn scene_context(scene_id: &str, e: Error) -> Error {
    match e {
        Error::Backend { context, source } if !context.starts_with("scene ") => {
            Error::Backend { context: format!("scene {scene_id}: {context}"), source }
        }
        other => other,
    }
}

/// End-to-end assessment: evaluation masks, classified boxes and the
/// dataset-wide classification list.
pub fn run_assess(manifest: &DatasetManifest, out: &Path, config: &PipelineConfig, backends: &Backends) -> Result<()> {
    let run = RunDir::begin(out, config)?;
    let ids: Vec<&str> = manifest.scenes.iter().map(|s| s.scene_id.as_str()).collect();
    let results: Vec<Result<(Vec<BoxRecord>, usize, usize)>> = manifest
        .scenes
        .par_iter()
        .map(|rec| {
            let pair = load_pair(rec)?;
            let a = run_end_to_end(&pair, backends, config)?;
            a.eval_mask.save_png(&run.path(&format!("masks/{}.png", rec.scene_id)))?;
            let boxes: Vec<BoxRecord> = a
                .localization
                .boxes
                .iter()
                .zip(&a.buildings)
                .map(|(p, c)| BoxRecord { bbox: p.bbox, logit: p.logit, label: Some(c.label), score: Some(c.score) })
                .collect();
            write_file(&run.path(&format!("boxes/{}.json", rec.scene_id)), &json_bytes(&boxes)?)?;
            let damaged = a.eval_mask.as_slice().iter().filter(|v| **v == 2).count();
            Ok((boxes, a.eval_mask.count_nonzero(), damaged))
        })
        .collect();
    let per_scene = first_error(&ids, results)?;

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (id, (boxes, building_px, damaged_px)) in ids.iter().zip(&per_scene) {
        for (index, b) in boxes.iter().enumerate() {
            records.push(ClassifiedRecord {
                scene_id: id.to_string(),
                index,
                bbox: b.bbox,
                label: b.label.unwrap_or(0),
                s: b.score.map_or(f64::NAN, |s| s.s),
            });
        }
        lines.push(SceneLine {
            scene_id: id,
            boxes: boxes.len(),
            building_pixels: *building_px,
            damaged_pixels: Some(*damaged_px),
        });
    }
    let file = ClassificationsFile { sigma_tilde: config.sigma_tilde, fraction: None, records };
    write_file(&run.path("reports/classifications.json"), &json_bytes(&file)?)?;
    write_file(&run.path("provenance.jsonl"), &jsonl(lines)?)?;
    run.finish()
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ProvenanceLine<'a> {
    Proposal {
        scene_id: &'a str,
        #[serde(flatten)]
        record: &'a ProvenanceRecord,
    },
    Summary {
        scene_id: &'a str,
        counts: &'a StageCounts,
    },
}

/// Paths written by [`run_pseudo_label`] next to the annotation file.
pub fn pseudo_label_sidecars(out_file: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut p = out_file.as_os_str().to_owned();
        p.push(suffix);
        PathBuf::from(p)
    };
    (with(".provenance.jsonl"), with(".config.json"))
}

/// Multiscale proposals and the selection cascade on every pre-event image,
/// exported as one COCO file. Provenance and the effective config are
/// written beside it.
pub fn run_pseudo_label(manifest: &DatasetManifest, out_file: &Path, config: &PipelineConfig, backends: &Backends) -> Result<()> {
    if manifest.split.as_deref() == Some("test") {
        log::warn!("generating pseudo-labels on a test split");
    }
    let ids: Vec<String> = manifest.scenes.iter().map(|s| s.scene_id.clone()).collect();
    let lookup = |id: &str| {
        let rec = manifest.scenes.iter().find(|s| s.scene_id == id).expect("id from manifest");
        load_rgb(&rec.pre)
    };
    let scenes = generate_pseudo_labels(&ids, lookup, backends, config)?;

    let index: Vec<ImageEntry> = manifest
        .scenes
        .iter()
        .zip(&scenes)
        .map(|(rec, s)| ImageEntry {
            scene_id: rec.scene_id.clone(),
            file_name: rec.pre.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            height: s.height,
            width: s.width,
        })
        .collect();
    let annotations: Vec<_> = scenes.iter().flat_map(|s| s.kept.iter().map(|p| (s.scene_id.clone(), *p))).collect();
    let coco = export_coco(&annotations, &index)?;

    let mut lines = Vec::new();
    for s in &scenes {
        for r in &s.provenance {
            serde_json::to_writer(&mut lines, &ProvenanceLine::Proposal { scene_id: &s.scene_id, record: r })?;
            lines.push(b'\n');
        }
        serde_json::to_writer(&mut lines, &ProvenanceLine::Summary { scene_id: &s.scene_id, counts: &s.counts })?;
        lines.push(b'\n');
    }
    let (prov, cfg) = pseudo_label_sidecars(out_file);
    write_atomic(&prov, &lines)?;
    write_atomic(&cfg, &config.to_json_pretty())?;
    write_atomic(out_file, &coco.to_json_pretty())
}

pub fn read_classifications(path: &Path) -> Result<ClassificationsFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Per-class top-fraction selection of an assess classification list.
pub fn run_select_confident(input: &Path, fraction: f64, out_file: &Path) -> Result<()> {
    let file = read_classifications(input)?;
    let records = select_top_confident(&file.records, fraction, file.sigma_tilde)?;
    let out = ClassificationsFile { sigma_tilde: file.sigma_tilde, fraction: Some(fraction), records };
    write_atomic(out_file, &json_bytes(&out)?)
}

/// Predicted evaluation mask of a scene: `masks/<id>.png`, `<id>.png`, or
/// an xBD target raster under `targets/`.
fn find_prediction(dir: &Path, id: &str, naming: &NamingConvention) -> Option<PathBuf> {
    [dir.join("masks").join(format!("{id}.png")), dir.join(format!("{id}.png")), naming.target_path(dir, id)]
        .into_iter()
        .find(|p| p.is_file())
}

/// Ground-truth scenes: a dataset with targets, or a flat directory of
/// `<id>.png` level rasters.
fn gt_scenes(dir: &Path, naming: &NamingConvention) -> Result<Vec<(String, PathBuf)>> {
    if let Ok(m) = load_manifest(dir, naming) {
        let with_gt: Vec<_> = m.scenes.into_iter().filter_map(|s| s.gt.map(|g| (s.scene_id, g))).collect();
        if !with_gt.is_empty() {
            return Ok(with_gt);
        }
    }
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((id, path));
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no ground-truth rasters under {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

fn load_levels_as_eval(path: &Path) -> Result<EvalMask> {
    let levels = DamageLevelMask::load_png(path)?;
    Ok(crate::evaluation::remap_gt_classes(&levels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pixel: PixelReport,
}

/// Pixel-level report over every ground-truth scene; optionally the
/// object-level report and a per-scene CSV.
pub fn run_eval(pred: &Path, gt: &Path, report: &Path, object_level: Option<&Path>, per_scene_csv: Option<&Path>) -> Result<()> {
    let naming = NamingConvention::default();
    let scenes = gt_scenes(gt, &naming)?;
    let missing: Vec<&str> = scenes
        .iter()
        .filter(|(id, _)| find_prediction(pred, id, &naming).is_none())
        .map(|(id, _)| id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("no prediction for scenes: {}", missing.join(", "))));
    }
    let loaded: Vec<(String, EvalMask, EvalMask)> = scenes
        .par_iter()
        .map(|(id, gt_path)| {
            let p = find_prediction(pred, id, &naming).expect("checked above");
            Ok((id.clone(), load_levels_as_eval(&p)?, load_levels_as_eval(gt_path)?))
        })
        .collect::<Result<_>>()?;
    let per_scene = loaded
        .iter()
        .map(|(id, p, g)| scene_scores(id, p, g))
        .collect::<Result<Vec<_>>>()?;

    if let Some(csv_path) = per_scene_csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scene_id", "F1_B", "IoU_B", "F1_U", "IoU_U", "F1_D", "IoU_D", "mF1", "mIoU", "F1", "IoU"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for s in &per_scene {
            let c = &s.scores;
            let row = [c.f1_b, c.iou_b, c.f1_u, c.iou_u, c.f1_d, c.iou_d, c.mf1, c.miou, c.f1_building, c.iou_building];
            let mut fields = vec![s.scene_id.clone()];
            fields.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&fields).map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        write_atomic(csv_path, &bytes)?;
    }

    if let Some(obj_path) = object_level {
        let objects = loaded
            .iter()
            .map(|(id, _, g)| {
                let path = pred.join("boxes").join(format!("{id}.json"));
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let boxes: Vec<BoxRecord> =
                    serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
                Ok(LabeledObjects {
                    predictions: boxes.iter().map(|b| (b.bbox, b.logit, b.label.unwrap_or(1))).collect(),
                    ground_truth: instance_boxes(g),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let r: ObjectReport = object_report(&objects, 0.5);
        write_atomic(obj_path, &json_bytes(&r)?)?;
    }

    let out = EvalReport { pixel: pixel_report(per_scene) };
    write_atomic(report, &json_bytes(&out)?)
}

/// `count` scenes named `synth_0000`, ... plus the mock world settings.
pub fn run_synth(spec: &SyntheticSceneSpec, count: usize, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_file(&out.join(INCOMPLETE_MARKER), b"run in progress or failed\n")?;
    let naming = NamingConvention::default();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = synth_scene(&spec.for_scene(i as u64), &format!("synth_{i:04}"))?;
            write_scene(out, &naming, &scene)
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(&out.join(MOCK_WORLD_FILE), &json_bytes(&spec.mock_settings())?)?;
    write_file(&out.join("synth_spec.json"), &json_bytes(spec)?)?;
    let marker = out.join(INCOMPLETE_MARKER);
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))
}

pub const UNDAMAGED_COLOR: [u8; 3] = [40, 200, 70];
pub const DAMAGED_COLOR: [u8; 3] = [255, 140, 0];

/// Blend label colours over `base`: green for 1, orange for 2.
pub fn overlay(base: &RgbImage, mask: &EvalMask, alpha: f64) -> Result<RgbImage> {
    let (h, w) = crate::raster::dims(base);
    if mask.dims() != (h, w) {
        return Err(Error::DimensionMismatch { expected: (h, w), actual: mask.dims() });
    }
    let mut out = base.clone();
    for (i, p) in out.pixels_mut().enumerate() {
        let color = match mask.as_slice()[i] {
            1 => UNDAMAGED_COLOR,
            2 => DAMAGED_COLOR,
            _ => continue,
        };
        let blend = |a: u8, b: u8| (f64::from(a) * (1.0 - alpha) + f64::from(b) * alpha).round() as u8;
        *p = Rgb([blend(p[0], color[0]), blend(p[1], color[1]), blend(p[2], color[2])]);
    }
    Ok(out)
}

/// Overlay `mask` on the post-event image of a scene in `pair_dir`.
pub fn run_render(pair_dir: &Path, scene: Option<&str>, mask: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(pair_dir, &NamingConvention::default())?;
    let rec = match scene {
        Some(id) => manifest
            .scenes
            .iter()
            .find(|s| s.scene_id == id)
            .ok_or_else(|| Error::Data(format!("scene {id} not found under {}", pair_dir.display())))?,
        None if manifest.scenes.len() == 1 => &manifest.scenes[0],
        None => return Err(Error::Config("several scenes found; pick one with --scene".into())),
    };
    let post = load_rgb(&rec.post)?;
    let m = load_levels_as_eval(mask)?;
    let img = overlay(&post, &m, 0.5)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_rgb(&img, out)
}

/// Mock backend for a synthetic dataset directory.
pub fn mock_from_world_dir(dir: &Path) -> Result<MockBackend> {
    let settings = mock_settings(&PipelineConfig::default(), Some(dir))?;
    Ok(MockBackend::new(settings))
}
