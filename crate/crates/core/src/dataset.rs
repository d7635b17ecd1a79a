//! Dataset discovery, synthetic scenes for the mock world, and COCO
//! pseudo-label files.
//!
//! On-disk layout follows xBD:
//!
//! ```text
//! <root>/images/<id>_pre_disaster.png
//! <root>/images/<id>_post_disaster.png
//! <root>/targets/<id>_post_disaster_target.png   (optional, levels 0..=4)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::remap_gt_classes;
use crate::geometry::{BoundingBox, ScoredProposal};
use crate::inference::mock::{DistractorKind, MockSettings, MockWorld, Palette, PlantedBuilding, PlantedDistractor};
use crate::mask::{pixel_span, DamageLevelMask, EvalMask};
use crate::raster::{load_rgb, ImagePair};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamingConvention {
    pub pre_suffix: String,
    pub post_suffix: String,
    pub target_suffix: String,
    pub image_dir: String,
    pub target_dir: String,
}

impl Default for NamingConvention {
    fn default() -> Self {
        Self {
            pre_suffix: "_pre_disaster.png".into(),
            post_suffix: "_post_disaster.png".into(),
            target_suffix: "_post_disaster_target.png".into(),
            image_dir: "images".into(),
            target_dir: "targets".into(),
        }
    }
}

impl NamingConvention {
    pub fn pre_path(&self, root: &Path, id: &str) -> PathBuf {
        root.join(&self.image_dir).join(format!("{id}{}", self.pre_suffix))
    }

    pub fn post_path(&self, root: &Path, id: &str) -> PathBuf {
        root.join(&self.image_dir).join(format!("{id}{}", self.post_suffix))
    }

    pub fn target_path(&self, root: &Path, id: &str) -> PathBuf {
        root.join(&self.target_dir).join(format!("{id}{}", self.target_suffix))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub pre: PathBuf,
    pub post: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedScene {
    pub scene_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub scenes: Vec<SceneRecord>,
    #[serde(default)]
    pub excluded: Vec<ExcludedScene>,
}

/// Manifest file shape. Paths are relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    #[serde(default)]
    pub split: Option<String>,
    pub scenes: Vec<SceneRecord>,
}

impl ManifestFile {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        let mut seen = BTreeSet::new();
        for s in &m.scenes {
            if s.scene_id.is_empty() {
                return Err(Error::Data("manifest: empty scene_id".into()));
            }
            if !seen.insert(s.scene_id.as_str()) {
                return Err(Error::Data(format!("manifest: duplicate scene_id {}", s.scene_id)));
            }
        }
        Ok(m)
    }
}

fn png_dims(path: &Path) -> std::result::Result<(u32, u32), String> {
    image::image_dimensions(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn check_scene(rec: &SceneRecord) -> std::result::Result<(), String> {
    let pre = png_dims(&rec.pre)?;
    let post = png_dims(&rec.post)?;
    if pre != post {
        return Err(format!("pre {}x{} and post {}x{} differ", pre.1, pre.0, post.1, post.0));
    }
    if let Some(gt) = &rec.gt {
        let g = png_dims(gt)?;
        if g != pre {
            return Err(format!("target {}x{} does not match image {}x{}", g.1, g.0, pre.1, pre.0));
        }
    }
    Ok(())
}

fn finish(root: PathBuf, split: Option<String>, candidates: Vec<SceneRecord>, mut excluded: Vec<ExcludedScene>) -> Result<DatasetManifest> {
    let mut scenes = Vec::new();
    for rec in candidates {
        match check_scene(&rec) {
            Ok(()) => scenes.push(rec),
            Err(reason) => {
                log::warn!("excluding scene {}: {reason}", rec.scene_id);
                excluded.push(ExcludedScene { scene_id: rec.scene_id, reason });
            }
        }
    }
    if scenes.is_empty() {
        return Err(Error::Data(format!("no usable image pairs under {}", root.display())));
    }
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    excluded.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(DatasetManifest { root, split, scenes, excluded })
}

/// Discover scenes under `root`, or read them from `root` when it is a
/// manifest JSON file. Unpaired files and pairs whose rasters disagree in
/// size are excluded with a warning; no usable pair at all is an error.
pub fn load_manifest(root: &Path, naming: &NamingConvention) -> Result<DatasetManifest> {
    if root.is_file() {
        let bytes = std::fs::read(root).map_err(|e| Error::io(root, e))?;
        let file = ManifestFile::from_json_bytes(&bytes)?;
        let base = root.parent().unwrap_or(Path::new("."));
        let scenes = file
            .scenes
            .into_iter()
            .map(|s| SceneRecord {
                pre: base.join(s.pre),
                post: base.join(s.post),
                gt: s.gt.map(|g| base.join(g)),
                scene_id: s.scene_id,
            })
            .collect();
        return finish(base.to_path_buf(), file.split, scenes, Vec::new());
    }

    let dir = root.join(&naming.image_dir);
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut pre = BTreeSet::new();
    let mut post = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(&naming.pre_suffix) {
            pre.insert(id.to_string());
        } else if let Some(id) = name.strip_suffix(&naming.post_suffix) {
            post.insert(id.to_string());
        }
    }
    let mut excluded = Vec::new();
    for id in pre.symmetric_difference(&post) {
        let reason = if pre.contains(id) { "pre-event image without post-event image" } else { "post-event image without pre-event image" };
        log::warn!("excluding scene {id}: {reason}");
        excluded.push(ExcludedScene { scene_id: id.clone(), reason: reason.into() });
    }
    let candidates = pre
        .intersection(&post)
        .map(|id| {
            let gt = naming.target_path(root, id);
            SceneRecord {
                scene_id: id.clone(),
                pre: naming.pre_path(root, id),
                post: naming.post_path(root, id),
                gt: gt.is_file().then_some(gt),
            }
        })
        .collect();
    let split = root.file_name().map(|n| n.to_string_lossy().into_owned()).filter(|n| n == "train" || n == "test");
    finish(root.to_path_buf(), split, candidates, excluded)
}

pub fn load_pair(rec: &SceneRecord) -> Result<ImagePair> {
    ImagePair::new(rec.scene_id.clone(), load_rgb(&rec.pre)?, load_rgb(&rec.post)?)
}

/// Ground truth of a scene remapped to evaluation classes.
pub fn load_gt(rec: &SceneRecord) -> Result<Option<EvalMask>> {
    rec.gt
        .as_ref()
        .map(|p| DamageLevelMask::load_png(p).map(|m| remap_gt_classes(&m)))
        .transpose()
}

/// Inclusive count range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub fn exactly(n: usize) -> Self {
        Self { min: n, max: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub buildings: CountRange,
    pub distractors: CountRange,
    pub distractor_kinds: Vec<DistractorKind>,
    pub damage_probability: f64,
    /// Side length range of planted buildings, pixels.
    pub building_side: [usize; 2],
    pub distractor_side: [usize; 2],
    /// Minimum free space between any two planted objects.
    pub min_gap: usize,
    /// Minimum distance from any object to the image border.
    pub margin: usize,
    /// Uniform per-channel noise amplitude on background and objects.
    pub background_noise: u8,
    pub object_noise: u8,
    pub max_attempts: usize,
    pub palette: Palette,
    pub jitter_px: f64,
    pub false_positive_rate: f64,
    pub logit_sigma: f64,
    pub logit_scale: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        let mock = MockSettings::noiseless(0);
        Self {
            seed: 0,
            height: 512,
            width: 512,
            buildings: CountRange::exactly(5),
            distractors: CountRange::exactly(2),
            distractor_kinds: DistractorKind::ALL.to_vec(),
            damage_probability: 0.3,
            building_side: [24, 44],
            distractor_side: [20, 40],
            min_gap: 30,
            margin: 30,
            background_noise: 6,
            object_noise: 4,
            max_attempts: 10_000,
            palette: mock.palette,
            jitter_px: 0.0,
            false_positive_rate: 0.0,
            logit_sigma: 0.0,
            logit_scale: mock.logit_scale,
        }
    }
}

impl SyntheticSceneSpec {
    /// Parse a spec file. `seed` has no default.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
        if value.get("seed").is_none() {
            return Err(Error::Config("synthetic spec: missing seed".into()));
        }
        let spec: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.height == 0 || self.width == 0 || self.height > 8192 || self.width > 8192 {
            return bad(format!("size {}x{} outside 1..=8192", self.height, self.width));
        }
        if self.buildings.min > self.buildings.max || self.distractors.min > self.distractors.max {
            return bad("count range min exceeds max".into());
        }
        if !(0.0..=1.0).contains(&self.damage_probability) {
            return bad(format!("damage_probability {} outside [0,1]", self.damage_probability));
        }
        for (name, [lo, hi]) in [("building_side", self.building_side), ("distractor_side", self.distractor_side)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} [{lo}, {hi}] is not a valid range"));
            }
        }
        if self.distractors.max > 0 && self.distractor_kinds.is_empty() {
            return bad("distractors requested but no distractor kinds".into());
        }
        self.mock_settings().validate_noise()
    }

    /// Mock settings that serve scenes of this spec.
    pub fn mock_settings(&self) -> MockSettings {
        MockSettings {
            seed: self.seed,
            jitter_px: self.jitter_px,
            false_positive_rate: self.false_positive_rate,
            logit_sigma: self.logit_sigma,
            logit_scale: self.logit_scale,
            palette: self.palette.clone(),
        }
    }

    /// Spec of the `index`-th scene of a generated set.
    pub fn for_scene(&self, index: u64) -> Self {
        Self { seed: self.seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub pair: ImagePair,
    /// Raw xBD-style levels 0..=4.
    pub levels: DamageLevelMask,
    pub gt: EvalMask,
    pub world: MockWorld,
}

fn place(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSceneSpec,
    side: [usize; 2],
    occupied: &[BoundingBox],
) -> Result<BoundingBox> {
    let gap = spec.min_gap as f64;
    for _ in 0..spec.max_attempts {
        let h = rng.gen_range(side[0]..=side[1]);
        let w = rng.gen_range(side[0]..=side[1]);
        let (lo_x, lo_y) = (spec.margin, spec.margin);
        if spec.width < 2 * spec.margin + w || spec.height < 2 * spec.margin + h {
            continue;
        }
        let x = rng.gen_range(lo_x..=spec.width - spec.margin - w);
        let y = rng.gen_range(lo_y..=spec.height - spec.margin - h);
        let b = BoundingBox { x: x as f64, y: y as f64, h: h as f64, w: w as f64 };
        let clear = occupied.iter().all(|o| {
            b.x >= o.right() + gap || o.x >= b.right() + gap || b.y >= o.bottom() + gap || o.y >= b.bottom() + gap
        });
        if clear {
            return Ok(b);
        }
    }
    Err(Error::Data(format!(
        "could not place object after {} attempts; lower the counts or the gap",
        spec.max_attempts
    )))
}

fn jittered(rng: &mut ChaCha8Rng, base: [u8; 3], amp: u8) -> Rgb<u8> {
    if amp == 0 {
        return Rgb(base);
    }
    let a = i16::from(amp);
    Rgb(base.map(|c| (i16::from(c) + rng.gen_range(-a..=a)).clamp(0, 255) as u8))
}

fn paint(img: &mut RgbImage, rng: &mut ChaCha8Rng, b: &BoundingBox, color: [u8; 3], amp: u8) {
    let (x0, x1) = pixel_span(b.x, b.w, img.width() as usize);
    let (y0, y1) = pixel_span(b.y, b.h, img.height() as usize);
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x as u32, y as u32, jittered(rng, color, amp));
        }
    }
}

fn background(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec) -> RgbImage {
    let mut img = RgbImage::new(spec.width as u32, spec.height as u32);
    for p in img.pixels_mut() {
        *p = jittered(rng, spec.palette.background, spec.background_noise);
    }
    img
}

/// Deterministic scene from `spec.seed`: non-overlapping buildings and
/// distractors on a noisy background. Damaged roofs turn to rubble in the
/// post-event image.
pub fn synth_scene(spec: &SyntheticSceneSpec, scene_id: &str) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_buildings = rng.gen_range(spec.buildings.min..=spec.buildings.max);
    let n_distractors = rng.gen_range(spec.distractors.min..=spec.distractors.max);

    let mut occupied = Vec::new();
    let mut buildings = Vec::with_capacity(n_buildings);
    for _ in 0..n_buildings {
        let bbox = place(&mut rng, spec, spec.building_side, &occupied)?;
        occupied.push(bbox);
        let damaged = rng.gen_bool(spec.damage_probability);
        let level = if damaged { rng.gen_range(2..=4) } else { 1 };
        buildings.push(PlantedBuilding { bbox, damaged, level });
    }
    let mut distractors = Vec::with_capacity(n_distractors);
    for _ in 0..n_distractors {
        let bbox = place(&mut rng, spec, spec.distractor_side, &occupied)?;
        occupied.push(bbox);
        let kind = spec.distractor_kinds[rng.gen_range(0..spec.distractor_kinds.len())];
        distractors.push(PlantedDistractor { bbox, kind });
    }

    let mut pre = background(&mut rng, spec);
    let mut post = background(&mut rng, spec);
    let mut levels = DamageLevelMask::zeros(spec.height, spec.width);
    let pal = &spec.palette;
    for b in &buildings {
        paint(&mut pre, &mut rng, &b.bbox, pal.building, spec.object_noise);
        let after = if b.damaged { pal.rubble } else { pal.building };
        paint(&mut post, &mut rng, &b.bbox, after, spec.object_noise);
        let (x0, x1) = pixel_span(b.bbox.x, b.bbox.w, spec.width);
        let (y0, y1) = pixel_span(b.bbox.y, b.bbox.h, spec.height);
        for y in y0..y1 {
            for x in x0..x1 {
                levels.set(y, x, b.level);
            }
        }
    }
    for d in &distractors {
        let c = pal.distractor(d.kind);
        paint(&mut pre, &mut rng, &d.bbox, c, spec.object_noise);
        paint(&mut post, &mut rng, &d.bbox, c, spec.object_noise);
    }

    let world = MockWorld {
        scene_id: scene_id.to_string(),
        height: spec.height,
        width: spec.width,
        settings: spec.mock_settings(),
        buildings,
        distractors,
    };
    let gt = remap_gt_classes(&levels);
    Ok(SyntheticScene { pair: ImagePair::new(scene_id, pre, post)?, levels, gt, world })
}

/// Write a scene in the xBD layout plus `worlds/<id>.json`.
pub fn write_scene(root: &Path, naming: &NamingConvention, scene: &SyntheticScene) -> Result<()> {
    let id = &scene.pair.scene_id;
    for dir in [root.join(&naming.image_dir), root.join(&naming.target_dir), root.join("worlds")] {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    crate::raster::save_rgb(&scene.pair.pre, &naming.pre_path(root, id))?;
    crate::raster::save_rgb(&scene.pair.post, &naming.post_path(root, id))?;
    scene.levels.save_png(&naming.target_path(root, id))?;
    let world_path = root.join("worlds").join(format!("{id}.json"));
    let mut bytes = serde_json::to_vec_pretty(&scene.world)?;
    bytes.push(b'\n');
    std::fs::write(&world_path, bytes).map_err(|e| Error::io(&world_path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]`.
    pub bbox: [f64; 4],
    pub area: f64,
    pub score: f64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoFile {
    pub fn to_json_pretty(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("coco serializes");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub scene_id: String,
    pub file_name: String,
    pub height: usize,
    pub width: usize,
}

pub const BUILDING_CATEGORY_ID: u64 = 1;

/// COCO detection file with one `building` category. Boxes are written as
/// `[x, y, w, h]` and logits as `score`.
pub fn export_coco(annotations: &[(String, ScoredProposal)], index: &[ImageEntry]) -> Result<CocoFile> {
    let mut ids = BTreeMap::new();
    let images = index
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let id = i as u64 + 1;
            if ids.insert(e.scene_id.as_str(), id).is_some() {
                return Err(Error::Data(format!("duplicate scene {} in image index", e.scene_id)));
            }
            Ok(CocoImage {
                id,
                file_name: e.file_name.clone(),
                height: e.height,
                width: e.width,
                scene_id: Some(e.scene_id.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let annotations = annotations
        .iter()
        .enumerate()
        .map(|(i, (scene, p))| {
            let image_id = *ids
                .get(scene.as_str())
                .ok_or_else(|| Error::Data(format!("annotation for unknown scene {scene}")))?;
            Ok(CocoAnnotation {
                id: i as u64 + 1,
                image_id,
                category_id: BUILDING_CATEGORY_ID,
                bbox: [p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h],
                area: p.bbox.area(),
                score: p.logit,
                iscrowd: 0,
                scale: Some(p.scale),
                patch_index: Some(p.patch_index),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CocoFile {
        images,
        annotations,
        categories: vec![CocoCategory { id: BUILDING_CATEGORY_ID, name: "building".into() }],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDetection {
    pub scene_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub scale: Option<f64>,
    pub patch_index: Option<usize>,
}

fn scene_of(img: &CocoImage) -> String {
    img.scene_id.clone().unwrap_or_else(|| {
        let name = Path::new(&img.file_name).file_stem().map(|s| s.to_string_lossy().into_owned());
        name.unwrap_or_else(|| img.file_name.clone())
    })
}

/// Read a COCO detection file back into engine boxes, in annotation order.
pub fn import_coco(bytes: &[u8]) -> Result<(Vec<CocoImage>, Vec<CocoDetection>)> {
    let file: CocoFile = serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("coco: {e}")))?;
    let mut images = BTreeMap::new();
    for img in &file.images {
        if images.insert(img.id, img).is_some() {
            return Err(Error::Data(format!("coco: duplicate image id {}", img.id)));
        }
    }
    let categories: BTreeSet<u64> = file.categories.iter().map(|c| c.id).collect();
    let dets = file
        .annotations
        .iter()
        .map(|a| {
            let img = images
                .get(&a.image_id)
                .ok_or_else(|| Error::Data(format!("coco: annotation {} references unknown image {}", a.id, a.image_id)))?;
            if !categories.contains(&a.category_id) {
                return Err(Error::Data(format!("coco: annotation {} has unknown category {}", a.id, a.category_id)));
            }
            if !a.score.is_finite() {
                return Err(Error::Data(format!("coco: annotation {} has non-finite score", a.id)));
            }
            let [x, y, w, h] = a.bbox;
            let bbox = BoundingBox::new(x, y, h, w).map_err(|e| Error::Data(format!("coco: annotation {}: {e}", a.id)))?;
            Ok(CocoDetection { scene_id: scene_of(img), bbox, score: a.score, scale: a.scale, patch_index: a.patch_index })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((file.images, dets))
}
