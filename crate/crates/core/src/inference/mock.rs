//! Deterministic stand-in for the three foundation models.
//!
//! The mock reads the request raster itself. Synthetic scenes are painted
//! from a fixed [`Palette`], so every pixel can be attributed to background,
//! an intact roof, rubble, or one distractor kind. Responses are a pure
//! function of `(settings, request)`: noise is drawn from a ChaCha stream
//! seeded with a SHA-256 digest of the seed and the request contents. The
//! same request therefore gives the same bytes whether served in-process or
//! over HTTP.
//!
//! Behaviour per role:
//!
//! * detect: connected components of object pixels become boxes. Components
//!   touching the request frame are treated as truncated and not reported.
//!   Logits come from [`detector_logit`] plus `N(0, logit_sigma)`; box edges
//!   get `N(0, jitter_px)` jitter.
//! * segment: intact-roof and rubble pixels inside the prompt box dilated by
//!   `ceil(3 * jitter_px)`.
//! * score: the dominant object class of the patch is compared with the
//!   concept of every prompt (see [`similarity`]); the similarity plus
//!   `N(0, logit_sigma)` is clamped to `[0, 1]` and multiplied by
//!   `logit_scale`.

use std::collections::VecDeque;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, BackendResult, Detection, DetectionRequest, DetectionResponse, Detector, ScoreRequest,
    ScoreResponse, Scorer, SegmentationRequest, SegmentationResponse, Segmenter,
};
use crate::geometry::BoundingBox;
use crate::mask::{pixel_span, BinaryMask};
use crate::raster::dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    SwimmingPool,
    TennisCourt,
    ParkingLot,
    Car,
    Truck,
}

impl DistractorKind {
    pub const ALL: [DistractorKind; 5] = [
        DistractorKind::SwimmingPool,
        DistractorKind::TennisCourt,
        DistractorKind::ParkingLot,
        DistractorKind::Car,
        DistractorKind::Truck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistractorKind::SwimmingPool => "swimming pool",
            DistractorKind::TennisCourt => "tennis court",
            DistractorKind::ParkingLot => "parking lot",
            DistractorKind::Car => "car",
            DistractorKind::Truck => "truck",
        }
    }
}

/// What a pixel (or a whole patch) shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Content {
    Background,
    Building,
    Rubble,
    Distractor(DistractorKind),
}

/// What a text prompt asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concept {
    Building,
    Damaged,
    Kind(DistractorKind),
    Other,
}

/// Map a prompt to a concept by its words. Damage words win over
/// "building"; "undamaged" and "normal" are intact-building words.
pub fn prompt_concept(prompt: &str) -> Concept {
    let lower = prompt.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let has = |w: &str| words.contains(&w);
    let has_pair = |a: &str, b: &str| words.windows(2).any(|p| p[0] == a && p[1] == b);

    if ["ruin", "ruins", "damaged", "destroyed", "rubble", "collapsed", "debris"]
        .iter()
        .any(|w| has(w))
    {
        return Concept::Damaged;
    }
    if ["building", "buildings", "house", "houses", "roof", "undamaged"]
        .iter()
        .any(|w| has(w))
    {
        return Concept::Building;
    }
    if has_pair("swimming", "pool") || has("pool") {
        return Concept::Kind(DistractorKind::SwimmingPool);
    }
    if has_pair("tennis", "court") {
        return Concept::Kind(DistractorKind::TennisCourt);
    }
    if has_pair("parking", "lot") {
        return Concept::Kind(DistractorKind::ParkingLot);
    }
    if has("car") || has("cars") {
        return Concept::Kind(DistractorKind::Car);
    }
    if has("truck") || has("trucks") {
        return Concept::Kind(DistractorKind::Truck);
    }
    Concept::Other
}

fn photo_style(prompt: &str) -> bool {
    prompt.to_lowercase().contains("satellite photo")
}

/// Noise-free detector confidence for a component of class `content`
/// queried with a prompt of concept `concept`.
pub fn detector_logit(content: Content, concept: Concept) -> f64 {
    match (concept, content) {
        (Concept::Building, Content::Building) => 0.8,
        (Concept::Building, Content::Rubble) => 0.45,
        (Concept::Building, Content::Distractor(_)) => 0.22,
        (Concept::Damaged, Content::Rubble) => 0.8,
        (Concept::Damaged, Content::Building) => 0.3,
        (Concept::Damaged, Content::Distractor(_)) => 0.1,
        (Concept::Kind(k), Content::Distractor(d)) if k == d => 0.8,
        (Concept::Kind(_), Content::Distractor(_)) | (Concept::Kind(_), Content::Building) => 0.22,
        _ => 0.1,
    }
}

/// Noise-free image/prompt similarity in `[0, 1]`: 0.8 for a matching
/// photo-style prompt, 0.5 for a matching plain prompt, 0.2 otherwise.
pub fn similarity(content: Content, prompt: &str) -> f64 {
    let matched = matches!(
        (content, prompt_concept(prompt)),
        (Content::Building, Concept::Building) | (Content::Rubble, Concept::Damaged)
    ) || matches!((content, prompt_concept(prompt)), (Content::Distractor(d), Concept::Kind(k)) if d == k);
    match (matched, photo_style(prompt)) {
        (true, true) => 0.8,
        (true, false) => 0.5,
        (false, _) => 0.2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub background: [u8; 3],
    pub building: [u8; 3],
    pub rubble: [u8; 3],
    pub swimming_pool: [u8; 3],
    pub tennis_court: [u8; 3],
    pub parking_lot: [u8; 3],
    pub car: [u8; 3],
    pub truck: [u8; 3],
    /// Maximum RGB distance at which a pixel is attributed to a colour.
    pub match_radius: f64,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            background: [40, 40, 40],
            building: [215, 215, 215],
            rubble: [190, 80, 40],
            swimming_pool: [40, 110, 230],
            tennis_court: [60, 170, 70],
            parking_lot: [140, 140, 200],
            car: [200, 40, 180],
            truck: [230, 200, 40],
            match_radius: 40.0,
        }
    }
}

impl Palette {
    pub fn color(&self, content: Content) -> [u8; 3] {
        match content {
            Content::Background => self.background,
            Content::Building => self.building,
            Content::Rubble => self.rubble,
            Content::Distractor(k) => self.distractor(k),
        }
    }

    pub fn distractor(&self, kind: DistractorKind) -> [u8; 3] {
        match kind {
            DistractorKind::SwimmingPool => self.swimming_pool,
            DistractorKind::TennisCourt => self.tennis_court,
            DistractorKind::ParkingLot => self.parking_lot,
            DistractorKind::Car => self.car,
            DistractorKind::Truck => self.truck,
        }
    }

    fn entries(&self) -> Vec<(Content, [u8; 3])> {
        let mut v = vec![
            (Content::Background, self.background),
            (Content::Building, self.building),
            (Content::Rubble, self.rubble),
        ];
        v.extend(DistractorKind::ALL.iter().map(|&k| (Content::Distractor(k), self.distractor(k))));
        v
    }

    /// Nearest palette entry within `match_radius`, if any.
    pub fn classify(&self, px: [u8; 3]) -> Option<Content> {
        let r2 = self.match_radius * self.match_radius;
        self.entries()
            .into_iter()
            .map(|(c, col)| {
                let d: f64 = (0..3).map(|i| (f64::from(px[i]) - f64::from(col[i])).powi(2)).sum();
                (c, d)
            })
            .filter(|(_, d)| *d <= r2)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
    }
}

fn default_logit_scale() -> f64 {
    10.0
}

/// Noise model and seed of the mock. The seed has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSettings {
    pub seed: u64,
    #[serde(default)]
    pub jitter_px: f64,
    #[serde(default)]
    pub false_positive_rate: f64,
    #[serde(default)]
    pub logit_sigma: f64,
    /// Multiplier from `[0, 1]` similarity to reported score logits.
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    #[serde(default)]
    pub palette: Palette,
}

impl MockSettings {
    pub fn validate_noise(&self) -> crate::error::Result<()> {
        use crate::error::Error;
        for (name, v) in [("jitter_px", self.jitter_px), ("logit_sigma", self.logit_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("mock {name} = {v} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.false_positive_rate) {
            return Err(Error::Config(format!("mock false_positive_rate = {} outside [0,1]", self.false_positive_rate)));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config("mock logit_scale must be positive".into()));
        }
        if !(self.palette.match_radius.is_finite() && self.palette.match_radius >= 0.0) {
            return Err(Error::Config("palette match_radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn noiseless(seed: u64) -> Self {
        Self {
            seed,
            jitter_px: 0.0,
            false_positive_rate: 0.0,
            logit_sigma: 0.0,
            logit_scale: default_logit_scale(),
            palette: Palette::default(),
        }
    }
}

/// A connected run of same-class object pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub content: Content,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub pixels: usize,
}

impl Component {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox {
            x: self.x0 as f64,
            y: self.y0 as f64,
            h: (self.y1 - self.y0 + 1) as f64,
            w: (self.x1 - self.x0 + 1) as f64,
        }
    }

    fn touches_frame(&self, height: usize, width: usize) -> bool {
        self.x0 == 0 || self.y0 == 0 || self.x1 + 1 == width || self.y1 + 1 == height
    }
}

/// Components smaller than this are blending artefacts, not objects.
pub const MIN_COMPONENT_PIXELS: usize = 16;

const NO_CLASS: u8 = u8::MAX;

fn class_code(c: Content) -> u8 {
    match c {
        Content::Background => 0,
        Content::Building => 1,
        Content::Rubble => 2,
        Content::Distractor(k) => 3 + k as u8,
    }
}

fn class_from_code(code: u8) -> Content {
    match code {
        1 => Content::Building,
        2 => Content::Rubble,
        c if (3..3 + DistractorKind::ALL.len() as u8).contains(&c) => Content::Distractor(DistractorKind::ALL[(c - 3) as usize]),
        _ => Content::Background,
    }
}

fn label_pixels(img: &RgbImage, palette: &Palette) -> Vec<u8> {
    img.pixels()
        .map(|p| match palette.classify(p.0) {
            Some(Content::Background) | None => NO_CLASS,
            Some(c) => class_code(c),
        })
        .collect()
}

/// 4-connected object components, ordered by `(y0, x0)` of discovery.
pub fn find_components(img: &RgbImage, palette: &Palette) -> Vec<Component> {
    let (h, w) = dims(img);
    let labels = label_pixels(img, palette);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || labels[start] == NO_CLASS {
            continue;
        }
        let code = labels[start];
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (w, h, 0, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            n += 1;
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == code {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        out.push(Component { content: class_from_code(code), x0, y0, x1, y1, pixels: n });
    }
    out
}

/// Dominant object class of a patch by pixel count; background when fewer
/// than four object pixels are present. Ties go to the earlier class.
pub fn dominant_content(img: &RgbImage, palette: &Palette) -> Content {
    let mut counts = [0usize; 3 + DistractorKind::ALL.len()];
    for p in img.pixels() {
        if let Some(c) = palette.classify(p.0) {
            counts[class_code(c) as usize] += 1;
        }
    }
    let (best, n) = counts
        .iter()
        .enumerate()
        .skip(1)
        .fold((0usize, 0usize), |acc, (i, &n)| if n > acc.1 { (i, n) } else { acc });
    if n < 4 {
        Content::Background
    } else {
        class_from_code(best as u8)
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    settings: MockSettings,
}

impl MockBackend {
    pub fn new(settings: MockSettings) -> Self {
        Self { settings }
    }

    pub fn settings(&self) -> &MockSettings {
        &self.settings
    }

    fn rng_for(&self, role: &str, img: &RgbImage, extra: &[&[u8]]) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.settings.seed.to_le_bytes());
        hasher.update(role.as_bytes());
        hasher.update(img.width().to_le_bytes());
        hasher.update(img.height().to_le_bytes());
        hasher.update(img.as_raw());
        for e in extra {
            hasher.update((e.len() as u64).to_le_bytes());
            hasher.update(e);
        }
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    }

    fn jitter_box(&self, rng: &mut ChaCha8Rng, b: BoundingBox, h: usize, w: usize) -> Option<BoundingBox> {
        let s = self.settings.jitter_px;
        let x0 = b.x + Self::gaussian(rng, s);
        let y0 = b.y + Self::gaussian(rng, s);
        let x1 = b.right() + Self::gaussian(rng, s);
        let y1 = b.bottom() + Self::gaussian(rng, s);
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        BoundingBox { x: x0, y: y0, h: (y1 - y0).max(1.0), w: (x1 - x0).max(1.0) }.clamp_to(h as f64, w as f64)
    }
}

impl Detector for MockBackend {
    fn detect(&self, req: &DetectionRequest<'_>) -> BackendResult<DetectionResponse> {
        if !(0.0..=1.0).contains(&req.box_threshold) {
            return Err(BackendError::InvalidRequest(format!("box threshold {}", req.box_threshold)));
        }
        let (h, w) = dims(req.image);
        let concept = prompt_concept(req.text_prompt);
        let mut rng = self.rng_for(
            "detect",
            req.image,
            &[req.text_prompt.as_bytes(), &req.box_threshold.to_le_bytes()],
        );
        let sigma = self.settings.logit_sigma;
        let mut detections = Vec::new();
        for comp in find_components(req.image, &self.settings.palette) {
            if comp.pixels < MIN_COMPONENT_PIXELS || comp.touches_frame(h, w) {
                continue;
            }
            let logit = (detector_logit(comp.content, concept) + Self::gaussian(&mut rng, sigma)).clamp(0.0, 1.0);
            let bbox = self.jitter_box(&mut rng, comp.bbox(), h, w);
            if let Some(bbox) = bbox {
                if logit >= req.box_threshold {
                    detections.push(Detection { bbox, logit });
                }
            }
        }
        if self.settings.false_positive_rate > 0.0 && rng.gen::<f64>() < self.settings.false_positive_rate {
            let side_w = rng.gen_range(8.0..48.0f64).min(w as f64);
            let side_h = rng.gen_range(8.0..48.0f64).min(h as f64);
            let x = rng.gen_range(0.0..=(w as f64 - side_w));
            let y = rng.gen_range(0.0..=(h as f64 - side_h));
            let logit = (0.3 + Self::gaussian(&mut rng, sigma)).clamp(0.0, 1.0);
            if logit >= req.box_threshold {
                detections.push(Detection { bbox: BoundingBox { x, y, h: side_h, w: side_w }, logit });
            }
        }
        detections.sort_by(|a, b| a.bbox.y.total_cmp(&b.bbox.y).then(a.bbox.x.total_cmp(&b.bbox.x)));
        Ok(DetectionResponse { detections })
    }
}

impl Segmenter for MockBackend {
    fn segment(&self, req: &SegmentationRequest<'_>) -> BackendResult<SegmentationResponse> {
        let (h, w) = dims(req.image);
        let dilation = (3.0 * self.settings.jitter_px).ceil();
        let grown = BoundingBox {
            x: req.prompt.x - dilation,
            y: req.prompt.y - dilation,
            h: req.prompt.h + 2.0 * dilation,
            w: req.prompt.w + 2.0 * dilation,
        };
        let mut mask = BinaryMask::zeros(h, w);
        let (x0, x1) = pixel_span(grown.x, grown.w, w);
        let (y0, y1) = pixel_span(grown.y, grown.h, h);
        for y in y0..y1 {
            for x in x0..x1 {
                let px = req.image.get_pixel(x as u32, y as u32).0;
                if matches!(self.settings.palette.classify(px), Some(Content::Building | Content::Rubble)) {
                    mask.set(y, x, 1);
                }
            }
        }
        Ok(SegmentationResponse { mask })
    }
}

impl Scorer for MockBackend {
    fn score_prompts(&self, req: &ScoreRequest<'_>) -> BackendResult<ScoreResponse> {
        req.check()?;
        let content = dominant_content(req.image, &self.settings.palette);
        let joined = req.prompts.join("\u{1f}");
        let mut rng = self.rng_for("score", req.image, &[joined.as_bytes()]);
        let logits = req
            .prompts
            .iter()
            .map(|p| {
                let sim = (similarity(content, p) + Self::gaussian(&mut rng, self.settings.logit_sigma)).clamp(0.0, 1.0);
                sim * self.settings.logit_scale
            })
            .collect();
        Ok(ScoreResponse { logits })
    }
}

/// A planted building of a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedBuilding {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub damaged: bool,
    /// Raw damage level written to the target raster (1 intact, 2..=4).
    pub level: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedDistractor {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub kind: DistractorKind,
}

/// Ground truth of a synthetic scene together with the mock settings that
/// serve it. The mock reads pixels, so the world is what the rendered
/// rasters encode; this record lets tests check answers against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockWorld {
    pub scene_id: String,
    pub height: usize,
    pub width: usize,
    pub settings: MockSettings,
    pub buildings: Vec<PlantedBuilding>,
    pub distractors: Vec<PlantedDistractor>,
}

impl MockWorld {
    pub fn validate(&self) -> crate::error::Result<()> {
        let (h, w) = (self.height as f64, self.width as f64);
        let boxes = self.buildings.iter().map(|b| b.bbox).chain(self.distractors.iter().map(|d| d.bbox));
        for b in boxes {
            b.validate()?;
            if !b.fits_within(h, w) {
                return Err(crate::error::Error::Data(format!("planted box {b:?} outside {h}x{w} scene")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn scene(h: u32, w: u32, objects: &[(Content, u32, u32, u32, u32)]) -> RgbImage {
        let pal = Palette::default();
        let mut img = RgbImage::from_pixel(w, h, Rgb(pal.background));
        for &(c, x, y, bh, bw) in objects {
            for yy in y..y + bh {
                for xx in x..x + bw {
                    img.put_pixel(xx, yy, Rgb(pal.color(c)));
                }
            }
        }
        img
    }

    #[test]
    fn concepts_from_prompts() {
        assert_eq!(prompt_concept("A satellite photo of a building"), Concept::Building);
        assert_eq!(prompt_concept("undamaged building"), Concept::Building);
        assert_eq!(prompt_concept("normal building"), Concept::Building);
        assert_eq!(prompt_concept("damaged building"), Concept::Damaged);
        assert_eq!(prompt_concept("A satellite photo of a ruin"), Concept::Damaged);
        assert_eq!(prompt_concept("A satellite photo of tennis court"), Concept::Kind(DistractorKind::TennisCourt));
        assert_eq!(prompt_concept("A satellite photo of swimming pool"), Concept::Kind(DistractorKind::SwimmingPool));
        assert_eq!(prompt_concept("A satellite photo of car"), Concept::Kind(DistractorKind::Car));
        assert_eq!(prompt_concept("A satellite photo of carpet"), Concept::Other);
        assert_eq!(prompt_concept("A satellite photo of grass"), Concept::Other);
    }

    #[test]
    fn palette_blends_never_alias() {
        // Bilinear resampling blends each object colour with the background.
        // No point on that segment may be attributed to a third class.
        let pal = Palette::default();
        for (c, col) in pal.entries().into_iter().skip(1) {
            for step in 0..=100 {
                let t = f64::from(step) / 100.0;
                let px: [u8; 3] = std::array::from_fn(|i| {
                    (f64::from(col[i]) * t + f64::from(pal.background[i]) * (1.0 - t)).round() as u8
                });
                if let Some(got) = pal.classify(px) {
                    assert!(got == c || got == Content::Background, "{c:?} blend {t} classified {got:?}");
                }
            }
        }
    }

    #[test]
    fn blank_world_detects_nothing() {
        let mock = MockBackend::new(MockSettings::noiseless(1));
        let img = scene(64, 64, &[]);
        let resp = mock
            .detect(&DetectionRequest { image: &img, text_prompt: "building", box_threshold: 0.1 })
            .unwrap();
        assert!(resp.detections.is_empty());
    }

    #[test]
    fn planted_building_detected_exactly() {
        let mock = MockBackend::new(MockSettings::noiseless(1));
        let img = scene(100, 120, &[(Content::Building, 30, 20, 25, 40)]);
        let resp = mock
            .detect(&DetectionRequest { image: &img, text_prompt: "building", box_threshold: 0.35 })
            .unwrap();
        assert_eq!(
            resp.detections,
            vec![Detection { bbox: BoundingBox { x: 30.0, y: 20.0, h: 25.0, w: 40.0 }, logit: 0.8 }]
        );
        let none = mock
            .detect(&DetectionRequest { image: &img, text_prompt: "building", box_threshold: 1.0 })
            .unwrap();
        assert!(none.detections.is_empty());
    }

    #[test]
    fn distractors_fall_between_thresholds() {
        let mock = MockBackend::new(MockSettings::noiseless(1));
        let img = scene(100, 100, &[(Content::Distractor(DistractorKind::TennisCourt), 20, 20, 30, 30)]);
        let low = mock
            .detect(&DetectionRequest { image: &img, text_prompt: "building", box_threshold: 0.14 })
            .unwrap();
        assert_eq!(low.detections.len(), 1);
        let high = mock
            .detect(&DetectionRequest { image: &img, text_prompt: "building", box_threshold: 0.35 })
            .unwrap();
        assert!(high.detections.is_empty());
    }

    #[test]
    fn truncated_objects_are_not_reported() {
        let mock = MockBackend::new(MockSettings::noiseless(1));
        let img = scene(60, 60, &[(Content::Building, 0, 10, 20, 20)]);
        let resp = mock
            .detect(&DetectionRequest { image: &img, text_prompt: "building", box_threshold: 0.1 })
            .unwrap();
        assert!(resp.detections.is_empty());
    }

    #[test]
    fn segmentation_follows_footprints() {
        let mock = MockBackend::new(MockSettings::noiseless(1));
        let img = scene(
            80,
            80,
            &[
                (Content::Building, 10, 10, 12, 15),
                (Content::Distractor(DistractorKind::SwimmingPool), 50, 50, 10, 10),
            ],
        );
        let exact = BoundingBox { x: 10.0, y: 10.0, h: 12.0, w: 15.0 };
        let m = mock.segment(&SegmentationRequest { image: &img, prompt: exact }).unwrap().mask;
        assert_eq!(m.count_nonzero(), 180);

        let disjoint = BoundingBox { x: 40.0, y: 5.0, h: 5.0, w: 5.0 };
        assert_eq!(mock.segment(&SegmentationRequest { image: &img, prompt: disjoint }).unwrap().mask.count_nonzero(), 0);

        let whole = BoundingBox { x: 0.0, y: 0.0, h: 80.0, w: 80.0 };
        let m = mock.segment(&SegmentationRequest { image: &img, prompt: whole }).unwrap().mask;
        assert_eq!(m.count_nonzero(), 180);
    }

    fn filter_prompts() -> Vec<String> {
        ["building", "swimming pool", "tennis court", "parking lot", "street", "trees", "grass", "soil", "car", "truck"]
            .iter()
            .map(|o| format!("A satellite photo of {o}"))
            .collect()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
    }

    #[test]
    fn scorer_ranks_matching_prompt_first() {
        let mock = MockBackend::new(MockSettings::noiseless(3));
        let prompts = filter_prompts();
        let building = scene(50, 50, &[(Content::Building, 10, 10, 30, 30)]);
        let r = mock.score_prompts(&ScoreRequest { image: &building, prompts: &prompts }).unwrap();
        assert_eq!(r.logits.len(), prompts.len());
        assert_eq!(argmax(&r.logits), 0);
        assert!((r.logits[0] - 8.0).abs() < 1e-12);

        let court = scene(50, 50, &[(Content::Distractor(DistractorKind::TennisCourt), 10, 10, 30, 30)]);
        let r = mock.score_prompts(&ScoreRequest { image: &court, prompts: &prompts }).unwrap();
        assert_eq!(argmax(&r.logits), 2);

        let empty: Vec<String> = Vec::new();
        assert!(matches!(
            mock.score_prompts(&ScoreRequest { image: &court, prompts: &empty }),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn noisy_mock_is_deterministic() {
        let settings = MockSettings {
            seed: 42,
            jitter_px: 2.0,
            false_positive_rate: 0.5,
            logit_sigma: 0.05,
            ..MockSettings::noiseless(42)
        };
        let a = MockBackend::new(settings.clone());
        let b = MockBackend::new(settings);
        let img = scene(128, 128, &[(Content::Building, 30, 30, 20, 20), (Content::Building, 70, 60, 30, 25)]);
        let req = DetectionRequest { image: &img, text_prompt: "building", box_threshold: 0.14 };
        assert_eq!(a.detect(&req).unwrap(), b.detect(&req).unwrap());
        let prompts = filter_prompts();
        let sreq = ScoreRequest { image: &img, prompts: &prompts };
        assert_eq!(a.score_prompts(&sreq).unwrap(), b.score_prompts(&sreq).unwrap());

        let other = MockBackend::new(MockSettings { seed: 43, ..a.settings().clone() });
        assert_ne!(a.score_prompts(&sreq).unwrap(), other.score_prompts(&sreq).unwrap());
    }
}
