//! Synthetic line images: glyph atlases, line rendering and corpus synthesis.
//!
//! Rendering is per codepoint with no shaping: each glyph is blitted at the
//! pen position and the pen advances by the glyph's advance. Combining marks
//! have zero advance and a negative bearing so they land on the preceding
//! letter.
//!
//! Built-in atlases are procedural: every bitmap is generated from a seed
//! derived from the codepoint and the style, so the whole pipeline runs
//! without font files. Atlases rasterized offline from real fonts load from
//! the JSON atlas format (see [`GlyphAtlas::to_json`]).

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline, NoisePipeline};
use crate::imaging::GrayImage;
use crate::pipeline::{Manifest, Provenance, Record, SynthInfo};
use crate::rng::{derive_seed, Rng};
use crate::textnorm::{normalize_line, strip_zero_width, NormRuleSet};
use crate::{Error, Result};

pub const ATLAS_FORMAT: &str = "htrkit-atlas/1";

/// Alpha bitmap of one glyph; 255 is full ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub advance: u32,
    /// Horizontal offset of the bitmap from the pen position.
    pub bearing: i32,
    /// Row of the bitmap's top edge within the line box.
    pub top: u32,
    pub width: u32,
    pub height: u32,
    pub alpha: Vec<u8>,
}

impl Glyph {
    fn blank(advance: u32) -> Self {
        Glyph {
            advance,
            bearing: 0,
            top: 0,
            width: 0,
            height: 0,
            alpha: Vec::new(),
        }
    }

    pub fn ink_pixels(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphAtlas {
    name: String,
    line_height: u32,
    glyphs: BTreeMap<char, Glyph>,
    tofu: Glyph,
}

#[derive(Serialize, Deserialize)]
struct GlyphRecord {
    codepoint: String,
    advance: u32,
    #[serde(default)]
    bearing: i32,
    #[serde(default)]
    top: u32,
    width: u32,
    height: u32,
    /// Hex-encoded alpha rows, `width * height` bytes.
    bitmap: String,
}

#[derive(Serialize, Deserialize)]
struct AtlasFile {
    format: String,
    name: String,
    line_height: u32,
    tofu: GlyphRecord,
    glyphs: Vec<GlyphRecord>,
}

impl GlyphRecord {
    fn from_glyph(codepoint: String, g: &Glyph) -> Self {
        GlyphRecord {
            codepoint,
            advance: g.advance,
            bearing: g.bearing,
            top: g.top,
            width: g.width,
            height: g.height,
            bitmap: hex::encode(&g.alpha),
        }
    }

    fn to_glyph(&self) -> Result<Glyph> {
        let alpha = hex::decode(&self.bitmap)
            .map_err(|e| Error::InvalidArgument(format!("glyph {}: bad bitmap hex: {e}", self.codepoint)))?;
        if alpha.len() != (self.width * self.height) as usize {
            return Err(Error::InvalidArgument(format!(
                "glyph {}: {} bitmap bytes for {}x{}",
                self.codepoint,
                alpha.len(),
                self.width,
                self.height
            )));
        }
        Ok(Glyph {
            advance: self.advance,
            bearing: self.bearing,
            top: self.top,
            width: self.width,
            height: self.height,
            alpha,
        })
    }
}

impl GlyphAtlas {
    pub fn new(name: impl Into<String>, line_height: u32, tofu: Glyph) -> Result<Self> {
        let atlas = GlyphAtlas {
            name: name.into(),
            line_height,
            glyphs: BTreeMap::new(),
            tofu,
        };
        atlas.check_glyph("tofu", &atlas.tofu)?;
        if atlas.tofu.ink_pixels() == 0 {
            return Err(Error::InvalidArgument("tofu glyph must have visible ink".into()));
        }
        Ok(atlas)
    }

    fn check_glyph(&self, what: &str, g: &Glyph) -> Result<()> {
        if g.top + g.height > self.line_height {
            return Err(Error::InvalidArgument(format!(
                "glyph {what} extends below line height {}",
                self.line_height
            )));
        }
        if g.alpha.len() != (g.width * g.height) as usize {
            return Err(Error::InvalidArgument(format!("glyph {what}: bitmap size mismatch")));
        }
        Ok(())
    }

    pub fn insert(&mut self, c: char, glyph: Glyph) -> Result<()> {
        self.check_glyph(&format!("U+{:04X}", c as u32), &glyph)?;
        self.glyphs.insert(c, glyph);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn line_height(&self) -> u32 {
        self.line_height
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn contains(&self, c: char) -> bool {
        self.glyphs.contains_key(&c)
    }

    /// Glyph for `c`, or the tofu box for unknown codepoints.
    pub fn glyph(&self, c: char) -> &Glyph {
        self.glyphs.get(&c).unwrap_or(&self.tofu)
    }

    pub fn to_json(&self) -> String {
        let file = AtlasFile {
            format: ATLAS_FORMAT.into(),
            name: self.name.clone(),
            line_height: self.line_height,
            tofu: GlyphRecord::from_glyph("tofu".into(), &self.tofu),
            glyphs: self
                .glyphs
                .iter()
                .map(|(c, g)| GlyphRecord::from_glyph(format!("{:04X}", *c as u32), g))
                .collect(),
        };
        serde_json::to_string(&file).expect("atlas serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: AtlasFile = serde_json::from_str(text).map_err(|e| Error::json("atlas", e))?;
        if file.format != ATLAS_FORMAT {
            return Err(Error::InvalidArgument(format!("unsupported atlas format {:?}", file.format)));
        }
        let mut atlas = GlyphAtlas::new(file.name, file.line_height, file.tofu.to_glyph()?)?;
        for rec in &file.glyphs {
            let cp = u32::from_str_radix(rec.codepoint.trim_start_matches("U+"), 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| Error::InvalidArgument(format!("bad codepoint {:?}", rec.codepoint)))?;
            atlas.insert(cp, rec.to_glyph()?)?;
        }
        Ok(atlas)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Drawing parameters of a procedural style.
#[derive(Debug, Clone, Copy)]
struct Style {
    name: &'static str,
    seed: u64,
    stroke: f64,
    width_scale: f64,
    slant: f64,
}

const STYLES: [Style; 3] = [
    Style {
        name: "procedural-regular",
        seed: 0x5EED_0001,
        stroke: 0.9,
        width_scale: 1.0,
        slant: 0.0,
    },
    Style {
        name: "procedural-bold",
        seed: 0x5EED_0002,
        stroke: 1.4,
        width_scale: 1.1,
        slant: 0.0,
    },
    Style {
        name: "procedural-slanted",
        seed: 0x5EED_0003,
        stroke: 1.0,
        width_scale: 0.9,
        slant: 0.25,
    },
];

const LINE_HEIGHT: u32 = 24;
const HEADLINE_Y: f64 = 5.0;
const BASELINE_Y: f64 = 18.0;

struct Canvas {
    w: u32,
    h: u32,
    alpha: Vec<u8>,
    stroke: f64,
    slant: f64,
}

impl Canvas {
    fn new(w: u32, h: u32, style: &Style) -> Self {
        Canvas {
            w,
            h,
            alpha: vec![0; (w * h) as usize],
            stroke: style.stroke,
            slant: style.slant,
        }
    }

    fn dot(&mut self, x: f64, y: f64) {
        let x = x + self.slant * (BASELINE_Y - y);
        let r = self.stroke;
        let (x0, x1) = ((x - r).floor().max(0.0) as u32, (x + r).ceil() as u32);
        let (y0, y1) = ((y - r).floor().max(0.0) as u32, (y + r).ceil() as u32);
        for py in y0..=y1.min(self.h - 1) {
            for px in x0..=x1.min(self.w - 1) {
                let d = ((px as f64 - x).powi(2) + (py as f64 - y).powi(2)).sqrt();
                let a = ((r + 0.5 - d).clamp(0.0, 1.0) * 255.0).round() as u8;
                let i = (py * self.w + px) as usize;
                self.alpha[i] = self.alpha[i].max(a);
            }
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64)) {
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let steps = (len * 4.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.dot(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        }
    }

    fn curve(&mut self, a: (f64, f64), c: (f64, f64), b: (f64, f64)) {
        let steps = 48;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let u = 1.0 - t;
            self.dot(
                u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0,
                u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1,
            );
        }
    }

    fn into_glyph(self, advance: u32, bearing: i32) -> Glyph {
        Glyph {
            advance,
            bearing,
            top: 0,
            width: self.w,
            height: self.h,
            alpha: self.alpha,
        }
    }
}

fn is_combining(c: char) -> bool {
    matches!(c as u32, 0x0900..=0x0903 | 0x093A..=0x094F | 0x0951..=0x0957 | 0x0962..=0x0963)
        || matches!(c as u32, 0x0300..=0x036F)
}

fn procedural_glyph(c: char, style: &Style) -> Option<Glyph> {
    let cp = c as u32;
    let mut rng = Rng::new(derive_seed(style.seed, &[cp as u64]));
    let h = LINE_HEIGHT;
    let scaled = |w: f64| ((w * style.width_scale).round() as u32).max(3);
    match cp {
        0x20 => Some(Glyph::blank(scaled(7.0))),
        0x0964 | 0x0965 => {
            let w = scaled(if cp == 0x0964 { 6.0 } else { 9.0 });
            let mut cv = Canvas::new(w, h, style);
            cv.line((2.5, HEADLINE_Y + 1.0), (2.5, BASELINE_Y + 1.0));
            if cp == 0x0965 {
                cv.line((5.5, HEADLINE_Y + 1.0), (5.5, BASELINE_Y + 1.0));
            }
            Some(cv.into_glyph(w, 0))
        }
        _ if is_combining(c) => {
            let w = 7;
            let mut cv = Canvas::new(w, h, style);
            let above = rng.chance(0.6);
            let (ya, yb) = if above { (1.0, HEADLINE_Y - 1.0) } else { (BASELINE_Y + 1.5, 22.0) };
            cv.curve(
                (rng.uniform(1.0, 3.0), rng.uniform(ya, yb)),
                (rng.uniform(2.0, 5.0), rng.uniform(ya - 1.0, yb + 1.0).max(0.0)),
                (rng.uniform(4.0, 6.0), rng.uniform(ya, yb)),
            );
            Some(cv.into_glyph(0, -(w as i32)))
        }
        0x0904..=0x0939 | 0x0958..=0x0961 | 0x0972..=0x097F => {
            let w = scaled(rng.uniform(10.0, 14.0));
            let wf = w as f64;
            let mut cv = Canvas::new(w + 2, h, style);
            cv.line((0.5, HEADLINE_Y), (wf + 0.5, HEADLINE_Y));
            let stem = rng.chance(0.7);
            if stem {
                cv.line((wf - 2.0, HEADLINE_Y), (wf - 2.0, BASELINE_Y));
            }
            let right = if stem { wf - 3.0 } else { wf - 1.0 };
            for _ in 0..rng.int_inclusive(1, 3) {
                let a = (rng.uniform(1.0, right), rng.uniform(HEADLINE_Y + 1.0, BASELINE_Y));
                let c = (rng.uniform(0.0, right), rng.uniform(HEADLINE_Y, BASELINE_Y + 1.0));
                let b = (rng.uniform(1.0, right), rng.uniform(HEADLINE_Y + 1.0, BASELINE_Y));
                cv.curve(a, c, b);
            }
            Some(cv.into_glyph(w, 0))
        }
        0x0966..=0x096F | 0x30..=0x39 => {
            let w = scaled(9.0);
            let mut cv = Canvas::new(w, h, style);
            let top = HEADLINE_Y + 2.0;
            cv.curve((2.0, top), (rng.uniform(6.0, 9.0), rng.uniform(top, 12.0)), (2.0, 12.0));
            cv.curve((2.0, 12.0), (rng.uniform(5.0, 9.0), rng.uniform(13.0, 20.0)), (rng.uniform(2.0, 7.0), BASELINE_Y));
            Some(cv.into_glyph(w, 0))
        }
        0x21..=0x7E => {
            let w = scaled(rng.uniform(7.0, 10.0));
            let wf = w as f64;
            let mut cv = Canvas::new(w, h, style);
            for _ in 0..rng.int_inclusive(1, 3) {
                let a = (rng.uniform(1.0, wf - 1.5), rng.uniform(7.0, BASELINE_Y));
                let c = (rng.uniform(0.0, wf), rng.uniform(6.0, BASELINE_Y + 1.0));
                let b = (rng.uniform(1.0, wf - 1.5), rng.uniform(7.0, BASELINE_Y));
                cv.curve(a, c, b);
            }
            Some(cv.into_glyph(w, 0))
        }
        _ => None,
    }
}

fn tofu_glyph(style: &Style) -> Glyph {
    let w = 10;
    let mut cv = Canvas::new(w, LINE_HEIGHT, &Style { stroke: 0.6, ..*style });
    let (l, r, t, b) = (1.5, 7.5, HEADLINE_Y, BASELINE_Y);
    cv.line((l, t), (r, t));
    cv.line((r, t), (r, b));
    cv.line((r, b), (l, b));
    cv.line((l, b), (l, t));
    cv.into_glyph(w, 0)
}

fn procedural_atlas(style: &Style) -> GlyphAtlas {
    let mut atlas = GlyphAtlas::new(style.name, LINE_HEIGHT, tofu_glyph(style)).expect("tofu is valid");
    for cp in (0x20u32..=0x7E).chain(0x0900..=0x097F) {
        let c = char::from_u32(cp).expect("assigned range");
        if let Some(g) = procedural_glyph(c, style) {
            atlas.insert(c, g).expect("procedural glyphs fit the line box");
        }
    }
    atlas
}

/// The built-in procedural atlases (Devanagari block plus printable ASCII).
pub fn builtin_atlases() -> Vec<GlyphAtlas> {
    STYLES.iter().map(procedural_atlas).collect()
}

pub fn builtin_atlas(name: &str) -> Option<GlyphAtlas> {
    STYLES.iter().find(|s| s.name == name).map(procedural_atlas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub atlas: String,
    /// Integer upscaling factor applied to every glyph.
    #[serde(default = "one")]
    pub scale: u32,
    #[serde(default = "pad_h")]
    pub pad_h: u32,
    #[serde(default = "pad_v")]
    pub pad_v: u32,
    #[serde(default = "background")]
    pub background: u8,
    #[serde(default)]
    pub ink: u8,
    /// Render empty text as a padding-only blank instead of failing.
    #[serde(default)]
    pub blank_on_empty: bool,
}

fn one() -> u32 {
    1
}
fn pad_h() -> u32 {
    8
}
fn pad_v() -> u32 {
    4
}
fn background() -> u8 {
    255
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            atlas: STYLES[0].name.into(),
            scale: 1,
            pad_h: pad_h(),
            pad_v: pad_v(),
            background: background(),
            ink: 0,
            blank_on_empty: false,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 || self.scale > 16 {
            return Err(Error::InvalidConfig(format!("render scale {} not in [1, 16]", self.scale)));
        }
        if self.ink >= self.background {
            return Err(Error::InvalidConfig(format!(
                "ink {} must be darker than background {}",
                self.ink, self.background
            )));
        }
        Ok(())
    }
}

/// Codepoints that fell back to the tofu glyph, with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderReport {
    pub unknown: BTreeMap<char, usize>,
}

impl RenderReport {
    pub fn merge(&mut self, other: &RenderReport) {
        for (c, n) in &other.unknown {
            *self.unknown.entry(*c).or_default() += n;
        }
    }
}

/// Renders `text` left to right. Width is `Σ advance · scale + 2 · pad_h`.
pub fn render_line(text: &str, atlas: &GlyphAtlas, spec: &RenderSpec) -> Result<(GrayImage, RenderReport)> {
    spec.validate()?;
    let mut report = RenderReport::default();
    if text.is_empty() && !spec.blank_on_empty {
        return Err(Error::EmptyInput("text to render"));
    }
    let s = spec.scale;
    let chars: Vec<char> = text.chars().collect();
    let advance: u32 = chars.iter().map(|&c| atlas.glyph(c).advance * s).sum();
    let width = (advance + 2 * spec.pad_h).max(1);
    let height = atlas.line_height() * s + 2 * spec.pad_v;
    let mut img = GrayImage::new(width, height, spec.background)?;
    let (bg, ink) = (spec.background as u32, spec.ink as u32);
    let mut pen = spec.pad_h as i64;
    for &c in &chars {
        if !atlas.contains(c) {
            *report.unknown.entry(c).or_default() += 1;
        }
        let g = atlas.glyph(c);
        let ox = pen + g.bearing as i64 * s as i64;
        let oy = (spec.pad_v + g.top * s) as i64;
        for gy in 0..g.height * s {
            for gx in 0..g.width * s {
                let a = g.alpha[((gy / s) * g.width + gx / s) as usize] as u32;
                if a == 0 {
                    continue;
                }
                let (x, y) = (ox + gx as i64, oy + gy as i64);
                if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                    continue;
                }
                let v = (bg * (255 - a) + ink * a + 127) / 255;
                let cur = img.get(x as u32, y as u32);
                img.put(x as u32, y as u32, cur.min(v as u8));
            }
        }
        pen += (g.advance * s) as i64;
    }
    Ok((img, report))
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub count: usize,
    pub seed: u64,
    pub render: RenderSpec,
    pub pipeline: NoisePipeline,
    /// Manifest stage tag for the generated records.
    pub stage: u8,
    pub id_prefix: String,
    /// Directory (relative to the output root) for image files.
    pub image_dir: String,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            count: 1000,
            seed: 42,
            render: RenderSpec::default(),
            pipeline: NoisePipeline::default(),
            stage: 1,
            id_prefix: "syn".into(),
            image_dir: "synth".into(),
        }
    }
}

/// Generates `count` degraded renders, cycling through `lines`.
///
/// Image `i` uses line `i mod |lines|`, an atlas drawn uniformly with the
/// stream seeded by `derive_seed(seed, [i])`, and a noise-pipeline seed drawn
/// from that same stream. When `out_root` is given, images are written as PNG
/// below it; the returned manifest does not depend on worker count.
pub fn synthesize_corpus<S: AsRef<str> + Sync>(
    lines: &[S],
    atlases: &[GlyphAtlas],
    opts: &SynthOptions,
    out_root: Option<&Path>,
) -> Result<(Manifest, RenderReport)> {
    if lines.is_empty() {
        return Err(Error::EmptyInput("synthesis line list"));
    }
    if atlases.is_empty() {
        return Err(Error::EmptyInput("atlas list"));
    }
    opts.render.validate()?;
    opts.pipeline.validate()?;
    let digits = opts.count.saturating_sub(1).to_string().len().max(6);
    let results: Vec<(Record, RenderReport)> = (0..opts.count)
        .into_par_iter()
        .map(|i| {
            let text = lines[i % lines.len()].as_ref();
            let img_seed = derive_seed(opts.seed, &[i as u64]);
            let mut rng = Rng::new(img_seed);
            let atlas = &atlases[rng.below(atlases.len() as u64) as usize];
            let noise_seed = rng.next_u64();
            let spec = RenderSpec {
                atlas: atlas.name().into(),
                blank_on_empty: true,
                ..opts.render.clone()
            };
            let (clean, report) = render_line(text, atlas, &spec)?;
            let id = format!("{}{:0digits$}", opts.id_prefix, i);
            let image = format!("{}/{id}.png", opts.image_dir);
            if let Some(root) = out_root {
                let noisy = apply_pipeline(&clean, &opts.pipeline, noise_seed)?;
                noisy.save(root.join(&image))?;
            }
            let mut rec = Record::new(id.clone(), image, text);
            rec.stage = opts.stage;
            rec.provenance = Provenance {
                synth: Some(SynthInfo {
                    atlas: atlas.name().into(),
                    seed: img_seed,
                }),
                ..Provenance::original(id)
            };
            Ok((rec, report))
        })
        .collect::<Result<_>>()?;
    let mut report = RenderReport::default();
    let mut records = Vec::with_capacity(results.len());
    for (rec, rep) in results {
        report.merge(&rep);
        records.push(rec);
    }
    Ok((Manifest::new(records), report))
}

/// Reads text files line by line (LF or CRLF), normalizes each line and
/// drops lines that end up empty. Duplicates are kept.
pub fn load_corpus_text<P: AsRef<Path>>(paths: &[P], rules: &NormRuleSet) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        out.extend(normalize_corpus_text(&text, rules));
    }
    Ok(out)
}

pub fn normalize_corpus_text(text: &str, rules: &NormRuleSet) -> Vec<String> {
    text.lines()
        .map(|l| normalize_line(&strip_zero_width(l), rules).0)
        .filter(|l| !l.is_empty())
        .collect()
}

const CONSONANTS: &str = "कखगघङचछजझञटठडढणतथदधनपफबभमयरलवशषसह";
const VOWELS: &str = "अआइईउऊएऐओऔ";
const MATRAS: &str = "ािीुूेैोौं";

/// Pseudo-Nepali text lines from a seeded word lexicon with Zipf-like reuse.
///
/// Stands in for the scanned-book sources when none are supplied: scriptio
/// continua is not imitated, words are space separated and lines occasionally
/// end with a danda or carry a Devanagari number.
pub fn synthetic_text_lines(n: usize, seed: u64) -> Vec<String> {
    let cons: Vec<char> = CONSONANTS.chars().collect();
    let vows: Vec<char> = VOWELS.chars().collect();
    let matras: Vec<char> = MATRAS.chars().collect();
    let mut rng = Rng::new(seed);
    let syllable = |rng: &mut Rng| {
        let mut s = String::new();
        if rng.chance(0.08) {
            s.push(vows[rng.below(vows.len() as u64) as usize]);
            return s;
        }
        s.push(cons[rng.below(cons.len() as u64) as usize]);
        if rng.chance(0.12) {
            s.push('\u{094D}');
            s.push(cons[rng.below(cons.len() as u64) as usize]);
        }
        if rng.chance(0.55) {
            s.push(matras[rng.below(matras.len() as u64) as usize]);
        }
        s
    };
    let lexicon: Vec<String> = (0..400)
        .map(|_| {
            let k = rng.int_inclusive(1, 4);
            (0..k).map(|_| syllable(&mut rng)).collect()
        })
        .collect();
    (0..n)
        .map(|_| {
            let words = rng.int_inclusive(3, 9);
            let mut parts: Vec<String> = (0..words)
                .map(|_| {
                    // squared uniform favours the head of the lexicon
                    let u = rng.next_f64();
                    lexicon[((u * u) * lexicon.len() as f64) as usize].clone()
                })
                .collect();
            if rng.chance(0.1) {
                let num = rng.int_inclusive(1, 999).to_string();
                parts.push(num.chars().map(|d| char::from_u32(0x0966 + d as u32 - '0' as u32).unwrap()).collect());
            }
            let mut line = parts.join(" ");
            if rng.chance(0.3) {
                line.push_str(" ।");
            }
            line
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_atlas() -> GlyphAtlas {
        let tofu = Glyph {
            advance: 4,
            bearing: 0,
            top: 0,
            width: 2,
            height: 2,
            alpha: vec![255; 4],
        };
        let mut a = GlyphAtlas::new("t", 10, tofu).unwrap();
        a.insert(
            'x',
            Glyph {
                advance: 8,
                bearing: 0,
                top: 2,
                width: 3,
                height: 3,
                alpha: vec![255; 9],
            },
        )
        .unwrap();
        a
    }

    #[test]
    fn width_is_advance_plus_padding() {
        let spec = RenderSpec {
            pad_h: 4,
            pad_v: 0,
            ..RenderSpec::default()
        };
        let (img, rep) = render_line("x", &test_atlas(), &spec).unwrap();
        assert_eq!(img.dimensions(), (16, 10));
        assert!(rep.unknown.is_empty());
        assert_eq!(img.get(4, 2), 0);
        assert_eq!(img.get(3, 2), 255);
    }

    #[test]
    fn scale_multiplies_geometry() {
        let spec = RenderSpec {
            pad_h: 4,
            pad_v: 1,
            scale: 2,
            ..RenderSpec::default()
        };
        let (img, _) = render_line("xx", &test_atlas(), &spec).unwrap();
        assert_eq!(img.dimensions(), (2 * 8 * 2 + 8, 22));
    }

    #[test]
    fn empty_text_policy() {
        let a = test_atlas();
        assert!(render_line("", &a, &RenderSpec::default()).is_err());
        let spec = RenderSpec {
            blank_on_empty: true,
            pad_h: 5,
            ..RenderSpec::default()
        };
        let (img, _) = render_line("", &a, &spec).unwrap();
        assert_eq!(img.width(), 10);
        assert!(img.pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn unknown_codepoints_use_tofu_and_are_reported() {
        let (img, rep) = render_line("x☃☃", &test_atlas(), &RenderSpec::default()).unwrap();
        assert_eq!(rep.unknown.get(&'☃'), Some(&2));
        assert_eq!(img.width(), 8 + 4 + 4 + 16);
        assert!(img.pixels().iter().filter(|&&p| p == 0).count() >= 9 + 8);
    }

    #[test]
    fn render_is_deterministic() {
        let atlases = builtin_atlases();
        for a in &atlases {
            let (x, _) = render_line("नेपाल भाषा १२३", a, &RenderSpec::default()).unwrap();
            let (y, _) = render_line("नेपाल भाषा १२३", a, &RenderSpec::default()).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(builtin_atlases(), atlases);
    }

    #[test]
    fn builtin_glyphs_fit_and_tofu_is_visible() {
        for a in builtin_atlases() {
            assert!(a.tofu.ink_pixels() > 0);
            for (c, g) in &a.glyphs {
                assert!(g.top + g.height <= a.line_height(), "{c:?}");
                if *c != ' ' {
                    assert!(g.ink_pixels() > 0, "{} U+{:04X}", a.name(), *c as u32);
                }
            }
            assert!(a.contains('क') && a.contains('।') && a.contains('A'));
        }
        assert!(builtin_atlas("procedural-bold").is_some());
        assert!(builtin_atlas("nope").is_none());
    }

    #[test]
    fn ink_darker_than_background() {
        let spec = RenderSpec {
            background: 230,
            ink: 30,
            ..RenderSpec::default()
        };
        let a = &builtin_atlases()[0];
        let (img, _) = render_line("कखग", a, &spec).unwrap();
        let dark: Vec<u8> = img.pixels().iter().copied().filter(|&p| p < 230).collect();
        assert!(!dark.is_empty());
        assert!(img.pixels().iter().all(|&p| p <= 230 && p >= 30));
        let bad = RenderSpec {
            background: 10,
            ink: 10,
            ..RenderSpec::default()
        };
        assert!(render_line("क", a, &bad).is_err());
    }

    #[test]
    fn atlas_json_round_trip() {
        let a = builtin_atlases().remove(2);
        let back = GlyphAtlas::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert!(GlyphAtlas::from_json(r#"{"format":"x"}"#).is_err());
    }

    #[test]
    fn corpus_round_robin_counts() {
        let lines = ["क", "ख", "ग"];
        let opts = SynthOptions {
            count: 10,
            ..SynthOptions::default()
        };
        let (m, _) = synthesize_corpus(&lines, &builtin_atlases(), &opts, None).unwrap();
        assert_eq!(m.len(), 10);
        let mut uses = BTreeMap::new();
        for r in m.iter() {
            *uses.entry(r.text.clone()).or_insert(0) += 1;
            assert_eq!(r.stage, 1);
            assert!(r.provenance.synth.is_some());
        }
        assert!(uses.values().all(|&n| n == 3 || n == 4));
        assert!(synthesize_corpus::<&str>(&[], &builtin_atlases(), &opts, None).is_err());
    }

    #[test]
    fn corpus_images_written_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let lines = synthetic_text_lines(4, 1);
        let opts = SynthOptions {
            count: 4,
            ..SynthOptions::default()
        };
        let (m1, _) = synthesize_corpus(&lines, &builtin_atlases(), &opts, Some(dir.path())).unwrap();
        let first: Vec<Vec<u8>> = m1.iter().map(|r| std::fs::read(dir.path().join(&r.image)).unwrap()).collect();
        let (m2, _) = synthesize_corpus(&lines, &builtin_atlases(), &opts, Some(dir.path())).unwrap();
        let second: Vec<Vec<u8>> = m2.iter().map(|r| std::fs::read(dir.path().join(&r.image)).unwrap()).collect();
        assert_eq!(m1, m2);
        assert_eq!(first, second);
    }

    #[test]
    fn clean_pipeline_matches_plain_render() {
        let dir = tempfile::tempdir().unwrap();
        let atlases = builtin_atlases();
        let opts = SynthOptions {
            count: 2,
            pipeline: NoisePipeline::default().with_all_p(0.0),
            ..SynthOptions::default()
        };
        let (m, _) = synthesize_corpus(&["कमल"], &atlases, &opts, Some(dir.path())).unwrap();
        for r in m.iter() {
            let name = &r.provenance.synth.as_ref().unwrap().atlas;
            let atlas = atlases.iter().find(|a| a.name() == name).unwrap();
            let (expect, _) = render_line("कमल", atlas, &RenderSpec::default()).unwrap();
            assert_eq!(GrayImage::load(dir.path().join(&r.image)).unwrap(), expect);
        }
    }

    #[test]
    fn corpus_text_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, "क|ख\r\n\r\nग  घ\nग  घ\n").unwrap();
        let lines = load_corpus_text(&[&p], &NormRuleSet::default()).unwrap();
        assert_eq!(lines, vec!["क।ख", "ग घ", "ग घ"]);
        assert!(load_corpus_text(&[dir.path().join("missing")], &NormRuleSet::default())
            .unwrap_err()
            .is_io());
    }

    #[test]
    fn synthetic_lines_are_deterministic_devanagari() {
        let a = synthetic_text_lines(50, 9);
        assert_eq!(a, synthetic_text_lines(50, 9));
        assert_ne!(a, synthetic_text_lines(50, 10));
        assert!(a.iter().all(|l| !l.is_empty() && l.trim() == l));
    }
}
