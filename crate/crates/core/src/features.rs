//! Motion words from grayscale frame sequences.
//!
//! Consecutive frames give a dense Horn-Schunck flow field; each N×N cell's
//! mean flow becomes one of four direction words, and words are pooled over
//! non-overlapping clips to form documents.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};

/// Single-channel image with intensities on a 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("frame dimensions must be positive".into()));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} frame with {} pixels",
                pixels.len()
            )));
        }
        Ok(Frame { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Frame::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Pixel with coordinates clamped to the border.
    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }
}

const MAX_PIXELS: usize = 1 << 26;

/// Parses a binary (P5) or plain (P2) PGM image.
pub fn parse_pgm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0;
    let magic = pgm_token(bytes, &mut pos)?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(pgm_err(0, "not a PGM file (expected P5 or P2)")),
    };
    let width = pgm_number(bytes, &mut pos, "width")?;
    let height = pgm_number(bytes, &mut pos, "height")?;
    let maxval = pgm_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(pgm_err(pos, "image dimensions must be positive"));
    }
    if width.checked_mul(height).is_none_or(|n| n > MAX_PIXELS) {
        return Err(pgm_err(pos, "image too large"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(pgm_err(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    let scale = 255.0 / maxval as f32;
    let n = width * height;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(pgm_err(pos, "missing whitespace before raster"));
        }
        pos += 1;
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let raster = &bytes[pos..];
        if raster.len() < n * sample_bytes {
            return Err(pgm_err(bytes.len(), format!("raster truncated: need {} bytes", n * sample_bytes)));
        }
        for i in 0..n {
            let value = if sample_bytes == 1 {
                raster[i] as usize
            } else {
                (raster[2 * i] as usize) << 8 | raster[2 * i + 1] as usize
            };
            if value > maxval {
                return Err(pgm_err(pos + i * sample_bytes, format!("sample {value} exceeds maxval {maxval}")));
            }
            pixels.push(value as f32 * scale);
        }
    } else {
        for _ in 0..n {
            let at = pos;
            let value = pgm_number(bytes, &mut pos, "sample")?;
            if value > maxval {
                return Err(pgm_err(at, format!("sample {value} exceeds maxval {maxval}")));
            }
            pixels.push(value as f32 * scale);
        }
    }
    Frame::new(width, height, pixels)
}

fn pgm_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        reason: reason.into(),
    }
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(pgm_err(start, "unexpected end of header"));
    }
    Ok(&bytes[start..*pos])
}

fn pgm_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let at = *pos;
    let token = pgm_token(bytes, pos)?;
    std::str::from_utf8(token)
        .ok()
        .filter(|s| s.len() <= 9 && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| pgm_err(at, format!("bad {what}")))
}

/// Encodes a frame as 8-bit binary PGM, rounding and clamping intensities.
pub fn format_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.pixels.iter().map(|&p| p.round().clamp(0.0, 255.0) as u8));
    out
}

pub fn load_pgm(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| e.at_path(path))
}

pub fn save_pgm(frame: &Frame, path: &Path) -> Result<()> {
    std::fs::write(path, format_pgm(frame)).map_err(|e| Error::io(path, e))
}

/// Loads every `.pgm` file in `dir`, ordered by file name, and checks that
/// all frames share the first frame's size.
pub fn load_frames(dir: &Path) -> Result<Vec<(PathBuf, Frame)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) && path.is_file() {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no .pgm frames found in {}", dir.display())));
    }
    paths.sort();
    let frames = paths
        .into_iter()
        .map(|p| load_pgm(&p).map(|f| (p, f)))
        .collect::<Result<Vec<_>>>()?;
    let (first_path, first) = &frames[0];
    for (path, frame) in &frames[1..] {
        if (frame.width, frame.height) != (first.width, first.height) {
            return Err(Error::DimensionMismatch(format!(
                "{} is {}x{} but {} is {}x{}",
                first_path.display(),
                first.width,
                first.height,
                path.display(),
                frame.width,
                frame.height
            )));
        }
    }
    Ok(frames)
}

/// Dense per-pixel motion in pixels per frame; `v` grows downwards.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Edge of the square cells flow is averaged over, in pixels.
    pub cell_size: usize,
    /// Cells whose mean flow is slower than this emit no word.
    pub magnitude_threshold: f64,
    /// Flow fields pooled into one document.
    pub clip_length: usize,
    /// Weight of the smoothness term, in squared intensity units.
    pub smoothness: f64,
    pub iterations: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            cell_size: 8,
            magnitude_threshold: 0.05,
            clip_length: 25,
            smoothness: 100.0,
            iterations: 100,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 {
            return Err(Error::InvalidConfig("cell_size must be at least 1".into()));
        }
        if !(self.magnitude_threshold >= 0.0) || !self.magnitude_threshold.is_finite() {
            return Err(Error::InvalidConfig("magnitude_threshold must be finite and >= 0".into()));
        }
        if self.clip_length == 0 {
            return Err(Error::InvalidConfig("clip_length must be at least 1".into()));
        }
        if !(self.smoothness > 0.0) || !self.smoothness.is_finite() {
            return Err(Error::InvalidConfig("smoothness must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Cells across and down a `width`×`height` frame; remainder pixels are dropped.
    pub fn grid(&self, width: usize, height: usize) -> (usize, usize) {
        (width / self.cell_size, height / self.cell_size)
    }

    pub fn vocab_size(&self, width: usize, height: usize) -> usize {
        let (cx, cy) = self.grid(width, height);
        cx * cy * 4
    }
}

/// Horn-Schunck optical flow from `a` to `b`.
pub fn compute_flow(a: &Frame, b: &Frame, cfg: &FeatureConfig) -> Result<FlowField> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} and {}x{} frames",
            a.width, a.height, b.width, b.height
        )));
    }
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let mut ex = vec![0.0f32; n];
    let mut ey = vec![0.0f32; n];
    let mut et = vec![0.0f32; n];
    // derivatives averaged over the 2x2x2 cube at each pixel
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let (a00, a10, a01, a11) = (a.at(xi, yi), a.at(xi + 1, yi), a.at(xi, yi + 1), a.at(xi + 1, yi + 1));
            let (b00, b10, b01, b11) = (b.at(xi, yi), b.at(xi + 1, yi), b.at(xi, yi + 1), b.at(xi + 1, yi + 1));
            let i = y * w + x;
            ex[i] = 0.25 * ((a10 - a00) + (a11 - a01) + (b10 - b00) + (b11 - b01));
            ey[i] = 0.25 * ((a01 - a00) + (a11 - a10) + (b01 - b00) + (b11 - b10));
            et[i] = 0.25 * ((b00 - a00) + (b10 - a10) + (b01 - a01) + (b11 - a11));
        }
    }

    let lambda = cfg.smoothness as f32;
    let mut flow = FlowField::zeros(w, h);
    let mut next = FlowField::zeros(w, h);
    let avg = |f: &[f32], x: usize, y: usize| -> f32 {
        let g = |dx: isize, dy: isize| {
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            f[yy * w + xx]
        };
        (g(-1, 0) + g(1, 0) + g(0, -1) + g(0, 1)) / 6.0 + (g(-1, -1) + g(1, -1) + g(-1, 1) + g(1, 1)) / 12.0
    };
    for _ in 0..cfg.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ub = avg(&flow.u, x, y);
                let vb = avg(&flow.v, x, y);
                let t = (ex[i] * ub + ey[i] * vb + et[i]) / (lambda + ex[i] * ex[i] + ey[i] * ey[i]);
                next.u[i] = ub - ex[i] * t;
                next.v[i] = vb - ey[i] * t;
            }
        }
        std::mem::swap(&mut flow, &mut next);
    }
    Ok(flow)
}

/// Flow direction on screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Right = 0,
    Up = 1,
    Left = 2,
    Down = 3,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Left => "left",
            Direction::Down => "down",
        })
    }
}

/// Direction of screen vector `(u, v)`, or `None` for the zero vector.
///
/// Sectors are 90° wide and centred on the axes, measured counter-clockwise
/// from "right" with "up" meaning decreasing row; each sector owns its
/// clockwise edge.
pub fn direction(u: f64, v: f64) -> Option<Direction> {
    let (x, y) = (u, -v);
    if x == 0.0 && y == 0.0 || x.is_nan() || y.is_nan() {
        return None;
    }
    Some(if x > 0.0 && y >= -x && y < x {
        Direction::Right
    } else if y > 0.0 && x <= y && x > -y {
        Direction::Up
    } else if x < 0.0 && y <= -x && y > x {
        Direction::Left
    } else {
        Direction::Down
    })
}

/// Words of one flow field: `cell * 4 + direction` for every cell whose
/// mean flow reaches the magnitude threshold, in cell order.
pub fn quantize_words(flow: &FlowField, cfg: &FeatureConfig) -> Vec<u32> {
    let n = cfg.cell_size;
    let (cells_x, cells_y) = cfg.grid(flow.width, flow.height);
    let mut words = Vec::new();
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let (mut su, mut sv) = (0.0f64, 0.0f64);
            for y in cy * n..(cy + 1) * n {
                for x in cx * n..(cx + 1) * n {
                    su += flow.u[y * flow.width + x] as f64;
                    sv += flow.v[y * flow.width + x] as f64;
                }
            }
            let area = (n * n) as f64;
            let (mu, mv) = (su / area, sv / area);
            if mu.hypot(mv) < cfg.magnitude_threshold {
                continue;
            }
            if let Some(d) = direction(mu, mv) {
                words.push(((cy * cells_x + cx) * 4 + d as usize) as u32);
            }
        }
    }
    words
}

/// Word labels such as `x2y0:left`.
pub fn word_labels(cells_x: usize, cells_y: usize) -> Vec<String> {
    let dirs = [Direction::Right, Direction::Up, Direction::Left, Direction::Down];
    (0..cells_x * cells_y)
        .flat_map(|c| dirs.iter().map(move |d| format!("x{}y{}:{d}", c % cells_x, c / cells_x)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Extracted {
    pub corpus: Corpus,
    /// Whether the last document pools fewer than `clip_length` flow fields.
    pub partial_last: bool,
}

/// Turns an ordered frame sequence into a corpus, one document per clip of
/// `clip_length` consecutive flow fields. Flow is computed in parallel.
pub fn extract_corpus(frames: &[Frame], cfg: &FeatureConfig) -> Result<Extracted> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 frames, got {}", frames.len())));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    let (cells_x, cells_y) = cfg.grid(w, h);
    if cells_x == 0 || cells_y == 0 {
        return Err(Error::InvalidConfig(format!(
            "cell size {} leaves no cells in a {w}x{h} frame",
            cfg.cell_size
        )));
    }
    let words: Vec<Vec<u32>> = frames
        .par_windows(2)
        .map(|pair| compute_flow(&pair[0], &pair[1], cfg).map(|f| quantize_words(&f, cfg)))
        .collect::<Result<_>>()?;
    let docs: Vec<Document> = words
        .chunks(cfg.clip_length)
        .enumerate()
        .map(|(j, clip)| Document::new(j, clip.concat()))
        .collect();
    let vocab = Vocabulary::with_labels(word_labels(cells_x, cells_y))?;
    Ok(Extracted {
        corpus: Corpus::new(vocab, docs)?,
        partial_last: !words.len().is_multiple_of(cfg.clip_length),
    })
}
