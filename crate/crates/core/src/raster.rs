//! Pixel grids, thresholding, connected-component labeling and Netpbm I/O.
//!
//! Coordinates follow the image convention used throughout the crate:
//! `x` is the column (rightward), `y` the row (downward), origin top-left.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RasterError {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("pixel buffer has {got} entries, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("degenerate histogram: image has a single intensity")]
    DegenerateHistogram,
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("label map has {0} labels, PGM export supports at most 255")]
    TooManyLabels(usize),
    #[error("region is empty")]
    EmptyRegion,
    #[error("region pixels are not 8-connected")]
    DisconnectedRegion,
}

pub type Result<T> = std::result::Result<T, RasterError>;

/// Integer lattice point (pixel center).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        dx.hypot(dy)
    }

    pub fn dist2(self, other: Point) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }

    /// True for the 8 surrounding pixels (not for `self`).
    pub fn is_8_neighbor(self, other: Point) -> bool {
        self != other && (self.x - other.x).abs() <= 1 && (self.y - other.y).abs() <= 1
    }

    fn row_major_key(self) -> (i32, i32) {
        (self.y, self.x)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Offsets of the 8-neighborhood, clockwise on screen starting at west.
pub(crate) const MOORE_CW: [(i32, i32); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

const N4: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [(i32, i32)] {
        match self {
            Connectivity::Four => &N4,
            Connectivity::Eight => &MOORE_CW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            pixels: vec![false; width * height],
        })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(RasterError::BufferSize {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    /// Parses rows of `#`/`1` (foreground) and `.`/`0` (background).
    /// Handy for tests; panics on ragged input.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows[0].chars().count();
        let mut pixels = Vec::with_capacity(width * height);
        for row in rows {
            assert_eq!(row.chars().count(), width, "ragged ascii image");
            pixels.extend(row.chars().map(|c| c == '#' || c == '1'));
        }
        Self::from_pixels(width, height, pixels).expect("valid ascii image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, x: i32, y: i32) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return false;
        }
        self.pixels[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: i32, y: i32, value: bool) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        self.pixels[y as usize * self.width + x as usize] = value;
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn foreground(&self) -> impl Iterator<Item = Point> + '_ {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(move |(i, _)| Point::new((i % self.width) as i32, (i / self.width) as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(RasterError::BufferSize {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(RasterError::InvalidDimensions { width, height });
    }
    Ok(())
}

/// Inclusive bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub min_x: i32,
    pub min_y: i32,
    pub max_x: i32,
    pub max_y: i32,
}

impl BBox {
    pub fn of(points: &[Point]) -> Option<Self> {
        let first = points.first()?;
        let mut b = BBox {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for p in points {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> usize {
        (self.max_x - self.min_x + 1) as usize
    }

    pub fn height(&self) -> usize {
        (self.max_y - self.min_y + 1) as usize
    }
}

/// One 8-connected component of foreground pixels.
///
/// Pixels are kept sorted in row-major order without duplicates, so
/// membership tests are a binary search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    label: u32,
    pixels: Vec<Point>,
    bbox: BBox,
}

impl Region {
    /// Builds a region, sorting and deduplicating `pixels` and checking that
    /// they form a single 8-connected component.
    pub fn from_pixels(label: u32, pixels: Vec<Point>) -> Result<Self> {
        let region = Self::from_pixels_unchecked(label, pixels)?;
        if count_components(&region.pixels, Connectivity::Eight) != 1 {
            return Err(RasterError::DisconnectedRegion);
        }
        Ok(region)
    }

    pub(crate) fn from_pixels_unchecked(label: u32, mut pixels: Vec<Point>) -> Result<Self> {
        pixels.sort_by_key(|p| p.row_major_key());
        pixels.dedup();
        let bbox = BBox::of(&pixels).ok_or(RasterError::EmptyRegion)?;
        Ok(Self { label, pixels, bbox })
    }

    pub fn label(&self) -> u32 {
        self.label
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = label;
        self
    }

    pub fn pixels(&self) -> &[Point] {
        &self.pixels
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.pixels
            .binary_search_by_key(&p.row_major_key(), |q| q.row_major_key())
            .is_ok()
    }

    /// Dense mask of the region with a one-pixel background margin.
    pub fn mask(&self) -> LocalMask {
        LocalMask::from_points(&self.pixels, 1)
    }
}

/// A dense boolean window onto part of the plane, used by the geometry
/// kernels so they can index neighbors without hashing.
#[derive(Debug, Clone)]
pub struct LocalMask {
    pub origin: Point,
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl LocalMask {
    pub fn from_points(points: &[Point], margin: i32) -> Self {
        let bbox = BBox::of(points).unwrap_or(BBox {
            min_x: 0,
            min_y: 0,
            max_x: 0,
            max_y: 0,
        });
        let origin = Point::new(bbox.min_x - margin, bbox.min_y - margin);
        let width = bbox.width() + 2 * margin as usize;
        let height = bbox.height() + 2 * margin as usize;
        let mut mask = Self {
            origin,
            width,
            height,
            bits: vec![false; width * height],
        };
        for &p in points {
            mask.set(p, true);
        }
        mask
    }

    #[inline]
    fn index(&self, p: Point) -> Option<usize> {
        let x = p.x - self.origin.x;
        let y = p.y - self.origin.y;
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(y as usize * self.width + x as usize)
        }
    }

    #[inline]
    pub fn get(&self, p: Point) -> bool {
        self.index(p).map(|i| self.bits[i]).unwrap_or(false)
    }

    #[inline]
    pub fn set(&mut self, p: Point, value: bool) {
        if let Some(i) = self.index(p) {
            self.bits[i] = value;
        }
    }

    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    out.push(Point::new(self.origin.x + x as i32, self.origin.y + y as i32));
                }
            }
        }
        out
    }
}

/// Per-pixel component labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        check_dims(width, height)?;
        if labels.len() != width * height {
            return Err(RasterError::BufferSize {
                expected: width * height,
                got: labels.len(),
            });
        }
        Ok(Self { width, height, labels })
    }

    /// Paints each region with its own label. Later regions overwrite earlier
    /// ones where they overlap.
    pub fn from_regions(width: usize, height: usize, regions: &[Region]) -> Result<Self> {
        check_dims(width, height)?;
        let mut labels = vec![0u32; width * height];
        for r in regions {
            for p in r.pixels() {
                if p.x >= 0 && p.y >= 0 && (p.x as usize) < width && (p.y as usize) < height {
                    labels[p.y as usize * width + p.x as usize] = r.label();
                }
            }
        }
        Ok(Self { width, height, labels })
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            labels: img.pixels.iter().map(|&v| v as u32).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct positive labels.
    pub fn label_count(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Otsu level: the intensity `t` maximizing between-class variance when
/// the classes are `<= t` and `> t`. Ties resolve to the smallest `t`.
pub fn otsu_level(img: &GrayImage) -> Result<u8> {
    let mut hist = [0u64; 256];
    for &v in img.pixels() {
        hist[v as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(RasterError::DegenerateHistogram);
    }
    let total = img.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best = (f64::NEG_INFINITY, 0u8);
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    Ok(best.1)
}

/// Which side of the Otsu level is chromosome material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Polarity {
    /// The smaller class is foreground; bright wins a tie.
    #[default]
    Auto,
    /// Pixels above the level are foreground.
    Bright,
    /// Pixels at or below the level are foreground.
    Dark,
}

pub fn otsu_threshold(img: &GrayImage) -> Result<BinaryImage> {
    otsu_threshold_with(img, Polarity::Auto)
}

pub fn otsu_threshold_with(img: &GrayImage, polarity: Polarity) -> Result<BinaryImage> {
    let level = otsu_level(img)?;
    let bright = img.pixels().iter().filter(|&&v| v > level).count();
    let dark = img.pixels().len() - bright;
    let bright_is_fg = match polarity {
        Polarity::Bright => true,
        Polarity::Dark => false,
        Polarity::Auto => bright <= dark,
    };
    let pixels = img.pixels().iter().map(|&v| (v > level) == bright_is_fg).collect();
    BinaryImage::from_pixels(img.width, img.height, pixels)
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 is the background
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling. Labels are 1..K in order of first
/// encounter in a raster scan; background is 0.
pub fn label_components(img: &BinaryImage, connectivity: Connectivity) -> LabelMap {
    let (w, h) = (img.width, img.height);
    let mut provisional = vec![0u32; w * h];
    let mut sets = DisjointSet::new();
    // already-visited neighbors in raster order
    let back: &[(i32, i32)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
    };
    for y in 0..h {
        for x in 0..w {
            if !img.pixels[y * w + x] {
                continue;
            }
            let mut assigned = 0u32;
            for &(dx, dy) in back {
                let nx = x as i32 + dx;
                let ny = y as i32 + dy;
                if nx < 0 || ny < 0 || nx as usize >= w {
                    continue;
                }
                let l = provisional[ny as usize * w + nx as usize];
                if l == 0 {
                    continue;
                }
                if assigned == 0 {
                    assigned = l;
                } else {
                    sets.union(assigned, l);
                }
            }
            if assigned == 0 {
                assigned = sets.make();
            }
            provisional[y * w + x] = assigned;
        }
    }
    let mut remap = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; w * h];
    for i in 0..w * h {
        let l = provisional[i];
        if l == 0 {
            continue;
        }
        let root = sets.find(l);
        if remap[root as usize] == 0 {
            next += 1;
            remap[root as usize] = next;
        }
        labels[i] = remap[root as usize];
    }
    LabelMap {
        width: w,
        height: h,
        labels,
    }
}

/// One region per positive label, sorted by label.
pub fn extract_regions(map: &LabelMap) -> Vec<Region> {
    let max = map.max_label() as usize;
    let mut buckets: Vec<Vec<Point>> = vec![Vec::new(); max + 1];
    for (i, &l) in map.labels.iter().enumerate() {
        if l > 0 {
            buckets[l as usize].push(Point::new((i % map.width) as i32, (i / map.width) as i32));
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, px)| !px.is_empty())
        .map(|(l, px)| {
            // raster order is already row-major sorted
            let bbox = BBox::of(&px).expect("non-empty");
            Region {
                label: l as u32,
                pixels: px,
                bbox,
            }
        })
        .collect()
}

/// Number of connected components of an arbitrary pixel set.
pub fn count_components(points: &[Point], connectivity: Connectivity) -> usize {
    components(points, connectivity).len()
}

/// Splits a pixel set into connected components, each sorted row-major.
/// Components are ordered by their first pixel in raster order.
pub fn components(points: &[Point], connectivity: Connectivity) -> Vec<Vec<Point>> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut mask = LocalMask::from_points(points, 1);
    let mut seeds: Vec<Point> = points.to_vec();
    seeds.sort_by_key(|p| p.row_major_key());
    seeds.dedup();
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for seed in seeds {
        if !mask.get(seed) {
            continue;
        }
        mask.set(seed, false);
        stack.push(seed);
        let mut comp = Vec::new();
        while let Some(p) = stack.pop() {
            comp.push(p);
            for &(dx, dy) in connectivity.offsets() {
                let q = Point::new(p.x + dx, p.y + dy);
                if mask.get(q) {
                    mask.set(q, false);
                    stack.push(q);
                }
            }
        }
        comp.sort_by_key(|p| p.row_major_key());
        out.push(comp);
    }
    out
}

// ---------------------------------------------------------------------------
// Netpbm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodedImage {
    Binary(BinaryImage),
    Gray(GrayImage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PnmEncoding {
    Ascii,
    #[default]
    Raw,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(RasterError::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn uint(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return self.err(format!("unexpected end of data, expected {what}"));
            }
            return self.err(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse::<usize>().map_err(|_| RasterError::Parse {
            offset: start,
            message: format!("{what} out of range"),
        })
    }

    /// Consumes the single whitespace byte separating a raw header from its
    /// raster.
    fn single_space(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => self.err("expected whitespace before raster"),
            None => self.err("unexpected end of data before raster"),
        }
    }
}

/// Decodes P1/P4 as binary images and P2/P5 (maxval <= 255) as grayscale.
pub fn decode_image(bytes: &[u8]) -> Result<DecodedImage> {
    let mut r = HeaderReader { bytes, pos: 0 };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return r.err("missing Netpbm magic number");
    }
    let kind = bytes[1];
    if !matches!(kind, b'1' | b'2' | b'4' | b'5') {
        return r.err(format!("unsupported Netpbm kind P{}", kind as char));
    }
    r.pos = 2;
    let width = r.uint("width")?;
    let height = r.uint("height")?;
    if width == 0 || height == 0 {
        return r.err(format!("invalid dimensions {width}x{height}"));
    }
    let n = width.checked_mul(height).ok_or(RasterError::Parse {
        offset: r.pos,
        message: "image too large".into(),
    })?;
    match kind {
        b'1' => {
            let mut pixels = Vec::with_capacity(n);
            while pixels.len() < n {
                r.skip_space_and_comments();
                match bytes.get(r.pos) {
                    Some(b'0') => pixels.push(false),
                    Some(b'1') => pixels.push(true),
                    Some(_) => return r.err("expected 0 or 1"),
                    None => return r.err("truncated pixel data"),
                }
                r.pos += 1;
            }
            Ok(DecodedImage::Binary(BinaryImage { width, height, pixels }))
        }
        b'4' => {
            r.single_space()?;
            let row_bytes = width.div_ceil(8);
            let need = row_bytes * height;
            if bytes.len() - r.pos < need {
                r.pos = bytes.len();
                return r.err(format!("truncated raster: expected {need} bytes"));
            }
            let data = &bytes[r.pos..r.pos + need];
            let mut pixels = Vec::with_capacity(n);
            for y in 0..height {
                let row = &data[y * row_bytes..(y + 1) * row_bytes];
                for x in 0..width {
                    pixels.push(row[x / 8] & (0x80 >> (x % 8)) != 0);
                }
            }
            Ok(DecodedImage::Binary(BinaryImage { width, height, pixels }))
        }
        _ => {
            let maxval = r.uint("maxval")?;
            if maxval == 0 || maxval > 255 {
                return r.err(format!("unsupported maxval {maxval}"));
            }
            let mut pixels = Vec::with_capacity(n);
            if kind == b'2' {
                while pixels.len() < n {
                    let at = r.pos;
                    let v = r.uint("sample")?;
                    if v > maxval {
                        return Err(RasterError::Parse {
                            offset: at,
                            message: format!("sample {v} exceeds maxval {maxval}"),
                        });
                    }
                    pixels.push(v as u8);
                }
            } else {
                r.single_space()?;
                if bytes.len() - r.pos < n {
                    r.pos = bytes.len();
                    return r.err(format!("truncated raster: expected {n} bytes"));
                }
                for (i, &v) in bytes[r.pos..r.pos + n].iter().enumerate() {
                    if v as usize > maxval {
                        return Err(RasterError::Parse {
                            offset: r.pos + i,
                            message: format!("sample {v} exceeds maxval {maxval}"),
                        });
                    }
                    pixels.push(v);
                }
            }
            Ok(DecodedImage::Gray(GrayImage { width, height, pixels }))
        }
    }
}

pub fn encode_pbm(img: &BinaryImage, encoding: PnmEncoding) -> Vec<u8> {
    match encoding {
        PnmEncoding::Ascii => {
            let mut out = format!("P1\n{} {}\n", img.width, img.height).into_bytes();
            for row in img.pixels.chunks(img.width) {
                let line: Vec<&str> = row.iter().map(|&p| if p { "1" } else { "0" }).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
            out
        }
        PnmEncoding::Raw => {
            let mut out = format!("P4\n{} {}\n", img.width, img.height).into_bytes();
            for row in img.pixels.chunks(img.width) {
                for chunk in row.chunks(8) {
                    let mut byte = 0u8;
                    for (i, &p) in chunk.iter().enumerate() {
                        if p {
                            byte |= 0x80 >> i;
                        }
                    }
                    out.push(byte);
                }
            }
            out
        }
    }
}

pub fn encode_pgm(img: &GrayImage, encoding: PnmEncoding) -> Vec<u8> {
    encode_pgm_samples(img.width, img.height, &img.pixels, encoding)
}

fn encode_pgm_samples(width: usize, height: usize, samples: &[u8], encoding: PnmEncoding) -> Vec<u8> {
    match encoding {
        PnmEncoding::Ascii => {
            let mut out = format!("P2\n{width} {height}\n255\n").into_bytes();
            for row in samples.chunks(width) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
            out
        }
        PnmEncoding::Raw => {
            let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
            out.extend_from_slice(samples);
            out
        }
    }
}

/// Writes a label map as PGM with sample value = label id.
pub fn encode_label_map(map: &LabelMap, encoding: PnmEncoding) -> Result<Vec<u8>> {
    let max = map.max_label();
    if max > 255 {
        return Err(RasterError::TooManyLabels(max as usize));
    }
    let samples: Vec<u8> = map.labels.iter().map(|&l| l as u8).collect();
    Ok(encode_pgm_samples(map.width, map.height, &samples, encoding))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(width: usize, height: usize, pixels: Vec<u8>) -> GrayImage {
        GrayImage::from_pixels(width, height, pixels).unwrap()
    }

    #[test]
    fn otsu_rejects_constant_image() {
        let img = gray(4, 4, vec![7; 16]);
        assert_eq!(otsu_threshold(&img), Err(RasterError::DegenerateHistogram));
    }

    #[test]
    fn otsu_two_level_minority_is_foreground() {
        let mut px = vec![10u8; 100];
        for v in px.iter_mut().take(10) {
            *v = 200;
        }
        let bin = otsu_threshold(&gray(10, 10, px.clone())).unwrap();
        for (i, &v) in px.iter().enumerate() {
            assert_eq!(bin.pixels()[i], v == 200);
        }
        // dark objects on a bright field
        let inverted: Vec<u8> = px.iter().map(|&v| if v == 200 { 10 } else { 200 }).collect();
        let bin = otsu_threshold(&gray(10, 10, inverted)).unwrap();
        assert_eq!(bin.foreground_count(), 10);
        let forced = otsu_threshold_with(&gray(10, 10, px), Polarity::Dark).unwrap();
        assert_eq!(forced.foreground_count(), 90);
    }

    #[test]
    fn otsu_ramp_matches_exhaustive_scan() {
        let px: Vec<u8> = (0..64).map(|i| (i * 255 / 63) as u8).collect();
        let img = gray(8, 8, px.clone());
        // oracle: between-class variance for every cut, integer sums
        let mut best = (-1.0f64, 0u8);
        for t in 0..=255u8 {
            let (lo, hi): (Vec<u8>, Vec<u8>) = px.iter().partition(|&&v| v <= t);
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let m0 = lo.iter().map(|&v| v as f64).sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().map(|&v| v as f64).sum::<f64>() / hi.len() as f64;
            let var = lo.len() as f64 * hi.len() as f64 * (m0 - m1).powi(2);
            if var > best.0 + 1e-9 {
                best = (var, t);
            }
        }
        assert_eq!(otsu_level(&img).unwrap(), best.1);
    }

    #[test]
    fn labeling_background_only() {
        let img = BinaryImage::new(5, 4).unwrap();
        let map = label_components(&img, Connectivity::Eight);
        assert_eq!(map.label_count(), 0);
        assert!(extract_regions(&map).is_empty());
    }

    #[test]
    fn labeling_diagonal_pair_depends_on_connectivity() {
        let img = BinaryImage::from_ascii(&["#.", ".#"]);
        assert_eq!(label_components(&img, Connectivity::Eight).label_count(), 1);
        assert_eq!(label_components(&img, Connectivity::Four).label_count(), 2);
    }

    #[test]
    fn labeling_merges_u_shape_in_first_encounter_order() {
        let img = BinaryImage::from_ascii(&["#.#.#", "#.#..", "###.."]);
        let map = label_components(&img, Connectivity::Four);
        assert_eq!(map.get(0, 0), 1);
        assert_eq!(map.get(2, 0), 1);
        assert_eq!(map.get(4, 0), 2);
    }

    #[test]
    fn extract_single_block() {
        let img = BinaryImage::from_ascii(&[".....", ".###.", ".###.", ".###."]);
        let regions = extract_regions(&label_components(&img, Connectivity::Eight));
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].len(), 9);
        let b = regions[0].bbox();
        assert_eq!((b.width(), b.height()), (3, 3));
        assert_eq!((b.min_x, b.min_y), (1, 1));
    }

    #[test]
    fn region_rejects_disconnected_and_empty() {
        let pts = vec![Point::new(0, 0), Point::new(3, 0)];
        assert_eq!(Region::from_pixels(1, pts), Err(RasterError::DisconnectedRegion));
        assert_eq!(Region::from_pixels(1, vec![]), Err(RasterError::EmptyRegion));
        let r = Region::from_pixels(1, vec![Point::new(1, 1), Point::new(0, 0), Point::new(1, 1)]).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.contains(Point::new(0, 0)));
        assert!(!r.contains(Point::new(1, 0)));
    }

    #[test]
    fn decode_p1_example() {
        let img = decode_image(b"P1\n2 1\n1 0\n").unwrap();
        match img {
            DecodedImage::Binary(b) => {
                assert_eq!((b.width(), b.height()), (2, 1));
                assert_eq!(b.pixels(), &[true, false]);
            }
            _ => panic!("expected binary"),
        }
    }

    #[test]
    fn decode_p1_without_separators_and_with_comments() {
        let img = decode_image(b"P1 # comment\n# another\n3 2\n101\n010").unwrap();
        let DecodedImage::Binary(b) = img else { panic!() };
        assert_eq!(b.pixels(), &[true, false, true, false, true, false]);
    }

    #[test]
    fn p4_with_padding_matches_p1() {
        let rows = ["#.#.#.#.##", ".########.", "#........#"];
        let img = BinaryImage::from_ascii(&rows);
        let raw = encode_pbm(&img, PnmEncoding::Raw);
        // 10 columns pack into 2 bytes per row
        assert_eq!(raw.len(), "P4\n10 3\n".len() + 6);
        let ascii = encode_pbm(&img, PnmEncoding::Ascii);
        assert_eq!(decode_image(&raw).unwrap(), decode_image(&ascii).unwrap());
        assert_eq!(decode_image(&raw).unwrap(), DecodedImage::Binary(img));
    }

    #[test]
    fn p5_round_trip_payload() {
        let payload: Vec<u8> = (0..=255u8).collect();
        let mut bytes = b"P5\n# x\n16 16\n255\n".to_vec();
        bytes.extend_from_slice(&payload);
        let DecodedImage::Gray(g) = decode_image(&bytes).unwrap() else {
            panic!()
        };
        let out = encode_pgm(&g, PnmEncoding::Raw);
        assert_eq!(&out[out.len() - 256..], payload.as_slice());
        let DecodedImage::Gray(g2) = decode_image(&encode_pgm(&g, PnmEncoding::Ascii)).unwrap() else {
            panic!()
        };
        assert_eq!(g, g2);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let err = decode_image(b"P5\n4 4\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, RasterError::Parse { offset: 13, .. }), "{err:?}");
        let err = decode_image(b"P2\n2 x\n").unwrap_err();
        assert!(matches!(err, RasterError::Parse { offset: 5, .. }), "{err:?}");
        assert!(matches!(
            decode_image(b"P3\n1 1\n"),
            Err(RasterError::Parse { offset: 0, .. })
        ));
        assert!(matches!(decode_image(b"P2 1 1 999 3"), Err(RasterError::Parse { .. })));
        assert!(matches!(decode_image(b""), Err(RasterError::Parse { offset: 0, .. })));
    }

    #[test]
    fn label_map_export_limits() {
        let map = LabelMap::from_labels(2, 1, vec![0, 300]).unwrap();
        assert_eq!(
            encode_label_map(&map, PnmEncoding::Raw),
            Err(RasterError::TooManyLabels(300))
        );
        let map = LabelMap::from_labels(3, 1, vec![0, 1, 255]).unwrap();
        let bytes = encode_label_map(&map, PnmEncoding::Raw).unwrap();
        let DecodedImage::Gray(g) = decode_image(&bytes).unwrap() else {
            panic!()
        };
        assert_eq!(LabelMap::from_gray(&g), map);
    }
}
