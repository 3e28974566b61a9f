//! Dataset handling: directory ingestion (PNG and binary PPM), bilinear
//! resizing to the fixed 48x48 input, seeded 80:10:10 splitting, the x4
//! rotation/shear/width-shift augmentation, a synthetic gaze-pattern
//! generator for desk-scale experiments, and per-class mean-image analysis.
//!
//! Two augmentation orders exist: the default augments the training split
//! only (leakage-safe); "paper-compat" augments everything before splitting,
//! matching datasets published in pre-augmented form.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 48;

/// Class labels, ordered alphabetically; ASD is index 0 and the positive
/// class for per-class reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Asd = 0,
    Td = 1,
}

pub const CLASS_NAMES: [&str; 2] = ["ASD", "TD"];

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Unassigned,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Augmented,
}

/// One labeled 48x48x3 image with values in [0, 1].
#[derive(Debug, Clone)]
pub struct Item {
    pub image: Tensor,
    pub label: Label,
    pub split: Split,
    pub provenance: Provenance,
}

/// Labeled image collection with split assignments and augmentation
/// provenance.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub items: Vec<Item>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn split_items(&self, split: Split) -> Vec<&Item> {
        self.items.iter().filter(|it| it.split == split).collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.items.iter().filter(|it| it.split == split).count()
    }

    pub fn class_len(&self, label: Label) -> usize {
        self.items.iter().filter(|it| it.label == label).count()
    }
}

// ---------------------------------------------------------------------------
// Image decoding
// ---------------------------------------------------------------------------

/// Read a binary PPM (P6) or PGM (P5) with maxval <= 255 into an HxWx3
/// tensor in [0, 1]; grayscale is replicated across channels.
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)
        .ok_or_else(|| Error::Data("ppm: missing magic".into()))?;
    let channels = match magic.as_slice() {
        b"P6" => 3usize,
        b"P5" => 1usize,
        _ => return Err(Error::Data("ppm: not a P5/P6 file".into())),
    };
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::Data("ppm: truncated header".into()))?;
        *d = std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data("ppm: bad header integer".into()))?;
    }
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if w == 0 || h == 0 {
        return Err(Error::Data("ppm: zero dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Data(format!("ppm: unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * channels;
    if pos + need > bytes.len() {
        return Err(Error::Data("ppm: truncated pixel data".into()));
    }
    let raster = &bytes[pos..pos + need];
    let mut img = Tensor::zeros(&[h, w, 3])?;
    let out = img.data_mut();
    for p in 0..w * h {
        for c in 0..3 {
            let v = raster[p * channels + c.min(channels - 1)] as f64 / maxval as f64;
            out[p * 3 + c] = v;
        }
    }
    Ok(img)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    // Skip whitespace and '#' comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(bytes[start..*pos].to_vec())
}

/// Write an HxWx3 tensor in [0, 1] as a binary PPM (P6, maxval 255).
pub fn write_ppm_p6(img: &Tensor, path: &Path) -> Result<()> {
    if img.rank() != 3 || img.shape()[2] != 3 {
        return Err(Error::Shape(format!("write_ppm_p6 expects HxWx3, got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    buf.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

/// Write 8-bit grayscale pixels as a binary PGM (P5, maxval 255).
pub fn write_ppm_p5(width: usize, height: usize, pixels: &[u8], path: &Path) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "write_ppm_p5: {} pixels do not form {width}x{height}",
            pixels.len()
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    fs::write(path, buf)?;
    Ok(())
}

/// Decode one image file (PNG via the `image` crate, PPM/PGM natively) into
/// an HxWx3 tensor in [0, 1]. RGBA drops alpha; grayscale is replicated.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" | "pgm" => read_ppm(&fs::read(path)?),
        "png" => {
            let img = image::open(path)
                .map_err(|e| Error::Data(format!("png decode failed: {e}")))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data: Vec<f64> = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
            Tensor::from_vec(&[h, w, 3], data)
        }
        other => Err(Error::Data(format!("unsupported image extension {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// A loaded (unsplit) dataset plus any files that had to be skipped.
#[derive(Debug)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Load `root/ASD` and `root/TD`, resizing and normalizing every decodable
/// PNG/PPM in deterministic (lexicographic) order. Undecodable files are
/// skipped with a warning entry; a class that ends up empty is an error.
pub fn load_directory(root: &Path) -> Result<LoadOutcome> {
    load_directories(std::slice::from_ref(&root.to_path_buf()))
}

/// Load and concatenate several dataset roots.
pub fn load_directories(roots: &[PathBuf]) -> Result<LoadOutcome> {
    let mut dataset = Dataset::default();
    let mut skipped = Vec::new();
    for root in roots {
        for (name, label) in [("ASD", Label::Asd), ("TD", Label::Td)] {
            let dir = root.join(name);
            if !dir.is_dir() {
                return Err(Error::Data(format!(
                    "missing class directory {}",
                    dir.display()
                )));
            }
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| {
                            let e = e.to_ascii_lowercase();
                            e == "png" || e == "ppm" || e == "pgm"
                        })
                        .unwrap_or(false)
                })
                .collect();
            paths.sort();
            let before = dataset.len();
            for path in paths {
                match decode_image(&path).and_then(|img| resize_bilinear(&img, IMAGE_SIZE, IMAGE_SIZE))
                {
                    Ok(image) => dataset.items.push(Item {
                        image,
                        label,
                        split: Split::Unassigned,
                        provenance: Provenance::Original,
                    }),
                    Err(e) => skipped.push((path, e.to_string())),
                }
            }
            if dataset.len() == before {
                return Err(Error::Data(format!(
                    "class {name} is empty under {}",
                    root.display()
                )));
            }
        }
    }
    Ok(LoadOutcome { dataset, skipped })
}

// ---------------------------------------------------------------------------
// Resizing
// ---------------------------------------------------------------------------

/// Corner-aligned bilinear resize of an HxWxC image.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if img.rank() != 3 {
        return Err(Error::Shape(format!("resize expects HxWxC, got {:?}", img.shape())));
    }
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize target must be positive".into()));
    }
    let src_coord = |i: usize, out: usize, inp: usize| -> f64 {
        if out == 1 {
            (inp - 1) as f64 / 2.0
        } else {
            i as f64 * (inp - 1) as f64 / (out - 1) as f64
        }
    };
    let mut out = Tensor::zeros(&[out_h, out_w, c])?;
    for i in 0..out_h {
        let sy = src_coord(i, out_h, h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for j in 0..out_w {
            let sx = src_coord(j, out_w, w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for k in 0..c {
                let v00 = img.data()[(y0 * w + x0) * c + k];
                let v01 = img.data()[(y0 * w + x1) * c + k];
                let v10 = img.data()[(y1 * w + x0) * c + k];
                let v11 = img.data()[(y1 * w + x1) * c + k];
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out.data_mut()[(i * out_w + j) * c + k] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Seeded random 80:10:10 split: val = test = floor(N/10), train = rest.
/// No stratification.
pub fn split_dataset(ds: &mut Dataset, seed: u64) -> Result<()> {
    let n = ds.len();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 items to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut order);
    let n_val = n / 10;
    let n_test = n / 10;
    for (pos, &idx) in order.iter().enumerate() {
        ds.items[idx].split = if pos < n_val {
            Split::Val
        } else if pos < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Augmentation ranges; `copies = 3` turns the dataset 4x larger.
#[derive(Debug, Clone, Copy)]
pub struct AugmentSpec {
    pub rotation_max_deg: f64,
    pub shear_max: f64,
    pub width_shift_max_frac: f64,
    pub copies: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation_max_deg: 20.0,
            shear_max: 0.2,
            width_shift_max_frac: 0.1,
            copies: 3,
        }
    }
}

fn bilinear_sample_zero(img: &Tensor, y: f64, x: f64, c: usize) -> f64 {
    let (h, w, ch) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let yy = y0 + dy;
            let xx = x0 + dx;
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w && wy * wx != 0.0 {
                acc += wy * wx * img.data()[((yy as usize) * w + xx as usize) * ch + c];
            }
        }
    }
    acc
}

/// Rotation about the image center, horizontal shear, and horizontal shift,
/// resampled bilinearly with zero fill outside the source.
pub fn warp_affine(img: &Tensor, rot_deg: f64, shear: f64, shift_px: f64) -> Result<Tensor> {
    if img.rank() != 3 {
        return Err(Error::Shape(format!("warp expects HxWxC, got {:?}", img.shape())));
    }
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let theta = rot_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut out = img.zeros_like();
    for yo in 0..h {
        for xo in 0..w {
            // Inverse map: undo shift, rotation, then shear.
            let xc = xo as f64 - cx - shift_px;
            let yc = yo as f64 - cy;
            let xr = cos * xc + sin * yc;
            let yr = -sin * xc + cos * yc;
            let xs = xr - shear * yr;
            let ys = yr;
            let sx = xs + cx;
            let sy = ys + cy;
            for k in 0..c {
                out.data_mut()[(yo * w + xo) * c + k] = bilinear_sample_zero(img, sy, sx, k);
            }
        }
    }
    Ok(out)
}

fn augment_items(ds: &mut Dataset, indices: &[usize], spec: &AugmentSpec, rng: &mut Rng) -> Result<()> {
    for &i in indices {
        for _ in 0..spec.copies {
            let rot = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg);
            let shear = rng.uniform(-spec.shear_max, spec.shear_max);
            let shift_frac = rng.uniform(-spec.width_shift_max_frac, spec.width_shift_max_frac);
            let src = &ds.items[i];
            let shift_px = shift_frac * src.image.shape()[1] as f64;
            let image = warp_affine(&src.image, rot, shear, shift_px)?;
            ds.items.push(Item {
                image,
                label: src.label,
                split: src.split,
                provenance: Provenance::Augmented,
            });
        }
    }
    Ok(())
}

/// Default augmentation: expand the training split only (val/test untouched).
pub fn augment_dataset(ds: &mut Dataset, spec: &AugmentSpec, rng: &mut Rng) -> Result<()> {
    let train: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.items[i].split == Split::Train)
        .collect();
    augment_items(ds, &train, spec, rng)
}

/// Paper-compat augmentation: expand every item before any split is
/// assigned, the way the source datasets were published.
pub fn augment_dataset_all(ds: &mut Dataset, spec: &AugmentSpec, rng: &mut Rng) -> Result<()> {
    let all: Vec<usize> = (0..ds.len()).collect();
    augment_items(ds, &all, spec, rng)
}

/// How an experiment expands its data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// No augmentation, split only.
    Off,
    /// Split first, then augment the training split (leakage-safe default).
    On,
    /// Augment everything first, then split, matching datasets that were
    /// published pre-augmented.
    PaperCompat,
}

/// The standard experiment pipeline over an unsplit dataset: split and
/// augment according to `mode`, with all randomness derived from
/// `master_seed`'s split/augment streams.
pub fn prepare_dataset(
    mut ds: Dataset,
    mode: AugmentMode,
    spec: &AugmentSpec,
    master_seed: u64,
) -> Result<Dataset> {
    let split_seed = Rng::with_stream(master_seed, crate::rng::streams::SPLIT).next_u64();
    let mut aug_rng = Rng::with_stream(master_seed, crate::rng::streams::AUGMENT);
    match mode {
        AugmentMode::Off => split_dataset(&mut ds, split_seed)?,
        AugmentMode::On => {
            split_dataset(&mut ds, split_seed)?;
            augment_dataset(&mut ds, spec, &mut aug_rng)?;
        }
        AugmentMode::PaperCompat => {
            augment_dataset_all(&mut ds, spec, &mut aug_rng)?;
            split_dataset(&mut ds, split_seed)?;
        }
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Synthetic gaze-pattern generator: TD images get a single centered blob
/// (concentrated fixation), ASD images get several dispersed blobs joined by
/// faint trace lines (broad scan). Only the spatial statistics matter.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub per_class: usize,
    pub size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            per_class: 250,
            size: IMAGE_SIZE,
        }
    }
}

fn add_blob(gray: &mut [f64], size: usize, cx: f64, cy: f64, sigma: f64, amp: f64) {
    let two_s2 = 2.0 * sigma * sigma;
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            gray[y * size + x] += amp * (-d2 / two_s2).exp();
        }
    }
}

fn add_segment(gray: &mut [f64], size: usize, a: (f64, f64), b: (f64, f64), amp: f64, sigma: f64) {
    let (ax, ay) = a;
    let (bx, by) = b;
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    let two_s2 = 2.0 * sigma * sigma;
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64, y as f64);
            let t = if len2 == 0.0 {
                0.0
            } else {
                ((px - ax) * dx + (py - ay) * dy) / len2
            }
            .clamp(0.0, 1.0);
            let d2 = (px - (ax + t * dx)).powi(2) + (py - (ay + t * dy)).powi(2);
            let v = amp * (-d2 / two_s2).exp();
            let cell = &mut gray[y * size + x];
            if v > *cell {
                // Ridge profile: overlapping splats take the max, not the sum.
                *cell = v;
            }
        }
    }
}

fn gray_to_item(gray: Vec<f64>, size: usize, label: Label) -> Item {
    let mut data = Vec::with_capacity(size * size * 3);
    for v in gray {
        let v = v.clamp(0.0, 1.0);
        data.extend_from_slice(&[v, v, v]);
    }
    Item {
        image: Tensor::from_vec(&[size, size, 3], data).expect("synthetic shape"),
        label,
        split: Split::Unassigned,
        provenance: Provenance::Original,
    }
}

/// Deterministic synthetic dataset, `per_class` images per class, unsplit.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Dataset {
    let size = spec.size;
    let mut items = Vec::with_capacity(spec.per_class * 2);
    let center = (size - 1) as f64 / 2.0;
    let margin = 5.0;
    for _ in 0..spec.per_class {
        // ASD: 4..=7 blobs spread over the frame, joined by trace lines.
        let mut gray = vec![0.0; size * size];
        let nblobs = 4 + rng.below(4);
        let mut centers = Vec::with_capacity(nblobs);
        for _ in 0..nblobs {
            let cx = rng.uniform(margin, size as f64 - 1.0 - margin);
            let cy = rng.uniform(margin, size as f64 - 1.0 - margin);
            let sigma = rng.uniform(2.0, 4.0);
            let amp = rng.uniform(0.55, 0.95);
            add_blob(&mut gray, size, cx, cy, sigma, amp);
            centers.push((cx, cy));
        }
        let mut trace = vec![0.0; size * size];
        for pair in centers.windows(2) {
            add_segment(&mut trace, size, pair[0], pair[1], 0.45, 1.0);
        }
        for (g, t) in gray.iter_mut().zip(&trace) {
            *g += t;
        }
        items.push(gray_to_item(gray, size, Label::Asd));
    }
    for _ in 0..spec.per_class {
        // TD: one blob near the center.
        let mut gray = vec![0.0; size * size];
        let cx = center + rng.uniform(-4.0, 4.0);
        let cy = center + rng.uniform(-4.0, 4.0);
        let sigma = rng.uniform(2.0, 4.0);
        let amp = rng.uniform(0.85, 1.0);
        add_blob(&mut gray, size, cx, cy, sigma, amp);
        items.push(gray_to_item(gray, size, Label::Td));
    }
    Dataset { items }
}

/// Write a dataset to `root/ASD` and `root/TD` as PPM (P6, maxval 255).
pub fn export_ppm_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let mut counters = [0usize; 2];
    for name in CLASS_NAMES {
        fs::create_dir_all(root.join(name))?;
    }
    for item in &ds.items {
        let k = item.label.index();
        let path = root
            .join(item.label.name())
            .join(format!("img_{:04}.ppm", counters[k]));
        write_ppm_p6(&item.image, &path)?;
        counters[k] += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mean-image analysis
// ---------------------------------------------------------------------------

/// Per-class pixel-wise means and their intensity dispersions.
pub struct ClassMeans {
    pub mean_asd: Tensor,
    pub mean_td: Tensor,
    pub dispersion_asd: f64,
    pub dispersion_td: f64,
}

fn mean_image(ds: &Dataset, label: Label) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    let mut count = 0usize;
    for item in ds.items.iter().filter(|it| it.label == label) {
        match &mut acc {
            None => acc = Some(item.image.clone()),
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(item.image.data()) {
                    *a += b;
                }
            }
        }
        count += 1;
    }
    let mut mean = acc.ok_or_else(|| Error::Data(format!("class {} is empty", label.name())))?;
    for v in mean.data_mut() {
        *v /= count as f64;
    }
    Ok(mean)
}

/// Intensity-weighted mean squared distance from the intensity centroid of
/// an HxWxC image (channels averaged to gray).
pub fn intensity_dispersion(img: &Tensor) -> f64 {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let gray = |y: usize, x: usize| -> f64 {
        (0..c).map(|k| img.data()[(y * w + x) * c + k]).sum::<f64>() / c as f64
    };
    let mut total = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let g = gray(y, x);
            total += g;
            cx += g * x as f64;
            cy += g * y as f64;
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    cx /= total;
    cy /= total;
    let mut disp = 0.0;
    for y in 0..h {
        for x in 0..w {
            let g = gray(y, x);
            disp += g * ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2));
        }
    }
    disp / total
}

/// Per-class mean images and dispersions over every item of each class.
pub fn class_mean_images(ds: &Dataset) -> Result<ClassMeans> {
    let mean_asd = mean_image(ds, Label::Asd)?;
    let mean_td = mean_image(ds, Label::Td)?;
    let dispersion_asd = intensity_dispersion(&mean_asd);
    let dispersion_td = intensity_dispersion(&mean_td);
    Ok(ClassMeans {
        mean_asd,
        mean_td,
        dispersion_asd,
        dispersion_td,
    })
}
