use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, ImageBuffer, Luma, Rgb as RgbPixel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::color::{colorize, sample_biased_color, ColorMode, ColorizeConfig};
use super::WorldError;
use crate::autodiff::Tensor;

/// Side length of every image written by the dataset pipeline.
pub const IMAGE_SIDE: u32 = 32;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Row-major intensities in `[0, 1]`; RGB is interleaved.
#[derive(Clone, Debug, PartialEq)]
pub enum Pixels {
    Gray(Vec<f64>),
    Rgb(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Pixels,
    pub label: usize,
    /// 1 for colored digits, 2 for colored backgrounds; `None` for sources.
    pub domain: Option<usize>,
}

impl LabeledImage {
    pub fn gray(width: u32, height: u32, values: Vec<f64>, label: usize) -> Self {
        Self {
            width,
            height,
            pixels: Pixels::Gray(values),
            label,
            domain: None,
        }
    }
}

/// Where grayscale source digits come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    /// One subdirectory per label (`0/`, `1/`, ...) holding PNG files.
    PngDir(PathBuf),
}

impl ImageSource {
    pub fn load(&self) -> Result<Vec<LabeledImage>, WorldError> {
        match self {
            ImageSource::Idx { images, labels } => {
                let mut imgs = read_idx_images(images)?;
                let labs = read_idx_labels(labels)?;
                if labs.len() != imgs.len() {
                    return Err(WorldError::Ingest {
                        path: labels.clone(),
                        offset: 4,
                        message: format!("{} labels for {} images", labs.len(), imgs.len()),
                    });
                }
                for (img, l) in imgs.iter_mut().zip(labs) {
                    img.label = l as usize;
                }
                Ok(imgs)
            }
            ImageSource::PngDir(dir) => read_png_dir(dir),
        }
    }
}

/// One row of the dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub filename: String,
    pub label: usize,
    pub domain: usize,
    pub color_index: usize,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, WorldError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| WorldError::Ingest {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>), WorldError> {
    let bytes = fs::read(path).map_err(|e| WorldError::io(path, e))?;
    let found = read_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(WorldError::Ingest {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| read_u32(&bytes, 4 + 4 * i, path).map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let body = bytes
        .get(start..start + len)
        .ok_or_else(|| WorldError::Ingest {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            message: format!("data ends early; {len} bytes declared from offset {start}"),
        })?;
    Ok((dims, body.to_vec()))
}

/// Unsigned-byte image tensor `[n, rows, cols]`; labels are left at 0.
pub fn read_idx_images(path: &Path) -> Result<Vec<LabeledImage>, WorldError> {
    let (dims, body) = read_idx(path, IDX_IMAGES)?;
    let (rows, cols) = (dims[1], dims[2]);
    Ok(body
        .chunks_exact(rows * cols)
        .map(|px| {
            LabeledImage::gray(
                cols as u32,
                rows as u32,
                px.iter().map(|&v| v as f64 / 255.0).collect(),
                0,
            )
        })
        .collect())
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, WorldError> {
    let (_, body) = read_idx(path, IDX_LABELS)?;
    if let Some(i) = body.iter().position(|&l| l > 9) {
        return Err(WorldError::Ingest {
            path: path.to_path_buf(),
            offset: 8 + i as u64,
            message: format!("label {} is not a digit", body[i]),
        });
    }
    Ok(body)
}

/// PNG files under `dir/<label>/`, in label then filename order.
pub fn read_png_dir(dir: &Path) -> Result<Vec<LabeledImage>, WorldError> {
    let mut out = Vec::new();
    for label in 0..10 {
        let sub = dir.join(label.to_string());
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| WorldError::io(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in files {
            let img = image::open(&f)
                .map_err(|e| WorldError::Ingest {
                    path: f.clone(),
                    offset: 0,
                    message: e.to_string(),
                })?
                .to_luma8();
            let (w, h) = img.dimensions();
            let values = img
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 255.0)
                .collect();
            out.push(LabeledImage::gray(w, h, values, label));
        }
    }
    if out.is_empty() {
        return Err(WorldError::Ingest {
            path: dir.to_path_buf(),
            offset: 0,
            message: "no PNG files under label subdirectories 0..9".into(),
        });
    }
    Ok(out)
}

/// Resamples a grayscale image to `side × side` with a triangle filter.
pub fn resize_to(img: &LabeledImage, side: u32) -> LabeledImage {
    let Pixels::Gray(values) = &img.pixels else {
        return img.clone();
    };
    if img.width == side && img.height == side {
        return img.clone();
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
        img.width,
        img.height,
        values.iter().map(|&v| v as f32).collect(),
    )
    .expect("sized");
    let out = image::imageops::resize(&buf, side, side, FilterType::Triangle);
    LabeledImage {
        width: side,
        height: side,
        pixels: Pixels::Gray(
            out.into_raw()
                .into_iter()
                .map(|v| (v as f64).clamp(0.0, 1.0))
                .collect(),
        ),
        label: img.label,
        domain: img.domain,
    }
}

fn to_png(img: &LabeledImage) -> image::RgbImage {
    match &img.pixels {
        Pixels::Rgb(v) => ImageBuffer::<RgbPixel<u8>, _>::from_raw(
            img.width,
            img.height,
            v.iter().map(|x| (x * 255.0).round() as u8).collect(),
        )
        .expect("sized"),
        Pixels::Gray(v) => {
            let g = GrayImage::from_raw(
                img.width,
                img.height,
                v.iter().map(|x| (x * 255.0).round() as u8).collect(),
            )
            .expect("sized");
            image::DynamicImage::ImageLuma8(g).to_rgb8()
        }
    }
}

/// Writes `out_dir/domain1/*.png` (colored digits), `out_dir/domain2/*.png`
/// (colored backgrounds) and `out_dir/manifest.csv`. Each source image gets
/// its own RNG stream `(seed, index)`, so output does not depend on order
/// of processing.
pub fn build_two_domain_set(
    source: &ImageSource,
    cfg: &ColorizeConfig,
    out_dir: &Path,
    limit: Option<usize>,
) -> Result<Vec<ManifestRecord>, WorldError> {
    cfg.validate()?;
    let mut images = source.load()?;
    if let Some(n) = limit {
        images.truncate(n);
    }
    for sub in ["domain1", "domain2"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| WorldError::io(&p, e))?;
    }
    let mut records = Vec::with_capacity(2 * images.len());
    for (i, img) in images.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let base = resize_to(img, IMAGE_SIDE);
        let digit = sample_biased_color(
            img.label,
            &cfg.digit_pool,
            cfg.p_digit,
            cfg.removal_width,
            &mut rng,
        );
        let bg = sample_biased_color(
            img.label,
            &cfg.bg_pool,
            cfg.p_bg,
            cfg.removal_width,
            &mut rng,
        );
        for (domain, mode, index, color) in [
            (1, ColorMode::Digit, digit, cfg.digit_pool[digit]),
            (2, ColorMode::Background, bg, cfg.bg_pool[bg]),
        ] {
            let mut out = colorize(&base, mode, color);
            out.domain = Some(domain);
            let filename = format!("domain{domain}/{i:06}.png");
            let path = out_dir.join(&filename);
            to_png(&out).save(&path)?;
            records.push(ManifestRecord {
                filename,
                label: img.label,
                domain,
                color_index: index,
            });
        }
    }
    records.sort_by_key(|r| (r.domain, r.filename.clone()));
    let manifest = out_dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    for r in &records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| WorldError::io(&manifest, e))?;
    Ok(records)
}

/// One domain of a built dataset, flattened to `[n, H·W·3]` and mapped from
/// `[0, 1]` to `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub domain: usize,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub colors: Vec<usize>,
}

/// Reads a directory written by [`build_two_domain_set`].
pub fn load_two_domain_set(dir: &Path) -> Result<Vec<DomainData>, WorldError> {
    let manifest = dir.join("manifest.csv");
    let mut reader = csv::Reader::from_path(&manifest)?;
    let mut by_domain: Vec<(Vec<f64>, Vec<usize>, Vec<usize>, usize)> =
        vec![(vec![], vec![], vec![], 0); 2];
    let mut width = None;
    for rec in reader.deserialize() {
        let rec: ManifestRecord = rec?;
        if !(1..=2).contains(&rec.domain) {
            return Err(WorldError::Invalid(format!(
                "manifest domain {} is not 1 or 2",
                rec.domain
            )));
        }
        let path = dir.join(&rec.filename);
        let img = image::open(&path)
            .map_err(|e| WorldError::Ingest {
                path: path.clone(),
                offset: 0,
                message: e.to_string(),
            })?
            .to_rgb8();
        let raw = img.into_raw();
        if *width.get_or_insert(raw.len()) != raw.len() {
            return Err(WorldError::Invalid(format!(
                "{} has a different size",
                rec.filename
            )));
        }
        let slot = &mut by_domain[rec.domain - 1];
        slot.0.extend(raw.iter().map(|&v| v as f64 / 127.5 - 1.0));
        slot.1.push(rec.label);
        slot.2.push(rec.color_index);
        slot.3 += 1;
    }
    let cols = width.unwrap_or(0);
    by_domain
        .into_iter()
        .enumerate()
        .map(|(k, (data, labels, colors, n))| {
            Ok(DomainData {
                domain: k + 1,
                x: Tensor::matrix(n, cols, data)?,
                labels,
                colors,
            })
        })
        .collect()
}
