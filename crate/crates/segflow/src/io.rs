//! PNG frames and masks, the on-disk dataset layout and checkpoint files.
//!
//! ```text
//! <root>/videos/<id>/frames/00000.png   RGB frames
//! <root>/videos/<id>/masks/00000.png    8-bit grayscale, 0 background, 255 object (optional)
//! <root>/videos/<id>/meta               key=value lines
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use segflow_core::checkpoint;
use segflow_core::data::{BinaryMask, Image, Video, VideoDataset};
use segflow_core::metrics::SaliencyMap;
use segflow_core::pathways::{ModelConfig, ModelState};
use segflow_core::Tensor;

use crate::error::{CliError, Result};

const FRAME_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_to_rgb(image: &Image) -> Result<RgbImage> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(CliError::Usage(format!("expected a 3-channel image, got {c}")));
    }
    let d = image.data();
    let plane = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        image::Rgb([to_u8(d[p]), to_u8(d[plane + p]), to_u8(d[2 * plane + p])])
    }))
}

pub fn rgb_to_image(rgb: &RgbImage) -> Image {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        rgb.get_pixel((p % w) as u32, (p / w) as u32)[c] as f32 / 255.0
    })
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    img(path).map_err(|source| CliError::Image { path: path.to_path_buf(), source })
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let rgb = image_to_rgb(image)?;
    save(|p| rgb.save(p), path)
}

/// Reads any decodable image as RGB in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| CliError::Image { path: path.to_path_buf(), source })?;
    Ok(rgb_to_image(&img.to_rgb8()))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    save(|p| gray.save(p), path)
}

/// Any nonzero pixel counts as object, so palette annotations load too.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|source| CliError::Image { path: path.to_path_buf(), source })?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(BinaryMask::from_fn(h, w, |y, x| gray.get_pixel(x as u32, y as u32)[0] != 0))
}

pub fn write_saliency(path: &Path, map: &SaliencyMap) -> Result<()> {
    let w = map.width();
    let s = map.scores();
    let gray = GrayImage::from_fn(w as u32, map.height() as u32, |x, y| {
        image::Luma([to_u8(s[y as usize * w + x as usize] as f32)])
    });
    save(|p| gray.save(p), path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

pub fn frame_name(t: usize) -> String {
    format!("{t:05}.png")
}

pub fn write_video(dir: &Path, video: &Video) -> Result<()> {
    let frames = dir.join("frames");
    create_dir(&frames)?;
    for (t, f) in video.frames.iter().enumerate() {
        write_image(&frames.join(frame_name(t)), f)?;
    }
    if let Some(masks) = &video.gt_masks {
        let mdir = dir.join("masks");
        create_dir(&mdir)?;
        for (t, m) in masks.iter().enumerate() {
            write_mask(&mdir.join(frame_name(t)), m)?;
        }
    }
    let meta: String = video.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_text(&dir.join("meta"), &meta)
}

pub fn write_dataset(root: &Path, dataset: &VideoDataset) -> Result<()> {
    let videos = root.join("videos");
    create_dir(&videos)?;
    for v in &dataset.videos {
        v.validate()?;
        write_video(&videos.join(&v.id), v)?;
    }
    Ok(())
}

/// Sorted entries of `dir` accepted by `keep`.
fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        if keep(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn parse_kv_lines(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::format(path, format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_video(dir: &Path) -> Result<Video> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::format(dir, "video directory name is not valid UTF-8"))?
        .to_string();
    let fdir = dir.join("frames");
    if !fdir.is_dir() {
        return Err(CliError::format(&fdir, "missing frames directory"));
    }
    let frame_paths = sorted_entries(&fdir, is_image_file)?;
    let frames = frame_paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    let mdir = dir.join("masks");
    let gt_masks = if mdir.is_dir() {
        let mask_paths = sorted_entries(&mdir, is_image_file)?;
        if mask_paths.len() != frames.len() {
            return Err(CliError::format(
                &mdir,
                format!("{} masks for {} frames", mask_paths.len(), frames.len()),
            ));
        }
        Some(mask_paths.iter().map(|p| read_mask(p)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let mpath = dir.join("meta");
    let meta = if mpath.is_file() {
        parse_kv_lines(&mpath, &read_text(&mpath)?)?
    } else {
        Vec::new()
    };
    let video = Video { id, frames, gt_masks, meta };
    video.validate().map_err(|e| CliError::format(dir, e.to_string()))?;
    Ok(video)
}

pub fn read_dataset(root: &Path) -> Result<VideoDataset> {
    let videos = root.join("videos");
    if !videos.is_dir() {
        return Err(CliError::format(&videos, "missing videos directory"));
    }
    let dirs = sorted_entries(&videos, |p| p.is_dir())?;
    if dirs.is_empty() {
        return Err(CliError::format(&videos, "no video directories"));
    }
    let list = dirs.iter().map(|d| read_video(d)).collect::<Result<Vec<_>>>()?;
    Ok(VideoDataset::new(list)?)
}

pub fn write_checkpoint(path: &Path, state: &ModelState<f32>) -> Result<()> {
    fs::write(path, checkpoint::encode(state)).map_err(CliError::io(path))
}

pub fn read_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<ModelState<f32>> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    checkpoint::decode(&bytes, expected).map_err(|e| CliError::format(path, e.to_string()))
}
