//! Directories of numbered PNG frames.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::Video;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Read an 8-bit RGB PNG as an `[H, W, 3]` tensor with values `v / 255`.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let unsupported = |detail: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        detail,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| unsupported(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    if info.color_type != png::ColorType::Rgb {
        return Err(unsupported(format!("color type {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| unsupported("image too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| unsupported(e.to_string()))?;
    let bytes = &buf[..frame.buffer_size()];
    let data = bytes
        .chunks(frame.line_size)
        .take(h)
        .flat_map(|row| row[..w * 3].iter().map(|&b| b as Scalar / 255.0))
        .collect();
    Tensor::new(&[h, w, 3], data)
}

/// Write an `[H, W, 3]` frame as an 8-bit RGB PNG (values clamped, rounded).
pub fn write_png(frame: &Tensor, path: &Path) -> Result<()> {
    let [h, w, 3] = *frame.shape() else {
        return Err(Error::InvalidShape {
            op: "write_png",
            detail: format!("expected H x W x 3, got {:?}", frame.shape()),
        });
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let io_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut writer = enc.write_header().map_err(io_err)?;
    writer.write_image_data(&bytes).map_err(io_err)?;
    writer.finish().map_err(io_err)
}

pub fn frame_file_name(k: usize) -> String {
    format!("{k:05}.png")
}

pub(super) fn save_dir(video: &Video, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for k in 0..video.len() {
        write_png(&video.frame(k)?, &dir.join(frame_file_name(k)))?;
    }
    Ok(())
}

pub(super) fn load_dir(dir: &Path) -> Result<Video> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indexed: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let index: usize = stem
            .parse()
            .map_err(|_| Error::Format(format!("frame index `{stem}` too large")))?;
        indexed.push((index, path));
    }
    indexed.sort();
    if indexed.is_empty() {
        return Err(Error::MissingFrame {
            dir: dir.to_path_buf(),
            index: 0,
        });
    }
    for (expected, (index, path)) in indexed.iter().enumerate() {
        if *index != expected {
            if *index < expected {
                return Err(Error::Format(format!(
                    "duplicate frame index {index} ({})",
                    path.display()
                )));
            }
            return Err(Error::MissingFrame {
                dir: dir.to_path_buf(),
                index: expected,
            });
        }
    }
    let mut frames = Vec::with_capacity(indexed.len());
    for (_, path) in &indexed {
        let f = read_png(path)?;
        if let Some(first) = frames.first() {
            let first: &Tensor = first;
            if first.shape() != f.shape() {
                return Err(Error::InconsistentGeometry {
                    path: path.clone(),
                    expected: (first.shape()[0], first.shape()[1]),
                    found: (f.shape()[0], f.shape()[1]),
                });
            }
        }
        frames.push(f);
    }
    Video::from_frames(&frames)
}
