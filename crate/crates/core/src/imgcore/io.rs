//! 8-bit grayscale PNG / binary PGM frame I/O and numbered frame directories.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use super::{Frame, FrameSequence, ImageError, MAX_INTENSITY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    Png,
    Pgm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Pgm => "pgm",
        }
    }

    fn image_format(self) -> ImageFormat {
        match self {
            Self::Png => ImageFormat::Png,
            Self::Pgm => ImageFormat::Pnm,
        }
    }
}

fn codec(path: &Path, source: image::ImageError) -> ImageError {
    ImageError::Codec {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads any PNG/PGM as 8-bit grayscale.
pub fn load_frame(path: &Path) -> Result<Frame, ImageError> {
    let img = image::open(path).map_err(|e| codec(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(f64::from).collect();
    Frame::new(w as usize, h as usize, pixels)
}

/// Quantizes to u8 (round half away from zero, clamp) and writes PNG or P5.
pub fn save_frame(frame: &Frame, path: &Path, format: FrameFormat) -> Result<(), ImageError> {
    let raw: Vec<u8> = frame
        .pixels()
        .iter()
        .map(|v| v.clamp(0.0, MAX_INTENSITY).round() as u8)
        .collect();
    let img: GrayImage =
        image::ImageBuffer::<Luma<u8>, _>::from_raw(frame.width() as u32, frame.height() as u32, raw)
            .expect("buffer length matches frame dimensions");
    match format {
        FrameFormat::Png => img
            .save_with_format(path, format.image_format())
            .map_err(|e| codec(path, e)),
        FrameFormat::Pgm => {
            // image's PNM encoder would choose a subtype from the extension; write P5 directly
            let mut bytes = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
            bytes.extend_from_slice(img.as_raw());
            fs::write(path, bytes).map_err(|e| io_err(path, e))
        }
    }
}

/// Sorted `frame_NNNNNN.{png,pgm}` files in a directory.
pub fn list_sequence_files(dir: &Path) -> Result<Vec<PathBuf>, ImageError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| is_frame_file(p))
        .collect();
    files.sort();
    Ok(files)
}

fn is_frame_file(p: &Path) -> bool {
    let ext_ok = matches!(
        p.extension().and_then(|e| e.to_str()),
        Some("png") | Some("pgm")
    );
    let stem_ok = p
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("frame_"))
        .is_some_and(|digits| digits.len() >= 6 && digits.bytes().all(|b| b.is_ascii_digit()));
    ext_ok && stem_ok
}

pub fn read_sequence(dir: &Path, fps: f64) -> Result<FrameSequence, ImageError> {
    let files = list_sequence_files(dir)?;
    if files.is_empty() {
        return Err(ImageError::NoFrames(dir.display().to_string()));
    }
    let frames = files
        .iter()
        .map(|p| load_frame(p))
        .collect::<Result<Vec<_>, _>>()?;
    FrameSequence::from_frames(frames, fps)
}

pub fn frame_file_name(index: usize, format: FrameFormat) -> String {
    format!("frame_{index:06}.{}", format.extension())
}

/// Writes `frame_000000.<ext>` ... into `dir`, creating it if needed.
pub fn write_sequence(
    seq: &FrameSequence,
    dir: &Path,
    format: FrameFormat,
) -> Result<Vec<PathBuf>, ImageError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    seq.frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_file_name(i, format));
            save_frame(f, &path, format).map(|_| path)
        })
        .collect()
}
