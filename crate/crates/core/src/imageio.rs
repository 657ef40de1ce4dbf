//! PNG input/output for [`ImageU8`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::pyramid::ImageU8;

const LOSSY_EXTENSIONS: &[&str] = &["jpg", "jpeg", "webp", "avif", "heic", "jxl"];

/// True when the path's extension names a lossy format.
pub fn is_lossy_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| LOSSY_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn require_png(path: &Path) -> Result<()> {
    if is_lossy_path(path) {
        return Err(Error::invalid(format!(
            "{} uses a lossy format; only PNG is supported",
            path.display()
        )));
    }
    Ok(())
}

/// Reads any PNG and converts it to 8-bit RGB.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    require_png(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| match e {
        Error::Image(msg) => Error::Image(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageU8> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    ImageU8::new(h as usize, w as usize, img.into_raw())
}

pub fn encode_png(img: &ImageU8) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::Image("buffer size mismatch".into()))?
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes `img` as PNG. Lossy extensions are rejected.
pub fn save_png(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    let path = path.as_ref();
    require_png(path)?;
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
