//! Least-significant-bit replacement: the secret's high nibble goes into the
//! cover's low nibble.

use crate::error::{Error, Result};
use crate::pyramid::ImageU8;

/// Low-nibble value written back on extraction.
pub const NIBBLE_FILL: u8 = 0x08;

#[inline]
pub fn lsb_hide_byte(cover: u8, secret: u8) -> u8 {
    (cover & 0xF0) | (secret >> 4)
}

#[inline]
pub fn lsb_extract_byte(stego: u8) -> u8 {
    ((stego & 0x0F) << 4) | NIBBLE_FILL
}

pub fn lsb_hide(cover: &ImageU8, secret: &ImageU8) -> Result<ImageU8> {
    if cover.dims() != secret.dims() {
        return Err(Error::dims(format!(
            "cover is {:?} but secret is {:?}",
            cover.dims(),
            secret.dims()
        )));
    }
    let data = cover
        .data()
        .iter()
        .zip(secret.data())
        .map(|(&c, &s)| lsb_hide_byte(c, s))
        .collect();
    ImageU8::new(cover.height(), cover.width(), data)
}

pub fn lsb_extract(stego: &ImageU8) -> ImageU8 {
    let data = stego.data().iter().map(|&x| lsb_extract_byte(x)).collect();
    ImageU8::new(stego.height(), stego.width(), data).expect("same dims")
}
