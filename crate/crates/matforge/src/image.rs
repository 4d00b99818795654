//! PNG encoding of 8-bit sRGB rasters.

use std::io::Cursor;

use matforge_core::Srgb8Image;

#[derive(Debug, thiserror::Error)]
pub enum PngError {
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Layout(String),
}

/// RGB, 8 bits per channel, non-interlaced.
pub fn encode_png(image: &Srgb8Image) -> Result<Vec<u8>, PngError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&image.data)?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG as produced by [`encode_png`].
pub fn decode_png(bytes: &[u8]) -> Result<Srgb8Image, PngError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| PngError::Layout("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(PngError::Layout(format!(
            "{:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok(Srgb8Image {
        width: info.width as usize,
        height: info.height as usize,
        data: buf,
    })
}
