use srl_core::env::Observation;

/// Encodes an RGB observation as PNG.
pub fn to_png(obs: &Observation) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, obs.width as u32, obs.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(&obs.data).expect("png data");
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error(transparent)]
    Decode(#[from] png::DecodingError),
    #[error("expected 8-bit RGB, found {0:?} at {1:?}")]
    Unsupported(png::ColorType, png::BitDepth),
}

/// Decodes an 8-bit RGB PNG.
pub fn from_png(bytes: &[u8]) -> Result<Observation, ImageError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Unsupported(info.color_type, info.bit_depth));
    }
    Ok(Observation::from_raw(info.width as usize, info.height as usize, buf).expect("size matches header"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use srl_core::raster::Color;

    #[test]
    fn png_round_trip_is_lossless() {
        let mut obs = Observation::filled(5, 3, Color(10, 20, 30));
        obs.data[7] = 255;
        let back = from_png(&to_png(&obs)).unwrap();
        assert_eq!(back, obs);
    }
}
