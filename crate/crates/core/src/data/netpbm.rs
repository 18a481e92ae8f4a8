//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::io::Cursor;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder};

/// Interleaved 8-bit raster as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channels interleaved per pixel.
    pub data: Vec<u8>,
}

pub fn decode(bytes: &[u8]) -> Result<Raster, String> {
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
    let channels = match decoder.subtype() {
        PnmSubtype::Graymap(SampleEncoding::Binary) => 1,
        PnmSubtype::Pixmap(SampleEncoding::Binary) => 3,
        other => return Err(format!("unsupported netpbm type {:?}", other.magic_constant())),
    };
    let maxval = decoder.header().maximal_sample();
    if maxval != 255 {
        return Err(format!("maxval {maxval} is not supported (expected 255)"));
    }
    let (w, h) = decoder.dimensions();
    let mut data = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut data).map_err(|e| e.to_string())?;
    Ok(Raster {
        width: w as usize,
        height: h as usize,
        channels,
        data,
    })
}

pub fn encode(raster: &Raster) -> Result<Vec<u8>, String> {
    let (subtype, color) = match raster.channels {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        c => return Err(format!("cannot encode {c} channels")),
    };
    if raster.data.len() != raster.width * raster.height * raster.channels {
        return Err("raster size does not match its dimensions".into());
    }
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .encode(raster.data.as_slice(), raster.width as u32, raster.height as u32, color)
        .map_err(|e| e.to_string())?;
    Ok(out)
}
