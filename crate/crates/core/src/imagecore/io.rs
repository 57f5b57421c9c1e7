//! PNG and PFM file I/O.
//!
//! Images are read from 8- or 16-bit PNG (grayscale inputs are replicated
//! to RGB). Masks are stored as 8-bit grayscale with values 0/255; any
//! sample >= 128 reads back as wire. Float rasters use little-endian PFM
//! (`Pf` for one channel, `PF` for three), written bottom row first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{invalid, Error, Result};
use crate::imagecore::{ImageBuf, MaskBuf, ProbMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuf> {
    let dynamic = image::open(path.as_ref())?;
    let rgb = dynamic.into_rgb32f();
    let (w, h) = rgb.dimensions();
    ImageBuf::from_clamped(h as usize, w as usize, 3, rgb.into_raw())
}

/// Bit depth of a PNG file on disk.
pub fn image_bit_depth(path: impl AsRef<Path>) -> Result<BitDepth> {
    let dynamic = image::open(path.as_ref())?;
    Ok(match dynamic {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => BitDepth::Sixteen,
        _ => BitDepth::Eight,
    })
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageBuf, depth: BitDepth) -> Result<()> {
    if img.channels() != 3 && img.channels() != 1 {
        return Err(invalid(format!("cannot encode {} channels as PNG", img.channels())));
    }
    let (h, w) = (img.height() as u32, img.width() as u32);
    let rgb: Vec<f32> = if img.channels() == 3 {
        img.data().to_vec()
    } else {
        img.data().iter().flat_map(|&v| [v, v, v]).collect()
    };
    match depth {
        BitDepth::Eight => {
            let raw = rgb.iter().map(|&v| quantize(v, 255.0) as u8).collect();
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, raw).ok_or_else(|| invalid("PNG buffer size"))?;
            buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        }
        BitDepth::Sixteen => {
            let raw = rgb.iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, raw).ok_or_else(|| invalid("PNG buffer size"))?;
            buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        }
    }
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskBuf> {
    let gray = image::open(path.as_ref())?.into_luma16();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| u8::from(v >= 0x8000)).collect();
    MaskBuf::new(h as usize, w as usize, data)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskBuf) -> Result<()> {
    let raw = mask.data().iter().map(|&v| v * 255).collect();
    let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| invalid("PNG buffer size"))?;
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}

/// Float raster as stored in a PFM file, top row first in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn write_pfm(path: impl AsRef<Path>, raster: &FloatRaster) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    encode_pfm(&mut out, raster)?;
    out.flush()?;
    Ok(())
}

pub fn encode_pfm(out: &mut impl Write, r: &FloatRaster) -> Result<()> {
    let tag = match r.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(invalid(format!("PFM stores 1 or 3 channels, not {c}"))),
    };
    if r.data.len() != r.height * r.width * r.channels {
        return Err(invalid("PFM raster size mismatch"));
    }
    write!(out, "{tag}\n{} {}\n-1.0\n", r.width, r.height)?;
    let row = r.width * r.channels;
    for y in (0..r.height).rev() {
        for v in &r.data[y * row..(y + 1) * row] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FloatRaster> {
    decode_pfm(&mut BufReader::new(File::open(path.as_ref())?))
}

pub fn decode_pfm(input: &mut impl BufRead) -> Result<FloatRaster> {
    let mut header = Vec::new();
    // tag, width, height and scale, spread over up to three lines
    let mut fields = Vec::new();
    while fields.len() < 4 {
        header.clear();
        if input.read_until(b'\n', &mut header)? == 0 {
            return Err(Error::Format("truncated PFM header".into()));
        }
        let line = std::str::from_utf8(&header).map_err(|_| Error::Format("non-UTF8 PFM header".into()))?;
        fields.extend(line.split_whitespace().map(str::to_owned));
    }
    let channels = match fields[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(Error::Format(format!("unknown PFM tag {t:?}"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PFM size {s:?}")))
    };
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let scale: f32 = fields[3]
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {:?}", fields[3])))?;
    let little = scale < 0.0;
    let row = width * channels;
    let mut data = vec![0.0f32; height * row];
    let mut bytes = [0u8; 4];
    for y in (0..height).rev() {
        for v in &mut data[y * row..(y + 1) * row] {
            input.read_exact(&mut bytes)?;
            *v = if little {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    Ok(FloatRaster {
        height,
        width,
        channels,
        data,
    })
}

/// Writes the wire-class channel of a probability map as a one-channel PFM.
pub fn write_prob_pfm(path: impl AsRef<Path>, p: &ProbMap) -> Result<()> {
    write_pfm(
        path,
        &FloatRaster {
            height: p.height(),
            width: p.width(),
            channels: 1,
            data: p.wire_channel(),
        },
    )
}

/// Reads a one-channel PFM of wire probabilities back into a two-class map.
pub fn read_prob_pfm(path: impl AsRef<Path>) -> Result<ProbMap> {
    let r = read_pfm(path)?;
    if r.channels != 1 {
        return Err(Error::Format("probability PFM must have one channel".into()));
    }
    ProbMap::from_wire(r.height, r.width, &r.data)
}
