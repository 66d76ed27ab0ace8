//! 8-bit grayscale image and label files.
//!
//! Images are read from binary PGM (`P5`, maxval 255) or 8-bit grayscale PNG,
//! chosen by file extension. Label maps are 8-bit grayscale PNG (PGM is also
//! accepted) whose pixel value is the class id.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, LabelMap, Tensor4};

/// A decoded 8-bit single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Gray8 {
    /// Intensities scaled to `[0, 1]` as a `1x1xHxW` tensor.
    pub fn to_tensor(&self) -> Tensor4<f32> {
        Tensor4::from_vec(
            Dims::new(1, 1, self.height, self.width),
            self.data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        )
        .expect("raster length matches its dims")
    }

    /// Quantize the first channel of the first sample, clamping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor4<f32>) -> Self {
        let d = t.dims();
        Gray8 {
            height: d.h,
            width: d.w,
            data: t.plane(0, 0).iter().map(|&v| quantize(v)).collect(),
        }
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

enum Format {
    Pgm,
    Png,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") => Ok(Format::Pgm),
        Some("png") => Ok(Format::Png),
        _ => Err(Error::decode(path, "unsupported extension (expected .pgm or .png)")),
    }
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<Gray8> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::decode(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::decode(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::decode(path, format!("bad PGM {what} {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::decode(path, format!("PGM maxval {maxval} unsupported (need 255)")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let len = width * height;
    if width == 0 || height == 0 || bytes.len() < start + len {
        return Err(Error::decode(path, format!("PGM raster shorter than {width}x{height}")));
    }
    Ok(Gray8 {
        height,
        width,
        data: bytes[start..start + len].to_vec(),
    })
}

fn read_png(path: &Path, bytes: &[u8]) -> Result<Gray8> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::decode(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::decode(
            path,
            format!("expected 8-bit grayscale PNG, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(width * height)];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::decode(path, e.to_string()))?;
    let mut data = Vec::with_capacity(width * height);
    for row in buf[..frame.buffer_size()].chunks(frame.line_size) {
        data.extend_from_slice(&row[..width]);
    }
    Ok(Gray8 { height, width, data })
}

pub fn read_gray(path: &Path) -> Result<Gray8> {
    let format = format_of(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Pgm => parse_pgm(path, &bytes),
        Format::Png => read_png(path, &bytes),
    }
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::decode(path, e.to_string()))?;
    writer.write_image_data(data).map_err(|e| Error::decode(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::decode(path, e.to_string()))
}

pub fn write_gray(path: &Path, image: &Gray8) -> Result<()> {
    match format_of(path)? {
        Format::Pgm => {
            let mut bytes = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
            bytes.extend_from_slice(&image.data);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        Format::Png => write_png(path, image.width, image.height, png::ColorType::Grayscale, &image.data),
    }
}

/// Write an 8-bit RGB PNG (`data` is row-major RGB triples).
pub fn write_rgb_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height * 3 {
        return Err(Error::Shape(format!("{} RGB bytes for a {width}x{height} image", data.len())));
    }
    write_png(path, width, height, png::ColorType::Rgb, data)
}

pub fn read_image(path: &Path) -> Result<Tensor4<f32>> {
    Ok(read_gray(path)?.to_tensor())
}

pub fn write_image(path: &Path, image: &Tensor4<f32>) -> Result<()> {
    write_gray(path, &Gray8::from_tensor(image))
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let g = read_gray(path)?;
    LabelMap::new(g.height, g.width, g.data)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_gray(
        path,
        &Gray8 {
            height: labels.height(),
            width: labels.width(),
            data: labels.data().to_vec(),
        },
    )
}
