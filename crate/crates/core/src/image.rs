//! Real-valued images in `[0, 1]` and their PNG / binary PPM encodings.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Planar (`C x H x W`) image. Values are clamped to `[0, 1]` except in images built
/// with [`Image::raw`] (edge maps, which reach 3).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping every value into `[0, 1]` (NaN becomes 0).
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("Image::new", "dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "Image::new",
                "data length",
                channels * height * width,
                data.len(),
            ));
        }
        Image::raw(
            channels,
            height,
            width,
            data.into_iter().map(clamp01).collect(),
        )
    }

    /// Builds an image without clamping.
    pub fn raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("Image::raw", "dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "Image::raw",
                "data length",
                channels * height * width,
                data.len(),
            ));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image::new(channels, height, width, data)
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Image::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    /// Number of values outside `[0, 1]` in `raw` (what [`Image::new`] would clamp).
    pub fn count_out_of_range(raw: &[f64]) -> usize {
        raw.iter().filter(|v| !(0.0..=1.0).contains(*v)).count()
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::invalid(
                "Image::crop",
                format!(
                    "{h}x{w} at ({y},{x}) exceeds {}x{}",
                    self.height, self.width
                ),
            ));
        }
        Image::from_fn(self.channels, h, w, |c, yy, xx| self.get(c, y + yy, x + xx))
    }

    /// Appends the channels of `other` (same height and width).
    pub fn stack(&self, other: &Image) -> Result<Image> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::invalid("Image::stack", "spatial sizes differ"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Image::raw(
            self.channels + other.channels,
            self.height,
            self.width,
            data,
        )
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            Shape::new(1, self.channels, self.height, self.width),
            self.data.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("image length matches shape")
    }

    /// Converts batch item 0 of a tensor, clamping into `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
        let s = t.shape();
        Image::new(
            s.c,
            s.h,
            s.w,
            t.item(0).iter().map(|v| v.as_f64()).collect(),
        )
    }

    /// Gray-scale conversion (channel mean).
    pub fn luma(&self) -> Image {
        let p = self.height * self.width;
        let data = (0..p)
            .map(|i| {
                (0..self.channels)
                    .map(|c| self.data[c * p + i])
                    .sum::<f64>()
                    / self.channels as f64
            })
            .collect();
        Image {
            channels: 1,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// 8-bit interleaved samples, rounding half up.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.height * self.width;
        let mut out = Vec::with_capacity(p * self.channels);
        for i in 0..p {
            for c in 0..self.channels {
                out.push(quantize(self.data[c * p + i]));
            }
        }
        out
    }

    pub fn from_bytes(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
        if bytes.len() != channels * height * width {
            return Err(Error::shape(
                "Image::from_bytes",
                "byte count",
                channels * height * width,
                bytes.len(),
            ));
        }
        let p = height * width;
        let mut data = vec![0.0; bytes.len()];
        for i in 0..p {
            for c in 0..channels {
                data[c * p + i] = bytes[i * channels + c] as f64 / 255.0;
            }
        }
        Image::new(channels, height, width, data)
    }

    /// Quantizes to 8 bits and back.
    pub fn quantized(&self) -> Image {
        Image {
            data: self
                .data
                .iter()
                .map(|&v| quantize(v) as f64 / 255.0)
                .collect(),
            ..self.clone()
        }
    }
}

fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Round-half-up 8-bit quantization of a `[0, 1]` value.
pub fn quantize(v: f64) -> u8 {
    (clamp01(v) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Encodes an RGB or gray image as an 8-bit PNG.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::invalid(
                "encode_png",
                format!("unsupported channel count {c}"),
            ))
        }
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(&img.to_bytes())
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

/// PNG files start with this signature.
pub const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

pub fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(&PNG_SIGNATURE)
}

/// `(width, height)` from the PNG header, without decoding pixels.
pub fn png_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let reader = png::Decoder::new(bytes)
        .read_info()
        .map_err(|e| Error::Format(e.to_string()))?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}

/// Decodes a PNG into an RGB image (gray is replicated, alpha dropped).
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut dec = png::Decoder::new(bytes);
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let step = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Format("indexed PNG not expanded".into())),
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for px in buf[..w * h * step].chunks(step) {
        if step < 3 {
            rgb.extend_from_slice(&[px[0]; 3]);
        } else {
            rgb.extend_from_slice(&px[..3]);
        }
    }
    Image::from_bytes(3, h, w, &rgb)
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::invalid("encode_ppm", "PPM needs three channels"));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut reader = BufReader::new(bytes);
    let mut fields = Vec::new();
    let mut token = String::new();
    while fields.len() < 4 {
        let mut byte = [0u8];
        if reader.read(&mut byte)? == 0 {
            return Err(Error::Format("truncated PPM header".into()));
        }
        let ch = byte[0] as char;
        if ch == '#' && token.is_empty() {
            let mut skip = String::new();
            reader.read_line(&mut skip)?;
        } else if ch.is_ascii_whitespace() {
            if !token.is_empty() {
                fields.push(std::mem::take(&mut token));
            }
        } else {
            token.push(ch);
        }
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!(
            "unsupported PPM magic {}",
            fields[0]
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PPM field {s}")))
    };
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(Error::Format("only maxval 255 is supported".into()));
    }
    let mut data = vec![0u8; w * h * 3];
    reader.read_exact(&mut data)?;
    Image::from_bytes(3, h, w, &data)
}

/// Reads a `.png` or `.ppm` file by extension.
pub fn load(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("ppm") => decode_ppm(&bytes),
        _ => decode_png(&bytes),
    }
}

pub fn save(path: &Path, img: &Image) -> Result<()> {
    let bytes = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("ppm") => encode_ppm(img)?,
        _ => encode_png(img)?,
    };
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}
