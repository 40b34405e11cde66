//! RGB float images and codecs.
//!
//! Binary PPM (`P6`, maxval 255) is always available. Other formats plug in
//! through [`ImageCodec`]; PNG is provided behind the `png` feature.

use std::path::Path;

use super::DataError;

/// RGB image with channel-major `[3, height, width]` samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (c, v) in rgb.iter().enumerate() {
            data[c * plane..(c + 1) * plane].fill(*v);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.width * self.height;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, y, x, v);
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Bilinear resample with half-pixel centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let mut out = Image::new(width, height);
        if width == self.width && height == self.height {
            out.data.copy_from_slice(&self.data);
            return out;
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let sample = |v: f32, max: usize| {
            let v = v.clamp(0.0, (max - 1) as f32);
            let i0 = v.floor() as usize;
            let i1 = (i0 + 1).min(max - 1);
            (i0, i1, v - i0 as f32)
        };
        for y in 0..height {
            let (y0, y1, fy) = sample((y as f32 + 0.5) * sy - 0.5, self.height);
            for x in 0..width {
                let (x0, x1, fx) = sample((x as f32 + 0.5) * sx - 0.5, self.width);
                for c in 0..3 {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, y, x, top * (1.0 - fy) + bot * fy);
                }
            }
        }
        out
    }

    /// Quantize to interleaved 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.push((self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.set(c, y, x, bytes[(y * width + x) * 3 + c] as f32 / 255.0);
                }
            }
        }
        img
    }
}

/// Encoder/decoder for one on-disk image format.
pub trait ImageCodec: Send + Sync {
    /// Lowercase file extensions handled by this codec.
    fn extensions(&self) -> &[&str];
    fn decode(&self, bytes: &[u8]) -> Result<Image, DataError>;
    fn encode(&self, image: &Image) -> Result<Vec<u8>, DataError>;
}

pub struct PpmCodec;

impl PpmCodec {
    fn parse_err(offset: usize, msg: impl Into<String>) -> DataError {
        DataError::ImageParse {
            offset,
            msg: msg.into(),
        }
    }
}

impl ImageCodec for PpmCodec {
    fn extensions(&self) -> &[&str] {
        &["ppm"]
    }

    fn decode(&self, bytes: &[u8]) -> Result<Image, DataError> {
        if bytes.len() < 2 || &bytes[..2] != b"P6" {
            return Err(Self::parse_err(0, "missing P6 magic"));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in fields.iter_mut() {
            // whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => return Err(Self::parse_err(pos, "truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(Self::parse_err(pos, "expected a decimal number"));
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Self::parse_err(start, "number out of range"))?;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(Self::parse_err(pos, format!("unsupported maxval {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(Self::parse_err(pos, "zero-sized image"));
        }
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(Self::parse_err(pos, "missing separator after header")),
        }
        let need = width * height * 3;
        if bytes.len() < pos + need {
            return Err(Self::parse_err(
                bytes.len(),
                format!("truncated pixel data: need {need} bytes after offset {pos}"),
            ));
        }
        Ok(Image::from_rgb8(width, height, &bytes[pos..pos + need]))
    }

    fn encode(&self, image: &Image) -> Result<Vec<u8>, DataError> {
        let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
        out.extend_from_slice(&image.to_rgb8());
        Ok(out)
    }
}

#[cfg(feature = "png")]
pub struct PngCodec;

#[cfg(feature = "png")]
impl ImageCodec for PngCodec {
    fn extensions(&self) -> &[&str] {
        &["png"]
    }

    fn decode(&self, bytes: &[u8]) -> Result<Image, DataError> {
        let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| DataError::ImageParse {
            offset: 0,
            msg: e.to_string(),
        })?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| DataError::ImageParse {
            offset: 0,
            msg: e.to_string(),
        })?;
        let (w, h) = (info.width as usize, info.height as usize);
        let ch = info.color_type.samples();
        let rgb: Vec<u8> = buf[..info.buffer_size()]
            .chunks(ch)
            .flat_map(|p| match ch {
                1 | 2 => [p[0], p[0], p[0]],
                _ => [p[0], p[1], p[2]],
            })
            .collect();
        Ok(Image::from_rgb8(w, h, &rgb))
    }

    fn encode(&self, image: &Image) -> Result<Vec<u8>, DataError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| DataError::Encode(e.to_string()))?;
            w.write_image_data(&image.to_rgb8())
                .map_err(|e| DataError::Encode(e.to_string()))?;
        }
        Ok(out)
    }
}

fn codec_for(path: &Path) -> Result<Box<dyn ImageCodec>, DataError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" => Ok(Box::new(PpmCodec)),
        #[cfg(feature = "png")]
        "png" => Ok(Box::new(PngCodec)),
        _ => Err(DataError::UnsupportedFormat(path.display().to_string())),
    }
}

/// Whether `path` has an extension some built-in codec handles.
pub fn is_supported_image(path: &Path) -> bool {
    codec_for(path).is_ok()
}

pub fn load_image(path: &Path) -> Result<Image, DataError> {
    let codec = codec_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    codec.decode(&bytes)
}

pub fn save_image(image: &Image, path: &Path) -> Result<(), DataError> {
    let bytes = codec_for(path)?.encode(image)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}
