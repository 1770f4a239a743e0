use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};

/// Row-major RGBA8 image with straight (non-premultiplied) alpha.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    /// Fully transparent image.
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgba: [u8; 4]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 4);
        for _ in 0..n {
            data.extend_from_slice(&rgba);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize * 4 {
            return Err(Error::invalid(
                "image",
                format!(
                    "buffer of {} bytes does not match {width}x{height} RGBA",
                    data.len()
                ),
            ));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub(crate) fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 4
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 4] {
        let o = self.offset(x, y);
        [
            self.data[o],
            self.data[o + 1],
            self.data[o + 2],
            self.data[o + 3],
        ]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: [u8; 4]) {
        let o = self.offset(x, y);
        self.data[o..o + 4].copy_from_slice(&px);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 4]> + '_ {
        self.data.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]])
    }

    /// Copy of a sub-rectangle.
    pub fn crop(&self, rect: Rect) -> Result<Image> {
        if !rect.fits_within(self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: (rect.x + rect.w, rect.y + rect.h),
            });
        }
        let mut out = Image::new(rect.w, rect.h);
        for y in 0..rect.h {
            let src = self.offset(rect.x, rect.y + y);
            let dst = out.offset(0, y);
            let len = rect.w as usize * 4;
            out.data[dst..dst + len].copy_from_slice(&self.data[src..src + len]);
        }
        Ok(out)
    }

    /// Overwrites a sub-rectangle with `src` (no blending).
    pub fn blit(&mut self, x0: u32, y0: u32, src: &Image) -> Result<()> {
        let rect = Rect::new(x0, y0, src.width, src.height);
        if !rect.fits_within(self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: (x0 + src.width, y0 + src.height),
            });
        }
        for y in 0..src.height {
            let s = src.offset(0, y);
            let d = self.offset(x0, y0 + y);
            let len = src.width as usize * 4;
            self.data[d..d + len].copy_from_slice(&src.data[s..s + len]);
        }
        Ok(())
    }

    /// Grows the canvas downward/rightward with transparent pixels.
    pub fn extended(&self, width: u32, height: u32) -> Image {
        let mut out = Image::new(width.max(self.width), height.max(self.height));
        out.blit(0, 0, self).expect("fits by construction");
        out
    }

    /// Bilinear sample in premultiplied space, returned as straight-alpha
    /// floats in `[0, 255]`. Pixels outside the image count as transparent.
    pub fn sample_bilinear(&self, p: Point) -> [f64; 4] {
        let x0 = p.x.floor();
        let y0 = p.y.floor();
        let fx = p.x - x0;
        let fy = p.y - y0;
        let mut acc = [0.0f64; 4];
        for (dx, dy, w) in [
            (0.0, 0.0, (1.0 - fx) * (1.0 - fy)),
            (1.0, 0.0, fx * (1.0 - fy)),
            (0.0, 1.0, (1.0 - fx) * fy),
            (1.0, 1.0, fx * fy),
        ] {
            if w == 0.0 {
                continue;
            }
            let (sx, sy) = (x0 + dx, y0 + dy);
            if sx < 0.0 || sy < 0.0 || sx >= self.width as f64 || sy >= self.height as f64 {
                continue;
            }
            let px = self.get(sx as u32, sy as u32);
            let a = px[3] as f64 * w;
            acc[0] += px[0] as f64 * a;
            acc[1] += px[1] as f64 * a;
            acc[2] += px[2] as f64 * a;
            acc[3] += a;
        }
        if acc[3] <= 0.0 {
            return [0.0; 4];
        }
        [acc[0] / acc[3], acc[1] / acc[3], acc[2] / acc[3], acc[3]]
    }

    /// Bilinear sample rounded to 8 bits.
    pub fn sample_bilinear_u8(&self, p: Point) -> [u8; 4] {
        let s = self.sample_bilinear(p);
        if s[3] < 0.5 {
            return [0, 0, 0, 0];
        }
        s.map(round_u8)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let buf = image::RgbaImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }

    pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<Image> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Image {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgba = img.to_rgba8();
        let (w, h) = rgba.dimensions();
        Image::from_raw(w, h, rgba.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let bytes = read_existing(path)?;
        Image::decode_png(&bytes, path)
    }
}

pub(crate) fn read_existing(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

/// Round half up and clamp to a byte.
#[inline]
pub fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Row-major boolean mask.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BinaryMask({}x{}, {} set)",
            self.width,
            self.height,
            self.count()
        )
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }

    /// True where `self` is set but `other` is not.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Morphological dilation by a Euclidean disc of the given radius.
    pub fn dilate(&self, radius: u32) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let mut out = BinaryMask::new(self.width, self.height);
        let (w, h) = (self.width as i64, self.height as i64);
        for y in 0..h {
            for x in 0..w {
                if !self.bits[(y * w + x) as usize] {
                    continue;
                }
                for (dx, dy) in &offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        out.bits[(ny * w + nx) as usize] = true;
                    }
                }
            }
        }
        out
    }

    /// 1-bit grayscale PNG.
    pub fn encode_png(&self) -> Vec<u8> {
        let row_bytes = (self.width as usize).div_ceil(8);
        let mut packed = vec![0u8; row_bytes * self.height as usize];
        for y in 0..self.height as usize {
            for x in 0..self.width as usize {
                if self.bits[y * self.width as usize + x] {
                    packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::One);
            let mut writer = enc.write_header().expect("in-memory PNG header");
            writer
                .write_image_data(&packed)
                .expect("in-memory PNG data");
        }
        out
    }

    /// Reads any PNG; a pixel is set when its luminance and alpha are both
    /// above half scale.
    pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<BinaryMask> {
        let img = Image::decode_png(bytes, origin)?;
        let mut m = BinaryMask::new(img.width(), img.height());
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = img.get(x, y);
                let lum = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                m.set(x, y, lum > 127.5 && p[3] > 127);
            }
        }
        Ok(m)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<BinaryMask> {
        let bytes = read_existing(path)?;
        BinaryMask::decode_png(&bytes, path)
    }
}
