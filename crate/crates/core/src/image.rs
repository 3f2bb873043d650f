//! 8-bit RGB images: decoding (PPM mandatory, PNG as a convenience),
//! PPM encoding and simple overlay drawing.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "RGB buffer of {} bytes does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Writes the pixel if `(x, y)` lies inside the image.
    pub fn put_clipped(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.put(x as usize, y as usize, rgb);
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Input(message) => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Decodes PPM (P6) or PNG bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = ::image::load_from_memory(bytes).map_err(|e| Error::Input(format!("cannot decode image: {e}")))?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Input("image has a zero dimension".into()));
        }
        Self::new(w, h, rgb.into_raw())
    }

    /// Binary PPM (P6, maxval 255).
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_ppm()).map_err(|e| Error::io(path, e))
    }

    /// One-pixel rectangle outline, clipped to the image.
    pub fn draw_rect(&mut self, x1: f32, y1: f32, x2: f32, y2: f32, rgb: [u8; 3]) {
        let (x1, y1, x2, y2) = (x1.round() as i64, y1.round() as i64, x2.round() as i64, y2.round() as i64);
        for x in x1..=x2 {
            self.put_clipped(x, y1, rgb);
            self.put_clipped(x, y2, rgb);
        }
        for y in y1..=y2 {
            self.put_clipped(x1, y, rgb);
            self.put_clipped(x2, y, rgb);
        }
    }

    /// Filled square of side `2*radius + 1` centred on `(x, y)`.
    pub fn draw_dot(&mut self, x: f32, y: f32, radius: i64, rgb: [u8; 3]) {
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                self.put_clipped(cx + dx, cy + dy, rgb);
            }
        }
    }
}
