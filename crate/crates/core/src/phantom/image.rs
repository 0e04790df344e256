use std::io::Write;

use crate::phantom::PhantomError;
use crate::scalar::Scalar;

/// Single-channel image stored row-major, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self, PhantomError> {
        if width == 0 || height == 0 {
            return Err(PhantomError::Geometry(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(PhantomError::Geometry(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    /// Copy of the `w x h` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, PhantomError> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(PhantomError::Geometry(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self { width: w, height: h, data })
    }

    /// Bilinear resampling with pixel centers aligned to the source.
    ///
    /// Resizing to the same extents returns an exact copy.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self, PhantomError> {
        if width == 0 || height == 0 {
            return Err(PhantomError::Geometry(format!("resize to {width}x{height}")));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = T::from_usize_lossy(self.width) / T::from_usize_lossy(width);
        let sy = T::from_usize_lossy(self.height) / T::from_usize_lossy(height);
        let half = T::lit(0.5);
        let axis = |i: usize, s: T, n: usize| -> (usize, usize, T) {
            let f = ((T::from_usize_lossy(i) + half) * s - half).max(T::zero());
            let i0 = f.floor().to_usize().unwrap_or(0).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f - T::from_usize_lossy(i0))
        };
        let cols: Vec<_> = (0..width).map(|x| axis(x, sx, self.width)).collect();
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, y1, fy) = axis(y, sy, self.height);
            let (r0, r1) = (self.row(y0), self.row(y1));
            for &(x0, x1, fx) in &cols {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                data.push(top + (bottom - top) * fy);
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            data.extend(self.row(y).iter().rev());
        }
        Self { width: self.width, height: self.height, data }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Encodes as binary PGM (`P5`, maxval 255). Values are clamped to `[0, 1]`
/// and rounded to the nearest level. `comment`, when given, is written as a
/// single `#` line after the magic number.
pub fn write_pgm<T: Scalar>(image: &Image<T>, comment: Option<&str>) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.data.len() + 64);
    out.extend_from_slice(b"P5\n");
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    let _ = write!(out, "{} {}\n255\n", image.width, image.height);
    out.extend(image.data.iter().map(|&v| quantize(v)));
    out
}

fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.to_f64_lossy();
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PhantomError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PhantomError::Pgm(format!("bad {what} in header")))
    }
}

/// Decodes a binary PGM with maxval up to 255.
pub fn read_pgm<T: Scalar>(bytes: &[u8]) -> Result<Image<T>, PhantomError> {
    if !bytes.starts_with(b"P5") {
        return Err(PhantomError::Pgm("missing P5 magic".into()));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PhantomError::Pgm(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(PhantomError::Pgm(format!("unsupported maxval {maxval}")));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(PhantomError::Pgm("header not terminated by whitespace".into()));
    }
    let payload = &bytes[h.pos + 1..];
    let n = width * height;
    if payload.len() < n {
        return Err(PhantomError::Pgm(format!("truncated payload: {} of {n} bytes", payload.len())));
    }
    let scale = T::from_usize_lossy(maxval);
    let data = payload[..n].iter().map(|&b| T::from_usize_lossy(b as usize) / scale).collect();
    Image::new(width, height, data)
}

/// Text of every `#` comment line in a PGM header.
pub fn pgm_comments(bytes: &[u8]) -> Vec<String> {
    let mut out = Vec::new();
    let mut lines = bytes.split(|&b| b == b'\n');
    // magic, then comments up to the first non-comment line
    if lines.next().map_or(true, |l| !l.starts_with(b"P5")) {
        return out;
    }
    for line in lines {
        match line.strip_prefix(b"#") {
            Some(rest) => out.push(String::from_utf8_lossy(rest).trim().to_string()),
            None => break,
        }
    }
    out
}
