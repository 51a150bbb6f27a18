//! Multi-channel real-valued images and the IMG v1 text format.
//!
//! ```text
//! IMG v1
//! H W channels
//! <channels * H lines of W floats>   (channel-major, then row-major)
//! ```

use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const IMG_MAGIC: &str = "IMG v1";

/// Hard cap on `channels * H * W` accepted by the parser.
pub const MAX_VALUES: usize = 1 << 26;

/// `channels x H x W` tensor stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[(ch * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, ch: usize, row: usize, col: usize, v: f64) {
        self.data[(ch * self.height + row) * self.width + col] = v;
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((n, Err(e))) => Err(Error::format(n, e.to_string())),
                None => Err(Error::format(0, format!("unexpected end of input, expected {what}"))),
            }
        };
        let (n, magic) = next("header")?;
        if magic.trim_end_matches('\r') != IMG_MAGIC {
            return Err(Error::format(n, "malformed header: expected `IMG v1`"));
        }
        let (n, dims) = next("dimensions")?;
        let fields: Vec<&str> = dims.split_whitespace().collect();
        let [h, w, c] = fields[..] else {
            return Err(Error::format(n, "malformed header: expected `H W channels`"));
        };
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(n, format!("malformed header: bad number `{s}`")))
        };
        let (height, width, channels) = (parse_dim(h)?, parse_dim(w)?, parse_dim(c)?);
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::format(n, "empty image"));
        }
        let total = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(channels))
            .filter(|&t| t <= MAX_VALUES);
        if total.is_none() {
            return Err(Error::format(n, "image too large"));
        }

        let mut data = Vec::new();
        for _ in 0..channels * height {
            let (n, row) = next("pixel row")?;
            let start = data.len();
            for tok in row.split_whitespace() {
                if data.len() - start == width {
                    return Err(Error::format(n, "row length mismatch"));
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::format(n, format!("bad value `{tok}`")))?;
                if !v.is_finite() {
                    return Err(Error::format(n, format!("non-finite value `{tok}`")));
                }
                data.push(v);
            }
            if data.len() - start != width {
                return Err(Error::format(n, "row length mismatch"));
            }
        }
        for (n, line) in lines {
            let line = line.map_err(|e| Error::format(n, e.to_string()))?;
            if !line.trim().is_empty() {
                return Err(Error::format(n, "trailing data after last row"));
            }
        }
        Self::new(channels, height, width, data)
    }
}

impl FromStr for Image {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::read(s.as_bytes())
    }
}

impl fmt::Display for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{IMG_MAGIC}")?;
        writeln!(f, "{} {} {}", self.height, self.width, self.channels)?;
        let mut line = String::new();
        for row in self.data.chunks(self.width) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                write!(line, "{v}")?;
            }
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}
