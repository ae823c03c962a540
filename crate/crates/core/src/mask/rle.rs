use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, MaskError, Shape};

/// Column-major run-length encoding.
///
/// `runs` alternate background/foreground starting with background, so a
/// mask whose first pixel (row 0, col 0) is foreground starts with a `0` run.
/// Text form is `height width r0 r1 ...`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<u64>,
}

impl RleMask {
    pub fn encode(mask: &BinaryMask) -> Self {
        let Shape { height, width } = mask.shape();
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for x in 0..width {
            for y in 0..height {
                let v = mask.get_index(y * width + x);
                if v != current {
                    runs.push(len);
                    len = 0;
                    current = v;
                }
                len += 1;
            }
        }
        runs.push(len);
        Self { height, width, runs }
    }

    pub fn decode(&self) -> Result<BinaryMask, MaskError> {
        let mut mask = BinaryMask::empty(self.height, self.width)?;
        let shape = mask.shape();
        let expected = shape.pixels() as u64;
        let found: u64 = self.runs.iter().sum();
        if found != expected {
            return Err(MaskError::RunSumMismatch { shape, expected, found });
        }
        if let Some(index) = self.runs.iter().skip(1).position(|&r| r == 0) {
            return Err(MaskError::ZeroRun { index: index + 1 });
        }
        let mut pos = 0usize;
        for (i, &run) in self.runs.iter().enumerate() {
            let run = run as usize;
            if i % 2 == 1 {
                for p in pos..pos + run {
                    let (x, y) = (p / self.height, p % self.height);
                    mask.set_index(y * self.width + x);
                }
            }
            pos += run;
        }
        Ok(mask)
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).sum()
    }
}

impl From<BinaryMask> for RleMask {
    fn from(mask: BinaryMask) -> Self {
        Self::encode(&mask)
    }
}

impl TryFrom<RleMask> for BinaryMask {
    type Error = MaskError;

    fn try_from(rle: RleMask) -> Result<Self, Self::Error> {
        rle.decode()
    }
}

impl fmt::Display for RleMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.height, self.width)?;
        for r in &self.runs {
            write!(f, " {r}")?;
        }
        Ok(())
    }
}

impl FromStr for RleMask {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut fields = s.split_ascii_whitespace().map(|tok| {
            tok.parse::<u64>()
                .map_err(|_| MaskError::RleSyntax(format!("`{tok}` is not a non-negative integer")))
        });
        let height = fields
            .next()
            .ok_or_else(|| MaskError::RleSyntax("missing height".into()))??;
        let width = fields
            .next()
            .ok_or_else(|| MaskError::RleSyntax("missing width".into()))??;
        let runs = fields.collect::<Result<Vec<_>, _>>()?;
        if runs.is_empty() {
            return Err(MaskError::RleSyntax("no runs".into()));
        }
        Ok(Self {
            height: height as usize,
            width: width as usize,
            runs,
        })
    }
}
