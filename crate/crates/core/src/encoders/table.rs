//! Reader/writer for the "FCLE" class-token embedding table.
//!
//! Layout, all little-endian:
//!
//! | offset | type | field            |
//! |--------|------|------------------|
//! | 0      | [u8;4] | magic `FCLE`   |
//! | 4      | u32  | version (1)      |
//! | 8      | u32  | C                |
//! | 12     | u32  | tokens per class |
//! | 16     | u32  | d_token          |
//! | 20     | f32[C * tokens * d_token] | row-major data |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FclError, Result};

pub const FCLE_MAGIC: [u8; 4] = *b"FCLE";
pub const FCLE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTokenTable {
    num_classes: usize,
    tokens_per_class: usize,
    d_token: usize,
    data: Vec<f32>,
}

impl ClassTokenTable {
    pub fn new(num_classes: usize, tokens_per_class: usize, d_token: usize, data: Vec<f32>) -> Result<Self> {
        let want = num_classes * tokens_per_class * d_token;
        if data.len() != want {
            return Err(FclError::shape("FCLE data", want, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FclError::NonFinite("FCLE data"));
        }
        Ok(Self {
            num_classes,
            tokens_per_class,
            d_token,
            data,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn tokens_per_class(&self) -> usize {
        self.tokens_per_class
    }

    pub fn d_token(&self) -> usize {
        self.d_token
    }

    /// Row for one class, widened to f64.
    pub fn class_row(&self, class: usize) -> Vec<f64> {
        let stride = self.tokens_per_class * self.d_token;
        self.data[class * stride..(class + 1) * stride]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(FclError::Format("FCLE header truncated".into()));
        }
        if bytes[0..4] != FCLE_MAGIC {
            return Err(FclError::Format("bad FCLE magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != FCLE_VERSION {
            return Err(FclError::Format(format!("unsupported FCLE version {version}")));
        }
        let (c, t, d) = (word(8) as usize, word(12) as usize, word(16) as usize);
        let n = c
            .checked_mul(t)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| FclError::Format("FCLE dimensions overflow".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != n * 4 {
            return Err(FclError::Format(format!(
                "FCLE body has {} bytes, header implies {}",
                body.len(),
                n * 4
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(c, t, d, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&FCLE_MAGIC);
        for v in [
            FCLE_VERSION,
            self.num_classes as u32,
            self.tokens_per_class as u32,
            self.d_token as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }
}
