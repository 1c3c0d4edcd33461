use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Scalar element type for all tensor math. Training runs on `f32`;
/// gradient checking runs the same code on `f64`.
pub trait Elem:
    Float
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short dtype tag written into checkpoint headers.
    const DTYPE: &'static str;
    /// Size of one element in bytes when serialised little-endian.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    /// Little-endian encoding appended to `out`.
    fn write_le(self, out: &mut Vec<u8>);
    /// Little-endian decode; `bytes.len()` must equal `Self::BYTES`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Elem for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Elem for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_le_bytes() {
        let mut buf = Vec::new();
        let xs: [f32; 4] = [0.0, -1.5, 3.25e-7, f32::MAX];
        for &x in &xs {
            buf.clear();
            x.write_le(&mut buf);
            assert_eq!(buf.len(), f32::BYTES);
            assert_eq!(f32::read_le(&buf), x);
        }
        let ys: [f64; 3] = [0.0, -2.5e100, 1.0 / 3.0];
        for &y in &ys {
            buf.clear();
            y.write_le(&mut buf);
            assert_eq!(buf.len(), f64::BYTES);
            assert_eq!(f64::read_le(&buf), y);
        }
    }

    #[test]
    fn conversions() {
        assert_eq!(<f32 as Elem>::from_f64(1.5).to_f64(), 1.5);
        assert_eq!(<f64 as Elem>::from_f32(2.5).to_f32(), 2.5);
    }
}
