//! Uncompressed bitmaps with BITMAPINFOHEADER, V4 or V5 headers.
//!
//! Output is a single `pixels` buffer, top-down and unpadded: RGB for 16 and
//! 24 bits per pixel, RGBA for 32.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{need, read_u16, read_u32, OracleError, Sink};
use crate::expr::{BinOp, ByteExpr, Width};
use crate::lcg::Lcg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BmpVersion {
    V3,
    V4,
    V5,
}

impl BmpVersion {
    pub fn header_size(self) -> u32 {
        match self {
            BmpVersion::V3 => 40,
            BmpVersion::V4 => 108,
            BmpVersion::V5 => 124,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layout16 {
    X1R5G5B5,
    R5G6B5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Order32 {
    Bgra,
    Rgba,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BmpSpec {
    pub version: BmpVersion,
    pub bpp: u16,
    pub top_down: bool,
    pub layout16: Layout16,
    pub order32: Order32,
    pub width: u32,
    pub height: u32,
}

const FILE_HEADER: u32 = 14;
const BI_RGB: u32 = 0;
const BI_BITFIELDS: u32 = 3;
const LCS_SRGB: u32 = 0x7352_4742;

pub(crate) fn pad4(n: u64) -> u64 {
    n.div_ceil(4) * 4
}

/// Red, green, blue, alpha masks.
type Masks = [u32; 4];

impl BmpSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        if ![16, 24, 32].contains(&self.bpp) {
            return Err(OracleError::InvalidSpec(format!("bpp {}", self.bpp)));
        }
        if self.width == 0 || self.height == 0 || self.width > 1 << 20 || self.height > 1 << 20 {
            return Err(OracleError::InvalidSpec(format!(
                "dimensions {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn masks(&self) -> Option<Masks> {
        match (self.bpp, self.layout16, self.order32) {
            (16, Layout16::R5G6B5, _) => Some([0xF800, 0x07E0, 0x001F, 0]),
            (32, _, Order32::Bgra) => Some([0x00FF_0000, 0x0000_FF00, 0x0000_00FF, 0xFF00_0000]),
            (32, _, Order32::Rgba) => Some([0x0000_00FF, 0x0000_FF00, 0x00FF_0000, 0xFF00_0000]),
            _ => None,
        }
    }

    pub fn row_size(&self) -> u64 {
        pad4(self.width as u64 * (self.bpp as u64 / 8))
    }

    pub fn pixel_offset(&self) -> u32 {
        let extra = if self.version == BmpVersion::V3 && self.masks().is_some() {
            12
        } else {
            0
        };
        FILE_HEADER + self.version.header_size() + extra
    }

    pub fn file_len(&self) -> u64 {
        self.pixel_offset() as u64 + self.row_size() * self.height as u64
    }

    pub fn encode(&self, rng: &mut Lcg) -> Vec<u8> {
        let mut f = vec![0u8; self.file_len() as usize];
        let put32 =
            |f: &mut Vec<u8>, at: usize, v: u32| f[at..at + 4].copy_from_slice(&v.to_le_bytes());
        let masks = self.masks();
        let image_size = (self.row_size() * self.height as u64) as u32;

        f[0..2].copy_from_slice(b"BM");
        put32(&mut f, 2, self.file_len() as u32);
        put32(&mut f, 10, self.pixel_offset());
        put32(&mut f, 14, self.version.header_size());
        put32(&mut f, 18, self.width);
        let h = self.height as i32;
        put32(&mut f, 22, if self.top_down { -h } else { h } as u32);
        f[26..28].copy_from_slice(&1u16.to_le_bytes());
        f[28..30].copy_from_slice(&self.bpp.to_le_bytes());
        put32(
            &mut f,
            30,
            if masks.is_some() {
                BI_BITFIELDS
            } else {
                BI_RGB
            },
        );
        put32(&mut f, 34, image_size);
        put32(&mut f, 38, 2835);
        put32(&mut f, 42, 2835);
        if let Some(m) = masks {
            let n = if self.version == BmpVersion::V3 { 3 } else { 4 };
            for (i, mask) in m.iter().take(n).enumerate() {
                put32(&mut f, 54 + 4 * i, *mask);
            }
        }
        if self.version != BmpVersion::V3 {
            put32(&mut f, 70, LCS_SRGB);
        }

        let start = self.pixel_offset() as usize;
        let used = self.width as usize * self.bpp as usize / 8;
        for row in 0..self.height as usize {
            let at = start + row * self.row_size() as usize;
            rng.fill(&mut f[at..at + used]);
        }
        f
    }
}

fn mask_byte(mask: u32) -> Option<usize> {
    (0..4).find(|k| mask == 0xFF << (8 * k))
}

struct Channel5 {
    mask: u32,
    shift: u32,
    six_bit: bool,
}

impl Channel5 {
    fn native(&self, v: u32) -> u8 {
        let field = (v & self.mask) >> self.shift;
        if self.six_bit {
            ((field * 65) >> 4) as u8
        } else {
            ((field * 33) >> 2) as u8
        }
    }

    fn expr(&self, at: u64) -> ByteExpr {
        let c = |v| ByteExpr::constant(v, Width::W32);
        let word = ByteExpr::bin(
            BinOp::Or,
            ByteExpr::zext(Width::W32, ByteExpr::read(at)),
            ByteExpr::bin(
                BinOp::Shl,
                ByteExpr::zext(Width::W32, ByteExpr::read(at + 1)),
                c(8),
            ),
        );
        let masked = ByteExpr::bin(BinOp::And, word, c(self.mask as u128));
        // Green in the 5-5-5 layout keeps the split shift a compiler emits.
        let field = if self.shift == 5 && !self.six_bit {
            ByteExpr::bin(BinOp::AShr, ByteExpr::bin(BinOp::AShr, masked, c(2)), c(3))
        } else {
            ByteExpr::bin(BinOp::AShr, masked, c(self.shift as u128))
        };
        let (mul, shr) = if self.six_bit { (65, 4) } else { (33, 2) };
        let scaled = ByteExpr::bin(
            BinOp::AShr,
            ByteExpr::bin(BinOp::Mul, c(mul), field),
            c(shr),
        );
        ByteExpr::extract(7, 0, scaled)
    }
}

pub(crate) fn parse<S: Sink>(file: &[u8], sink: &mut S) -> Result<(), OracleError> {
    need(file, 54)?;
    let pixel_offset = read_u32(file, 10)? as u64;
    let header_size = read_u32(file, 14)?;
    if ![40, 108, 124].contains(&header_size) {
        return Err(OracleError::Unsupported(format!(
            "bitmap header size {header_size}"
        )));
    }
    let width = read_u32(file, 18)? as i32;
    let height = read_u32(file, 22)? as i32;
    if width <= 0 || height == 0 || height == i32::MIN {
        return Err(OracleError::Unsupported(format!(
            "bitmap dimensions {width}x{height}"
        )));
    }
    if read_u16(file, 26)? != 1 {
        return Err(OracleError::Unsupported("plane count".into()));
    }
    let bpp = read_u16(file, 28)?;
    let compression = read_u32(file, 30)?;
    let masks: Option<Masks> = match compression {
        BI_RGB => None,
        BI_BITFIELDS => {
            let mut m = [0u32; 4];
            for (i, slot) in m.iter_mut().enumerate().take(3) {
                *slot = read_u32(file, 54 + 4 * i)?;
            }
            if header_size > 40 {
                m[3] = read_u32(file, 66)?;
            }
            Some(m)
        }
        other => return Err(OracleError::Unsupported(format!("compression {other}"))),
    };
    let header_end = (FILE_HEADER
        + header_size
        + if header_size == 40 && masks.is_some() {
            12
        } else {
            0
        }) as u64;
    if pixel_offset < header_end {
        return Err(OracleError::Unsupported(format!(
            "pixel offset {pixel_offset}"
        )));
    }

    let (w, h) = (width as u64, height.unsigned_abs() as u64);
    let bytes_pp = match bpp {
        16 | 24 | 32 => bpp as u64 / 8,
        other => return Err(OracleError::Unsupported(format!("{other} bits per pixel"))),
    };
    let row_size = pad4(w * bytes_pp);
    let end = pixel_offset
        .checked_add(
            row_size
                .checked_mul(h)
                .ok_or(OracleError::Unsupported("bitmap size".into()))?,
        )
        .ok_or(OracleError::Unsupported("bitmap size".into()))?;
    if (file.len() as u64) < end {
        return Err(OracleError::Truncated {
            needed: end,
            len: file.len() as u64,
        });
    }

    let top_down = height < 0;
    let row_start = |out_row: u64| {
        let file_row = if top_down { out_row } else { h - 1 - out_row };
        pixel_offset + file_row * row_size
    };

    match bpp {
        24 => {
            if masks.is_some() {
                return Err(OracleError::Unsupported(
                    "bitfields at 24 bits per pixel".into(),
                ));
            }
            for y in 0..h {
                for x in 0..w {
                    let p = row_start(y) + x * 3;
                    for k in [2u64, 1, 0] {
                        let at = p + k;
                        sink.put("pixels", file[at as usize], || ByteExpr::read(at));
                    }
                }
            }
        }
        32 => {
            let m = masks.ok_or(OracleError::Unsupported(
                "32 bits per pixel without bitfields".into(),
            ))?;
            let mut order = [0usize; 4];
            for c in 0..3 {
                order[c] = mask_byte(m[c]).ok_or(OracleError::Unsupported(format!(
                    "channel mask {:#x}",
                    m[c]
                )))?;
            }
            order[3] = match mask_byte(m[3]) {
                Some(b) => b,
                None => (0..4).find(|b| !order[..3].contains(b)).unwrap_or(3),
            };
            for y in 0..h {
                for x in 0..w {
                    let p = row_start(y) + x * 4;
                    for &k in &order {
                        let at = p + k as u64;
                        sink.put("pixels", file[at as usize], || ByteExpr::read(at));
                    }
                }
            }
        }
        _ => {
            let channels = match masks {
                None => [(0x7C00, 10, false), (0x03E0, 5, false), (0x001F, 0, false)],
                Some([0x7C00, 0x03E0, 0x001F, _]) => {
                    [(0x7C00, 10, false), (0x03E0, 5, false), (0x001F, 0, false)]
                }
                Some([0xF800, 0x07E0, 0x001F, _]) => {
                    [(0xF800, 11, false), (0x07E0, 5, true), (0x001F, 0, false)]
                }
                Some(m) => return Err(OracleError::Unsupported(format!("16-bit masks {m:x?}"))),
            }
            .map(|(mask, shift, six_bit)| Channel5 {
                mask,
                shift,
                six_bit,
            });
            for y in 0..h {
                for x in 0..w {
                    let p = row_start(y) + x * 2;
                    let v = file[p as usize] as u32 | (file[p as usize + 1] as u32) << 8;
                    for ch in &channels {
                        sink.put("pixels", ch.native(v), || ch.expr(p));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{oracle_parse, traced_parse, FormatSpec};

    fn spec(bpp: u16, w: u32, h: u32) -> BmpSpec {
        BmpSpec {
            version: BmpVersion::V3,
            bpp,
            top_down: false,
            layout16: Layout16::X1R5G5B5,
            order32: Order32::Bgra,
            width: w,
            height: h,
        }
    }

    #[test]
    fn header_fields_match_layout() {
        let f = spec(24, 61, 76).encode(&mut Lcg::new(1));
        assert_eq!(&f[18..22], &[0x3D, 0, 0, 0]);
        assert_eq!(&f[22..26], &[0x4C, 0, 0, 0]);
        assert_eq!(f[10], 54);
        assert_eq!(f[28], 24);
        assert_eq!(f.len() as u64, 54 + 184 * 76);
    }

    #[test]
    fn top_down_height_is_negative() {
        let mut s = spec(24, 5, 7);
        s.top_down = true;
        let f = s.encode(&mut Lcg::new(1));
        assert_eq!(&f[22..26], &(-7i32).to_le_bytes());
        assert_eq!(f[24], 0xFF);
    }

    #[test]
    fn bgr_to_rgb_single_pixel() {
        let mut f = spec(24, 1, 1).encode(&mut Lcg::new(1));
        f[54..57].copy_from_slice(&[1, 2, 3]);
        assert_eq!(oracle_parse(&f).unwrap()["pixels"], vec![3, 2, 1]);
        let (_, log) = traced_parse(&f, "one").unwrap();
        assert_eq!(log.entries.len(), 3);
    }

    #[test]
    fn one_pixel_32bpp_has_four_entries() {
        let f = FormatSpec::Bmp(spec(32, 1, 1))
            .encode(&mut Lcg::new(2))
            .unwrap();
        assert_eq!(traced_parse(&f, "x").unwrap().1.entries.len(), 4);
    }

    #[test]
    fn two_by_two_trace_has_twelve_entries() {
        let f = spec(24, 2, 2).encode(&mut Lcg::new(1));
        let (_, log) = traced_parse(&f, "x").unwrap();
        assert_eq!(
            log.entries.iter().filter(|e| e.array == "pixels").count(),
            12
        );
    }

    #[test]
    fn five_bit_expansion() {
        let mut f = spec(16, 1, 1).encode(&mut Lcg::new(1));
        // Green field = 31 in the 5-5-5 layout.
        let v: u16 = 31 << 5;
        f[54..56].copy_from_slice(&v.to_le_bytes());
        assert_eq!(oracle_parse(&f).unwrap()["pixels"], vec![0, 255, 0]);
        f[54..56].copy_from_slice(&[0, 0]);
        assert_eq!(oracle_parse(&f).unwrap()["pixels"], vec![0, 0, 0]);
        let (_, log) = traced_parse(&f, "x").unwrap();
        assert_eq!(log.replay(&f).unwrap()["pixels"], vec![0, 0, 0]);
    }

    #[test]
    fn six_bit_green() {
        let mut s = spec(16, 1, 1);
        s.layout16 = Layout16::R5G6B5;
        let mut f = s.encode(&mut Lcg::new(1));
        assert_eq!(f[10], 66);
        let v: u16 = 63 << 5;
        f[66..68].copy_from_slice(&v.to_le_bytes());
        assert_eq!(oracle_parse(&f).unwrap()["pixels"], vec![0, 255, 0]);
    }

    #[test]
    fn row_stride_is_padded() {
        let s = spec(24, 61, 2);
        assert_eq!(s.row_size(), 184);
        let f = s.encode(&mut Lcg::new(4));
        let (_, log) = traced_parse(&f, "x").unwrap();
        // First output pixel comes from the last file row.
        assert_eq!(log.entries[0].expr, ByteExpr::read(54 + 184 + 2));
    }

    #[test]
    fn truncated_pixels_rejected() {
        let f = spec(24, 3, 3).encode(&mut Lcg::new(4));
        assert!(matches!(
            oracle_parse(&f[..f.len() - 1]),
            Err(OracleError::Truncated { .. })
        ));
    }
}
