//! Binary PGM (`P5`) masks and 16-bit depth, plus grayscale PFM (`Pf`) depth.

use crate::error::{Error, Result};
use crate::grid::{BitMask2D, Grid};

pub const MAX_PNM_DIM: usize = 1 << 15;

/// A decoded `P5` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self, field: &str) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(field, "missing header token"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, field: &str, max: usize) -> Result<usize> {
        let tok = self.token(field)?;
        let s = std::str::from_utf8(tok).map_err(|_| Error::format(field, "not ascii"))?;
        let v: usize = s
            .parse()
            .map_err(|_| Error::format(field, format!("not an integer: {s:?}")))?;
        if v == 0 || v > max {
            return Err(Error::format(field, format!("out of range: {v}")));
        }
        Ok(v)
    }

    /// Consume the single whitespace byte that terminates a header.
    fn end_header(&mut self, field: &str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(Error::format(field, "header not terminated by whitespace")),
        }
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut r = HeaderReader { bytes, pos: 0 };
    if r.token("pgm.magic")? != b"P5" {
        return Err(Error::format("pgm.magic", "expected binary PGM (P5)"));
    }
    let width = r.number("pgm.width", MAX_PNM_DIM)?;
    let height = r.number("pgm.height", MAX_PNM_DIM)?;
    let maxval = r.number("pgm.maxval", 65535)? as u16;
    let body = r.end_header("pgm.maxval")?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * bps;
    if body.len() < expected {
        return Err(Error::format(
            "pgm.data",
            format!("expected {expected} bytes, found {}", body.len()),
        ));
    }
    let samples = if bps == 1 {
        body[..expected].iter().map(|&b| u16::from(b)).collect()
    } else {
        body[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval,
        samples,
    })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval < 256 {
        out.extend(pgm.samples.iter().map(|&s| s as u8));
    } else {
        for &s in &pgm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

/// Nonzero samples become 1.
pub fn decode_mask_pgm(bytes: &[u8]) -> Result<BitMask2D> {
    let pgm = decode_pgm(bytes)?;
    let bits = pgm.samples.iter().map(|&s| u8::from(s != 0)).collect();
    BitMask2D::from_bits(pgm.height, pgm.width, bits)
}

/// Masks are written with maxval 255, ones as 255.
pub fn encode_mask_pgm(mask: &BitMask2D) -> Vec<u8> {
    encode_pgm(&Pgm {
        width: mask.width(),
        height: mask.height(),
        maxval: 255,
        samples: mask.bits().iter().map(|&b| u16::from(b) * 255).collect(),
    })
}

/// Decode a grayscale `Pf` file into a 1-channel grid, top row first.
pub fn decode_pfm(bytes: &[u8]) -> Result<Grid> {
    let mut r = HeaderReader { bytes, pos: 0 };
    if r.token("pfm.magic")? != b"Pf" {
        return Err(Error::format("pfm.magic", "expected grayscale PFM (Pf)"));
    }
    let width = r.number("pfm.width", MAX_PNM_DIM)?;
    let height = r.number("pfm.height", MAX_PNM_DIM)?;
    let scale_tok = r.token("pfm.scale")?;
    let scale: f64 = std::str::from_utf8(scale_tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|v: &f64| v.is_finite() && *v != 0.0)
        .ok_or_else(|| Error::format("pfm.scale", "expected a nonzero number"))?;
    let body = r.end_header("pfm.scale")?;
    let expected = width * height * 4;
    if body.len() < expected {
        return Err(Error::format(
            "pfm.data",
            format!("expected {expected} bytes, found {}", body.len()),
        ));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; width * height];
    for (i, c) in body[..expected].chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // PFM rows run bottom to top.
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = f64::from(v);
    }
    Grid::from_vec(height, width, 1, data)
}

pub fn encode_pfm(grid: &Grid) -> Result<Vec<u8>> {
    if grid.channels() != 1 {
        return Err(Error::shape("PFM export expects a single channel"));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h).rev() {
        for col in 0..w {
            out.extend_from_slice(&(grid.pixel(col, row)[0] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_and_16_bit() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x00, 0xff, 0xff]);
        let pgm = decode_pgm(&bytes).unwrap();
        assert_eq!(pgm.samples, vec![256, 65535]);
        assert_eq!(decode_pgm(&encode_pgm(&pgm)).unwrap(), pgm);
    }

    #[test]
    fn mask_nonzero_is_one() {
        let bytes = b"P5\n3 1\n255\n\x00\x01\xff".to_vec();
        let m = decode_mask_pgm(&bytes).unwrap();
        assert_eq!(m.bits(), &[0, 1, 1]);
        assert_eq!(&encode_mask_pgm(&m)[11..], &[0, 255, 255]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n255").is_err());
        assert!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
    }

    #[test]
    fn pfm_row_order() {
        let g = Grid::from_vec(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&g).unwrap();
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 2.0);
        assert_eq!(decode_pfm(&bytes).unwrap(), g);
    }

    proptest! {
        #[test]
        fn mask_roundtrip(h in 1usize..6, w in 1usize..6, bits in proptest::collection::vec(0u8..2, 36)) {
            let m = BitMask2D::from_bits(h, w, bits[..h * w].to_vec()).unwrap();
            prop_assert_eq!(decode_mask_pgm(&encode_mask_pgm(&m)).unwrap(), m);
        }

        #[test]
        fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..48)) {
            let _ = decode_pgm(&bytes);
            let _ = decode_pfm(&bytes);
        }
    }
}
