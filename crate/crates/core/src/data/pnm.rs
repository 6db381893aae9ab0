//! Binary Netpbm images: P6 (RGB) and P5 (grayscale), 8-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded 8-bit raster, `channels` interleaved values per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) || width * height * channels != pixels.len() || width == 0 || height == 0 {
            return Err(Error::Format(format!("{width}x{height}x{channels} raster with {} bytes", pixels.len())));
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::Format(format!("unsupported magic `{other}`"))),
        };
        let width = parse_num(&next_token(bytes, &mut pos)?, "width")?;
        let height = parse_num(&next_token(bytes, &mut pos)?, "height")?;
        let maxval = parse_num(&next_token(bytes, &mut pos)?, "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("empty image {width}x{height}")));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("maxval {maxval} outside 1..=255")));
        }
        // exactly one whitespace byte separates the header from the raster
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Format("missing whitespace after header".into()));
        }
        pos += 1;
        let need = width * height * channels;
        let body = &bytes[pos..];
        if body.len() != need {
            return Err(Error::Format(format!("expected {need} raster bytes, found {}", body.len())));
        }
        let pixels = if maxval == 255 {
            body.to_vec()
        } else {
            body.iter().map(|&v| ((v.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8).collect()
        };
        Self::new(width, height, channels, pixels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::Format("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| Error::Format("non-ASCII header".into()))
}

fn parse_num(tok: &str, what: &str) -> Result<usize> {
    tok.parse().map_err(|_| Error::Format(format!("bad {what} `{tok}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let r = Raster::new(3, 2, 3, (0..18).collect()).unwrap();
        let bytes = r.encode();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(Raster::decode(&bytes).unwrap(), r);
        let g = Raster::new(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        assert_eq!(Raster::decode(&g.encode()).unwrap(), g);
    }

    #[test]
    fn header_comments_and_maxval() {
        let mut bytes = b"P5 # gray\n2 1\n# max\n1\n".to_vec();
        bytes.extend_from_slice(&[0, 1]);
        let r = Raster::decode(&bytes).unwrap();
        assert_eq!(r.pixels, vec![0, 255]);
    }

    #[test]
    fn malformed_headers() {
        assert!(Raster::decode(b"P3\n1 1\n255\n").is_err());
        assert!(Raster::decode(b"P5\n1 x\n255\n\0").is_err());
        assert!(Raster::decode(b"P5\n1 1\n256\n\0").is_err());
        assert!(Raster::decode(b"P5\n2 2\n255\n\0\0").is_err());
        assert!(Raster::decode(b"P5\n1 1").is_err());
    }
}
