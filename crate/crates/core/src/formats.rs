//! Binary and text file formats: label grids and maps, keep masks, point
//! clouds, PPM images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::image::Image;
use crate::labels::{LabelGrid, LabelMap};

pub const GRID_MAGIC: &[u8; 4] = b"OCCG";
pub const MAP_MAGIC: &[u8; 4] = b"OCCM";
pub const KEEP_MAGIC: &[u8; 4] = b"OCCK";

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?) as usize)
    }
}

fn encode_header(magic: &[u8; 4], dims: &[usize]) -> Vec<u8> {
    let mut out = magic.to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

/// Parses `magic`, `rank` dims and a payload of `width`-byte elements.
fn decode_body<'a>(bytes: &'a [u8], magic: &[u8; 4], rank: usize, width: usize) -> std::result::Result<(Vec<usize>, &'a [u8]), String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4) != Some(&magic[..]) {
        return Err(format!("missing {} magic", String::from_utf8_lossy(magic)));
    }
    let dims = (0..rank)
        .map(|_| r.u32())
        .collect::<Option<Vec<_>>>()
        .ok_or("truncated header")?;
    let n: usize = dims.iter().product();
    let payload = &bytes[r.pos..];
    if payload.len() != n * width {
        return Err(format!("payload has {} bytes, dims {:?} need {}", payload.len(), dims, n * width));
    }
    Ok((dims, payload))
}

fn u16s(payload: &[u8]) -> Vec<u16> {
    payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
}

pub fn encode_label_grid(grid: &LabelGrid) -> Vec<u8> {
    let mut out = encode_header(GRID_MAGIC, &grid.dims());
    grid.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn decode_label_grid(bytes: &[u8]) -> std::result::Result<LabelGrid, String> {
    let (d, payload) = decode_body(bytes, GRID_MAGIC, 3, 2)?;
    Ok(LabelGrid::from_vec([d[0], d[1], d[2]], u16s(payload)).expect("checked length"))
}

pub fn encode_label_map(map: &LabelMap) -> Vec<u8> {
    let mut out = encode_header(MAP_MAGIC, &[map.height(), map.width()]);
    map.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn decode_label_map(bytes: &[u8]) -> std::result::Result<LabelMap, String> {
    let (d, payload) = decode_body(bytes, MAP_MAGIC, 2, 2)?;
    Ok(LabelMap::from_vec(d[0], d[1], u16s(payload)).expect("checked length"))
}

/// Keep mask over a grid: dims, then one byte (0 or 1) per cell.
pub fn encode_keep_mask(dims: [usize; 3], keep: &[bool]) -> Vec<u8> {
    let mut out = encode_header(KEEP_MAGIC, &dims);
    out.extend(keep.iter().map(|&k| k as u8));
    out
}

pub fn decode_keep_mask(bytes: &[u8]) -> std::result::Result<([usize; 3], Vec<bool>), String> {
    let (d, payload) = decode_body(bytes, KEEP_MAGIC, 3, 1)?;
    let keep = payload
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format!("keep byte {other} is not 0 or 1")),
        })
        .collect::<std::result::Result<_, _>>()?;
    Ok(([d[0], d[1], d[2]], keep))
}

/// Consecutive little-endian f32 quadruples.
pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    if bytes.len() % 16 != 0 {
        return Err(format!("{} bytes is not a whole number of points", bytes.len()));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| std::array::from_fn(|i| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap()) as f64))
        .collect();
    Ok(PointCloud { points })
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    for r in 0..image.height() {
        for c in 0..image.width() {
            for v in image.rgb(r, c) {
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PPM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err("only P6 with maxval 255 is supported".into());
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad PPM size `{s}`: {e}"));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let pixels = &bytes[pos + 1..];
    if pixels.len() != 3 * w * h {
        return Err(format!("PPM payload {} bytes, expected {}", pixels.len(), 3 * w * h));
    }
    let mut img = Image::black(h, w);
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        img.set_rgb(i / w, i % w, std::array::from_fn(|c| px[c] as f64 / 255.0));
    }
    Ok(img)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| format_err(path, e.to_string()))
}

fn parsed<T>(path: &Path, r: std::result::Result<T, String>) -> Result<T> {
    r.map_err(|m| format_err(path, m))
}

pub fn save_label_grid(path: &Path, grid: &LabelGrid) -> Result<()> {
    Ok(fs::write(path, encode_label_grid(grid))?)
}

pub fn load_label_grid(path: &Path) -> Result<LabelGrid> {
    parsed(path, decode_label_grid(&read(path)?))
}

pub fn save_label_map(path: &Path, map: &LabelMap) -> Result<()> {
    Ok(fs::write(path, encode_label_map(map))?)
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    parsed(path, decode_label_map(&read(path)?))
}

pub fn save_keep_mask(path: &Path, dims: [usize; 3], keep: &[bool]) -> Result<()> {
    Ok(fs::write(path, encode_keep_mask(dims, keep))?)
}

pub fn load_keep_mask(path: &Path) -> Result<([usize; 3], Vec<bool>)> {
    parsed(path, decode_keep_mask(&read(path)?))
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    Ok(fs::write(path, encode_cloud(cloud))?)
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    parsed(path, decode_cloud(&read(path)?))
}

pub fn save_ppm(path: &Path, image: &Image) -> Result<()> {
    Ok(fs::write(path, encode_ppm(image))?)
}

pub fn load_ppm(path: &Path) -> Result<Image> {
    parsed(path, decode_ppm(&read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::IGNORE;

    #[test]
    fn label_grid_header() {
        let g = LabelGrid::from_vec([1, 1, 2], vec![3, IGNORE]).unwrap();
        let bytes = encode_label_grid(&g);
        assert_eq!(&bytes[..4], b"OCCG");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..], &[3, 0, 255, 255]);
        assert_eq!(decode_label_grid(&bytes).unwrap(), g);
        assert!(decode_label_grid(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_label_map(&bytes).is_err());
    }

    #[test]
    fn keep_mask_rejects_non_binary() {
        let mut bytes = encode_keep_mask([1, 1, 2], &[true, false]);
        assert_eq!(decode_keep_mask(&bytes).unwrap().1, vec![true, false]);
        *bytes.last_mut().unwrap() = 7;
        assert!(decode_keep_mask(&bytes).is_err());
    }

    #[test]
    fn ppm_quantizes_to_bytes() {
        let mut img = Image::black(1, 2);
        img.set_rgb(0, 1, [1.0, 0.5, 0.0]);
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back.rgb(0, 1), [1.0, 128.0 / 255.0, 0.0]);
    }
}
