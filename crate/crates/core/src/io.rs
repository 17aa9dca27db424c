//! Readers and writers for every artifact: PFM float maps, PNG images,
//! labels and masks, JSON documents and CSV tables.
//!
//! All writers are deterministic. PFM and PNG payloads round-trip
//! bit-exactly; JSON floats are written with 17 significant digits.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, NormalMap, Vec3};
use crate::grid::{Grid, RgbImage};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

// ---------------------------------------------------------------- PFM

/// A decoded PFM: `channels` interleaved f32 values per pixel, rows stored
/// top to bottom (the file itself stores them bottom to top).
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn encode(&self) -> Vec<u8> {
        let tag = if self.channels == 3 { "PF" } else { "Pf" };
        let mut out = format!("{tag}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        let row = self.width * self.channels;
        for y in (0..self.height).rev() {
            for v in &self.data[y * row..(y + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Pfm> {
        let fmt_err = |offset: usize, message: String| Error::Format {
            format: "PFM",
            offset: offset as u64,
            message,
        };
        // Header: three whitespace-separated tokens, then exactly one
        // whitespace byte before the payload.
        let mut pos = 0usize;
        let mut token = || -> Result<(usize, String)> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(fmt_err(pos, "unexpected end of header".into()));
            }
            Ok((
                start,
                String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
            ))
        };
        let (at, tag) = token()?;
        let channels = match tag.as_str() {
            "Pf" => 1,
            "PF" => 3,
            _ => return Err(fmt_err(at, format!("bad magic {tag:?}"))),
        };
        let mut dim = |what: &str| -> Result<usize> {
            let (at, t) = token()?;
            t.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| fmt_err(at, format!("bad {what} {t:?}")))
        };
        let width = dim("width")?;
        let height = dim("height")?;
        let (at, t) = token()?;
        let scale: f64 = t
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite() && *s != 0.0)
            .ok_or_else(|| fmt_err(at, format!("bad scale {t:?}")))?;
        let little = scale < 0.0;
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(fmt_err(pos, "missing separator after header".into()));
        }
        let start = pos + 1;
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| fmt_err(0, "dimensions overflow".into()))?;
        let needed = count * 4;
        let available = bytes.len() - start;
        if available < needed {
            return Err(fmt_err(
                bytes.len(),
                format!("truncated payload: expected {needed} bytes, found {available}"),
            ));
        }
        if available > needed {
            return Err(fmt_err(
                start + needed,
                "trailing bytes after payload".into(),
            ));
        }
        let row = width * channels;
        let mut data = vec![0f32; count];
        for (i, chunk) in bytes[start..].chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let (file_row, col) = (i / row, i % row);
            data[(height - 1 - file_row) * row + col] = v;
        }
        Ok(Pfm {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Pfm> {
        Pfm::decode(&read_bytes(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode())
    }

    fn expect_channels(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::input(format!(
                "expected a {channels}-channel PFM, found {} channels",
                self.channels
            )));
        }
        Ok(())
    }
}

/// Single-channel PFM of a scalar field (stored as f32).
pub fn scalar_to_pfm(values: &Grid<f64>) -> Pfm {
    Pfm {
        width: values.width(),
        height: values.height(),
        channels: 1,
        data: values.iter().map(|&v| v as f32).collect(),
    }
}

pub fn pfm_to_scalar(pfm: &Pfm) -> Result<Grid<f64>> {
    pfm.expect_channels(1)?;
    Grid::from_vec(
        pfm.width,
        pfm.height,
        pfm.data.iter().map(|&v| v as f64).collect(),
    )
}

/// Depth with invalid pixels written as 0.
pub fn depth_to_pfm(depth: &DepthMap) -> Pfm {
    scalar_to_pfm(&Grid::from_fn(depth.width(), depth.height(), |x, y| {
        if depth.valid[(x, y)] {
            depth.values[(x, y)]
        } else {
            0.0
        }
    }))
}

/// Depth from a PFM; non-positive and non-finite pixels are invalid.
pub fn pfm_to_depth(pfm: &Pfm) -> Result<DepthMap> {
    Ok(DepthMap::new(pfm_to_scalar(pfm)?))
}

/// Three-channel PFM of a vector field, invalid pixels written as zeros.
pub fn vectors_to_pfm(vectors: &Grid<Vec3>, valid: &Grid<bool>) -> Pfm {
    let mut data = Vec::with_capacity(vectors.len() * 3);
    for (v, &ok) in vectors.iter().zip(valid.iter()) {
        for c in 0..3 {
            data.push(if ok { v[c] as f32 } else { 0.0 });
        }
    }
    Pfm {
        width: vectors.width(),
        height: vectors.height(),
        channels: 3,
        data,
    }
}

pub fn normals_to_pfm(normals: &NormalMap) -> Pfm {
    vectors_to_pfm(&normals.normals, &normals.valid)
}

/// Normals from a PFM; all-zero pixels are invalid.
pub fn pfm_to_normals(pfm: &Pfm) -> Result<NormalMap> {
    pfm.expect_channels(3)?;
    let vecs: Vec<Vec3> = pfm
        .data
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let valid: Vec<bool> = vecs
        .iter()
        .map(|v| v.norm() > 0.0 && v.iter().all(|c| c.is_finite()))
        .collect();
    Ok(NormalMap {
        normals: Grid::from_vec(pfm.width, pfm.height, vecs)?,
        valid: Grid::from_vec(pfm.width, pfm.height, valid)?,
    })
}

// ---------------------------------------------------------------- PNG

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        format: "PNG",
        offset: 0,
        message: e.to_string(),
    }
}

fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

fn decode_png(
    bytes: &[u8],
    color: png::ColorType,
    depth: png::BitDepth,
) -> Result<(usize, usize, Vec<u8>)> {
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != color || info.bit_depth != depth {
        return Err(png_err(format!(
            "expected {color:?}/{depth:?}, found {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.line_size * info.height as usize);
    Ok((info.width as usize, info.height as usize, buf))
}

/// Channel value in `[0, 1]` to an 8-bit sample (rounded, clamped).
pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_rgb_png(image: &RgbImage) -> Result<Vec<u8>> {
    let data: Vec<u8> = image.iter().flat_map(|c| c.map(quantize8)).collect();
    encode_png(
        image.width(),
        image.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &data,
    )
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let (w, h, buf) = decode_png(bytes, png::ColorType::Rgb, png::BitDepth::Eight)?;
    let pixels = buf
        .chunks_exact(3)
        .map(|c| {
            [
                c[0] as f64 / 255.0,
                c[1] as f64 / 255.0,
                c[2] as f64 / 255.0,
            ]
        })
        .collect();
    Grid::from_vec(w, h, pixels)
}

pub fn encode_labels_png(labels: &Grid<u32>) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(labels.len() * 2);
    for &l in labels.iter() {
        let v = u16::try_from(l)
            .map_err(|_| Error::input(format!("label {l} does not fit 16 bits")))?;
        data.extend_from_slice(&v.to_be_bytes());
    }
    encode_png(
        labels.width(),
        labels.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &data,
    )
}

pub fn decode_labels_png(bytes: &[u8]) -> Result<Grid<u32>> {
    let (w, h, buf) = decode_png(bytes, png::ColorType::Grayscale, png::BitDepth::Sixteen)?;
    let values = buf
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .collect();
    Grid::from_vec(w, h, values)
}

pub fn encode_mask_png(mask: &Grid<bool>) -> Result<Vec<u8>> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode_png(
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &data,
    )
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<Grid<bool>> {
    let (w, h, buf) = decode_png(bytes, png::ColorType::Grayscale, png::BitDepth::Eight)?;
    let mut values = Vec::with_capacity(buf.len());
    for (i, &v) in buf.iter().enumerate() {
        match v {
            0 => values.push(false),
            255 => values.push(true),
            _ => return Err(png_err(format!("mask pixel {i} is {v}, expected 0 or 255"))),
        }
    }
    Grid::from_vec(w, h, values)
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    decode_rgb_png(&read_bytes(path)?)
}

pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_rgb_png(image)?)
}

pub fn read_labels_png(path: &Path) -> Result<Grid<u32>> {
    decode_labels_png(&read_bytes(path)?)
}

pub fn write_labels_png(path: &Path, labels: &Grid<u32>) -> Result<()> {
    write_bytes(path, &encode_labels_png(labels)?)
}

pub fn read_mask_png(path: &Path) -> Result<Grid<bool>> {
    decode_mask_png(&read_bytes(path)?)
}

pub fn write_mask_png(path: &Path, mask: &Grid<bool>) -> Result<()> {
    write_bytes(path, &encode_mask_png(mask)?)
}

// ---------------------------------------------------------------- JSON

/// Pretty JSON with every float written in scientific notation with 17
/// significant digits. Non-finite floats become `null`.
struct PreciseFormatter(serde_json::ser::PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut out, PreciseFormatter(Default::default()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

// ---------------------------------------------------------------- CSV

/// A numeric table with a header row; floats use Rust's shortest
/// round-trip formatting.
pub fn encode_csv(header: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::input(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::input("csv row length differs from header"));
        }
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::input(format!("csv: {e}")))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_bytes(path, &encode_csv(header, rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pfm(w: usize, h: usize, channels: usize, seed: u64) -> Pfm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Pfm {
            width: w,
            height: h,
            channels,
            data: (0..w * h * channels)
                .map(|_| rng.random_range(-5.0f32..20.0))
                .collect(),
        }
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        for channels in [1, 3] {
            let pfm = random_pfm(16, 16, channels, 3);
            let back = Pfm::decode(&pfm.encode()).unwrap();
            let bits = |p: &Pfm| p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&pfm));
            assert_eq!((back.width, back.height, back.channels), (16, 16, channels));
        }
    }

    #[test]
    fn pfm_layout_by_hand() {
        // 2x2 grayscale: top row (1, 2), bottom row (3, 4).
        let pfm = Pfm {
            width: 2,
            height: 2,
            channels: 1,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let bytes = pfm.encode();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        let payload: Vec<f32> = bytes[header.len()..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        assert_eq!(payload, vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn positive_scale_means_big_endian() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(Pfm::decode(&bytes).unwrap().data, vec![2.5]);
    }

    #[test]
    fn truncated_pfm_names_the_missing_offset() {
        let bytes = random_pfm(4, 3, 1, 1).encode();
        let cut = &bytes[..bytes.len() - 5];
        match Pfm::decode(cut) {
            Err(Error::Format {
                format: "PFM",
                offset,
                ..
            }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
        match Pfm::decode(b"PX\n1 1\n-1\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        match Pfm::decode(b"Pf\n1 x\n-1\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depth_pfm_keeps_holes() {
        let depth = DepthMap::new(Grid::from_vec(3, 1, vec![1.5, 0.0, 2.25]).unwrap());
        let back = pfm_to_depth(&Pfm::decode(&depth_to_pfm(&depth).encode()).unwrap()).unwrap();
        assert_eq!(back, depth);
    }

    #[test]
    fn png_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img: RgbImage = Grid::from_fn(7, 5, |_, _| {
            [0; 3].map(|_: i32| rng.random_range(0..=255u8) as f64 / 255.0)
        });
        assert_eq!(decode_rgb_png(&encode_rgb_png(&img).unwrap()).unwrap(), img);

        let labels = Grid::from_fn(6, 4, |x, y| (x * 9000 + y) as u32);
        assert_eq!(
            decode_labels_png(&encode_labels_png(&labels).unwrap()).unwrap(),
            labels
        );
        assert!(encode_labels_png(&Grid::filled(1, 1, 70_000)).is_err());

        let mask = Grid::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        assert_eq!(
            decode_mask_png(&encode_mask_png(&mask).unwrap()).unwrap(),
            mask
        );
        assert!(decode_labels_png(&encode_mask_png(&mask).unwrap()).is_err());
    }

    #[test]
    fn json_floats_keep_17_digits() {
        let v = vec![0.1, 1.0 / 3.0, -2.5e-300, f64::NAN];
        let text = String::from_utf8(to_json_bytes(&v).unwrap()).unwrap();
        assert!(text.contains("3.3333333333333331e-1"), "{text}");
        assert!(text.contains("null"));
        let back: Vec<Option<f64>> = serde_json::from_str(&text).unwrap();
        assert_eq!(back[..3], [Some(0.1), Some(1.0 / 3.0), Some(-2.5e-300)]);
        assert_eq!(back[3], None);
        assert_eq!(to_json_bytes(&v).unwrap(), to_json_bytes(&v).unwrap());
    }

    #[test]
    fn csv_table() {
        let bytes = encode_csv(&["a", "b"], &[vec![1.0, 0.5], vec![2.0, 1e-20]]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "a,b\n1,0.5\n2,0.00000000000000000001\n"
        );
        assert!(encode_csv(&["a"], &[vec![1.0, 2.0]]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn pfm_round_trip_any_shape(w in 1usize..9, h in 1usize..9, three in proptest::bool::ANY, seed in 0u64..1000) {
            let pfm = random_pfm(w, h, if three { 3 } else { 1 }, seed);
            proptest::prop_assert_eq!(Pfm::decode(&pfm.encode()).unwrap(), pfm);
        }
    }
}
