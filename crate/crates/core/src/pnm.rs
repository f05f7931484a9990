//! Binary portable pixmap I/O: 8-bit P5/P6 frames and 16-bit P5 depth maps.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::frame::{Frame, Plane};

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = reader;
    reader.set_format(ImageFormat::Pnm);
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an 8- or 16-bit P5/P6 image as a [`Frame`] with intensities in [0, 1].
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let data = rgb.into_raw().into_iter().map(f64::from).collect();
        Frame::new(w, h, 3, data)
    } else {
        let gray = img.to_luma32f();
        let data = gray.into_raw().into_iter().map(f64::from).collect();
        Ok(Frame::from_gray(Plane::new(w, h, data)?))
    }
}

/// Reads a single-channel depth map, keeping raw sample values (0..=65535 for 16-bit).
pub fn read_depth(path: &Path) -> Result<Plane> {
    let img = decode(path)?;
    if img.color().has_color() {
        return Err(Error::parse(path, "depth map must be single-channel"));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.to_luma16().into_raw().into_iter().map(f64::from).collect();
    Plane::new(w, h, data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType, subtype: PnmSubtype) -> Result<()> {
    write_atomic(path, |file| {
        PnmEncoder::new(BufWriter::new(file))
            .with_subtype(subtype)
            .write_image(bytes, w as u32, h as u32, color)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    })
}

/// Writes a frame as P6 (colour) or P5 (gray), 8 bits per sample.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let bytes: Vec<u8> = frame.data().iter().map(|&v| to_u8(v)).collect();
    let (color, subtype) = if frame.is_color() {
        (ExtendedColorType::Rgb8, PnmSubtype::Pixmap(SampleEncoding::Binary))
    } else {
        (ExtendedColorType::L8, PnmSubtype::Graymap(SampleEncoding::Binary))
    };
    encode(path, &bytes, frame.width(), frame.height(), color, subtype)
}

/// Writes a 16-bit P5 depth map. Values are rounded and clamped to 0..=65535.
pub fn write_depth(path: &Path, depth: &Plane) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", depth.width(), depth.height()).into_bytes();
    bytes.reserve(depth.len() * 2);
    for &v in depth.data() {
        let s = v.round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    write_bytes_atomic(path, &bytes)
}

/// Writes `contents` through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
    let tmp = temp_sibling(path);
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    if let Err(e) = write(file) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Atomic write of a byte buffer.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    write_atomic(path, |mut f| f.write_all(bytes).map_err(|e| Error::io(path, e)))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Affine map of a plane onto 0..=255 gray. Returns the 8-bit frame plus
/// `(offset, scale)` such that `value = offset + scale * byte`.
pub fn quantize_plane(p: &Plane) -> (Frame, f64, f64) {
    let (lo, hi) = p
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if p.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let scale = if hi > lo { (hi - lo) / 255.0 } else { 1.0 };
    let q = p.map(|v| ((v - lo) / scale).round() / 255.0);
    (Frame::from_gray(q), lo, scale)
}

/// Debug dump of a flow field as `<stem>_u.pgm`, `<stem>_v.pgm` and `<stem>.scale.txt`.
pub fn dump_flow(dir: &Path, stem: &str, flow: &FlowField) -> Result<()> {
    let (fu, ou, su) = quantize_plane(&flow.u);
    let (fv, ov, sv) = quantize_plane(&flow.v);
    write_frame(&dir.join(format!("{stem}_u.pgm")), &fu)?;
    write_frame(&dir.join(format!("{stem}_v.pgm")), &fv)?;
    let text = format!("# value = offset + scale * byte\nu_offset {ou:e}\nu_scale {su:e}\nv_offset {ov:e}\nv_scale {sv:e}\n");
    write_bytes_atomic(&dir.join(format!("{stem}.scale.txt")), text.as_bytes())
}
