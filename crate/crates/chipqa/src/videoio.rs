//! Y4M and raw planar YUV readers plus the two-scale downsampler.
//!
//! Only the luma plane is ever decoded; chroma bytes are skipped. 10-bit
//! sources are read as little-endian 16-bit words and kept at native range.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Chroma subsampling of a planar YUV stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelFormat {
    /// 4:2:0, chroma planes are w/2 x h/2.
    C420,
    /// 4:2:2, chroma planes are w/2 x h.
    C422,
    /// 4:4:4, chroma planes are full size.
    C444,
}

impl PixelFormat {
    /// Samples per frame across all three planes, as a multiple of w*h.
    fn plane_factor_num_den(self) -> (usize, usize) {
        match self {
            PixelFormat::C420 => (3, 2),
            PixelFormat::C422 => (2, 1),
            PixelFormat::C444 => (3, 1),
        }
    }

    fn chroma_samples(self, width: usize, height: usize) -> usize {
        match self {
            PixelFormat::C420 => (width / 2) * (height / 2) * 2,
            PixelFormat::C422 => (width / 2) * height * 2,
            PixelFormat::C444 => width * height * 2,
        }
    }

    pub fn y4m_tag(self) -> &'static str {
        match self {
            PixelFormat::C420 => "C420",
            PixelFormat::C422 => "C422",
            PixelFormat::C444 => "C444",
        }
    }
}

/// Explicit geometry for headerless raw streams.
#[derive(Debug, Clone, Copy)]
pub struct RawGeometry {
    pub width: usize,
    pub height: usize,
    pub format: PixelFormat,
    pub bit_depth: u8,
}

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("raw stream {path} needs explicit --width/--height/--pix-fmt/--bit-depth")]
    GeometryRequired { path: PathBuf },
    #[error("frame index {index} out of range (source has {count} frames)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("frame too small: {width}x{height}, need at least {min}x{min}")]
    FrameTooSmall { width: usize, height: usize, min: usize },
    #[error("unsupported bit depth {0} (expected 8 or 10)")]
    UnsupportedBitDepth(u8),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VideoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        VideoError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug)]
enum Container {
    /// Byte offset of each frame's luma plane.
    Y4m { frame_offsets: Vec<u64> },
    Raw,
}

/// An opened video: geometry plus enough layout information to read any
/// luma plane directly. Reads open their own file handle, so one source can
/// be shared by concurrent readers.
#[derive(Debug)]
pub struct VideoSource {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub bit_depth: u8,
    pub pixel_format: PixelFormat,
    /// Frames per second as (numerator, denominator); raw streams default to (25, 1).
    pub frame_rate: (u32, u32),
    container: Container,
}

/// One luma plane, converted to real-valued samples at native code range.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub luma: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub index: usize,
}

impl Frame {
    pub fn new(luma: Vec<f64>, width: usize, height: usize, index: usize) -> Self {
        assert_eq!(luma.len(), width * height);
        Frame { luma, width, height, index }
    }

    pub fn constant(value: f64, width: usize, height: usize, index: usize) -> Self {
        Frame::new(vec![value; width * height], width, height, index)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.luma[row * self.width + col]
    }
}

fn bytes_per_sample(bit_depth: u8) -> usize {
    if bit_depth > 8 { 2 } else { 1 }
}

fn luma_bytes(width: usize, height: usize, bit_depth: u8) -> usize {
    width * height * bytes_per_sample(bit_depth)
}

fn frame_bytes(width: usize, height: usize, format: PixelFormat, bit_depth: u8) -> usize {
    let (num, den) = format.plane_factor_num_den();
    width * height * num / den * bytes_per_sample(bit_depth)
}

/// Open a Y4M (by header) or raw planar YUV file (geometry must be given).
/// The frame count excludes any trailing partial frame.
pub fn open_source(path: &Path, explicit_geometry: Option<RawGeometry>) -> Result<VideoSource, VideoError> {
    let mut file = File::open(path).map_err(|e| VideoError::io(path, e))?;
    let mut magic = [0u8; 9];
    let is_y4m = match file.read_exact(&mut magic) {
        Ok(()) => &magic == b"YUV4MPEG2",
        Err(_) => false,
    };
    file.seek(SeekFrom::Start(0)).map_err(|e| VideoError::io(path, e))?;

    if is_y4m {
        open_y4m(path, file)
    } else if path.extension().map(|e| e == "y4m").unwrap_or(false) && explicit_geometry.is_none() {
        Err(VideoError::MalformedHeader {
            path: path.to_path_buf(),
            detail: "missing YUV4MPEG2 magic".into(),
        })
    } else {
        let geom = explicit_geometry.ok_or_else(|| VideoError::GeometryRequired { path: path.to_path_buf() })?;
        open_raw(path, file, geom)
    }
}

fn open_raw(path: &Path, file: File, geom: RawGeometry) -> Result<VideoSource, VideoError> {
    if geom.bit_depth != 8 && geom.bit_depth != 10 {
        return Err(VideoError::UnsupportedBitDepth(geom.bit_depth));
    }
    let payload = file.metadata().map_err(|e| VideoError::io(path, e))?.len() as usize;
    let per_frame = frame_bytes(geom.width, geom.height, geom.format, geom.bit_depth);
    let frame_count = payload / per_frame;
    Ok(VideoSource {
        path: path.to_path_buf(),
        width: geom.width,
        height: geom.height,
        frame_count,
        bit_depth: geom.bit_depth,
        pixel_format: geom.format,
        frame_rate: (25, 1),
        container: Container::Raw,
    })
}

fn parse_y4m_header(path: &Path, line: &str) -> Result<(usize, usize, PixelFormat, u8, (u32, u32)), VideoError> {
    let bad = |detail: &str| VideoError::MalformedHeader { path: path.to_path_buf(), detail: detail.into() };
    let mut fields = line.trim_end().split(' ');
    if fields.next() != Some("YUV4MPEG2") {
        return Err(bad("missing YUV4MPEG2 magic"));
    }
    let mut width = None;
    let mut height = None;
    let mut format = PixelFormat::C420;
    let mut bit_depth = 8u8;
    let mut rate = (25u32, 1u32);
    for field in fields {
        let (tag, rest) = match field.split_at_checked(1) {
            Some(parts) => parts,
            None => continue,
        };
        match tag {
            "W" => width = Some(rest.parse::<usize>().map_err(|_| bad("bad W field"))?),
            "H" => height = Some(rest.parse::<usize>().map_err(|_| bad("bad H field"))?),
            "F" => {
                let (n, d) = rest.split_once(':').ok_or_else(|| bad("bad F field"))?;
                rate = (
                    n.parse().map_err(|_| bad("bad F numerator"))?,
                    d.parse().map_err(|_| bad("bad F denominator"))?,
                );
            }
            "C" => {
                let (fmt, depth) = parse_colorspace(rest).ok_or_else(|| bad("unsupported C tag"))?;
                format = fmt;
                bit_depth = depth;
            }
            // Ixx interlacing and Ax:y aspect tags carry no layout information here.
            _ => {}
        }
    }
    let width = width.ok_or_else(|| bad("missing W field"))?;
    let height = height.ok_or_else(|| bad("missing H field"))?;
    Ok((width, height, format, bit_depth, rate))
}

fn parse_colorspace(tag: &str) -> Option<(PixelFormat, u8)> {
    let (base, depth) = if let Some(stripped) = tag.strip_suffix("p10") {
        (stripped, 10)
    } else {
        (tag, 8)
    };
    let format = match base {
        "420" | "420jpeg" | "420mpeg2" | "420paldv" => PixelFormat::C420,
        "422" => PixelFormat::C422,
        "444" => PixelFormat::C444,
        _ => return None,
    };
    Some((format, depth))
}

fn open_y4m(path: &Path, file: File) -> Result<VideoSource, VideoError> {
    let file_len = file.metadata().map_err(|e| VideoError::io(path, e))?.len();
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| VideoError::io(path, e))?;
    let (width, height, format, bit_depth, rate) = parse_y4m_header(path, &header)?;

    let per_frame = frame_bytes(width, height, format, bit_depth) as u64;
    let mut frame_offsets = Vec::new();
    let mut pos = header.len() as u64;
    // Index frame payload offsets; a trailing partial frame is not counted.
    loop {
        let mut marker = String::new();
        let n = reader.read_line(&mut marker).map_err(|e| VideoError::io(path, e))?;
        if n == 0 {
            break;
        }
        if !marker.starts_with("FRAME") {
            return Err(VideoError::MalformedHeader {
                path: path.to_path_buf(),
                detail: format!("expected FRAME marker at byte {pos}"),
            });
        }
        pos += n as u64;
        if pos + per_frame > file_len {
            break;
        }
        frame_offsets.push(pos);
        reader.seek(SeekFrom::Current(per_frame as i64)).map_err(|e| VideoError::io(path, e))?;
        pos += per_frame;
    }

    Ok(VideoSource {
        path: path.to_path_buf(),
        width,
        height,
        frame_count: frame_offsets.len(),
        bit_depth,
        pixel_format: format,
        frame_rate: rate,
        container: Container::Y4m { frame_offsets },
    })
}

impl VideoSource {
    /// Read the luma plane of frame `t`. Pure: rereads return identical data.
    pub fn read_luma(&self, t: usize) -> Result<Frame, VideoError> {
        if t >= self.frame_count {
            return Err(VideoError::IndexOutOfRange { index: t, count: self.frame_count });
        }
        let offset = match &self.container {
            Container::Y4m { frame_offsets } => frame_offsets[t],
            Container::Raw => (t * frame_bytes(self.width, self.height, self.pixel_format, self.bit_depth)) as u64,
        };
        let mut file = File::open(&self.path).map_err(|e| VideoError::io(&self.path, e))?;
        file.seek(SeekFrom::Start(offset)).map_err(|e| VideoError::io(&self.path, e))?;
        let mut buf = vec![0u8; luma_bytes(self.width, self.height, self.bit_depth)];
        file.read_exact(&mut buf).map_err(|e| VideoError::io(&self.path, e))?;
        let luma = if self.bit_depth > 8 {
            buf.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f64).collect()
        } else {
            buf.iter().map(|&b| b as f64).collect()
        };
        Ok(Frame::new(luma, self.width, self.height, t))
    }
}

/// 5x5 Gaussian taps, sigma 1.0, normalized to unit sum.
fn half_band_kernel() -> [f64; 5] {
    let sigma = 1.0f64;
    let mut k = [0.0; 5];
    let mut sum = 0.0;
    for (i, item) in k.iter_mut().enumerate() {
        let x = i as f64 - 2.0;
        *item = (-x * x / (2.0 * sigma * sigma)).exp();
        sum += *item;
    }
    for item in &mut k {
        *item /= sum;
    }
    k
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    // Symmetric reflection without edge repeat: -1 -> 1, len -> len - 2.
    let len = len as isize;
    let mut i = i;
    while i < 0 || i >= len {
        if i < 0 {
            i = -i;
        }
        if i >= len {
            i = 2 * (len - 1) - i;
        }
    }
    i as usize
}

/// Low-pass (5x5 Gaussian, sigma 1.0, reflect borders) and decimate by 2.
/// Output dimensions are floor(w/2) x floor(h/2).
pub fn downsample2(f: &Frame) -> Result<Frame, VideoError> {
    const MIN_DIM: usize = 4;
    if f.width < MIN_DIM || f.height < MIN_DIM {
        return Err(VideoError::FrameTooSmall { width: f.width, height: f.height, min: MIN_DIM });
    }
    let k = half_band_kernel();
    let (w, h) = (f.width, f.height);
    // Horizontal pass.
    let mut tmp = vec![0.0f64; w * h];
    for r in 0..h {
        let row = &f.luma[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in k.iter().enumerate() {
                acc += kv * row[reflect(c as isize + ki as isize - 2, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    // Vertical pass, sampled only at even rows/cols.
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0f64; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            let (sr, sc) = (2 * r, 2 * c);
            let mut acc = 0.0;
            for (ki, &kv) in k.iter().enumerate() {
                acc += kv * tmp[reflect(sr as isize + ki as isize - 2, h) * w + sc];
            }
            out[r * ow + c] = acc;
        }
    }
    Ok(Frame::new(out, ow, oh, f.index))
}

fn clamp_code(v: f64, bit_depth: u8) -> f64 {
    let max = ((1u32 << bit_depth) - 1) as f64;
    v.round().clamp(0.0, max)
}

/// Write frames as Y4M with neutral (mid-gray) chroma. Samples are rounded
/// and clamped to the declared bit depth.
pub fn write_y4m(
    path: &Path,
    frames: &[Frame],
    format: PixelFormat,
    bit_depth: u8,
    frame_rate: (u32, u32),
) -> Result<(), VideoError> {
    if bit_depth != 8 && bit_depth != 10 {
        return Err(VideoError::UnsupportedBitDepth(bit_depth));
    }
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| VideoError::io(path, e))?);
    let (w, h) = (frames[0].width, frames[0].height);
    let ctag = match (format, bit_depth) {
        (f, 8) => f.y4m_tag().to_string(),
        (f, _) => format!("{}p10", f.y4m_tag()),
    };
    writeln!(file, "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 {}", w, h, frame_rate.0, frame_rate.1, ctag)
        .map_err(|e| VideoError::io(path, e))?;
    let neutral = 1u32 << (bit_depth - 1);
    let chroma_len = format.chroma_samples(w, h);
    for frame in frames {
        writeln!(file, "FRAME").map_err(|e| VideoError::io(path, e))?;
        write_plane(&mut file, path, &frame.luma, bit_depth)?;
        let chroma = vec![neutral as f64; chroma_len];
        write_plane(&mut file, path, &chroma, bit_depth)?;
    }
    Ok(())
}

/// Write frames as a raw planar stream (Y then U then V per frame).
pub fn write_raw(path: &Path, frames: &[Frame], format: PixelFormat, bit_depth: u8) -> Result<(), VideoError> {
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| VideoError::io(path, e))?);
    let (w, h) = (frames[0].width, frames[0].height);
    let neutral = (1u32 << (bit_depth - 1)) as f64;
    let chroma_len = format.chroma_samples(w, h);
    for frame in frames {
        write_plane(&mut file, path, &frame.luma, bit_depth)?;
        let chroma = vec![neutral; chroma_len];
        write_plane(&mut file, path, &chroma, bit_depth)?;
    }
    Ok(())
}

fn write_plane<W: Write>(out: &mut W, path: &Path, samples: &[f64], bit_depth: u8) -> Result<(), VideoError> {
    if bit_depth > 8 {
        for &v in samples {
            let code = clamp_code(v, bit_depth) as u16;
            out.write_all(&code.to_le_bytes()).map_err(|e| VideoError::io(path, e))?;
        }
    } else {
        let bytes: Vec<u8> = samples.iter().map(|&v| clamp_code(v, 8) as u8).collect();
        out.write_all(&bytes).map_err(|e| VideoError::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Leak the tempdir so the path outlives the helper; tests are short-lived.
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn y4m_header_echoes_geometry() {
        let path = tmp("a.y4m");
        let frames = vec![Frame::constant(12.0, 32, 16, 0)];
        write_y4m(&path, &frames, PixelFormat::C420, 8, (30, 1)).unwrap();
        let src = open_source(&path, None).unwrap();
        assert_eq!((src.width, src.height), (32, 16));
        assert_eq!(src.frame_count, 1);
        assert_eq!(src.bit_depth, 8);
        assert_eq!(src.frame_rate, (30, 1));
    }

    #[test]
    fn raw_frame_count_from_byte_arithmetic() {
        let path = tmp("b.yuv");
        // Two 960x540 4:2:0 8-bit frames: 2 * 777_600 = 1_555_200 bytes.
        std::fs::write(&path, vec![0u8; 1_555_200]).unwrap();
        let geom = RawGeometry { width: 960, height: 540, format: PixelFormat::C420, bit_depth: 8 };
        let src = open_source(&path, Some(geom)).unwrap();
        assert_eq!(src.frame_count, 2);
    }

    #[test]
    fn raw_without_geometry_is_rejected() {
        let path = tmp("c.yuv");
        std::fs::write(&path, vec![0u8; 64]).unwrap();
        match open_source(&path, None) {
            Err(VideoError::GeometryRequired { .. }) => {}
            other => panic!("expected GeometryRequired, got {other:?}"),
        }
    }

    #[test]
    fn truncated_trailing_frame_is_excluded() {
        let path = tmp("d.yuv");
        let geom = RawGeometry { width: 16, height: 16, format: PixelFormat::C420, bit_depth: 8 };
        let per_frame = 16 * 16 * 3 / 2;
        std::fs::write(&path, vec![7u8; per_frame * 2 + per_frame / 3]).unwrap();
        let src = open_source(&path, Some(geom)).unwrap();
        assert_eq!(src.frame_count, 2);
    }

    #[test]
    fn bad_y4m_magic_is_malformed() {
        let path = tmp("e.y4m");
        std::fs::write(&path, b"YUV4MPEGX W4 H4\n").unwrap();
        match open_source(&path, None) {
            Err(VideoError::MalformedHeader { .. }) => {}
            other => panic!("expected MalformedHeader, got {other:?}"),
        }
    }

    #[test]
    fn read_luma_bounds_and_constant_payload() {
        let path = tmp("f.y4m");
        let frames: Vec<Frame> =
            (0..5).map(|i| Frame::constant(if i == 3 { 128.0 } else { 10.0 }, 8, 8, i)).collect();
        write_y4m(&path, &frames, PixelFormat::C420, 8, (25, 1)).unwrap();
        let src = open_source(&path, None).unwrap();
        let f3 = src.read_luma(3).unwrap();
        assert!(f3.luma.iter().all(|&v| v == 128.0));
        match src.read_luma(5) {
            Err(VideoError::IndexOutOfRange { index: 5, count: 5 }) => {}
            other => panic!("expected IndexOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn ten_bit_samples_read_back_at_native_range() {
        let path = tmp("g.yuv");
        let mut frame = Frame::constant(100.0, 4, 4, 0);
        frame.luma[0] = 512.0;
        write_raw(&path, &[frame], PixelFormat::C444, 10).unwrap();
        let geom = RawGeometry { width: 4, height: 4, format: PixelFormat::C444, bit_depth: 10 };
        let src = open_source(&path, Some(geom)).unwrap();
        let back = src.read_luma(0).unwrap();
        assert_eq!(back.luma[0], 512.0);
        assert_eq!(back.luma[1], 100.0);
    }

    #[test]
    fn downsample_constant_stays_constant() {
        let f = Frame::constant(77.0, 64, 64, 0);
        let d = downsample2(&f).unwrap();
        assert_eq!((d.width, d.height), (32, 32));
        for &v in &d.luma {
            assert!((v - 77.0).abs() < 1e-9, "got {v}");
        }
    }

    #[test]
    fn downsample_alternating_columns_flatten() {
        let (w, h) = (64, 64);
        let luma: Vec<f64> =
            (0..w * h).map(|i| if (i % w) % 2 == 0 { 0.0 } else { 255.0 }).collect();
        let d = downsample2(&Frame::new(luma, w, h, 0)).unwrap();
        let mean: f64 = d.luma.iter().sum::<f64>() / d.luma.len() as f64;
        for &v in &d.luma {
            assert!((v - mean).abs() < 0.1 * 255.0);
        }
    }

    #[test]
    fn downsample_minimum_dimension() {
        let f = Frame::constant(1.0, 3, 3, 0);
        match downsample2(&f) {
            Err(VideoError::FrameTooSmall { .. }) => {}
            other => panic!("expected FrameTooSmall, got {other:?}"),
        }
        let f = Frame::constant(1.0, 5, 4, 0);
        let d = downsample2(&f).unwrap();
        assert_eq!((d.width, d.height), (2, 2));
    }

    #[test]
    fn downsample_preserves_mean_on_seeded_noise() {
        use rand::{Rng, SeedableRng};
        for seed in [1u64, 2, 3] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (256, 256);
            let luma: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..256.0)).collect();
            let f = Frame::new(luma, w, h, 0);
            let d = downsample2(&f).unwrap();
            let m_in: f64 = f.luma.iter().sum::<f64>() / f.luma.len() as f64;
            let m_out: f64 = d.luma.iter().sum::<f64>() / d.luma.len() as f64;
            assert!((m_in - m_out).abs() < 0.5, "seed {seed}: {m_in} vs {m_out}");
        }
    }

    proptest! {
        #[test]
        fn raw_roundtrip_is_bit_identical(
            seed in 0u64..1000,
            w in 2usize..24,
            h in 2usize..24,
            n in 1usize..4,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = w * 2; // keep 4:2:0 planes well-formed
            let h = h * 2;
            let frames: Vec<Frame> = (0..n)
                .map(|i| {
                    let luma: Vec<f64> = (0..w * h).map(|_| rng.random_range(0u32..256) as f64).collect();
                    Frame::new(luma, w, h, i)
                })
                .collect();
            let path = tmp("prop.yuv");
            write_raw(&path, &frames, PixelFormat::C420, 8).unwrap();
            let geom = RawGeometry { width: w, height: h, format: PixelFormat::C420, bit_depth: 8 };
            let src = open_source(&path, Some(geom)).unwrap();
            prop_assert_eq!(src.frame_count, n);
            for (i, f) in frames.iter().enumerate() {
                let back = src.read_luma(i).unwrap();
                prop_assert_eq!(&back.luma, &f.luma);
            }
        }
    }
}
