use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use super::{FrameSequence, FrameStoreError, Image, MaskFrame, MaskSequence, ObjectId};

const LOSSLESS_EXTENSIONS: &[&str] = &["png", "bmp", "tif", "tiff", "ppm", "pnm"];
const LOSSY_EXTENSIONS: &[&str] = &["jpg", "jpeg", "webp", "gif", "avif", "heic"];

/// Index files in `dir` named `<digits>.<ext>`, sorted by index and checked
/// for contiguity. Files with extensions outside `accept` are skipped unless
/// they are a known lossy raster, which is rejected.
fn indexed_files(dir: &Path, accept: &[&str]) -> Result<Vec<PathBuf>, FrameStoreError> {
    if !dir.is_dir() {
        return Err(FrameStoreError::MissingDirectory(dir.to_path_buf()));
    }
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if LOSSY_EXTENSIONS.contains(&ext.as_str()) {
            return Err(FrameStoreError::UnsupportedFormat(path));
        }
        if !accept.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            return Err(FrameStoreError::BadFileName(path));
        }
        let index: u64 = stem
            .parse()
            .map_err(|_| FrameStoreError::BadFileName(path.clone()))?;
        entries.push((index, path));
    }
    if entries.is_empty() {
        return Err(FrameStoreError::Empty(dir.to_path_buf()));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let start = entries[0].0;
    for (offset, (index, path)) in entries.iter().enumerate() {
        let expected = start + offset as u64;
        if *index != expected {
            return Err(FrameStoreError::NonContiguous {
                expected,
                file: path.clone(),
            });
        }
    }
    Ok(entries.into_iter().map(|(_, p)| p).collect())
}

/// Load a directory of `%05d.<ext>` lossless frames.
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<FrameSequence, FrameStoreError> {
    let dir = dir.as_ref();
    let files = indexed_files(dir, LOSSLESS_EXTENSIONS)?;
    let mut frames: Vec<Image> = Vec::with_capacity(files.len());
    for file in &files {
        let img = image::open(file).map_err(|e| FrameStoreError::Decode {
            file: file.clone(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if let Some(first) = frames.first() {
            if first.width() != w || first.height() != h {
                return Err(FrameStoreError::MixedDimensions {
                    file: file.clone(),
                    w: first.width(),
                    h: first.height(),
                    found_w: w,
                    found_h: h,
                });
            }
        }
        frames.push(Image::new(w, h, rgb.into_raw())?);
    }
    let id = dir
        .parent()
        .filter(|_| dir.file_name().is_some_and(|n| n == "frames"))
        .unwrap_or(dir)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sequence")
        .to_string();
    FrameSequence::with_sources(id, frames, files.into_iter().map(Some).collect())
}

fn frame_file(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("{t:05}.png"))
}

/// Write frames as `00001.png ...` RGB PNGs.
pub fn write_frames(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<(), FrameStoreError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, frame) in seq.frames().iter().enumerate() {
        fs::write(frame_file(dir, i + 1), encode_rgb_png(frame))?;
    }
    Ok(())
}

/// Write masks as indexed-color PNGs where palette index = object id.
pub fn write_masks(seq: &MaskSequence, dir: impl AsRef<Path>) -> Result<(), FrameStoreError> {
    let dir = dir.as_ref();
    // Validate every frame before touching the filesystem.
    let encoded = seq
        .masks()
        .iter()
        .map(encode_mask_png)
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(dir)?;
    for (i, bytes) in encoded.into_iter().enumerate() {
        fs::write(frame_file(dir, i + 1), bytes)?;
    }
    Ok(())
}

pub fn read_masks(dir: impl AsRef<Path>) -> Result<MaskSequence, FrameStoreError> {
    let files = indexed_files(dir.as_ref(), &["png"])?;
    let mut masks: Vec<MaskFrame> = Vec::with_capacity(files.len());
    for file in &files {
        let bytes = fs::read(file)?;
        let mask = decode_mask_png(&bytes).map_err(|e| match e {
            FrameStoreError::InvalidBuffer(message) => FrameStoreError::Decode {
                file: file.clone(),
                message,
            },
            other => other,
        })?;
        if let Some(first) = masks.first() {
            if first.width() != mask.width() || first.height() != mask.height() {
                return Err(FrameStoreError::DimensionMismatch(format!(
                    "{} is {}x{}, expected {}x{}",
                    file.display(),
                    mask.width(),
                    mask.height(),
                    first.width(),
                    first.height()
                )));
            }
        }
        masks.push(mask);
    }
    MaskSequence::new(masks)
}

/// Standard VOC/DAVIS label colormap.
fn label_palette() -> Vec<u8> {
    let mut palette = Vec::with_capacity(256 * 3);
    for i in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        palette.extend_from_slice(&[r, g, b]);
    }
    palette
}

fn png_error(e: impl std::fmt::Display) -> FrameStoreError {
    FrameStoreError::InvalidBuffer(e.to_string())
}

pub fn encode_mask_png(mask: &MaskFrame) -> Result<Vec<u8>, FrameStoreError> {
    let max = mask.max_label();
    if max > 255 {
        return Err(FrameStoreError::LabelOverflow { label: max });
    }
    let data: Vec<u8> = mask.labels().iter().map(|&l| l as u8).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width() as u32, mask.height() as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(label_palette());
        let mut writer = enc.write_header().map_err(png_error)?;
        writer.write_image_data(&data).map_err(png_error)?;
        writer.finish().map_err(png_error)?;
    }
    Ok(out)
}

/// Decode an 8-bit indexed (or 8-bit grayscale) PNG into raw labels.
pub fn decode_mask_png(bytes: &[u8]) -> Result<MaskFrame, FrameStoreError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_error)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_error("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_error)?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(
            info.color_type,
            png::ColorType::Indexed | png::ColorType::Grayscale
        )
    {
        return Err(png_error(format!(
            "mask must be 8-bit indexed or grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let labels: Vec<ObjectId> = buf[..info.buffer_size()]
        .chunks(info.line_size)
        .flat_map(|row| row[..w].iter().map(|&v| ObjectId::from(v)))
        .collect();
    MaskFrame::new(w, h, labels)
}

pub fn encode_rgb_png(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        // Writing to a Vec with a valid header cannot fail.
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(img.pixels()).expect("png data");
        writer.finish().expect("png finish");
    }
    out
}

/// Decode any lossless raster the `image` crate understands into RGB.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<Image, FrameStoreError> {
    let img = image::load_from_memory(bytes).map_err(png_error)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Image::new(w, h, img.into_raw())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_store::BoundingBox;

    fn write_png(dir: &Path, name: &str, w: usize, h: usize) {
        fs::write(
            dir.join(name),
            encode_rgb_png(&Image::filled(w, h, [10, 20, 30])),
        )
        .unwrap();
    }

    #[test]
    fn loads_contiguous_directory() {
        let tmp = tempfile::tempdir().unwrap();
        for t in 1..=5 {
            write_png(tmp.path(), &format!("{t:05}.png"), 4, 3);
        }
        let seq = load_sequence(tmp.path()).unwrap();
        assert_eq!(seq.len(), 5);
        assert_eq!((seq.width(), seq.height()), (4, 3));
        assert_eq!(seq.frame(5).pixel(3, 2), [10, 20, 30]);
        assert!(seq.source(1).unwrap().ends_with("00001.png"));
    }

    #[test]
    fn rejects_gaps() {
        let tmp = tempfile::tempdir().unwrap();
        write_png(tmp.path(), "00001.png", 4, 4);
        write_png(tmp.path(), "00003.png", 4, 4);
        let err = load_sequence(tmp.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-contiguous"), "{msg}");
        assert!(msg.contains("00003.png"), "{msg}");
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let tmp = tempfile::tempdir().unwrap();
        write_png(tmp.path(), "00001.png", 64, 64);
        write_png(tmp.path(), "00002.png", 32, 32);
        let msg = load_sequence(tmp.path()).unwrap_err().to_string();
        assert!(msg.contains("mixed dimensions"), "{msg}");
        assert!(msg.contains("00002.png"), "{msg}");
    }

    #[test]
    fn rejects_missing_directory() {
        let err = load_sequence("/definitely/not/here").unwrap_err();
        assert!(matches!(err, FrameStoreError::MissingDirectory(_)));
    }

    #[test]
    fn rejects_lossy_frames() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("00001.jpg"), b"not really").unwrap();
        assert!(matches!(
            load_sequence(tmp.path()).unwrap_err(),
            FrameStoreError::UnsupportedFormat(_)
        ));
    }

    #[test]
    fn storage_may_start_at_any_index() {
        let tmp = tempfile::tempdir().unwrap();
        write_png(tmp.path(), "00000.png", 2, 2);
        write_png(tmp.path(), "00001.png", 2, 2);
        assert_eq!(load_sequence(tmp.path()).unwrap().len(), 2);
    }

    #[test]
    fn background_masks_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let seq = MaskSequence::new(vec![MaskFrame::empty(4, 4), MaskFrame::empty(4, 4)]).unwrap();
        write_masks(&seq, tmp.path()).unwrap();
        assert_eq!(read_masks(tmp.path()).unwrap(), seq);
    }

    #[test]
    fn two_object_masks_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = MaskFrame::empty(7, 5);
        m.fill_box(BoundingBox::new(0, 0, 3, 3), 1);
        m.fill_box(BoundingBox::new(4, 1, 7, 5), 2);
        let seq = MaskSequence::new(vec![m.clone(), MaskFrame::empty(7, 5), m]).unwrap();
        write_masks(&seq, tmp.path()).unwrap();
        let back = read_masks(tmp.path()).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.object_count(), 2);
    }

    #[test]
    fn label_overflow_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = MaskFrame::empty(2, 2);
        m.set(1, 1, 300);
        let seq = MaskSequence::new(vec![m]).unwrap();
        let msg = write_masks(&seq, tmp.path()).unwrap_err().to_string();
        assert!(msg.contains("label overflow"), "{msg}");
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn read_rejects_dimension_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(
            tmp.path().join("00001.png"),
            encode_mask_png(&MaskFrame::empty(4, 4)).unwrap(),
        )
        .unwrap();
        fs::write(
            tmp.path().join("00002.png"),
            encode_mask_png(&MaskFrame::empty(3, 4)).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            read_masks(tmp.path()).unwrap_err(),
            FrameStoreError::DimensionMismatch(_)
        ));
    }

    #[test]
    fn palette_matches_davis_convention() {
        let p = label_palette();
        assert_eq!(&p[0..3], &[0, 0, 0]);
        assert_eq!(&p[3..6], &[128, 0, 0]);
        assert_eq!(&p[6..9], &[0, 128, 0]);
        assert_eq!(&p[9..12], &[128, 128, 0]);
    }

    #[test]
    fn rgb_png_round_trip() {
        let mut img = Image::filled(5, 3, [1, 2, 3]);
        img.set_pixel(4, 2, [250, 0, 7]);
        assert_eq!(decode_rgb_png(&encode_rgb_png(&img)).unwrap(), img);
    }
}
