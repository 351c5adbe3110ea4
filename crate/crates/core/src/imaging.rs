//! Pixel and geometry primitives: decoding, letterbox resizing, coordinate
//! remapping, cropping, box mirroring, and channel normalization.
//!
//! All resizes use plain bilinear sampling with no antialias filter, so a
//! same-size resize is an exact identity and outputs are bit-reproducible
//! across runs. Every function here is pure.

use std::path::Path;

use image::ImageFormat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel RGB mean used by the classifier normalization.
pub const NORM_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
/// Per-channel RGB standard deviation used by the classifier normalization.
pub const NORM_STD: [f32; 3] = [0.229, 0.224, 0.225];
/// Conventional gray fill for letterbox padding.
pub const PAD_GRAY: u8 = 114;

/// Decoded 8-bit RGB raster, row-major, the unit of all pixel work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Decode("zero image dimension".into()));
        }
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::Decode(format!(
                "buffer length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Solid-fill constructor.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Axis-aligned bounding box in pixel coordinates with a confidence score.
/// Canonical form has `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxXYXY {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub confidence: f32,
}

impl BoxXYXY {
    /// Builds a canonical box, swapping coordinates if needed.
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32, confidence: f32) -> Self {
        let (x1, x2) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        let (y1, y2) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
        Self {
            x1,
            y1,
            x2,
            y2,
            confidence,
        }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }
}

/// Forward transform of a letterbox resize; inverts detector coordinates
/// back into source-image space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterboxMap {
    pub scale: f32,
    pub pad_x: f32,
    pub pad_y: f32,
    pub src_w: u32,
    pub src_h: u32,
    pub dst_w: u32,
    pub dst_h: u32,
}

/// Channel-major (3, side, side) f32 tensor produced by [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTensor {
    pub side: u32,
    /// CHW layout, length `3 * side * side`.
    pub data: Vec<f32>,
}

impl NormalizedTensor {
    /// NCHW shape with a leading batch dimension of 1.
    pub fn nchw_shape(&self) -> [usize; 4] {
        [1, 3, self.side as usize, self.side as usize]
    }
}

/// Decodes a PNG or JPEG byte stream into an RGB buffer. Grayscale sources
/// are replicated across the three channels.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    let format = image::guess_format(bytes)
        .map_err(|_| Error::UnsupportedFormat("unrecognized image container".into()))?;
    match format {
        ImageFormat::Png | ImageFormat::Jpeg => {}
        other => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    ImageBuffer::new(rgb.width(), rgb.height(), rgb.into_raw())
}

/// Reads and decodes an image file.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Encodes an image as PNG bytes.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let rgb: image::RgbImage =
        image::RgbImage::from_raw(img.width, img.height, img.data.clone())
            .expect("buffer length checked by construction");
    let mut out = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes an image to disk as PNG.
pub fn save_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Plain bilinear resize. Same-size resize returns an exact copy.
pub fn resize_bilinear(img: &ImageBuffer, dst_w: u32, dst_h: u32) -> ImageBuffer {
    if dst_w == img.width && dst_h == img.height {
        return img.clone();
    }
    let sx = img.width as f32 / dst_w as f32;
    let sy = img.height as f32 / dst_h as f32;
    let mut out = ImageBuffer::filled(dst_w, dst_h, [0, 0, 0]);
    for y in 0..dst_h {
        let src_y = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, img.height as f32 - 1.0);
        let y0 = src_y.floor() as u32;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = src_y - y0 as f32;
        for x in 0..dst_w {
            let src_x = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, img.width as f32 - 1.0);
            let x0 = src_x.floor() as u32;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = src_x - x0 as f32;
            let p00 = img.pixel(x0, y0);
            let p10 = img.pixel(x1, y0);
            let p01 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
                let bot = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
                rgb[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(x, y, rgb);
        }
    }
    out
}

/// Aspect-preserving resize into a `dst`-sided square, padded with `pad`.
/// Returns the padded image and the map needed to invert coordinates.
pub fn letterbox(img: &ImageBuffer, dst: u32, pad: u8) -> (ImageBuffer, LetterboxMap) {
    assert!(dst >= 1, "letterbox target must be >= 1");
    let scale = (dst as f32 / img.width as f32).min(dst as f32 / img.height as f32);
    let new_w = ((img.width as f32 * scale).round() as u32).clamp(1, dst);
    let new_h = ((img.height as f32 * scale).round() as u32).clamp(1, dst);
    let pad_x = (dst as f32 - scale * img.width as f32) / 2.0;
    let pad_y = (dst as f32 - scale * img.height as f32) / 2.0;
    let off_x = pad_x.round() as u32;
    let off_y = pad_y.round() as u32;

    let resized = resize_bilinear(img, new_w, new_h);
    let mut out = ImageBuffer::filled(dst, dst, [pad, pad, pad]);
    for y in 0..new_h.min(dst - off_y.min(dst)) {
        for x in 0..new_w.min(dst - off_x.min(dst)) {
            out.set_pixel(x + off_x, y + off_y, resized.pixel(x, y));
        }
    }
    let map = LetterboxMap {
        scale,
        pad_x,
        pad_y,
        src_w: img.width,
        src_h: img.height,
        dst_w: dst,
        dst_h: dst,
    };
    (out, map)
}

/// Maps a source-space box into letterbox space (the inverse of
/// [`unmap_box`]); used for round-trip checks and fixtures.
pub fn map_box(b: &BoxXYXY, map: &LetterboxMap) -> BoxXYXY {
    BoxXYXY::new(
        b.x1 * map.scale + map.pad_x,
        b.y1 * map.scale + map.pad_y,
        b.x2 * map.scale + map.pad_x,
        b.y2 * map.scale + map.pad_y,
        b.confidence,
    )
}

/// Maps a letterbox-space box back into source coordinates, clamping to the
/// source bounds. Fails if clamping collapses the box below one pixel.
pub fn unmap_box(b: &BoxXYXY, map: &LetterboxMap) -> Result<BoxXYXY> {
    let w = map.src_w as f32;
    let h = map.src_h as f32;
    let x1 = ((b.x1 - map.pad_x) / map.scale).clamp(0.0, w);
    let x2 = ((b.x2 - map.pad_x) / map.scale).clamp(0.0, w);
    let y1 = ((b.y1 - map.pad_y) / map.scale).clamp(0.0, h);
    let y2 = ((b.y2 - map.pad_y) / map.scale).clamp(0.0, h);
    if x2 - x1 < 1.0 || y2 - y1 < 1.0 {
        return Err(Error::DegenerateBox);
    }
    Ok(BoxXYXY::new(x1, y1, x2, y2, b.confidence))
}

/// Reflects a box across the vertical centerline of an `image_width`-wide
/// image. Y extent and confidence are unchanged; the result is canonical.
pub fn mirror_box(b: &BoxXYXY, image_width: u32) -> BoxXYXY {
    let w = image_width as f32;
    BoxXYXY::new(w - b.x2, b.y1, w - b.x1, b.y2, b.confidence)
}

/// Crops the outward-rounded integer rectangle of `b`, intersected with the
/// image bounds. Outward rounding keeps every partially covered pixel.
pub fn crop(img: &ImageBuffer, b: &BoxXYXY) -> Result<ImageBuffer> {
    let x0 = (b.x1.floor().max(0.0)) as i64;
    let y0 = (b.y1.floor().max(0.0)) as i64;
    let x1 = (b.x2.ceil() as i64).min(img.width as i64);
    let y1 = (b.y2.ceil() as i64).min(img.height as i64);
    if x1 <= x0 || y1 <= y0 || x0 >= img.width as i64 || y0 >= img.height as i64 {
        return Err(Error::EmptyCrop);
    }
    let (x0, y0, x1, y1) = (x0 as u32, y0 as u32, x1 as u32, y1 as u32);
    let mut out = ImageBuffer::filled(x1 - x0, y1 - y0, [0, 0, 0]);
    for y in y0..y1 {
        for x in x0..x1 {
            out.set_pixel(x - x0, y - y0, img.pixel(x, y));
        }
    }
    Ok(out)
}

/// Bilinear-resizes to `size`×`size`, scales to [0,1], and applies the
/// per-channel mean/std normalization, producing a channel-major tensor.
pub fn normalize(img: &ImageBuffer, size: u32) -> NormalizedTensor {
    normalize_with(img, size, NORM_MEAN, NORM_STD)
}

pub fn normalize_with(img: &ImageBuffer, size: u32, mean: [f32; 3], std: [f32; 3]) -> NormalizedTensor {
    assert!(size >= 1);
    let resized = resize_bilinear(img, size, size);
    let n = size as usize * size as usize;
    let mut data = vec![0.0f32; 3 * n];
    for y in 0..size {
        for x in 0..size {
            let p = resized.pixel(x, y);
            let idx = y as usize * size as usize + x as usize;
            for c in 0..3 {
                data[c * n + idx] = (p[c] as f32 / 255.0 - mean[c]) / std[c];
            }
        }
    }
    NormalizedTensor { side: size, data }
}

/// CHW [0,1] tensor of a square image, the detector's input convention.
pub fn unit_tensor(img: &ImageBuffer) -> Vec<f32> {
    let n = img.width as usize * img.height as usize;
    let mut data = vec![0.0f32; 3 * n];
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            let idx = y as usize * img.width as usize + x as usize;
            for c in 0..3 {
                data[c * n + idx] = p[c] as f32 / 255.0;
            }
        }
    }
    data
}

/// Horizontal flip, the augmentation counterpart of [`mirror_box`].
pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(img.width - 1 - x, y, img.pixel(x, y));
        }
    }
    out
}

/// Rotates about the image center by `degrees` (counterclockwise), bilinear
/// sampling, black fill outside the source. Output size equals input size.
pub fn rotate_about_center(img: &ImageBuffer, degrees: f32) -> ImageBuffer {
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (img.width as f32 - 1.0) / 2.0;
    let cy = (img.height as f32 - 1.0) / 2.0;
    let mut out = ImageBuffer::filled(img.width, img.height, [0, 0, 0]);
    for y in 0..img.height {
        for x in 0..img.width {
            // inverse rotation of the destination pixel into source space
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if sx < -0.5
                || sy < -0.5
                || sx > img.width as f32 - 0.5
                || sy > img.height as f32 - 0.5
            {
                continue;
            }
            let sxc = sx.clamp(0.0, img.width as f32 - 1.0);
            let syc = sy.clamp(0.0, img.height as f32 - 1.0);
            let x0 = sxc.floor() as u32;
            let y0 = syc.floor() as u32;
            let x1 = (x0 + 1).min(img.width - 1);
            let y1 = (y0 + 1).min(img.height - 1);
            let fx = sxc - x0 as f32;
            let fy = syc - y0 as f32;
            let p00 = img.pixel(x0, y0);
            let p10 = img.pixel(x1, y0);
            let p01 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
                let bot = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
                rgb[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(x, y, rgb);
        }
    }
    out
}
