use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader};

use super::IMAGE_SIDE;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Decodes an 8- or 16-bit grayscale raster, rescales intensities to
/// `[0, 1]` and resizes it to `IMAGE_SIDE x IMAGE_SIDE` bilinearly.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            return Err(unsupported(
                path,
                "grayscale with alpha; drop the alpha channel (e.g. `convert in.png -alpha off out.png`)",
            ))
        }
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            return Err(unsupported(
                path,
                "colour image; convert to single-channel grayscale first (e.g. `convert in.png -colorspace Gray out.png`)",
            ))
        }
        other => {
            return Err(unsupported(
                path,
                &format!("pixel format {:?}; only 8- and 16-bit grayscale is accepted", other.color()),
            ))
        }
    };
    let data = resize_bilinear(&pixels, w, h, IMAGE_SIDE, IMAGE_SIDE);
    Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], data)
}

fn unsupported(path: &Path, reason: &str) -> Error {
    Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    assert_eq!(src.len(), w * h, "source buffer does not match {w}x{h}");
    if (w, h) == (out_w, out_h) {
        return src.to_vec();
    }
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let coords = |i: usize, scale: f64, n: usize| {
        let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coords(x, sx, w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = coords(y, sy, h);
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Writes a `(1, S, S)` image with values in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_png(image: &Tensor, path: &Path) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::shape(format!("expected a (1, H, W) image, got {shape:?}")));
    }
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = GrayImage::from_raw(shape[2] as u32, shape[1] as u32, bytes).expect("buffer sized from shape");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        source => Error::Decode {
            path: path.to_path_buf(),
            source,
        },
    })
}
