//! Middlebury `.flo` serialization, mask PNGs and flow visualization.
//!
//! `.flo` layout, all little-endian:
//!
//! | offset | type  | content                         |
//! |--------|-------|---------------------------------|
//! | 0      | f32   | magic `202021.25` (`"PIEH"`)    |
//! | 4      | i32   | width                           |
//! | 8      | i32   | height                          |
//! | 12     | f32[] | `(u, v)` interleaved, row-major |

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::flow::{FlowField, OcclusionMask};
use crate::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;
const MAX_DIM: i64 = 1 << 16;

pub fn write_flo(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + field.as_slice().len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width() as i32).to_le_bytes());
    out.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for c in field.as_slice() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedFlo(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return Err(Error::MalformedFlo(format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes(word(4)) as i64;
    let height = i32::from_le_bytes(word(8)) as i64;
    if width <= 0 || height <= 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::MalformedFlo(format!(
            "implausible dimensions {width}x{height}"
        )));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = HEADER_LEN + width * height * 8;
    if bytes.len() != expected {
        return Err(Error::MalformedFlo(format!(
            "payload is {} bytes, expected {expected} for {width}x{height}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FlowField::new(width, height, data)
}

pub fn save_flo(path: impl AsRef<Path>, field: &FlowField) -> Result<()> {
    fs::write(path, write_flo(field))?;
    Ok(())
}

pub fn load_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    read_flo(&fs::read(path)?)
}

/// 8-bit grayscale rendering: 0 visible, 255 occluded.
pub fn mask_to_image(mask: &OcclusionMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.is_occluded(x as usize, y as usize) {
            255
        } else {
            0
        }])
    })
}

pub fn mask_from_image(img: &GrayImage) -> Result<OcclusionMask> {
    let data = img
        .pixels()
        .enumerate()
        .map(|(index, p)| match p.0[0] {
            0 => Ok(0),
            255 => Ok(1),
            value => Err(Error::NonBinaryMask { index, value }),
        })
        .collect::<Result<Vec<u8>>>()?;
    OcclusionMask::new(img.width() as usize, img.height() as usize, data)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &OcclusionMask) -> Result<()> {
    mask_to_image(mask).save(path)?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<OcclusionMask> {
    mask_from_image(&image::open(path)?.to_luma8())
}

// Middlebury colour wheel segment lengths.
const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(RY + YG + GC + CB + BM + MR);
    let ramp = |i: usize, n: usize| 255.0 * i as f64 / n as f64;
    wheel.extend((0..RY).map(|i| [255.0, ramp(i, RY), 0.0]));
    wheel.extend((0..YG).map(|i| [255.0 - ramp(i, YG), 255.0, 0.0]));
    wheel.extend((0..GC).map(|i| [0.0, 255.0, ramp(i, GC)]));
    wheel.extend((0..CB).map(|i| [0.0, 255.0 - ramp(i, CB), 255.0]));
    wheel.extend((0..BM).map(|i| [ramp(i, BM), 0.0, 255.0]));
    wheel.extend((0..MR).map(|i| [255.0, 0.0, 255.0 - ramp(i, MR)]));
    wheel
}

/// Colour-wheel visualization: hue is direction, saturation is magnitude.
///
/// Magnitudes are normalized by `max_magnitude`, or by the field's largest
/// magnitude when `None`. Zero flow is white; vectors beyond the
/// normalization radius are darkened.
pub fn flow_to_color(field: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let max = max_magnitude
        .unwrap_or_else(|| {
            field
                .vectors()
                .map(|[u, v]| (u as f64).hypot(v as f64))
                .fold(0.0, f64::max)
        })
        .max(f64::EPSILON);

    RgbImage::from_fn(field.width() as u32, field.height() as u32, |x, y| {
        let [u, v] = field.get(x as usize, y as usize);
        let (u, v) = (u as f64 / max, v as f64 / max);
        let rad = u.hypot(v);
        let angle = (-v).atan2(-u) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (ncols - 1) as f64;
        let k0 = (fk.floor() as usize).min(ncols - 1);
        let k1 = (k0 + 1) % ncols;
        let f = fk - k0 as f64;
        let mut px = [0u8; 3];
        for ch in 0..3 {
            let c0 = wheel[k0][ch] / 255.0;
            let c1 = wheel[k1][ch] / 255.0;
            let c = (1.0 - f) * c0 + f * c1;
            let c = if rad <= 1.0 {
                1.0 - rad * (1.0 - c)
            } else {
                c * 0.75
            };
            px[ch] = (255.0 * c).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_one_pixel_file() {
        let bytes: [u8; 20] = [
            0x50, 0x49, 0x45, 0x48, // 202021.25 == "PIEH"
            0x01, 0x00, 0x00, 0x00, // width 1
            0x01, 0x00, 0x00, 0x00, // height 1
            0x00, 0x00, 0x00, 0x3f, // 0.5
            0x00, 0x00, 0x00, 0xbf, // -0.5
        ];
        let f = read_flo(&bytes).unwrap();
        assert_eq!(f.dims(), (1, 1));
        assert_eq!(f.get(0, 0), [0.5, -0.5]);
        assert_eq!(write_flo(&f), bytes);
    }

    #[test]
    fn rejects_malformed_input() {
        let good = write_flo(&FlowField::constant(3, 2, [1.0, 2.0]));
        let mut bad_magic = good.clone();
        bad_magic[0] ^= 0x01;
        assert!(matches!(read_flo(&bad_magic), Err(Error::MalformedFlo(_))));
        assert!(read_flo(&good[..good.len() - 1]).is_err());
        assert!(read_flo(&good[..8]).is_err());

        let mut zero_w = good.clone();
        zero_w[4..8].copy_from_slice(&0i32.to_le_bytes());
        assert!(read_flo(&zero_w).is_err());
        let mut huge = good.clone();
        huge[8..12].copy_from_slice(&(70_000i32).to_le_bytes());
        assert!(read_flo(&huge).is_err());
        let mut neg = good;
        neg[4..8].copy_from_slice(&(-3i32).to_le_bytes());
        assert!(read_flo(&neg).is_err());
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = OcclusionMask::from_fn(13, 7, |x, y| (x * y) % 3 == 1);
        save_mask(&path, &mask).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
        let img = image::open(&path).unwrap();
        assert_eq!(img.color(), image::ColorType::L8);
    }

    #[test]
    fn mask_image_rejects_grey_levels() {
        let img = GrayImage::from_pixel(2, 2, Luma([128]));
        assert!(matches!(
            mask_from_image(&img),
            Err(Error::NonBinaryMask { .. })
        ));
    }

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(4, 4), None);
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
        let img = flow_to_color(&FlowField::zeros(4, 4), Some(3.0));
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn cardinal_directions_have_distinct_hues() {
        let dirs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let colors: Vec<[u8; 3]> = dirs
            .iter()
            .map(|&d| {
                flow_to_color(&FlowField::constant(1, 1, d), Some(1.0))
                    .get_pixel(0, 0)
                    .0
            })
            .collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(colors[i], colors[j], "{:?} vs {:?}", dirs[i], dirs[j]);
            }
        }
        // Rightward motion lands at the red end of the wheel.
        assert_eq!(colors[0][0], 255);
        assert_eq!(colors[0][1], 0);
    }

    proptest! {
        #[test]
        fn flo_round_trip_is_bit_exact(
            (w, h, data) in (1usize..20, 1usize..20).prop_flat_map(|(w, h)|
                (Just(w), Just(h), prop::collection::vec(-1.0e4f32..1.0e4, w * h * 2)))
        ) {
            let f = FlowField::new(w, h, data).unwrap();
            let bytes = write_flo(&f);
            prop_assert_eq!(bytes.len(), 12 + w * h * 8);
            let back = read_flo(&bytes).unwrap();
            prop_assert_eq!(write_flo(&back), bytes);
            let same_bits = back.as_slice().iter().zip(f.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
        }

        #[test]
        fn color_is_scale_invariant_under_self_normalization(
            (w, h, data) in (1usize..8, 1usize..8).prop_flat_map(|(w, h)|
                (Just(w), Just(h), prop::collection::vec(-50.0f32..50.0, w * h * 2))),
            exp in -4i32..5,
        ) {
            let f = FlowField::new(w, h, data).unwrap();
            let s = 2f32.powi(exp);
            let g = FlowField::from_fn(w, h, |x, y| { let [u, v] = f.get(x, y); [u * s, v * s] });
            prop_assert_eq!(flow_to_color(&f, None), flow_to_color(&g, None));
        }
    }
}
