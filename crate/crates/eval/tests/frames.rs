use std::path::Path;

use proptest::prelude::*;
use psl_core::{Error, Tensor64};
use psl_eval::data::ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm, RgbImage};
use psl_eval::data::{apply_crop, load_frame, resize_bilinear, save_frame, BBox};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn single_pixel(v: u8) -> Vec<u8> {
    let mut bytes = b"P6\n1 1\n255\n".to_vec();
    bytes.extend([v; 3]);
    bytes
}

#[test]
fn white_and_black_pixels() {
    let dir = tempfile::tempdir().unwrap();
    for (v, want) in [(255u8, 1.0), (0, -1.0)] {
        let path = dir.path().join(format!("{v}.ppm"));
        std::fs::write(&path, single_pixel(v)).unwrap();
        let t: Tensor64 = load_frame(&path).unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert!(t.data().iter().all(|&x| x == want));
    }
}

#[test]
fn channels_first_layout() {
    let img = RgbImage {
        width: 2,
        height: 1,
        pixels: vec![255, 0, 0, 0, 0, 255],
    };
    let t: Tensor64 = img.to_tensor();
    assert_eq!(t.shape(), &[3, 1, 2]);
    assert_eq!(t.data(), &[1.0, -1.0, -1.0, -1.0, -1.0, 1.0]);
}

proptest! {
    #[test]
    fn save_load_round_trip_is_exact(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<u8> = (0..w * h * 3).map(|_| rand::Rng::gen(&mut r)).collect();
        let img = RgbImage { width: w, height: h, pixels };
        let bytes = encode_ppm(&img);
        prop_assert_eq!(&decode_ppm(&bytes, Path::new("x")).unwrap(), &img);

        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ppm");
        let b = dir.path().join("b.ppm");
        write_ppm(&img, &a).unwrap();
        let t: Tensor64 = load_frame(&a).unwrap();
        save_frame(&t, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        prop_assert_eq!(read_ppm(&b).unwrap(), img);
    }
}

fn offset_of(bytes: &[u8]) -> usize {
    match decode_ppm(bytes, Path::new("f.ppm")).unwrap_err() {
        Error::Parse { offset, path, .. } => {
            assert_eq!(path, Path::new("f.ppm"));
            offset
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn parse_errors_carry_byte_offsets() {
    assert_eq!(offset_of(b"P3\n1 1\n255\n"), 0);
    assert_eq!(offset_of(b""), 0);
    assert_eq!(offset_of(b"P6\n1 x\n255\n"), 5);
    assert_eq!(offset_of(b"P6\n1 1\n65535\n"), 12);
    assert_eq!(offset_of(b"P6\n0 1\n255\n"), 10);
    let mut short = single_pixel(9);
    short.pop();
    assert_eq!(offset_of(&short), short.len());

    let mut commented = b"P6\n# made by hand\n1 1\n255\n".to_vec();
    commented.extend([7, 8, 9]);
    assert_eq!(decode_ppm(&commented, Path::new("c")).unwrap().pixels, vec![7, 8, 9]);

    let missing = load_frame::<f64>(Path::new("/nonexistent/frame.ppm")).unwrap_err();
    assert!(missing.is_io());
}

#[test]
fn full_frame_crop_is_identity() {
    let x = Tensor64::randn(&[3, 224, 224], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(apply_crop(&x, BBox::full(224, 224), 224).unwrap(), x);
}

#[test]
fn downscaling_a_constant_stays_constant() {
    let x = Tensor64::full(&[3, 16, 16], -0.3);
    let y = resize_bilinear(&x, 8, 8).unwrap();
    assert!(y.data().iter().all(|&v| v == -0.3));
    let z = apply_crop(&x, BBox { x: 2, y: 3, w: 10, h: 9 }, 5).unwrap();
    assert!(z.data().iter().all(|&v| v == -0.3));
}

#[test]
fn bilinear_midpoint() {
    // Two samples at 0 and 2, stretched to three: the middle output sits halfway.
    let x = Tensor64::from_f64(&[1, 1, 2], &[0.0, 2.0]).unwrap();
    let y = resize_bilinear(&x, 1, 3).unwrap();
    assert_eq!(y.data()[1], 1.0);
    assert_eq!((y.data()[0], y.data()[2]), (0.0, 2.0));
}

#[test]
fn crop_selects_the_box() {
    let x = Tensor64::from_fn(&[3, 4, 5], |i| i as f64);
    let y = apply_crop(&x, BBox { x: 1, y: 2, w: 2, h: 2 }, 2).unwrap();
    assert_eq!(y.get(&[0, 0, 0]), x.get(&[0, 2, 1]));
    assert_eq!(y.get(&[2, 1, 1]), x.get(&[2, 3, 2]));
}

#[test]
fn box_outside_the_frame_is_a_contract_error() {
    let x = Tensor64::zeros(&[3, 10, 10]);
    for b in [
        BBox { x: 5, y: 0, w: 6, h: 4 },
        BBox { x: 0, y: 8, w: 4, h: 3 },
        BBox { x: 0, y: 0, w: 0, h: 3 },
    ] {
        let err = apply_crop(&x, b, 4).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err:?}");
    }
}
