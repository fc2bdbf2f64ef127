use eqgan::data::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn centered_blob_has_its_centroid_in_the_middle() {
    let spec = BlobSpec { res: 33, ..BlobSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = render_blob(&spec, (16.0, 16.0), &mut rng).unwrap();
    let (y, x) = center_of_mass(&img, 33).unwrap();
    assert!((y - 16.0).abs() < 0.01 && (x - 16.0).abs() < 0.01, "({y}, {x})");
}

#[test]
fn blob_peak_and_background_levels() {
    let spec = BlobSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = render_blob(&spec, (10.0, 20.0), &mut rng).unwrap();
    assert_eq!(img[10 * 32 + 20], 1.0);
    assert!(img[31 * 32].abs() < 1e-9);
    assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    let dark = BlobSpec { background: -1.0, ..BlobSpec::default() };
    let img = render_blob(&dark, (10.0, 20.0), &mut rng).unwrap();
    assert_eq!(img[10 * 32 + 20], 1.0);
    assert!(img[31 * 32] < -0.999);
    assert!(BlobSpec { background: 1.0, ..BlobSpec::default() }.validate().is_err());
    assert!(render_blob(&spec, (2.0, 16.0), &mut rng).is_err());
}

#[test]
fn same_seed_renders_the_same_blobs() {
    let ds = BlobDataset::new(BlobSpec { noise_std: 0.05, ..BlobSpec::default() }).unwrap();
    let a: Vec<Vec<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..10).map(|_| ds.sample(&mut rng)).collect()
    };
    let b: Vec<Vec<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..10).map(|_| ds.sample(&mut rng)).collect()
    };
    assert_eq!(a, b);
}

#[test]
fn blob_centers_are_uniform_over_the_allowed_range() {
    let spec = BlobSpec::default();
    let ds = BlobDataset::new(spec.clone()).unwrap();
    let (lo, hi) = spec.center_range();
    let bins = 10;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for axis in 0..2 {
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let c = ds.sample_center(&mut rng);
            let v = if axis == 0 { c.0 } else { c.1 };
            assert!((lo..=hi).contains(&v));
            counts[(((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "axis {axis}: chi2 {chi2} p {p}");
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(BlobDataset::new(BlobSpec { margin: 20.0, ..BlobSpec::default() }).is_err());
    assert!(BlobDataset::new(BlobSpec { blob_std: 0.0, ..BlobSpec::default() }).is_err());
    assert!(BlobDataset::new(BlobSpec { intensity: 1.5, ..BlobSpec::default() }).is_err());
}

fn write_folder(dir: &std::path::Path) {
    for i in 0..10u32 {
        let img = image::RgbImage::from_fn(40, 30, |x, y| image::Rgb([(x * 6) as u8, (y * 8) as u8, (i * 20) as u8]));
        let name = if i % 2 == 0 { format!("img{i:02}.png") } else { format!("img{i:02}.jpg") };
        img.save(dir.join(name)).unwrap();
    }
    std::fs::write(dir.join("broken.png"), b"not an image").unwrap();
    std::fs::write(dir.join("truncated.jpg"), [0xff, 0xd8, 0xff, 0xe0, 0, 0x10]).unwrap();
    std::fs::write(dir.join("notes.txt"), b"ignored").unwrap();
}

#[test]
fn image_folder_skips_unreadable_files() {
    let dir = tempfile::tempdir().unwrap();
    write_folder(dir.path());
    let plain = load_image_folder(dir.path(), 16, false).unwrap();
    assert_eq!(plain.images.len(), 10);
    assert_eq!(plain.skipped, 2);
    assert_eq!(plain.channels, 3);
    for img in &plain.images {
        assert_eq!(img.len(), 3 * 16 * 16);
        assert!(img.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let flipped = load_image_folder(dir.path(), 16, true).unwrap();
    assert_eq!(flipped.images.len(), 20);
    assert_eq!(flipped.skipped, 2);
    for i in 0..10 {
        assert_eq!(flipped.images[2 * i], plain.images[i]);
        assert_eq!(flipped.images[2 * i + 1], mirror(&plain.images[i], 3, 16));
    }
}

#[test]
fn mirror_reverses_columns_and_is_an_involution() {
    let img: Vec<f64> = (0..2 * 9).map(|v| v as f64).collect();
    let m = mirror(&img, 2, 3);
    assert_eq!(&m[..3], &[2.0, 1.0, 0.0]);
    assert_eq!(&m[9..12], &[11.0, 10.0, 9.0]);
    assert_eq!(mirror(&m, 2, 3), img);
}

#[test]
fn data_source_batches_have_the_expected_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let blobs = DataSource::Blobs(BlobDataset::new(BlobSpec::default()).unwrap());
    assert_eq!(blobs.batch(4, &mut rng).unwrap().shape(), &[4, 1, 32, 32]);
    let dir = tempfile::tempdir().unwrap();
    write_folder(dir.path());
    let folder = DataSource::Folder(load_image_folder(dir.path(), 8, false).unwrap());
    assert_eq!(folder.batch(3, &mut rng).unwrap().shape(), &[3, 3, 8, 8]);
    let empty = DataSource::Folder(load_image_folder(tempfile::tempdir().unwrap().path(), 8, false).unwrap());
    assert!(empty.batch(1, &mut rng).is_err());
}
