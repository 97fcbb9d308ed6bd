use proptest::prelude::*;
use semocc::dataset::{calib_to_text, parse_calib};
use semocc::formats::*;
use semocc::geometry::{CameraCalibration, GridSpec, PointCloud};
use semocc::image::Image;
use semocc::labels::{LabelGrid, LabelMap, IGNORE};
use semocc::synth::{generate_scene, SceneSpec};
use semocc::taxonomy::ClassTaxonomy;
use semocc::train::{MetricRecord, Model, TrainConfig};

#[test]
fn scene_artifacts_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate_scene(&SceneSpec::desk(2)).unwrap();
    let p = |n: &str| dir.path().join(n);
    save_label_grid(&p("gt.occg"), &f.gt).unwrap();
    save_label_map(&p("seg.occm"), &f.primary).unwrap();
    save_cloud(&p("c.bin"), &f.cloud).unwrap();
    save_ppm(&p("i.ppm"), &f.image).unwrap();
    assert_eq!(load_label_grid(&p("gt.occg")).unwrap(), f.gt);
    assert_eq!(load_label_map(&p("seg.occm")).unwrap(), f.primary);
    let cloud = load_cloud(&p("c.bin")).unwrap();
    assert_eq!(encode_cloud(&cloud), std::fs::read(p("c.bin")).unwrap());
    for (a, b) in cloud.points.iter().zip(&f.cloud.points) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + y.abs())));
    }
    // 8-bit quantisation is a fixed point after one pass.
    let img = load_ppm(&p("i.ppm")).unwrap();
    assert_eq!(encode_ppm(&img), std::fs::read(p("i.ppm")).unwrap());
    for (a, b) in img.data().iter().zip(f.image.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn truncated_and_foreign_bytes_are_rejected() {
    let grid = LabelGrid::filled([2, 3, 4], 7);
    let bytes = encode_label_grid(&grid);
    assert!(decode_label_grid(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode_label_map(&bytes).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.occg");
    std::fs::write(&path, b"OCCGxx").unwrap();
    let err = load_label_grid(&path).unwrap_err().to_string();
    assert!(err.contains("bad.occg"), "{err}");
}

#[test]
fn calibration_text_round_trip() {
    let cal = CameraCalibration::looking_forward([0.1, -0.2, 0.3], 0.12, 32.0, 32, 64).unwrap();
    let grid = GridSpec::desk();
    let (c2, g2) = parse_calib(&calib_to_text(&cal, &grid)).unwrap();
    assert_eq!((c2, g2), (cal, grid));
}

#[test]
fn taxonomy_and_config_round_trip() {
    for t in [ClassTaxonomy::desk(), ClassTaxonomy::reference()] {
        let n = t.num_classes();
        assert_eq!(ClassTaxonomy::parse(&t.to_text(), n).unwrap(), t);
    }
    let mut c = TrainConfig::default();
    c.tau = 0.7;
    c.use_projection = false;
    assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert!(TrainConfig::from_toml("nonsense = 1").is_err());
}

#[test]
fn metric_lines_round_trip() {
    let line = "fusion 8 val 32.2069 11.3295 27.1845 - 0.0000";
    assert_eq!(MetricRecord::parse(line).unwrap().to_line(), line);
}

#[test]
fn model_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig::default();
    let grid = GridSpec::desk();
    let m = Model::new(&config, &grid).unwrap();
    let path = dir.path().join("m.ckpt");
    m.save_checkpoint(&path).unwrap();
    let mut other = config.clone();
    other.seed = 99;
    let mut m2 = Model::new(&other, &grid).unwrap();
    m2.load_checkpoint(&path).unwrap();
    assert_eq!(semocc_tensor::checkpoint::encode(&m2.store), std::fs::read(&path).unwrap());
}

proptest! {
    #[test]
    fn label_grids_round_trip(dims in prop::array::uniform3(1usize..6), seed in any::<u64>()) {
        let n = dims.iter().product::<usize>();
        let data: Vec<u16> = (0..n as u64).map(|i| if (seed ^ i) % 7 == 0 { IGNORE } else { ((seed >> (i % 32)) % 20) as u16 }).collect();
        let g = LabelGrid::from_vec(dims, data).unwrap();
        prop_assert_eq!(decode_label_grid(&encode_label_grid(&g)).unwrap(), g);
    }

    #[test]
    fn label_maps_and_masks_round_trip(h in 1usize..9, w in 1usize..9, bits in prop::collection::vec(any::<bool>(), 64)) {
        let m = LabelMap::from_vec(h, w, (0..h * w).map(|i| i as u16).collect()).unwrap();
        prop_assert_eq!(decode_label_map(&encode_label_map(&m)).unwrap(), m);
        let keep = bits[..h * w].to_vec();
        prop_assert_eq!(decode_keep_mask(&encode_keep_mask([h, w, 1], &keep)).unwrap(), ([h, w, 1], keep));
    }

    #[test]
    fn clouds_round_trip(pts in prop::collection::vec(prop::array::uniform4(-50.0f64..50.0), 0..40)) {
        // Stored as f32: one pass quantises, after that bytes are stable.
        let bytes = encode_cloud(&PointCloud::new(pts));
        let c = decode_cloud(&bytes).unwrap();
        prop_assert_eq!(encode_cloud(&c), bytes);
    }

    #[test]
    fn quantised_images_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u8>()) {
        let data: Vec<f64> = (0..3 * h * w).map(|i| ((i as u8).wrapping_mul(seed)) as f64 / 255.0).collect();
        let img = Image::from_vec(h, w, data).unwrap();
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }
}
