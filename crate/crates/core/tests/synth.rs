use semocc::dataset::{generate_dataset, load_manifest, Dataset, GenerateOptions, Split};
use semocc::geometry::{lift_label_map, project_voxel_centers};
use semocc::labels::{FREE, IGNORE};
use semocc::metrics::interval_sample;
use semocc::semantic::align_pseudo_labels;
use semocc::synth::{generate_scene, raycast, SceneSpec};
use semocc::taxonomy::ClassTaxonomy;

fn clean(seed: u64) -> SceneSpec {
    let mut s = SceneSpec::desk(seed);
    s.label_noise = 0.0;
    s
}

#[test]
fn clean_lidar_returns_land_in_occupied_voxels() {
    for seed in 0..4 {
        let spec = clean(seed);
        let f = generate_scene(&spec).unwrap();
        assert!(f.cloud.len() > 300, "{}", f.cloud.len());
        for p in &f.cloud.points {
            let cell = spec.grid.cell_of([p[0], p[1], p[2]]).expect("inside grid");
            assert_ne!(f.gt.get(cell[0], cell[1], cell[2]), FREE);
        }
    }
}

#[test]
fn clean_merged_segmentation_lifts_onto_visible_surfaces() {
    let tax = ClassTaxonomy::desk();
    let mut checked = 0;
    for seed in 0..4 {
        let spec = clean(seed);
        let f = generate_scene(&spec).unwrap();
        let merged = align_pseudo_labels(&f.primary, &f.aux, &tax).unwrap();
        let lifted = lift_label_map(&merged, &spec.grid, &f.calib).unwrap();
        for (v, p) in project_voxel_centers(&spec.grid, &f.calib).into_iter().enumerate() {
            let Some(p) = p else { continue };
            let cell = spec.grid.unflat(v);
            let (row, col) = (p.pixel / f.calib.width(), p.pixel % f.calib.width());
            let d = f.calib.ray(col as f64 + 0.5, row as f64 + 0.5);
            let Some(hit) = raycast(&spec.grid, &f.gt, spec.camera.position, d, 1e3) else { continue };
            if hit.cell != cell {
                continue;
            }
            assert_eq!(lifted.data()[v], f.gt.data()[v], "voxel {cell:?}");
            checked += 1;
        }
    }
    println!("{checked} visible voxels checked");
    assert!(checked > 100, "{checked}");
}

#[test]
fn geometry_truth_is_occupancy_of_semantics() {
    let f = generate_scene(&SceneSpec::desk(9)).unwrap();
    for (g, s) in f.geo.data().iter().zip(f.gt.data()) {
        assert_eq!(*g, u16::from(*s != FREE));
    }
}

#[test]
fn empty_scene_is_all_free() {
    let mut spec = SceneSpec::empty(3);
    spec.label_noise = 0.0;
    let f = generate_scene(&spec).unwrap();
    assert!(f.gt.data().iter().all(|&l| l == FREE));
    assert!(f.cloud.is_empty());
    let merged = align_pseudo_labels(&f.primary, &f.aux, &ClassTaxonomy::desk()).unwrap();
    assert!(merged.data().iter().all(|&l| l == IGNORE));
}

#[test]
fn scenes_are_deterministic_and_seed_dependent() {
    let a = generate_scene(&SceneSpec::desk(5)).unwrap();
    let b = generate_scene(&SceneSpec::desk(5)).unwrap();
    let c = generate_scene(&SceneSpec::desk(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.gt, c.gt);
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generated_datasets_are_byte_identical_and_reload() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = GenerateOptions::new(12, 4);
    generate_dataset(a.path(), &opts).unwrap();
    generate_dataset(b.path(), &opts).unwrap();
    assert_eq!(files(a.path()), files(b.path()));

    let data = Dataset::load(a.path()).unwrap();
    assert_eq!((data.train.len(), data.val.len()), (12, 3));
    let manifest = load_manifest(a.path(), Split::Train).unwrap();
    let want: std::collections::BTreeSet<usize> = interval_sample(12, 0.1).into_iter().collect();
    assert_eq!(manifest.annotated(), want);
    for f in &data.train {
        assert_eq!(f.annotated, want.contains(&f.id));
    }
    assert_eq!(load_manifest(a.path(), Split::Val).unwrap().annotated().len(), 3);
}
