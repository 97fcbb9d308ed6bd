use semocc::dataset::{generate_dataset, Dataset, GenerateOptions};
use semocc::labels::IGNORE;
use semocc::train::{evaluate_geometry, run_phase, GeometrySource, Model, Phase, PhaseEpochs, TrainConfig};

fn single_scene(dir: &std::path::Path) -> Dataset {
    let mut opts = GenerateOptions::new(1, 8);
    opts.val_frames = 1;
    generate_dataset(dir, &opts).unwrap();
    Dataset::load(dir).unwrap()
}

fn config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.epochs = PhaseEpochs {
        semantic: 20,
        teacher: 200,
        student: 1,
        fusion: 300,
    };
    c
}

#[test]
fn geometry_memorises_one_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let data = single_scene(&tmp.path().join("data"));
    let out = tmp.path().join("run");
    let c = config();
    run_phase(&c, &data, &out, Phase::Semantic).unwrap();
    run_phase(&c, &data, &out, Phase::GeoTeacher).unwrap();
    let mut m = Model::new(&c, &data.grid).unwrap();
    m.load_checkpoint(&out.join("geo-teacher.ckpt")).unwrap();
    let s = evaluate_geometry(&m, GeometrySource::Teacher, &data.train, &data.calib).unwrap();
    assert!(s.iou >= 0.9, "{s:?}");
}

#[test]
fn fusion_memorises_one_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let data = single_scene(&tmp.path().join("data"));
    let out = tmp.path().join("run");
    for p in Phase::ALL {
        run_phase(&config(), &data, &out, p).unwrap();
    }
    let mut m = Model::new(&config(), &data.grid).unwrap();
    m.load_checkpoint(&out.join("fusion.ckpt")).unwrap();
    let f = &data.train[0];
    let pred = m.predict(f, &data.calib).unwrap();
    let (mut hit, mut total) = (0, 0);
    for (p, t) in pred.data().iter().zip(f.gt.data()) {
        if *t != IGNORE {
            total += 1;
            hit += usize::from(p == t);
        }
    }
    let acc = hit as f64 / total as f64;
    assert!(acc >= 0.9, "voxel accuracy {acc}");
}
