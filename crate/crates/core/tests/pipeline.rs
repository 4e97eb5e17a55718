use std::sync::Arc;

use landmap::backend::{make_edge_degraded, make_oracle_backend};
use landmap::classes::{read_class_map, ClassMap};
use landmap::evaluate::{confusion, overall_accuracy};
use landmap::pipeline::{
    infer_map, infer_to_file, InferOptions, InferenceJob, RasterSource, StackSource,
};
use landmap::raster::write_raster;
use landmap::spectral::{build_channel_stack, compute_norm_stats, Mode};
use landmap::synth::{generate_scene, SceneSpec};
use landmap::tiling::{PadMode, TileSpec};

fn scene(w: usize, h: usize, seed: u64) -> (landmap::raster::RasterGrid, ClassMap) {
    generate_scene(&SceneSpec {
        width: w,
        height: h,
        seed,
        ..SceneSpec::default()
    })
    .unwrap()
}

#[test]
fn file_output_does_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (grid, truth) = scene(203, 141, 3);
    let image = dir.path().join("scene.rstr");
    write_raster(&grid, &image).unwrap();
    let truth = Arc::new(truth);
    let oracle = make_oracle_backend(truth.clone(), 9).unwrap();
    let backend = make_edge_degraded(oracle, 6, 0.5, 11).unwrap();
    let spec = TileSpec::new(48, 32, PadMode::Mirror).unwrap();

    let mut outputs = Vec::new();
    for workers in [1, 8] {
        let out = dir.path().join(format!("map{workers}.rstr"));
        let job = InferenceJob {
            image: image.clone(),
            mode: Mode::Lu6,
            spec,
            workers,
            output: out.clone(),
            norm_stats: None,
        };
        let summary = job.run(&backend, false).unwrap();
        assert_eq!(summary.workers, workers);
        assert_eq!((summary.width, summary.height), (203, 141));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let map = read_class_map(dir.path().join("map1.rstr")).unwrap();
    assert_eq!(map.geotransform(), grid.geotransform());
}

#[test]
fn raster_source_matches_in_memory_stack() {
    let dir = tempfile::tempdir().unwrap();
    let (grid, truth) = scene(150, 97, 5);
    let image = dir.path().join("scene.rstr");
    write_raster(&grid, &image).unwrap();
    let stats = compute_norm_stats(&grid, 2.0, 98.0).unwrap();

    // a backend whose output depends on the pixels it is given
    let model = landmap::backend::LinearModel::from_weights(
        3,
        Mode::Lu3.channels().to_vec(),
        (0..3 * 7)
            .map(|i| ((i * 37 % 11) as f32 - 5.0) / 3.0)
            .collect(),
    )
    .unwrap();
    let backend = landmap::backend::LinearBackend::new(Arc::new(model));
    let spec = TileSpec::new(40, 24, PadMode::Mirror).unwrap();

    let stack = build_channel_stack(&grid, Mode::Lu3, &stats).unwrap();
    let (in_memory, _) = infer_map(
        &StackSource::new(stack, grid.geotransform()),
        &backend,
        spec,
        InferOptions::default(),
    )
    .unwrap();
    let source = RasterSource::open(&image, Mode::Lu3, Some(stats)).unwrap();
    let out = dir.path().join("map.rstr");
    infer_to_file(
        &source,
        &backend,
        spec,
        InferOptions {
            workers: 4,
            progress: false,
        },
        &out,
    )
    .unwrap();
    assert_eq!(read_class_map(&out).unwrap(), in_memory);
    assert_eq!(in_memory.width(), truth.width());
}

#[test]
fn naive_tiling_loses_exactly_the_edge_band() {
    let (grid, truth) = scene(256, 256, 8);
    let truth = Arc::new(truth);
    let stats = compute_norm_stats(&grid, 2.0, 98.0).unwrap();
    let stack = build_channel_stack(&grid, Mode::Lu3, &stats).unwrap();
    let source = StackSource::new(stack, grid.geotransform());
    let (tile, band, p, k) = (64usize, 8usize, 0.6, 9usize);
    let backend =
        make_edge_degraded(make_oracle_backend(truth.clone(), k).unwrap(), band, p, 2).unwrap();

    let overlap = TileSpec::new(tile, tile / 2, PadMode::Mirror).unwrap();
    let (map, _) = infer_map(&source, &backend, overlap, InferOptions::default()).unwrap();
    assert_eq!(
        overall_accuracy(&confusion(&map, &truth, k).unwrap()).unwrap(),
        1.0
    );

    let naive = TileSpec::no_overlap(tile).unwrap();
    let (map, _) = infer_map(&source, &backend, naive, InferOptions::default()).unwrap();
    let oa = overall_accuracy(&confusion(&map, &truth, k).unwrap()).unwrap();
    let inner = (tile - 2 * band) as f64 / tile as f64;
    let edge_fraction = 1.0 - inner * inner;
    let q = p * (k - 1) as f64 / k as f64;
    let expected = 1.0 - edge_fraction * q;
    let pixels = (256 * 256) as f64;
    let sigma = (edge_fraction * pixels * q * (1.0 - q)).sqrt() / pixels;
    assert!(
        (oa - expected).abs() <= 3.0 * sigma,
        "OA {oa}, expected {expected} ± {}",
        3.0 * sigma
    );
}
