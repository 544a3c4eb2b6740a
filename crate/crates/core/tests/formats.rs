use snakepoly::dataset::{
    build_dataset, load_dataset, pad_batch, read_dataset, save_dataset, write_dataset, DatasetError, DatasetFile,
    DatasetSpec, Validation,
};
use snakepoly::diffusion::{RealImage, ScheduleConfig};
use snakepoly::enumerate::SearchLimits;
use snakepoly::grid::Grid;
use snakepoly::nn::{load_checkpoint, read_checkpoint, save_checkpoint, Denoiser, DenoiserConfig, NetError};

#[test]
fn dataset_file_round_trip_on_disk() {
    let spec = DatasetSpec { sizes: vec![(1, 5), (2, 4), (3, 3), (4, 4)], per_size_cap: 20, augment: true, seed: 3 };
    let data = build_dataset(&spec, &SearchLimits::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snakes.snkd");
    save_dataset(&data, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SNKD");
    assert_eq!(load_dataset(&path, Validation::default()).unwrap(), data);
}

#[test]
fn dataset_with_branching_record_fails_at_its_index() {
    let good = Grid::from_rows(&[[1, 1, 1]]);
    let branching = Grid::from_rows(&[[1, 1, 1], [0, 1, 0], [0, 1, 0]]);
    let file = DatasetFile::new(vec![good.clone(), good.clone(), branching]);
    let mut buf = Vec::new();
    write_dataset(&mut buf, &file).unwrap();
    match read_dataset(&buf[..], Validation::default()) {
        Err(DatasetError::Record { index: 2, message }) => assert!(message.contains("BRANCHING")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn padded_batches_conserve_cells() {
    let grids = vec![Grid::from_rows(&[[1, 0, 1], [1, 1, 1]]), Grid::from_rows(&[[1; 9]]), Grid::new(5, 2).unwrap()];
    let b = pad_batch(&grids, 8).unwrap();
    assert_eq!(b.canvas, (8, 16));
    for ((img, mask), g) in b.images.iter().zip(&b.masks).zip(&grids) {
        assert_eq!(mask.iter().filter(|&&m| m).count(), g.area());
        let living: f64 = img.values().iter().sum();
        assert_eq!(living as usize, g.living_count());
    }
    assert_eq!(b.crop_back(), grids);
}

#[test]
fn checkpoint_round_trip_on_disk_and_mismatch() {
    let cfg = DenoiserConfig { base_channels: 8, ..DenoiserConfig::default() };
    let model = Denoiser::new(cfg.clone(), 250, 4).unwrap();
    let schedule = ScheduleConfig { timesteps: 250, beta_start: 1e-4, beta_end: 0.03 };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model, &schedule).unwrap();
    let ck = load_checkpoint(&path, Some(&cfg)).unwrap();
    assert_eq!(ck.schedule, schedule);
    assert_eq!(ck.model.params(), model.params());
    let x = RealImage::zeros(8, 8);
    assert_eq!(ck.model.predict_noise(&x, 7).unwrap(), model.predict_noise(&x, 7).unwrap());

    let other = DenoiserConfig { attention_heads: 2, ..cfg };
    assert!(matches!(load_checkpoint(&path, Some(&other)), Err(NetError::ConfigHash { .. })));
    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 3], None), Err(NetError::Checkpoint(_))));
}
