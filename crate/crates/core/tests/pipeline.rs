use tapnet::cli::{run_train, RunConfig};
use tapnet::data::landmarks::synthetic_tapping;
use tapnet::data::{
    extract_from_landmarks, load_feature_csv, load_landmark_csv, stratified_split, synth_generate, write_feature_csv,
    write_landmark_csv, zscore_fit, Dataset,
};
use tapnet::model::{decode_checkpoint, encode_checkpoint};
use tapnet::numerics::Mat;

#[test]
fn normalization_is_fit_on_the_training_split_only() {
    let mut data = synth_generate(10, 4.0, 8).unwrap();
    let mut rc = RunConfig::default();
    rc.train.seed = 8;
    rc.model.seed = 8;
    rc.train.epochs = 1;
    let art = run_train(&rc, &data, |_, _| {}).unwrap();
    let stats = art.checkpoint.normalization.clone().expect("normalization stored");

    let (train_raw, _) = stratified_split(&data, 0.2, 8).unwrap();
    let train_fit = zscore_fit(&train_raw).unwrap();
    assert_eq!(stats.mean, train_fit.mean);
    assert_eq!(stats.std, train_fit.std);
    let full_fit = zscore_fit(&data).unwrap();
    assert_ne!(stats.mean, full_fit.mean);

    // The checkpoint carries the statistics through an encode/decode cycle.
    let back = decode_checkpoint(&encode_checkpoint(&art.checkpoint).unwrap()).unwrap();
    assert_eq!(back.normalization.unwrap().mean, train_fit.mean);

    // Perturbing a held-out row leaves the fitted statistics unchanged.
    let (_, test_raw) = stratified_split(&data, 0.2, 8).unwrap();
    let target = test_raw.features.row(0).to_vec();
    let row = (0..data.len())
        .find(|&r| data.features.row(r) == target.as_slice())
        .unwrap();
    for v in data.features.row_mut(row) {
        *v += 1000.0;
    }
    let art2 = run_train(&rc, &data, |_, _| {}).unwrap();
    assert_eq!(art2.checkpoint.normalization.unwrap().mean, train_fit.mean);
}

#[test]
fn landmark_files_become_feature_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for (i, hz) in [1.5, 2.5].into_iter().enumerate() {
        let path = dir.path().join(format!("rec{i}.csv"));
        write_landmark_csv(&synthetic_tapping(hz, 10.0, 60.0, 40.0, 25.0), &path).unwrap();
        let seq = load_landmark_csv(&path).unwrap();
        let fv = extract_from_landmarks(&seq, 57, 3).unwrap();
        assert!((fv.values[16] - hz).abs() < 0.02, "{hz}: {}", fv.values[16]);
        rows.extend(fv.values);
    }
    let ds = Dataset::new(Mat::new(2, 57, rows).unwrap(), None, "landmarks").unwrap();
    let out = dir.path().join("features.csv");
    write_feature_csv(&ds, &out).unwrap();
    let back = load_feature_csv(&out).unwrap();
    assert_eq!(back.features.data(), ds.features.data());
    assert!(back.labels.is_none());
}
