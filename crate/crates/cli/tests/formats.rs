use proptest::prelude::*;
use trajcon::embed::{FeatureMap, SamplingPattern};
use trajcon::mtcl::{initial_model, TrainConfig};
use trajcon_cli::io::*;

#[test]
fn canonical_line_round_trips() {
    let s = "1,2,100,200,50,150,1,-1,-1,-1";
    let l = parse_mot_line(s).unwrap();
    assert_eq!((l.frame, l.id, l.bb_left, l.bb_height), (1, 2, 100.0, 150.0));
    assert_eq!(write_mot_line(&l), s);
}

#[test]
fn float_coordinates_are_preserved() {
    let s = "3,-1,100.5,20.25,33.125,80.0625,0.875,-1,-1,-1";
    let l = parse_mot_line(s).unwrap();
    assert_eq!(l.bb_left, 100.5);
    assert_eq!(write_mot_line(&l), s);
}

#[test]
fn short_line_reports_position() {
    let e = parse_mot_line("1,2,100").unwrap_err();
    assert_eq!(e.line, 1);
    assert!(e.to_string().contains("10 comma-separated fields"));

    let e = parse_mot(&format!("{}\n\n1,2,x,4,5,6,1,-1,-1,-1\n", "1,1,0,0,1,1,1,-1,-1,-1")).unwrap_err();
    assert_eq!((e.line, e.field), (3, Some(3)));
}

#[test]
fn invalid_frame_and_id_are_rejected() {
    assert!(parse_mot_line("0,1,0,0,1,1,1,-1,-1,-1").is_err());
    assert!(parse_mot_line("1,0,0,0,1,1,1,-1,-1,-1").is_err());
    assert!(parse_mot_line("1,-2,0,0,1,1,1,-1,-1,-1").is_err());
    assert!(parse_mot_line("1,1,0,0,-1,1,1,-1,-1,-1").is_err());
    assert!(parse_mot_line("1,-1,0,0,1,1,1,-1,-1,-1").is_ok());
}

proptest! {
    #[test]
    fn any_line_round_trips(
        frame in 1u32..100_000,
        id in prop_oneof![Just(-1i64), 1i64..1_000_000],
        coords in prop::array::uniform4(-1e4f64..1e4),
        conf in 0.0f64..1.0,
    ) {
        let l = MotLine {
            frame, id,
            bb_left: coords[0], bb_top: coords[1],
            bb_width: coords[2].abs(), bb_height: coords[3].abs(),
            conf, x: -1.0, y: -1.0, z: -1.0,
        };
        let back = parse_mot_line(&write_mot_line(&l)).unwrap();
        prop_assert_eq!(back, l);
    }

    #[test]
    fn sidecar_is_bit_exact(values in prop::collection::vec(-10.0f64..10.0, 1..6), frame in 1u32..50) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let rows = vec![SidecarRow { frame, index: 0, values: values.clone() }];
        write_sidecar(&path, values.len(), &rows).unwrap();
        let (dim, back) = read_sidecar(&path).unwrap();
        prop_assert_eq!(dim, values.len());
        prop_assert_eq!(back, rows);
    }
}

#[test]
fn sidecar_header_and_width_are_checked() {
    assert!(parse_sidecar("1,0,0.5\n").is_err());
    let e = parse_sidecar("D=2\n1,0,0.5\n").unwrap_err();
    assert_eq!(e.line, 2);
    let (dim, rows) = parse_sidecar("D=2\n1,0,0.5,-0.25\n").unwrap();
    assert_eq!((dim, rows[0].values.clone()), (2, vec![0.5, -0.25]));
}

#[test]
fn feature_maps_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.bin");
    let a = FeatureMap::from_fn(2, 3, 2, |y, x, c| (y * 100 + x * 10 + c) as f64 + 0.125);
    let b = FeatureMap::zeros(1, 1, 4);
    write_fmaps(&path, &[(1, a.clone()), (2, b.clone())]).unwrap();
    let back = read_fmaps(&path).unwrap();
    assert_eq!(back, vec![(1, a), (2, b)]);

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], FMAP_MAGIC);
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_fmaps(&path).is_err());
}

#[test]
fn checkpoint_round_trips_with_metadata() {
    let cfg = TrainConfig::default();
    let model = initial_model::<f64>(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    let meta = vec![("strategy".to_string(), "average".to_string())];
    write_checkpoint(&path, &model, SamplingPattern::Grid, &meta).unwrap();
    let c = read_checkpoint(&path).unwrap();
    assert_eq!(c.model, model);
    assert_eq!(c.meta("strategy"), Some("average"));
    assert_eq!(c.meta("n_k"), Some("9"));
}

#[test]
fn damaged_checkpoint_is_rejected() {
    let model = initial_model::<f64>(&TrainConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    write_checkpoint(&path, &model, SamplingPattern::Grid, &[]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(parse_checkpoint(&text.replace("n_k=9", "n_k=8")).is_err());
    assert!(parse_checkpoint(&text.replace("fc2.bias", "fc2.bogus")).is_err());
    assert!(parse_checkpoint(&text[..text.len() / 2]).is_err());
    assert!(parse_checkpoint("not a checkpoint").is_err());
}
