use std::fs;

use ckm_core::ingest::{export_ckmimagenet, ingest_ckmimagenet, parse_metadata, Layout};
use ckm_core::kv::KvDoc;
use ckm_core::map::{read_tensor, ChannelKind};
use ckm_core::priors::PriorConfig;
use ckm_core::synth::{generate_scene, SceneFamily, SceneMaps};
use ckm_core::CkmError;

fn scenes(n: u64) -> Vec<(String, SceneMaps)> {
    let fam = SceneFamily {
        width: 32,
        height: 32,
        ..SceneFamily::default()
    };
    (0..n)
        .map(|s| {
            (
                format!("scene{s:02}"),
                generate_scene(&fam.sample(s).unwrap()).unwrap(),
            )
        })
        .collect()
}

fn max_err(a: &ckm_core::map::CkmTensor, b: &ckm_core::map::CkmTensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

#[test]
fn export_then_ingest_round_trips_within_quantization() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let layout = Layout::default();
    let data = scenes(3);
    export_ckmimagenet(root.path(), &layout, &data).unwrap();
    let report =
        ingest_ckmimagenet(root.path(), &layout, out.path(), &PriorConfig::default()).unwrap();
    assert_eq!(report.ingested.len(), 3);
    assert!(report.skipped.is_empty());
    for (id, maps) in &data {
        let back = SceneMaps::read_dir(&out.path().join(id)).unwrap();
        assert!(max_err(&back.pgm1, &maps.pgm1) <= 0.40, "{id} gain");
        assert!(max_err(&back.pgm2, &maps.pgm2) <= 0.40, "{id} gain 2");
        assert!(max_err(&back.pam1, &maps.pam1) <= 0.75, "{id} angle");
        assert!(max_err(&back.pam2, &maps.pam2) <= 0.75, "{id} angle 2");
        assert_eq!(back.meta.bs_pixel, maps.meta.bs_pixel);
        let priors = read_tensor(out.path().join(id).join("priors.ckmt")).unwrap();
        assert_eq!(
            priors.channels(),
            [
                ChannelKind::LosMask,
                ChannelKind::BuildingMask,
                ChannelKind::BsEncoding
            ]
        );
    }
}

#[test]
fn missing_angle_image_is_a_format_error() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let layout = Layout::default();
    export_ckmimagenet(root.path(), &layout, &scenes(1)).unwrap();
    fs::remove_file(layout.angle_path(root.path(), "scene00", 2)).unwrap();
    let err =
        ingest_ckmimagenet(root.path(), &layout, out.path(), &PriorConfig::default()).unwrap_err();
    assert!(matches!(err, CkmError::Format { .. }), "{err}");
}

#[test]
fn scenes_without_a_detectable_bs_are_skipped() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let layout = Layout::default();
    let mut data = scenes(2);
    // All-building gain map and no BS override: detection must fail.
    let dead = &mut data[1].1;
    let sentinel = vec![-250.0f32; 32 * 32];
    dead.pgm1 =
        ckm_core::map::CkmTensor::single(32, 32, ChannelKind::GainDb, sentinel, 2.0).unwrap();
    dead.meta.bs_pixel = None;
    export_ckmimagenet(root.path(), &layout, &data).unwrap();
    let report =
        ingest_ckmimagenet(root.path(), &layout, out.path(), &PriorConfig::default()).unwrap();
    assert_eq!(report.ingested, vec!["scene00".to_string()]);
    assert_eq!(report.skipped.len(), 1);
    assert!(!out.path().join("scene01").exists());
}

#[test]
fn malformed_metadata_names_the_line() {
    let text = "# header\nscene=a bs_height=20 ue_height=1.5 carrier_hz=28e9 pixel_spacing_m=1\nscene=b bs_height=oops ue_height=1.5 carrier_hz=28e9 pixel_spacing_m=1\n";
    match parse_metadata(text) {
        Err(CkmError::Metadata { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    let missing = "scene=a bs_height=20 ue_height=1.5 carrier_hz=28e9\n";
    assert!(matches!(
        parse_metadata(missing),
        Err(CkmError::Metadata { line: 1, .. })
    ));
    let bare = "scene=a bs_height\n";
    assert!(matches!(
        parse_metadata(bare),
        Err(CkmError::Metadata { line: 1, .. })
    ));
}

#[test]
fn carrier_sets_the_wavelength() {
    let recs = parse_metadata(
        "scene=x bs_height=20 ue_height=1.5 carrier_hz=28e9 pixel_spacing_m=1 bs_row=3 bs_col=4\n",
    )
    .unwrap();
    assert!((recs[0].meta.wavelength_m() - 0.010707).abs() < 5e-7);
    assert_eq!(recs[0].meta.bs_pixel, Some((3, 4)));
}

#[test]
fn layout_manifest_overrides_patterns() {
    let text = "layout_version=1\nmetadata=meta.lst\ngain_pattern=gain/{scene}_{path}.png\nangle_pattern=aoa/{scene}_{path}.png\nbit_depth=16\n";
    let layout = Layout::from_kv(&KvDoc::parse(text).unwrap()).unwrap();
    assert_eq!(layout.bit_depth, 16);
    assert_eq!(
        layout.gain_path(std::path::Path::new("/d"), "s1", 2),
        std::path::PathBuf::from("/d/gain/s1_2.png")
    );
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let data = scenes(1);
    export_ckmimagenet(root.path(), &layout, &data).unwrap();
    ingest_ckmimagenet(root.path(), &layout, out.path(), &PriorConfig::default()).unwrap();
    let back = SceneMaps::read_dir(&out.path().join("scene00")).unwrap();
    assert!(max_err(&back.pgm1, &data[0].1.pgm1) <= 200.0 / 65535.0 + 1e-4);
    assert!(Layout::from_kv(&KvDoc::parse("layout_version=2\n").unwrap()).is_err());
    assert!(Layout::from_kv(&KvDoc::parse("layout_version=1\nbit_depth=12\n").unwrap()).is_err());
}
