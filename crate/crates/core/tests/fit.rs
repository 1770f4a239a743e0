use std::sync::OnceLock;

use toonrig::assembly::{build_draft, fit_portrait, LandmarkProvider};
use toonrig::regressor::{init_for_dataset, train, MlpModel, TrainConfig};
use toonrig::synthgen::{build_dataset, sample_params};
use toonrig::template::{default_atlas, default_rig, render_fixture};
use toonrig::{Error, Image, ParamVector, PixelLandmarks, Rig};

const SIZE: u32 = 512;

fn rig() -> &'static Rig {
    static RIG: OnceLock<Rig> = OnceLock::new();
    RIG.get_or_init(|| default_rig(SIZE))
}

fn atlas() -> &'static Image {
    static ATLAS: OnceLock<Image> = OnceLock::new();
    ATLAS.get_or_init(|| default_atlas(rig()))
}

/// A compact regressor trained once per test binary.
fn model() -> &'static MlpModel {
    static MODEL: OnceLock<MlpModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = build_dataset(rig(), 4000, 7).unwrap();
        let m = init_for_dataset(&data, [128, 128, 64], 7).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            seed: 7,
            ..TrainConfig::default()
        };
        train(&m, &data, &cfg).unwrap().model
    })
}

fn portrait(params: &ParamVector) -> (Image, PixelLandmarks) {
    render_fixture(rig(), atlas(), params).unwrap()
}

fn mean_abs_error(a: &ParamVector, b: &ParamVector) -> f64 {
    let (x, y) = (a.to_vec(rig()), b.to_vec(rig()));
    x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
}

#[test]
fn self_reconstruction_recovers_the_weights() {
    let truths = sample_params(rig(), 5, 99).unwrap();
    for provider in [LandmarkProvider::Warped, LandmarkProvider::MarkerPath] {
        for truth in &truths {
            let (img, lm) = portrait(truth);
            let draft = build_draft(rig(), &img, &lm).unwrap();
            let fitted = fit_portrait(&draft, model(), &provider).unwrap();
            let err = mean_abs_error(&fitted, truth);
            assert!(err <= 1.0, "{provider:?}: mean error {err}");
        }
    }
}

#[test]
fn neutral_portrait_fits_near_zero() {
    let zero = ParamVector::zeros(rig());
    let (img, lm) = portrait(&zero);
    let draft = build_draft(rig(), &img, &lm).unwrap();
    let fitted = fit_portrait(&draft, model(), &LandmarkProvider::Warped).unwrap();
    let worst = fitted
        .to_vec(rig())
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1.5, "{worst}");
}

#[test]
fn missing_landmarks_name_their_group() {
    let zero = ParamVector::zeros(rig());
    let (img, mut lm) = portrait(&zero);
    let draft = build_draft(rig(), &img, &lm).unwrap();
    let mouth_id = rig().group_ids("mouth")[0].clone();
    let mut external = draft
        .aligned
        .landmarks
        .map_points([SIZE, SIZE], |p| draft.aligned_to_rig.apply(p));
    external.points.shift_remove(&mouth_id);
    let err = fit_portrait(&draft, model(), &LandmarkProvider::External(external)).unwrap_err();
    assert!(
        matches!(&err, Error::MissingLandmarks(g) if g == "mouth"),
        "{err}"
    );

    lm.points.shift_remove(&mouth_id);
    let err = build_draft(rig(), &img, &lm).unwrap_err();
    assert!(
        matches!(&err, Error::MissingLandmarks(g) if g == "mouth"),
        "{err}"
    );
}

#[test]
fn model_for_another_rig_is_refused() {
    let other = default_rig(1024);
    let atlas = default_atlas(&other);
    let (img, lm) = render_fixture(&other, &atlas, &ParamVector::zeros(&other)).unwrap();
    let draft = build_draft(&other, &img, &lm).unwrap();
    assert!(matches!(
        fit_portrait(&draft, model(), &LandmarkProvider::Warped),
        Err(Error::FingerprintMismatch { .. })
    ));
}
