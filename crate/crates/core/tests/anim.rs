use std::collections::BTreeMap;

use toonrig::anim::{
    apply_expression, load_mapping, parse_timeline, render_frame, render_timeline, ExpressionFrame,
    ExpressionMapping, Mode, Pivot, Rule, CHANNELS,
};
use toonrig::assembly::{ModelPackage, Provenance};
use toonrig::geom::Bounds;
use toonrig::raster::render;
use toonrig::template::{default_atlas, default_rig};
use toonrig::{compose_geometry, Axis, BinaryMask, Error, ParamVector, Point};

fn package(size: u32) -> ModelPackage {
    let rig = default_rig(size);
    let atlas = default_atlas(&rig);
    let mut params = ParamVector::zeros(&rig);
    params.set("left_eye", Axis::Scale, 8.0);
    params.set("mouth", Axis::Y, -10.0);
    params.set("right_eye", Axis::X, 5.0);
    ModelPackage {
        repaint_mask: BinaryMask::new(size, size),
        provenance: Provenance::new(BTreeMap::new(), None),
        rig,
        atlas,
        params,
    }
}

fn frame(pairs: &[(&str, f64)]) -> ExpressionFrame {
    ExpressionFrame::new(0.0, pairs.iter().map(|(k, v)| (k.to_string(), *v))).unwrap()
}

#[test]
fn neutral_frame_matches_the_static_render() {
    let pkg = package(256);
    let mapping = ExpressionMapping::default_mapping();
    let still = render(&pkg.rig, &pkg.atlas, &pkg.params, None).unwrap();
    assert_eq!(
        render_frame(&pkg, &ExpressionFrame::neutral(0.0), &mapping).unwrap(),
        still
    );
    let g = apply_expression(
        &pkg.rig,
        &pkg.params,
        &ExpressionFrame::neutral(0.0),
        &mapping,
    )
    .unwrap();
    assert_eq!(g, compose_geometry(&pkg.rig, &pkg.params).unwrap());
    let zeros = ExpressionFrame::new(0.0, CHANNELS.iter().map(|c| (c.to_string(), 0.0))).unwrap();
    assert_eq!(render_frame(&pkg, &zeros, &mapping).unwrap(), still);
}

#[test]
fn identical_frames_render_identically() {
    let pkg = package(256);
    let mapping = ExpressionMapping::default_mapping();
    let f = frame(&[("jawOpen", 0.6), ("mouthSmileLeft", 0.3)]);
    let out = render_timeline(&pkg, &[f.clone(), f], &mapping).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0], out[1]);
}

#[test]
fn full_left_blink_closes_only_the_left_eye() {
    let pkg = package(512);
    let mapping = ExpressionMapping::default_mapping();
    let base = compose_geometry(&pkg.rig, &pkg.params).unwrap();
    let g = apply_expression(
        &pkg.rig,
        &pkg.params,
        &frame(&[("eyeBlinkLeft", 1.0)]),
        &mapping,
    )
    .unwrap();
    let rest = Bounds::of(base.vertices("left_eye").unwrap()).unwrap();
    let shut = Bounds::of(g.vertices("left_eye").unwrap()).unwrap();
    assert!(
        shut.height() <= 0.1 * rest.height(),
        "{} vs {}",
        shut.height(),
        rest.height()
    );
    // closing about the top edge keeps the top in place
    assert!((shut.min.y - rest.min.y).abs() < 1e-9);
    assert!((shut.width() - rest.width()).abs() < 1e-9);
    for (id, verts) in &g.layers {
        if id != "left_eye" {
            assert_eq!(verts.as_slice(), base.vertices(id).unwrap(), "{id}");
        }
    }
}

fn single_rule(
    channel: &str,
    layer: &str,
    mode: Mode,
    gain: f64,
    pivot: Pivot,
) -> ExpressionMapping {
    ExpressionMapping {
        rules: vec![Rule {
            channel: channel.into(),
            layer: layer.into(),
            mode,
            gain,
            pivot,
        }],
    }
}

#[test]
fn each_rule_is_linear_in_its_channel() {
    let pkg = package(256);
    let base = compose_geometry(&pkg.rig, &pkg.params).unwrap();
    let modes = [
        Mode::TranslateX,
        Mode::TranslateY,
        Mode::ScaleX,
        Mode::ScaleY,
        Mode::UniformScale,
    ];
    let pivots = [Pivot::Anchor, Pivot::TopEdge, Pivot::BottomEdge];
    for (i, mode) in modes.into_iter().enumerate() {
        let m = single_rule("mouthPucker", "mouth", mode, 0.37, pivots[i % 3]);
        let at = |v: f64| {
            let g =
                apply_expression(&pkg.rig, &pkg.params, &frame(&[("mouthPucker", v)]), &m).unwrap();
            g.vertices("mouth")
                .unwrap()
                .iter()
                .zip(base.vertices("mouth").unwrap())
                .map(|(a, b)| *a - *b)
                .collect::<Vec<Point>>()
        };
        let one = at(1.0);
        assert!(
            one.iter().any(|d| d.norm() > 1e-6),
            "{mode:?} moved nothing"
        );
        for v in [0.1, 0.25, 0.5, 0.9] {
            for (d, u) in at(v).iter().zip(&one) {
                assert!((*d - *u * v).norm() < 1e-9, "{mode:?} at {v}");
            }
        }
    }
}

#[test]
fn rules_compose_additively() {
    let pkg = package(256);
    let a = single_rule("jawOpen", "mouth", Mode::ScaleY, 0.4, Pivot::TopEdge);
    let b = single_rule(
        "mouthSmileLeft",
        "mouth",
        Mode::TranslateX,
        0.01,
        Pivot::Anchor,
    );
    let both = ExpressionMapping {
        rules: a.rules.iter().chain(&b.rules).cloned().collect(),
    };
    let f = frame(&[("jawOpen", 0.7), ("mouthSmileLeft", 0.4)]);
    let base = compose_geometry(&pkg.rig, &pkg.params).unwrap();
    let ga = apply_expression(&pkg.rig, &pkg.params, &f, &a).unwrap();
    let gb = apply_expression(&pkg.rig, &pkg.params, &f, &b).unwrap();
    let gab = apply_expression(&pkg.rig, &pkg.params, &f, &both).unwrap();
    let m = |g: &toonrig::DeformedGeometry| g.vertices("mouth").unwrap().to_vec();
    for (((s, x), y), r) in m(&gab).iter().zip(m(&ga)).zip(m(&gb)).zip(m(&base)) {
        assert!((*s - (x + y - r)).norm() < 1e-9);
    }
}

#[test]
fn left_blink_only_changes_pixels_around_the_left_eye() {
    let pkg = package(256);
    let mapping = ExpressionMapping::default_mapping();
    let a = render_frame(&pkg, &ExpressionFrame::neutral(0.0), &mapping).unwrap();
    let b = render_frame(&pkg, &frame(&[("eyeBlinkLeft", 1.0)]), &mapping).unwrap();
    let base = compose_geometry(&pkg.rig, &pkg.params).unwrap();
    let footprint = Bounds::of(base.vertices("left_eye").unwrap())
        .unwrap()
        .expanded(1.0);
    let mut changed = 0;
    for y in 0..256 {
        for x in 0..256 {
            if a.get(x, y) != b.get(x, y) {
                changed += 1;
                assert!(
                    footprint.contains(Point::new(x as f64, y as f64)),
                    "({x},{y})"
                );
            }
        }
    }
    assert!(changed > 0);
}

#[test]
fn blink_ramp_changes_every_step_until_closed() {
    let pkg = package(256);
    let mapping = ExpressionMapping::default_mapping();
    let values = [0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0];
    let frames: Vec<ExpressionFrame> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut f = ExpressionFrame::neutral(i as f64 / 30.0);
            f.set("eyeBlinkLeft", *v).unwrap();
            f.set("eyeBlinkRight", *v).unwrap();
            f
        })
        .collect();
    let images = render_timeline(&pkg, &frames, &mapping).unwrap();
    let diffs: Vec<usize> = images
        .windows(2)
        .map(|w| {
            w[0].pixels()
                .zip(w[1].pixels())
                .filter(|(a, b)| a != b)
                .count()
        })
        .collect();
    assert!(diffs[..4].iter().all(|&d| d > 0), "{diffs:?}");
    assert!(diffs[4..].iter().all(|&d| d == 0), "{diffs:?}");
}

#[test]
fn empty_mapping_renders_neutral() {
    let pkg = package(256);
    let empty = ExpressionMapping::from_json("[]", "inline").unwrap();
    assert!(empty.validate(&pkg.rig).unwrap().is_empty());
    let still = render(&pkg.rig, &pkg.atlas, &pkg.params, None).unwrap();
    let busy = frame(&[
        ("eyeBlinkLeft", 1.0),
        ("jawOpen", 1.0),
        ("browInnerUp", 0.5),
    ]);
    assert_eq!(render_frame(&pkg, &busy, &empty).unwrap(), still);
}

#[test]
fn channel_values_are_clamped() {
    let pkg = package(256);
    let mapping = ExpressionMapping::default_mapping();
    let g = |v: f64| {
        apply_expression(&pkg.rig, &pkg.params, &frame(&[("jawOpen", v)]), &mapping).unwrap()
    };
    assert_eq!(g(1.7), g(1.0));
    assert_eq!(g(-0.3), g(0.0));
    assert_eq!(frame(&[("jawOpen", 4.0)]).get("jawOpen"), 1.0);
    assert!(matches!(
        ExpressionFrame::new(0.0, [("jawWide".to_string(), 0.5)]),
        Err(Error::UnknownChannel(_))
    ));
}

#[test]
fn mapping_files_are_validated_with_locations() {
    let rig = default_rig(256);
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("default.json");
    std::fs::write(&good, toonrig::anim::DEFAULT_MAPPING_JSON).unwrap();
    let (m, warnings) = load_mapping(&good, &rig).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    for required in [
        "eyeBlinkLeft",
        "eyeBlinkRight",
        "jawOpen",
        "mouthSmileLeft",
        "mouthSmileRight",
        "mouthFrownLeft",
        "mouthFrownRight",
        "browInnerUp",
        "browDownLeft",
        "browDownRight",
        "eyeWideLeft",
        "eyeWideRight",
        "mouthPucker",
    ] {
        assert!(m.channels().contains(&required), "{required}");
    }

    let bad = dir.path().join("tail.json");
    std::fs::write(
        &bad,
        r#"[{"channel":"jawOpen","layer":"mouth","mode":"translate_y","gain":0.01},
            {"channel":"jawOpen","layer":"tail","mode":"translate_y","gain":0.01}]"#,
    )
    .unwrap();
    let err = load_mapping(&bad, &rig).unwrap_err().to_string();
    assert!(
        err.contains("rules[1].layer") && err.contains("tail"),
        "{err}"
    );

    let unknown = r#"[{"channel":"jawWide","layer":"mouth","mode":"translate_y","gain":0.01}]"#;
    let err = ExpressionMapping::from_json(unknown, "inline")
        .and_then(|m| m.validate(&rig))
        .unwrap_err()
        .to_string();
    assert!(err.contains("rules[0].channel"), "{err}");
}

#[test]
fn timelines_must_be_time_sorted() {
    let frames = parse_timeline(
        r#"[{"time":0.0,"channels":{"jawOpen":0.2}},{"time":0.5,"channels":{}}]"#,
        "inline",
    )
    .unwrap();
    assert_eq!(frames.len(), 2);
    assert_eq!(frames[0].get("jawOpen"), 0.2);
    let pkg = package(256);
    let mapping = ExpressionMapping::default_mapping();
    let backwards = [frames[1].clone(), frames[0].clone()];
    assert!(render_timeline(&pkg, &backwards, &mapping).is_err());
}
