use proptest::prelude::*;
use toonrig::geom::Bounds;
use toonrig::raster::{
    composite_over, marker_radius, over, render, render_markers, render_mask, TextureMap,
    ALPHA_THRESHOLD,
};
use toonrig::rig::BASE_FACE;
use toonrig::template::{default_atlas, default_rig};
use toonrig::{Axis, Image, ParamVector, Point, Rig};

const N: u32 = 256;

fn setup() -> (Rig, Image) {
    let rig = default_rig(N);
    let atlas = default_atlas(&rig);
    (rig, atlas)
}

/// Atlas texel a rest-pose pixel of `layer` samples, by direct arithmetic.
fn rest_texel(rig: &Rig, atlas: &Image, layer: &str, x: u32, y: u32) -> [u8; 4] {
    let map = TextureMap::new(&rig.layer(layer).unwrap());
    let t = map.to_atlas(Point::new(x as f64, y as f64));
    let r = map.rect;
    let u = (t.x.round() as u32).clamp(r.x, r.x + r.w - 1);
    let v = (t.y.round() as u32).clamp(r.y, r.y + r.h - 1);
    atlas.get(u, v)
}

fn strictly_inside(b: &Bounds, x: u32, y: u32) -> bool {
    let (x, y) = (x as f64, y as f64);
    x > b.min.x && x < b.max.x && y > b.min.y && y < b.max.y
}

#[test]
fn base_face_alone_is_its_texture_in_place() {
    let (rig, atlas) = setup();
    let img = render(&rig, &atlas, &ParamVector::zeros(&rig), Some(&[BASE_FACE])).unwrap();
    for y in 0..N {
        for x in 0..N {
            let t = rest_texel(&rig, &atlas, BASE_FACE, x, y);
            let expected = if t[3] == 0 { [0; 4] } else { t };
            assert_eq!(img.get(x, y), expected, "({x},{y})");
        }
    }
}

#[test]
fn rendering_is_deterministic_across_thread_counts() {
    let (rig, atlas) = setup();
    let mut p = ParamVector::zeros(&rig);
    p.set("mouth", Axis::Scale, 17.0);
    p.set("left_eye", Axis::X, -9.5);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render(&rig, &atlas, &p, None).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}

#[test]
fn moving_an_eye_only_changes_pixels_in_its_footprints() {
    let (rig, atlas) = setup();
    let zero = ParamVector::zeros(&rig);
    let mut moved = zero.clone();
    moved.set("left_eye", Axis::X, 30.0);
    let a = render(&rig, &atlas, &zero, None).unwrap();
    let b = render(&rig, &atlas, &moved, None).unwrap();
    let rest = Bounds::of(&rig.layer("left_eye").unwrap().mesh.vertices).unwrap();
    let dx = rig.component("left_eye").unwrap().gains.dx_max;
    let shifted = Bounds {
        min: rest.min + Point::new(dx, 0.0),
        max: rest.max + Point::new(dx, 0.0),
    };
    let mut changed = 0;
    for y in 0..N {
        for x in 0..N {
            if a.get(x, y) != b.get(x, y) {
                changed += 1;
                let p = Point::new(x as f64, y as f64);
                assert!(
                    rest.expanded(1.0).contains(p) || shifted.expanded(1.0).contains(p),
                    "({x},{y}) changed outside the eye footprints"
                );
            }
        }
    }
    assert!(changed > 0);
}

#[test]
fn nose_mask_is_the_thresholded_texture_footprint() {
    let (rig, atlas) = setup();
    let mask = render_mask(&rig, &atlas, &ParamVector::zeros(&rig), &["nose"]).unwrap();
    let b = Bounds::of(&rig.layer("nose").unwrap().mesh.vertices).unwrap();
    for y in 0..N {
        for x in 0..N {
            let p = Point::new(x as f64, y as f64);
            if !b.contains(p) {
                assert!(!mask.get(x, y), "({x},{y}) outside the nose mesh");
            } else if strictly_inside(&b, x, y) {
                let t = rest_texel(&rig, &atlas, "nose", x, y);
                assert_eq!(mask.get(x, y), t[3] > ALPHA_THRESHOLD, "({x},{y})");
            }
        }
    }
}

#[test]
fn mask_of_union_is_union_of_masks() {
    let (rig, atlas) = setup();
    let mut p = ParamVector::zeros(&rig);
    p.set("mouth", Axis::Y, -20.0);
    p.set("nose", Axis::Scale, 25.0);
    let a = render_mask(&rig, &atlas, &p, &["nose"]).unwrap();
    let b = render_mask(&rig, &atlas, &p, &["mouth"]).unwrap();
    let ab = render_mask(&rig, &atlas, &p, &["nose", "mouth"]).unwrap();
    assert_eq!(ab, a.union(&b).unwrap());
}

#[test]
fn transparent_layer_has_empty_mask_and_empty_selection_fails() {
    let (rig, mut atlas) = setup();
    let r = rig.layer("nose").unwrap().texture_rect;
    atlas.blit(r.x, r.y, &Image::new(r.w, r.h)).unwrap();
    let m = render_mask(&rig, &atlas, &ParamVector::zeros(&rig), &["nose"]).unwrap();
    assert!(m.is_empty());
    assert!(render_mask(&rig, &atlas, &ParamVector::zeros(&rig), &[]).is_err());
}

#[test]
fn single_layer_mask_matches_rendered_alpha() {
    let (rig, atlas) = setup();
    let mut p = ParamVector::zeros(&rig);
    p.set("right_eye", Axis::Scale, -12.0);
    p.set("mouth", Axis::X, 8.0);
    for id in rig.feature_ids() {
        let img = render(&rig, &atlas, &p, Some(&[id])).unwrap();
        let mask = render_mask(&rig, &atlas, &p, &[id]).unwrap();
        for y in 0..N {
            for x in 0..N {
                assert_eq!(
                    mask.get(x, y),
                    img.get(x, y)[3] > ALPHA_THRESHOLD,
                    "{id} ({x},{y})"
                );
            }
        }
    }
}

#[test]
fn texture_rect_outside_atlas_is_an_error() {
    let (rig, atlas) = setup();
    let small = atlas.crop(toonrig::Rect::new(0, 0, 10, 10)).unwrap();
    assert!(render(&rig, &small, &ParamVector::zeros(&rig), None).is_err());
}

/// White pixels near `c` and their centroid.
fn local_centroid(img: &Image, c: Point, reach: f64) -> Option<Point> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    let x0 = (c.x - reach).floor().max(0.0) as u32;
    let y0 = (c.y - reach).floor().max(0.0) as u32;
    for y in y0..=((c.y + reach).ceil() as u32).min(img.height() - 1) {
        for x in x0..=((c.x + reach).ceil() as u32).min(img.width() - 1) {
            if img.get(x, y)[0] == 255 {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    (n > 0.0).then(|| Point::new(sx / n, sy / n))
}

fn count_components(img: &Image) -> usize {
    let (w, h) = img.dims();
    let mut seen = vec![false; (w * h) as usize];
    let mut count = 0;
    for start in 0..(w * h) {
        if seen[start as usize] || img.get(start % w, start / w)[0] != 255 {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start as usize] = true;
        while let Some(k) = stack.pop() {
            let (x, y) = ((k % w) as i64, (k / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = (ny as u32) * w + nx as u32;
                    if !seen[j as usize] && img.get(nx as u32, ny as u32)[0] == 255 {
                        seen[j as usize] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

#[test]
fn neutral_markers_sit_on_the_template() {
    let rig = default_rig(1024);
    let img = render_markers(&rig, &ParamVector::zeros(&rig), None).unwrap();
    for l in &rig.template_landmarks {
        let c = local_centroid(&img, l.position(), 2.5).expect("marker drawn");
        assert!((c - l.position()).norm() <= 0.5, "{}", l.id);
    }
}

#[test]
fn mouth_markers_follow_the_vertical_gain() {
    let mut rig = default_rig(1024);
    let k = rig.components.iter().position(|c| c.id == "mouth").unwrap();
    rig.components[k].gains.dy_max = 20.0;
    let mut p = ParamVector::zeros(&rig);
    p.set("mouth", Axis::Y, 30.0);
    let img = render_markers(&rig, &p, None).unwrap();
    for l in rig.template_landmarks.iter().filter(|l| l.group == "mouth") {
        let expected = l.position() + Point::new(0.0, 20.0);
        let c = local_centroid(&img, expected, 2.5).expect("marker drawn");
        assert!((c - expected).norm() <= 0.5, "{}", l.id);
    }
}

#[test]
fn well_separated_markers_are_separate_components() {
    let rig = default_rig(1024);
    let r = marker_radius(1024);
    let mut chosen: Vec<&toonrig::rig::TemplateLandmark> = Vec::new();
    for l in &rig.template_landmarks {
        if chosen
            .iter()
            .all(|c| (c.position() - l.position()).norm() > 2.0 * r + 2.0)
        {
            chosen.push(l);
        }
    }
    assert!(chosen.len() > 20);
    let ids: Vec<String> = chosen.iter().map(|l| l.id.clone()).collect();
    let img = render_markers(&rig, &ParamVector::zeros(&rig), Some(&ids)).unwrap();
    assert_eq!(count_components(&img), ids.len());
}

#[test]
fn unknown_marker_id_is_an_error() {
    let rig = default_rig(256);
    let err = render_markers(&rig, &ParamVector::zeros(&rig), Some(&["nope".to_string()]));
    assert!(err.is_err());
}

#[test]
fn compositing_edge_cases() {
    let bottom = Image::filled(3, 2, [10, 20, 30, 255]);
    assert_eq!(composite_over(&bottom, &Image::new(3, 2)).unwrap(), bottom);
    let top = Image::filled(3, 2, [200, 100, 0, 255]);
    assert_eq!(composite_over(&bottom, &top).unwrap(), top);
    let black = Image::filled(1, 1, [0, 0, 0, 255]);
    let half_red = Image::filled(1, 1, [255, 0, 0, 127]);
    assert_eq!(
        composite_over(&black, &half_red).unwrap().get(0, 0),
        [127, 0, 0, 255]
    );
    assert!(composite_over(&bottom, &Image::new(2, 2)).is_err());
}

/// Straight-alpha source-over evaluated in floating point, rounded half up.
fn over_oracle(d: [u8; 4], s: [u8; 4]) -> [u8; 4] {
    let a_s = s[3] as f64 / 255.0;
    let a_d = d[3] as f64 / 255.0;
    let a_o = a_s + a_d * (1.0 - a_s);
    if a_o == 0.0 {
        return [0; 4];
    }
    let mut out = [0u8; 4];
    for c in 0..3 {
        let v = (s[c] as f64 * a_s + d[c] as f64 * a_d * (1.0 - a_s)) / a_o;
        out[c] = (v + 0.5 + 1e-9).floor() as u8;
    }
    out[3] = (a_o * 255.0 + 0.5 + 1e-9).floor() as u8;
    out
}

proptest! {
    #[test]
    fn over_matches_the_float_equation(d in any::<[u8; 4]>(), s in any::<[u8; 4]>()) {
        let got = over(d, s);
        let want = over_oracle(d, s);
        if s[3] == 0 {
            prop_assert_eq!(got, d);
        } else {
            for c in 0..4 {
                prop_assert!((got[c] as i32 - want[c] as i32).abs() <= 1, "{:?} vs {:?}", got, want);
            }
        }
    }
}
