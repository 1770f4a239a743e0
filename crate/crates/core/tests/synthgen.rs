use proptest::prelude::*;
use toonrig::raster::draw_markers;
use toonrig::synthgen::{
    associate_landmarks, build_dataset, detect_blobs, recover_landmarks, sample_params, Blob,
    Dataset, BLOB_THRESHOLD,
};
use toonrig::template::default_rig;
use toonrig::{Image, LandmarkSet, ParamVector, Point};

#[test]
fn sampling_is_seeded() {
    let rig = default_rig(512);
    assert_eq!(
        sample_params(&rig, 3, 7).unwrap(),
        sample_params(&rig, 3, 7).unwrap()
    );
    assert_ne!(
        sample_params(&rig, 3, 7).unwrap(),
        sample_params(&rig, 3, 8).unwrap()
    );
    assert!(sample_params(&rig, 0, 7).is_err());
}

#[test]
fn sampled_weights_look_uniform() {
    let rig = default_rig(512);
    let samples = sample_params(&rig, 10_000, 11).unwrap();
    let rows: Vec<Vec<f64>> = samples.iter().map(|p| p.to_vec(&rig)).collect();
    for axis in 0..rig.param_count() {
        let col: Vec<f64> = rows.iter().map(|r| r[axis]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((-1.0..=1.0).contains(&mean), "axis {axis} mean {mean}");
        assert!(
            min < -27.0 && max > 27.0,
            "axis {axis} range [{min}, {max}]"
        );
        assert!(min >= -30.0 && max <= 30.0);
    }
}

#[test]
fn square_blob_centroid_and_area() {
    let mut img = Image::filled(300, 300, [0, 0, 0, 255]);
    for y in 199..=201 {
        for x in 99..=101 {
            img.put(x, y, [255, 255, 255, 255]);
        }
    }
    let blobs = detect_blobs(&img, BLOB_THRESHOLD);
    assert_eq!(
        blobs,
        vec![Blob {
            centroid: Point::new(100.0, 200.0),
            area: 9
        }]
    );
    assert!(detect_blobs(&Image::filled(30, 30, [0, 0, 0, 255]), BLOB_THRESHOLD).is_empty());
}

#[test]
fn two_discs_are_two_blobs_sorted_by_area() {
    let small = draw_markers(200, &[Point::new(50.0, 100.0)], 2.0);
    let big = draw_markers(200, &[Point::new(100.0, 100.0)], 4.0);
    let mut img = small.clone();
    for y in 0..200 {
        for x in 0..200 {
            if big.get(x, y)[0] == 255 {
                img.put(x, y, [255, 255, 255, 255]);
            }
        }
    }
    let blobs = detect_blobs(&img, BLOB_THRESHOLD);
    assert_eq!(blobs.len(), 2);
    assert!(blobs[0].area > blobs[1].area);
    assert!((blobs[0].centroid - Point::new(100.0, 100.0)).norm() < 1e-9);
    assert!((blobs[1].centroid - Point::new(50.0, 100.0)).norm() < 1e-9);
}

fn toy_template(points: &[Point], size: f64) -> LandmarkSet {
    let ids: Vec<String> = (0..points.len()).map(|i| format!("p{i}")).collect();
    let groups = vec!["contour".to_string(); points.len()];
    let norm = points
        .iter()
        .map(|p| Point::new(p.x / size, p.y / size))
        .collect();
    LandmarkSet::new(ids, norm, groups).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn exact_blobs_keep_identity() {
    let pts = [
        Point::new(10.0, 10.0),
        Point::new(40.0, 12.0),
        Point::new(25.0, 30.0),
        Point::new(60.0, 60.0),
    ];
    let template = toy_template(&pts, 100.0);
    let blobs: Vec<Blob> = pts
        .iter()
        .rev()
        .map(|&c| Blob {
            centroid: c,
            area: 5,
        })
        .collect();
    let got = associate_landmarks(&blobs, &template, 100).unwrap();
    assert_eq!(got, template);
}

#[test]
fn count_mismatch_is_an_error() {
    let pts: Vec<Point> = (0..12).map(|i| Point::new(5.0 * i as f64, 3.0)).collect();
    let template = toy_template(&pts, 100.0);
    let blobs: Vec<Blob> = pts[..11]
        .iter()
        .map(|&c| Blob {
            centroid: c,
            area: 1,
        })
        .collect();
    let err = associate_landmarks(&blobs, &template, 100).unwrap_err();
    assert!(matches!(
        err,
        toonrig::Error::LandmarkCountMismatch {
            blobs: 11,
            landmarks: 12
        }
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifted_blobs_match_brute_force(
        raw in prop::collection::vec((0.0f64..200.0, 0.0f64..200.0), 2..=6),
        shuffle in any::<u64>(),
    ) {
        let size = 256.0;
        let pts: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x + 20.0, y + 20.0)).collect();
        let n = pts.len();
        let template = toy_template(&pts, size);
        let shift = Point::new(5.0, 3.0);
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left((shuffle % n as u64) as usize);
        let blobs: Vec<Blob> = order
            .iter()
            .map(|&i| Blob { centroid: pts[i] + shift, area: 1 })
            .collect();
        let got = associate_landmarks(&blobs, &template, size as u32).unwrap();

        let cost = |perm: &[usize]| -> f64 {
            perm.iter()
                .enumerate()
                .map(|(t, &b)| {
                    let d = blobs[b].centroid - pts[t];
                    d.dot(d)
                })
                .sum()
        };
        let best = permutations(n)
            .into_iter()
            .map(|p| cost(&p))
            .fold(f64::INFINITY, f64::min);
        let got_cost: f64 = got
            .points()
            .iter()
            .zip(&pts)
            .map(|(g, t)| {
                let d = *g * size - *t;
                d.dot(d)
            })
            .sum();
        prop_assert!((got_cost - best).abs() <= 1e-6 * best.max(1.0));
    }
}

#[test]
fn global_shift_preserves_assignment() {
    let pts = [
        Point::new(30.0, 30.0),
        Point::new(80.0, 35.0),
        Point::new(55.0, 70.0),
        Point::new(20.0, 100.0),
        Point::new(95.0, 110.0),
        Point::new(60.0, 140.0),
    ];
    let template = toy_template(&pts, 256.0);
    let blobs: Vec<Blob> = pts
        .iter()
        .rev()
        .map(|&c| Blob {
            centroid: c + Point::new(5.0, 3.0),
            area: 1,
        })
        .collect();
    let got = associate_landmarks(&blobs, &template, 256).unwrap();
    for (g, t) in got.points().iter().zip(&pts) {
        assert!((*g * 256.0 - (*t + Point::new(5.0, 3.0))).norm() < 1e-9);
    }
}

fn worst_error(rig: &toonrig::Rig, data: &Dataset) -> f64 {
    let n = rig.canvas_size as f64;
    let mut worst: f64 = 0.0;
    for i in 0..data.len() {
        let (set, values) = data.sample(i).unwrap();
        let p = ParamVector::from_slice(rig, &values).unwrap();
        for (id, q) in set.ids().iter().zip(set.points()) {
            let truth = rig.displaced_landmark(id, &p).unwrap();
            worst = worst.max((*q * n - truth).norm());
        }
    }
    worst
}

#[test]
fn recovered_landmarks_are_within_tolerance_at_1024() {
    let rig = default_rig(1024);
    let data = build_dataset(&rig, 100, 5).unwrap();
    assert_eq!(data.len(), 100);
    assert_eq!(data.meta().dropped, 0);
    // f32 storage adds well under 1e-3 px at this scale.
    assert!(worst_error(&rig, &data) <= 0.7);
}

#[test]
fn recovered_landmarks_scale_with_canvas_at_512() {
    let rig = default_rig(512);
    let data = build_dataset(&rig, 100, 6).unwrap();
    assert_eq!(data.meta().dropped, 0);
    assert!(worst_error(&rig, &data) <= 0.7 * 512.0 / 1024.0);
}

#[test]
fn neutral_pose_recovers_the_template() {
    let rig = default_rig(1024);
    let set = recover_landmarks(&rig, &ParamVector::zeros(&rig)).unwrap();
    for (id, q) in set.ids().iter().zip(set.points()) {
        let t = rig.landmark(id).unwrap().position();
        assert!((*q * 1024.0 - t).norm() <= 0.7, "{id}");
    }
}

#[test]
fn dataset_files_are_reproducible_and_worker_independent() {
    let rig = default_rig(512);
    let dir = tempfile::tempdir().unwrap();
    let build = |threads: usize, name: &str| {
        let path = dir.path().join(name);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| build_dataset(&rig, 40, 9).unwrap())
            .save(&path)
            .unwrap();
        (
            std::fs::read(&path).unwrap(),
            std::fs::read(Dataset::sidecar_path(&path)).unwrap(),
        )
    };
    let a = build(1, "a.trds");
    assert_eq!(a, build(1, "b.trds"));
    assert_eq!(a, build(3, "c.trds"));
}

#[test]
fn dataset_round_trip_and_rig_guard() {
    let rig = default_rig(512);
    let data = build_dataset(&rig, 20, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.trds");
    data.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.meta(), data.meta());
    for i in 0..data.len() {
        assert_eq!(back.landmarks_row(i), data.landmarks_row(i));
        assert_eq!(back.params_row(i), data.params_row(i));
    }
    back.check_rig(&rig).unwrap();
    assert!(back.check_rig(&default_rig(1024)).is_err());
}
