use glam::{DVec2, DVec3};
use loopforge_core::geometry::{point_in_loop, Axis, Loop, PlaneList};
use loopforge_core::recon::{
    cap_fill, chamfer, estimate_normals, export_ply, flip_inner_loops, oriented_cloud, parse_ply,
    ply_string, read_ply, CloudParams, NormalParams, OrientedPointCloud,
};
use loopforge_core::sequence::{encode_sequence, LoopSequence};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn circle(center: DVec2, radius: f64, n: usize) -> Loop {
    let pts: Vec<DVec2> = (0..n)
        .map(|i| {
            let a = TAU * i as f64 / n as f64;
            center + radius * DVec2::new(a.cos(), a.sin())
        })
        .collect();
    Loop::canonical(&pts).unwrap()
}

fn square(lo: DVec2, side: f64) -> Loop {
    let pts = [
        lo,
        lo + DVec2::new(side, 0.0),
        lo + DVec2::new(side, side),
        lo + DVec2::new(0.0, side),
    ];
    Loop::canonical(&pts).unwrap()
}

fn planes(n: usize) -> PlaneList {
    PlaneList::along_axis(Axis::Y, n, 0.0, 1.0).unwrap()
}

/// Three planes with `middle` loops on the interior plane and a small disc on
/// the outer ones.
fn sandwich(middle: Vec<Loop>) -> LoopSequence {
    let cap = vec![circle(DVec2::splat(0.5), 0.05, middle[0].len())];
    encode_sequence(&[cap.clone(), middle, cap], Axis::Y, &planes(3)).unwrap()
}

fn in_plane_normals(seq: &LoopSequence, cloud: &loopforge_core::recon::LoopCloud, token: usize) -> Vec<(DVec2, DVec2)> {
    let span = cloud.spans.iter().find(|s| s.token == token).unwrap();
    let plane = &seq.planes[span.plane];
    (span.start..span.start + span.len)
        .map(|i| {
            let n = cloud.cloud.normals[i];
            (
                plane.project(cloud.cloud.points[i]),
                DVec2::new(n.dot(plane.basis_x), n.dot(plane.basis_y)),
            )
        })
        .collect()
}

#[test]
fn circle_normals_point_radially_outward() {
    let center = DVec2::new(0.4, 0.6);
    let seq = sandwich(vec![circle(center, 0.3, 32)]);
    let cloud = estimate_normals(&seq, NormalParams::default()).unwrap();
    let middle = in_plane_normals(&seq, &cloud, 1);
    assert_eq!(middle.len(), 64);
    for (p, n) in middle {
        let radial = (p - center).normalize();
        assert!(n.dot(radial) > 0.99);
    }
    for n in &cloud.cloud.normals {
        assert!((n.length() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn square_edge_samples_are_axis_aligned() {
    let seq = sandwich(vec![square(DVec2::ZERO, 1.0)]);
    let params = NormalParams {
        samples_per_loop: 12,
        ..Default::default()
    };
    let cloud = estimate_normals(&seq, params).unwrap();
    for (p, n) in in_plane_normals(&seq, &cloud, 1) {
        let on_vertex = (p.x.abs() < 1e-9 || (p.x - 1.0).abs() < 1e-9)
            && (p.y.abs() < 1e-9 || (p.y - 1.0).abs() < 1e-9);
        if on_vertex {
            continue;
        }
        let expected = if p.x.abs() < 1e-9 {
            DVec2::NEG_X
        } else if (p.x - 1.0).abs() < 1e-9 {
            DVec2::X
        } else if p.y.abs() < 1e-9 {
            DVec2::NEG_Y
        } else {
            DVec2::Y
        };
        assert!((n - expected).length() < 1e-12, "at {p}: {n}");
    }
}

#[test]
fn boundary_planes_tilt_toward_the_outside() {
    let seq = sandwich(vec![circle(DVec2::splat(0.5), 0.3, 32)]);
    let cloud = estimate_normals(&seq, NormalParams::default()).unwrap();
    let axis = DVec3::Y;
    for span in &cloud.spans {
        for n in &cloud.cloud.normals[span.start..span.start + span.len] {
            let along = n.dot(axis);
            match span.plane {
                0 => assert!((along + 1.0 / 2f64.sqrt()).abs() < 1e-9),
                2 => assert!((along - 1.0 / 2f64.sqrt()).abs() < 1e-9),
                _ => assert!(along.abs() < 1e-12),
            }
        }
    }
}

#[test]
fn annulus_inner_loop_faces_the_hole() {
    let center = DVec2::splat(0.5);
    let seq = sandwich(vec![circle(center, 0.4, 32), circle(center, 0.2, 32)]);
    let mut cloud = estimate_normals(&seq, NormalParams::default()).unwrap();
    let before = cloud.clone();
    flip_inner_loops(&seq, &mut cloud).unwrap();
    for (p, n) in in_plane_normals(&seq, &cloud, 1) {
        assert!(n.dot((p - center).normalize()) > 0.99, "outer loop flipped");
    }
    for (p, n) in in_plane_normals(&seq, &cloud, 2) {
        assert!(n.dot((center - p).normalize()) > 0.99, "inner loop not flipped");
    }
    flip_inner_loops(&seq, &mut cloud).unwrap();
    for (a, b) in cloud.cloud.normals.iter().zip(&before.cloud.normals) {
        assert!((*a - *b).length() < 1e-15);
    }
}

#[test]
fn triple_nesting_flips_only_the_middle() {
    let center = DVec2::splat(0.5);
    let loops = vec![
        circle(center, 0.45, 32),
        circle(center, 0.3, 32),
        circle(center, 0.15, 32),
    ];
    let seq = sandwich(loops);
    let mut cloud = estimate_normals(&seq, NormalParams::default()).unwrap();
    flip_inner_loops(&seq, &mut cloud).unwrap();
    let outward = |token: usize| {
        in_plane_normals(&seq, &cloud, token)
            .iter()
            .all(|(p, n)| n.dot((*p - center).normalize()) > 0.99)
    };
    assert!(outward(1));
    assert!(!outward(2));
    assert!(outward(3));
}

#[test]
fn single_loop_is_not_flipped() {
    let seq = sandwich(vec![circle(DVec2::splat(0.5), 0.3, 32)]);
    let mut cloud = estimate_normals(&seq, NormalParams::default()).unwrap();
    let before = cloud.clone();
    flip_inner_loops(&seq, &mut cloud).unwrap();
    assert_eq!(cloud, before);
}

#[test]
fn empty_sequence_gives_empty_cloud() {
    let seq = LoopSequence::new(32, Axis::Y, planes(3));
    assert!(estimate_normals(&seq, NormalParams::default()).unwrap().cloud.is_empty());
    assert!(cap_fill(&seq, 100.0, 0).unwrap().is_empty());
}

#[test]
fn cap_density_matches_area() {
    let seq = encode_sequence(
        &[vec![square(DVec2::ZERO, 1.0)], vec![square(DVec2::ZERO, 1.0)]],
        Axis::Y,
        &planes(2),
    )
    .unwrap();
    let caps = cap_fill(&seq, 400.0, 3).unwrap();
    let bottom = caps.normals.iter().filter(|n| **n == DVec3::NEG_Y).count();
    let top = caps.normals.iter().filter(|n| **n == DVec3::Y).count();
    assert_eq!(bottom + top, caps.len());
    assert!((340..=460).contains(&bottom), "{bottom}");
    assert!((340..=460).contains(&top), "{top}");
    for p in &caps.points {
        let q = DVec2::new(p.z, p.x);
        assert!(point_in_loop(&square(DVec2::ZERO, 1.0).points, q));
    }
}

#[test]
fn cap_samples_stay_inside_and_skip_holes() {
    let center = DVec2::splat(0.5);
    let ring = vec![circle(center, 0.4, 32), circle(center, 0.2, 32)];
    let seq = encode_sequence(&[ring.clone(), ring], Axis::Y, &planes(2)).unwrap();
    let caps = cap_fill(&seq, 2000.0, 1).unwrap();
    assert!(!caps.is_empty());
    for p in &caps.points {
        let q = DVec2::new(p.z, p.x);
        assert!(point_in_loop(&circle(center, 0.4, 32).points, q));
        assert!(!point_in_loop(&circle(center, 0.2, 32).points, q));
    }
}

#[test]
fn tiny_cap_loop_gets_its_centroid() {
    let tiny = square(DVec2::splat(0.5), 1e-4);
    let seq = encode_sequence(&[vec![tiny.clone()], vec![tiny]], Axis::Y, &planes(2)).unwrap();
    let caps = cap_fill(&seq, 100.0, 0).unwrap();
    assert_eq!(caps.len(), 2);
    for n in &caps.normals {
        assert_eq!(n.cross(DVec3::Y), DVec3::ZERO);
    }
}

#[test]
fn ply_round_trip_and_empty_cloud() {
    let seq = sandwich(vec![circle(DVec2::splat(0.5), 0.3, 32)]);
    let cloud = oriented_cloud(&seq, CloudParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.ply");
    export_ply(&cloud, &path).unwrap();
    let back = read_ply(&path).unwrap();
    assert_eq!(back.len(), cloud.len());
    for (a, b) in back.points.iter().zip(&cloud.points).chain(back.normals.iter().zip(&cloud.normals)) {
        assert!((*a - *b).abs().max_element() < 1e-8);
    }
    let empty = ply_string(&OrientedPointCloud::default());
    assert!(empty.contains("element vertex 0\n"));
    assert!(parse_ply(&empty).unwrap().is_empty());
}

fn arb_cloud() -> impl Strategy<Value = Vec<DVec3>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..24)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| DVec3::new(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in arb_cloud(), b in arb_cloud()) {
        let (ab, ba) = (chamfer(&a, &b), chamfer(&b, &a));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(chamfer(&a, &a), 0.0);
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(chamfer(&a, &shuffled), 0.0);
    }
}
