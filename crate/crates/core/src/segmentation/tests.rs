use nalgebra::Vector3;
use proptest::prelude::*;

use super::*;
use crate::grid::ValidMap;
use crate::synthetic::{generate, Layout, Plane, SceneSpec};

fn edge_list(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> EdgeList {
    let pairs = neighbour_pairs(width, height, Connectivity::Four, |_| true);
    weigh(width, height, &pairs, f)
}

#[test]
fn normal_dissimilarity_values() {
    let normals = ValidMap::all_valid(
        Grid::from_vec(
            3,
            1,
            vec![Vector3::z(), Vector3::x(), -Vector3::x()],
        )
        .unwrap(),
    );
    let e = normal_dissimilarity(&normals, Connectivity::Four);
    assert_eq!(e.edges.len(), 2);
    assert!((e.edges[0].weight - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(e.edges[1].weight, 2.0);
    let same = ValidMap::all_valid(Grid::filled(3, 3, Vector3::y()));
    let e = normal_dissimilarity(&same, Connectivity::Eight);
    assert!(e.edges.iter().all(|e| e.weight == 0.0));
    assert_eq!(e.edges.len(), 6 + 6 + 2 * 4);
}

#[test]
fn distance_dissimilarity_is_absolute_difference() {
    let d = ValidMap::all_valid(Grid::from_vec(2, 1, vec![1.0, 3.5]).unwrap());
    let e = distance_dissimilarity(&d, Connectivity::Four);
    assert_eq!(e.edges[0].weight, 2.5);
    let r = ValidMap::all_valid(Grid::from_vec(2, 1, vec![3.5, 1.0]).unwrap());
    assert_eq!(distance_dissimilarity(&r, Connectivity::Four).edges[0].weight, 2.5);
}

#[test]
fn invalid_pixels_get_no_edges() {
    let mut d = ValidMap::all_valid(Grid::filled(3, 3, 1.0));
    *d.valid.get_mut(1, 1) = false;
    let e = distance_dissimilarity(&d, Connectivity::Four);
    assert_eq!(e.edges.len(), 12 - 4);
    assert!(e.edges.iter().all(|e| e.a != 4 && e.b != 4));
}

#[test]
fn normalization_maps_to_unit_interval() {
    let mut e = edge_list(4, 1, |_, _| 0.0);
    for (edge, w) in e.edges.iter_mut().zip([0.0, 1.0, 2.0]) {
        edge.weight = w;
    }
    let n = normalize_dissimilarity(&e);
    let w: Vec<f64> = n.edges.iter().map(|e| e.weight).collect();
    assert_eq!(w, vec![0.0, 0.5, 1.0]);
    let constant = edge_list(3, 3, |_, _| 0.7);
    assert!(normalize_dissimilarity(&constant).edges.iter().all(|e| e.weight == 0.0));
}

#[test]
fn geometric_dissimilarity_endpoints() {
    // left column one plane, right column another: the crease edges carry
    // the maximum of both normalized lists
    let normals = ValidMap::all_valid(Grid::from_fn(2, 3, |x, _| if x == 0 { Vector3::z() } else { Vector3::x() }));
    let dist = ValidMap::all_valid(Grid::from_fn(2, 3, |x, _| if x == 0 { 1.0 } else { 2.0 }));
    let e = geometric_dissimilarity(&normals, &dist, Connectivity::Four).unwrap();
    for edge in &e.edges {
        let crease = edge.b == edge.a + 1;
        assert_eq!(edge.weight, if crease { 2.0 } else { 0.0 });
    }
    let small = ValidMap::all_valid(Grid::filled(1, 3, 1.0));
    assert!(geometric_dissimilarity(&normals, &small, Connectivity::Four).is_err());
}

#[test]
fn two_plane_scene_crease_dominates() {
    let spec = SceneSpec {
        width: 40,
        height: 30,
        intrinsics: SceneSpec::default_intrinsics().downscaled(4.0),
        planes: vec![
            Plane::new(Vector3::new(0.2, 0.0, 1.0), 2.0).unwrap(),
            Plane::new(Vector3::new(-0.3, 0.1, 1.0), 3.0).unwrap(),
        ],
        layout: Layout::Tiles { rows: 1, cols: 2 },
    };
    let s = generate(&spec, 0).unwrap();
    let e = geometric_dissimilarity(&s.normal, &s.distance, Connectivity::Four).unwrap();
    let l = s.labels.as_slice();
    let intra = e.edges.iter().filter(|e| l[e.a as usize] == l[e.b as usize]);
    let cross = e.edges.iter().filter(|e| l[e.a as usize] != l[e.b as usize]);
    let max_intra = intra.map(|e| e.weight).fold(0.0, f64::max);
    let min_cross = cross.map(|e| e.weight).fold(f64::INFINITY, f64::min);
    assert!(max_intra < min_cross);
}

#[test]
fn zero_weights_give_one_segment() {
    let s = felzenszwalb_segment(&edge_list(5, 4, |_, _| 0.0), 0.3).unwrap();
    assert_eq!(s.segment_count(), 1);
    assert_eq!(s.counts, vec![20]);
}

#[test]
fn crease_above_threshold_splits_halves() {
    // 4x4 grid, columns 0-1 vs 2-3. Zero-weight edges merge each half into an
    // 8-pixel component with Int = 0; the crease edges (weight 1) then face
    // the threshold min(0 + 0.5/8, 0 + 0.5/8) = 0.0625 and are rejected.
    let e = edge_list(4, 4, |p, q| {
        if (p % 4 < 2) != (q % 4 < 2) {
            1.0
        } else {
            0.0
        }
    });
    let s = felzenszwalb_segment(&e, 0.5).unwrap();
    assert_eq!(s.counts, vec![8, 8]);
    assert_eq!(*s.labels.get(1, 3), 0);
    assert_eq!(*s.labels.get(2, 0), 1);
}

#[test]
fn tiny_k_keeps_every_pixel_apart() {
    let e = edge_list(6, 5, |p, q| 0.1 + 0.01 * ((p + q) % 7) as f64);
    let s = felzenszwalb_segment(&e, 1e-12).unwrap();
    assert_eq!(s.segment_count(), 30);
    assert!(felzenszwalb_segment(&e, 0.0).is_err());
}

#[test]
fn size_filter_threshold() {
    let one = SegmentLabels::from_grid(&Grid::filled(10, 10, 0));
    assert_eq!(filter_planar_regions(&one, 200).covered(), 0);
    let big = SegmentLabels::from_grid(&Grid::filled(20, 20, 0));
    let m = filter_planar_regions(&big, 200);
    assert_eq!(m.covered(), 400);
    assert_eq!(m.retained, vec![0]);
    // 150 + 250 pixels on a 20x20 grid
    let ids = Grid::from_fn(20, 20, |x, y| u32::from(y * 20 + x >= 150));
    let s = SegmentLabels::from_grid(&ids);
    assert_eq!(s.counts, vec![150, 250]);
    let m = filter_planar_regions(&s, 200);
    assert_eq!(m.retained, vec![1]);
    assert_eq!(m.covered(), 250);
    assert!(!*m.mask.get(0, 0) && *m.mask.get(19, 19));
}

#[test]
fn default_scene_recovers_planes() {
    let s = generate(&SceneSpec::default_three_plane(), 0).unwrap();
    let det = detect_planes(&s.normal, &s.distance, &SegmentationParams::default()).unwrap();
    assert!(det.mask.retained.len() >= 3);
    let iou = best_match_iou(&s.labels, &det.segments).unwrap();
    assert!(iou.iter().all(|v| *v >= 0.95), "{iou:?}");
    let again = detect_planes(&s.normal, &s.distance, &SegmentationParams::default()).unwrap();
    assert_eq!(again.segments, det.segments);
}

#[test]
fn max_incident_weight_marks_creases() {
    let e = edge_list(3, 1, |p, _| if p == 0 { 0.25 } else { 1.0 });
    assert_eq!(max_incident_weight(&e).as_slice(), &[0.25, 1.0, 1.0]);
}

fn random_edges() -> impl Strategy<Value = EdgeList> {
    (2usize..7, 2usize..7).prop_flat_map(|(w, h)| {
        let n = neighbour_pairs(w, h, Connectivity::Four, |_| true).len();
        prop::collection::vec(0.0f64..1.0, n).prop_map(move |ws| {
            let mut e = edge_list(w, h, |_, _| 0.0);
            for (edge, x) in e.edges.iter_mut().zip(ws) {
                // quantize so ties occur
                edge.weight = (x * 8.0).floor() / 8.0;
            }
            e
        })
    })
}

proptest! {
    #[test]
    fn labels_partition_the_grid(e in random_edges(), k in 0.01f64..3.0) {
        let s = felzenszwalb_segment(&e, k).unwrap();
        prop_assert_eq!(s.counts.iter().sum::<usize>(), e.width * e.height);
        prop_assert!(s.counts.iter().all(|c| *c > 0));
        prop_assert!(s.labels.as_slice().iter().all(|l| (*l as usize) < s.counts.len()));
        prop_assert_eq!(felzenszwalb_segment(&e, k).unwrap(), s);
    }

    // Holds for two-level weights, the shape produced by piecewise-constant
    // normal and distance fields. See `k_monotonicity_fails_for_general_weights`.
    #[test]
    fn segment_count_non_increasing_in_k(
        (w, h) in (2usize..7, 1usize..7),
        bits in prop::collection::vec(any::<bool>(), 72),
        level in 0.01f64..2.0,
        k in 0.01f64..3.0,
        dk in 0.0f64..3.0,
    ) {
        let mut e = edge_list(w, h, |_, _| 0.0);
        for (edge, b) in e.edges.iter_mut().zip(&bits) {
            edge.weight = if *b { level } else { 0.0 };
        }
        let a = felzenszwalb_segment(&e, k).unwrap().segment_count();
        let b = felzenszwalb_segment(&e, k + dk).unwrap().segment_count();
        prop_assert!(b <= a, "k={} -> {}, k={} -> {}", k, a, k + dk, b);
    }
}

#[test]
fn k_monotonicity_fails_for_general_weights() {
    // 3x3 grid. With k = 0.75 the top row absorbs pixels 5 and 8 early, and
    // its threshold Int + k/|C| = 0.25 + 0.75/5 = 0.4 then rejects the 0.5
    // edges that, with k = 0.5, join the lower two rows into one segment.
    let weights = [
        ((0, 1), 0.0),
        ((0, 3), 0.5),
        ((1, 2), 0.0),
        ((1, 4), 0.5),
        ((2, 5), 0.25),
        ((3, 4), 0.25),
        ((3, 6), 0.75),
        ((4, 5), 0.5),
        ((4, 7), 0.75),
        ((5, 8), 0.25),
        ((6, 7), 0.25),
        ((7, 8), 0.5),
    ];
    let e = edge_list(3, 3, |p, q| {
        weights
            .iter()
            .find(|((a, b), _)| *a == p && *b == q)
            .map(|(_, w)| *w)
            .unwrap()
    });
    assert_eq!(felzenszwalb_segment(&e, 0.5).unwrap().segment_count(), 2);
    assert_eq!(felzenszwalb_segment(&e, 0.75).unwrap().segment_count(), 3);
}

#[test]
fn scene_segment_count_non_increasing_in_k() {
    let s = generate(&SceneSpec::default_three_plane(), 0).unwrap();
    let e = geometric_dissimilarity(&s.normal, &s.distance, Connectivity::Four).unwrap();
    let counts: Vec<usize> = [1e-6, 1e-3, 0.01, 0.1, 0.3, 1.0, 10.0, 1e3]
        .iter()
        .map(|k| felzenszwalb_segment(&e, *k).unwrap().segment_count())
        .collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
}
