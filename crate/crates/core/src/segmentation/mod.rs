//! Online planar-region detection: edge dissimilarities from normals and
//! plane-to-origin distances, graph-based segmentation over them, and the
//! region-size filter that yields the planar mask.

mod disjoint_set;

use disjoint_set::DisjointSet;

use crate::error::{Error, Result};
use crate::grid::{DistanceMap, Grid, Mask, NormalMap};

pub const DEFAULT_K: f64 = 0.3;
pub const DEFAULT_MIN_REGION_SIZE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

/// Weighted undirected edges over a pixel grid; `a < b` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<Edge>,
}

fn neighbour_pairs(
    width: usize,
    height: usize,
    connectivity: Connectivity,
    usable: impl Fn(usize) -> bool,
) -> Vec<(u32, u32)> {
    let mut pairs = Vec::with_capacity(width * height * 2);
    let mut push = |p: usize, q: usize| {
        if usable(p) && usable(q) {
            pairs.push((p as u32, q as u32));
        }
    };
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            if x + 1 < width {
                push(p, p + 1);
            }
            if y + 1 < height {
                push(p, p + width);
                if connectivity == Connectivity::Eight {
                    if x + 1 < width {
                        push(p, p + width + 1);
                    }
                    if x > 0 {
                        push(p, p + width - 1);
                    }
                }
            }
        }
    }
    pairs
}

fn weigh(width: usize, height: usize, pairs: &[(u32, u32)], f: impl Fn(usize, usize) -> f64) -> EdgeList {
    EdgeList {
        width,
        height,
        edges: pairs
            .iter()
            .map(|&(a, b)| Edge {
                a,
                b,
                weight: f(a as usize, b as usize),
            })
            .collect(),
    }
}

/// `|N(q) - N(p)|` over adjacent valid pixels.
pub fn normal_dissimilarity(normals: &NormalMap, connectivity: Connectivity) -> EdgeList {
    let (w, h) = normals.dims();
    let valid = normals.valid.as_slice();
    let pairs = neighbour_pairs(w, h, connectivity, |p| valid[p]);
    let n = normals.values.as_slice();
    weigh(w, h, &pairs, |p, q| (n[q] - n[p]).norm())
}

/// `|d(q) - d(p)|` over adjacent valid pixels.
pub fn distance_dissimilarity(distance: &DistanceMap, connectivity: Connectivity) -> EdgeList {
    let (w, h) = distance.dims();
    let valid = distance.valid.as_slice();
    let pairs = neighbour_pairs(w, h, connectivity, |p| valid[p]);
    let d = distance.values.as_slice();
    weigh(w, h, &pairs, |p, q| (d[q] - d[p]).abs())
}

/// Min-max rescaling of the weights to `[0, 1]`. A constant list maps to all
/// zeros.
pub fn normalize_dissimilarity(edges: &EdgeList) -> EdgeList {
    let (lo, hi) = edges
        .edges
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.weight), hi.max(e.weight))
        });
    let span = hi - lo;
    let edges_out = edges
        .edges
        .iter()
        .map(|e| Edge {
            weight: if span > 0.0 { (e.weight - lo) / span } else { 0.0 },
            ..*e
        })
        .collect();
    EdgeList {
        width: edges.width,
        height: edges.height,
        edges: edges_out,
    }
}

/// Sum of the normalized normal and distance dissimilarities, in `[0, 2]`.
/// Edges touch only pixels valid in both maps.
pub fn geometric_dissimilarity(
    normals: &NormalMap,
    distance: &DistanceMap,
    connectivity: Connectivity,
) -> Result<EdgeList> {
    if normals.dims() != distance.dims() {
        return Err(Error::shape(
            "geometric_dissimilarity",
            format!("normals {:?} vs distance {:?}", normals.dims(), distance.dims()),
        ));
    }
    let (w, h) = normals.dims();
    let (nv, dv) = (normals.valid.as_slice(), distance.valid.as_slice());
    let pairs = neighbour_pairs(w, h, connectivity, |p| nv[p] && dv[p]);
    let n = normals.values.as_slice();
    let d = distance.values.as_slice();
    let dis_n = normalize_dissimilarity(&weigh(w, h, &pairs, |p, q| (n[q] - n[p]).norm()));
    let dis_d = normalize_dissimilarity(&weigh(w, h, &pairs, |p, q| (d[q] - d[p]).abs()));
    let edges = dis_n
        .edges
        .iter()
        .zip(&dis_d.edges)
        .map(|(a, b)| Edge {
            weight: a.weight + b.weight,
            ..*a
        })
        .collect();
    Ok(EdgeList {
        width: w,
        height: h,
        edges,
    })
}

/// A partition of the pixel grid into numbered segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLabels {
    pub labels: Grid<u32>,
    pub counts: Vec<usize>,
}

impl SegmentLabels {
    pub fn segment_count(&self) -> usize {
        self.counts.len()
    }

    /// Relabels any id grid into first-appearance order with counts.
    pub fn from_grid(ids: &Grid<u32>) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut counts: Vec<usize> = Vec::new();
        let labels = ids.map(|id| {
            let next = remap.len() as u32;
            let l = *remap.entry(*id).or_insert(next);
            if l as usize == counts.len() {
                counts.push(0);
            }
            counts[l as usize] += 1;
            l
        });
        SegmentLabels { labels, counts }
    }
}

/// Graph-based segmentation: edges are visited by ascending weight (ties by
/// row-major endpoint order) and two components merge when the edge weight is
/// at most `min(Int(A) + k/|A|, Int(B) + k/|B|)`, where `Int` is the largest
/// edge already inside a component.
///
/// Labels are numbered in row-major order of first appearance.
pub fn felzenszwalb_segment(edges: &EdgeList, k: f64) -> Result<SegmentLabels> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("segmentation k must be positive, got {k}")));
    }
    let n = edges.width * edges.height;
    let mut order: Vec<&Edge> = edges.edges.iter().collect();
    order.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let mut ds = DisjointSet::new(n);
    for e in order {
        let (ra, rb) = (ds.find(e.a), ds.find(e.b));
        if ra == rb {
            continue;
        }
        let ta = ds.internal(ra) + k / ds.size(ra) as f64;
        let tb = ds.internal(rb) + k / ds.size(rb) as f64;
        if e.weight <= ta.min(tb) {
            ds.union(ra, rb, e.weight);
        }
    }
    let roots = Grid::from_vec(
        edges.width,
        edges.height,
        (0..n as u32).map(|p| ds.find(p)).collect(),
    )?;
    Ok(SegmentLabels::from_grid(&roots))
}

/// Planar mask `M(p)` with the segment labels it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneMask {
    pub mask: Mask,
    pub labels: Grid<u32>,
    pub retained: Vec<u32>,
}

impl PlaneMask {
    pub fn covered(&self) -> usize {
        self.mask.as_slice().iter().filter(|m| **m).count()
    }

    /// A mask over the whole grid treating every pixel as one region.
    pub fn full(width: usize, height: usize) -> Self {
        PlaneMask {
            mask: Grid::filled(width, height, true),
            labels: Grid::filled(width, height, 0),
            retained: vec![0],
        }
    }
}

/// Keeps segments with strictly more than `min_region_size` pixels. Smaller
/// segments are dropped from the mask, not merged.
pub fn filter_planar_regions(segments: &SegmentLabels, min_region_size: usize) -> PlaneMask {
    let keep: Vec<bool> = segments.counts.iter().map(|c| *c > min_region_size).collect();
    let retained = keep
        .iter()
        .enumerate()
        .filter(|(_, k)| **k)
        .map(|(i, _)| i as u32)
        .collect();
    PlaneMask {
        mask: segments.labels.map(|l| keep[*l as usize]),
        labels: segments.labels.clone(),
        retained,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    pub k: f64,
    pub min_region_size: usize,
    pub connectivity: Connectivity,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            k: DEFAULT_K,
            min_region_size: DEFAULT_MIN_REGION_SIZE,
            connectivity: Connectivity::Four,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlaneDetection {
    pub edges: EdgeList,
    pub segments: SegmentLabels,
    pub mask: PlaneMask,
}

/// Dissimilarity, segmentation and size filtering in one pass.
pub fn detect_planes(
    normals: &NormalMap,
    distance: &DistanceMap,
    params: &SegmentationParams,
) -> Result<PlaneDetection> {
    let edges = geometric_dissimilarity(normals, distance, params.connectivity)?;
    let segments = felzenszwalb_segment(&edges, params.k)?;
    let mask = filter_planar_regions(&segments, params.min_region_size);
    Ok(PlaneDetection {
        edges,
        segments,
        mask,
    })
}

/// Per pixel, the largest weight among its incident edges (0 when isolated).
pub fn max_incident_weight(edges: &EdgeList) -> Grid<f64> {
    let mut out = Grid::filled(edges.width, edges.height, 0.0f64);
    let data = out.as_mut_slice();
    for e in &edges.edges {
        for p in [e.a, e.b] {
            let slot = &mut data[p as usize];
            *slot = slot.max(e.weight);
        }
    }
    out
}

/// For each reference region id `0..=max`, the best intersection-over-union
/// achieved by any single segment.
pub fn best_match_iou(reference: &Grid<u32>, segments: &SegmentLabels) -> Result<Vec<f64>> {
    if !reference.same_dims(&segments.labels) {
        return Err(Error::shape(
            "best_match_iou",
            format!("{:?} vs {:?}", reference.dims(), segments.labels.dims()),
        ));
    }
    let n_ref = reference.as_slice().iter().max().map_or(0, |m| *m as usize + 1);
    let mut ref_counts = vec![0usize; n_ref];
    let mut overlap = std::collections::HashMap::<(u32, u32), usize>::new();
    for (r, s) in reference.as_slice().iter().zip(segments.labels.as_slice()) {
        ref_counts[*r as usize] += 1;
        *overlap.entry((*r, *s)).or_default() += 1;
    }
    let mut best = vec![0.0f64; n_ref];
    for ((r, s), inter) in overlap {
        let union = ref_counts[r as usize] + segments.counts[s as usize] - inter;
        best[r as usize] = best[r as usize].max(inter as f64 / union as f64);
    }
    Ok(best)
}

#[cfg(test)]
mod tests;
