//! Turns the raw mask plane of a decoded dual image into a clean class mask:
//! gray-level k-means, snapping to classes, then removal of small regions by
//! filling them with the surrounding class.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::{ClassMask, GrayPlane, Palette};
use crate::error::{Error, Result};

/// Area threshold at the 256×256 patch scale.
pub const DEFAULT_MIN_AREA: usize = 200;
pub const REFERENCE_PATCH_SIZE: usize = 256;
/// Independent Forgy initializations tried per k-means call.
pub const DEFAULT_RESTARTS: usize = 64;

/// `min_area` scaled by `(size/256)²`, rounded up, never below 4.
pub fn scaled_min_area(min_area: usize, size: usize) -> usize {
    let scale = (size as f64 / REFERENCE_PATCH_SIZE as f64).powi(2);
    ((min_area as f64 * scale).ceil() as usize).max(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::invalid(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Ascending. Empty clusters keep their last centroid and sort after
    /// non-empty clusters with the same value.
    pub centroids: Vec<f64>,
    pub populations: Vec<usize>,
    /// Cluster rank per pixel, row-major; rank 0 is the darkest cluster.
    pub assignments: Vec<u8>,
    pub width: usize,
    pub height: usize,
    /// Within-cluster sum of squares after each assignment step of the
    /// selected run.
    pub inertia_history: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least one assignment step")
    }
}

/// 1-D Lloyd iterations on the gray levels of `plane`, best of
/// [`DEFAULT_RESTARTS`] Forgy initializations.
pub fn kmeans_gray(plane: &GrayPlane, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    kmeans_gray_restarts(plane, k, seed, max_iters, DEFAULT_RESTARTS)
}

pub fn kmeans_gray_restarts(
    plane: &GrayPlane,
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeansResult> {
    let n = plane.values().len();
    if k == 0 || k > 256 {
        return Err(Error::invalid(format!("k must be in 1..=256, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} pixels of the plane")));
    }
    if max_iters == 0 || restarts == 0 {
        return Err(Error::invalid("k-means needs at least one iteration and one restart"));
    }
    let mut hist = [0u64; 256];
    for &v in plane.values() {
        hist[v as usize] += 1;
    }

    let mut best: Option<LloydRun> = None;
    for run in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run as u64);
        let init = forgy_init(plane.values(), &hist, k, &mut rng);
        let result = lloyd(&hist, init, max_iters);
        if best.as_ref().is_none_or(|b| result.inertia() < b.inertia()) {
            best = Some(result);
        }
        if hist.iter().filter(|&&c| c > 0).count() <= k {
            // Every distinct value is its own centroid; all runs coincide.
            break;
        }
    }
    let best = best.expect("at least one restart");
    let assignments = plane.values().iter().map(|&v| best.level_cluster[v as usize]).collect();
    Ok(KMeansResult {
        centroids: best.centroids,
        populations: best.populations,
        assignments,
        width: plane.width(),
        height: plane.height(),
        inertia_history: best.inertia_history,
    })
}

/// k distinct gray values drawn from randomly chosen pixels. With fewer
/// distinct values than k the surplus centroids duplicate the brightest
/// value and stay empty.
fn forgy_init(values: &[u8], hist: &[u64; 256], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let distinct: Vec<u8> = (0..=255u8).filter(|&v| hist[v as usize] > 0).collect();
    let mut chosen: Vec<u8> = Vec::with_capacity(k);
    if distinct.len() <= k {
        chosen.extend_from_slice(&distinct);
    } else {
        let mut taken = [false; 256];
        let mut draws = 0;
        while chosen.len() < k && draws < 1000 * k {
            let v = values[rng.gen_range(0..values.len())];
            if !taken[v as usize] {
                taken[v as usize] = true;
                chosen.push(v);
            }
            draws += 1;
        }
        // Pathologically skewed planes: fill up with unused values.
        for &v in &distinct {
            if chosen.len() == k {
                break;
            }
            if !taken[v as usize] {
                taken[v as usize] = true;
                chosen.push(v);
            }
        }
    }
    chosen.sort_unstable();
    let top = *chosen.last().expect("plane is non-empty");
    let mut centroids: Vec<f64> = chosen.into_iter().map(f64::from).collect();
    centroids.resize(k, f64::from(top));
    centroids
}

struct LloydRun {
    centroids: Vec<f64>,
    populations: Vec<usize>,
    level_cluster: [u8; 256],
    inertia_history: Vec<f64>,
}

impl LloydRun {
    fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap()
    }
}

fn lloyd(hist: &[u64; 256], mut centroids: Vec<f64>, max_iters: usize) -> LloydRun {
    let k = centroids.len();
    let mut level_cluster = [0u8; 256];
    let mut inertia_history = Vec::new();
    let mut first = true;
    for _ in 0..max_iters {
        // Assignment: nearest centroid, lowest index on ties.
        let mut changed = first;
        first = false;
        let mut inertia = 0.0;
        for v in 0..256 {
            if hist[v] == 0 {
                continue;
            }
            let x = v as f64;
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &c) in centroids.iter().enumerate() {
                let d = (x - c) * (x - c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if level_cluster[v] != best as u8 {
                changed = true;
                level_cluster[v] = best as u8;
            }
            inertia += hist[v] as f64 * best_d;
        }
        inertia_history.push(inertia);
        if !changed {
            break;
        }
        // Update: weighted mean of the assigned levels; empty clusters stay put.
        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0u64; k];
        for v in 0..256 {
            if hist[v] > 0 {
                let j = level_cluster[v] as usize;
                sums[j] += hist[v] as f64 * v as f64;
                counts[j] += hist[v];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        // Keep ranks ordered by brightness; the next assignment relabels.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            centroids[a]
                .total_cmp(&centroids[b])
                .then((counts[a] == 0).cmp(&(counts[b] == 0)))
                .then(a.cmp(&b))
        });
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            let mut rank_of = vec![0u8; k];
            for (rank, &old) in order.iter().enumerate() {
                rank_of[old] = rank as u8;
            }
            centroids = order.iter().map(|&o| centroids[o]).collect();
            for v in 0..256 {
                level_cluster[v] = rank_of[level_cluster[v] as usize];
            }
        }
    }
    let mut populations = vec![0usize; k];
    for v in 0..256 {
        if hist[v] > 0 {
            populations[level_cluster[v] as usize] += hist[v] as usize;
        }
    }
    LloydRun {
        centroids,
        populations,
        level_cluster,
        inertia_history,
    }
}

/// Reads cluster ranks as class indices under the evenly spaced palette.
pub fn snap_to_classes(kmeans: &KMeansResult, num_classes: usize) -> Result<ClassMask> {
    if kmeans.k() != num_classes {
        return Err(Error::invalid(format!(
            "k-means produced {} clusters but {num_classes} classes were requested",
            kmeans.k()
        )));
    }
    ClassMask::new(
        kmeans.width,
        kmeans.height,
        kmeans.assignments.clone(),
        Palette::evenly_spaced(num_classes)?,
    )
}

/// A maximal connected set of same-class pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Region {
    pub class: u8,
    /// Row-major pixel indices in flood-fill discovery order.
    pub pixels: Vec<usize>,
    pub area: usize,
    /// `(x_min, y_min, x_max, y_max)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
}

/// Per-pixel region label and the regions, ordered by their first pixel in
/// raster order.
pub fn label_map(mask: &ClassMask, connectivity: Connectivity) -> (Vec<u32>, Vec<Region>) {
    let (w, h) = (mask.width(), mask.height());
    let classes = mask.classes();
    let mut labels = vec![u32::MAX; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != u32::MAX {
            continue;
        }
        let id = regions.len() as u32;
        let class = classes[start];
        labels[start] = id;
        queue.push_back(start);
        let mut pixels = Vec::new();
        let mut bbox = (w, h, 0, 0);
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (x, y) = (p % w, p / w);
            bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if labels[q] == u32::MAX && classes[q] == class {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        regions.push(Region {
            class,
            area: pixels.len(),
            pixels,
            bbox,
        });
    }
    (labels, regions)
}

pub fn label_components(mask: &ClassMask, connectivity: Connectivity) -> Vec<Region> {
    label_map(mask, connectivity).1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Removal {
    pub mask: ClassMask,
    /// Number of regions refilled.
    pub removed: usize,
}

/// Repeatedly refills the smallest region below `min_area` with the majority
/// class of the pixels bordering it (lowest class on ties), relabeling after
/// each fill, until no such region remains or the mask is a single region.
///
/// The border is taken under the same connectivity as the labeling so a
/// refilled region always merges with a neighbor.
pub fn remove_small(mask: &ClassMask, min_area: usize, connectivity: Connectivity) -> Removal {
    let mut out = mask.clone();
    let (w, h) = (mask.width(), mask.height());
    let mut removed = 0;
    loop {
        let (labels, regions) = label_map(&out, connectivity);
        if regions.len() <= 1 {
            break;
        }
        let Some((id, region)) = regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.area < min_area)
            .min_by_key(|(i, r)| (r.area, *i))
        else {
            break;
        };
        let mut votes = vec![0usize; out.num_classes()];
        for &p in &region.pixels {
            let (x, y) = (p % w, p / w);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if labels[q] != id as u32 {
                    votes[out.classes()[q] as usize] += 1;
                }
            }
        }
        // max_by_key keeps the last maximum, so scan in reverse for lowest-index ties.
        let fill = (0..votes.len())
            .rev()
            .max_by_key(|&c| votes[c])
            .expect("at least one class") as u8;
        for &p in &region.pixels {
            out.set(p % w, p / w, fill);
        }
        removed += 1;
    }
    Removal { mask: out, removed }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessOutput {
    pub mask: ClassMask,
    pub centroids: Vec<f64>,
    pub removed_regions: usize,
    pub connectivity: Connectivity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionReport {
    pub num_classes: usize,
    pub min_area: usize,
    pub class_areas: Vec<usize>,
    pub region_count: usize,
    pub smallest_region: usize,
    pub removed_regions: usize,
    pub centroids: Vec<f64>,
}

impl PostprocessOutput {
    pub fn report(&self, min_area: usize) -> RegionReport {
        let regions = label_components(&self.mask, self.connectivity);
        RegionReport {
            num_classes: self.mask.num_classes(),
            min_area,
            class_areas: self.mask.histogram(),
            region_count: regions.len(),
            smallest_region: regions.iter().map(|r| r.area).min().unwrap_or(0),
            removed_regions: self.removed_regions,
            centroids: self.centroids.clone(),
        }
    }
}

pub const DEFAULT_KMEANS_ITERS: usize = 100;

/// k-means on the gray plane → classes → small-region removal (8-connected).
pub fn postprocess_mask(
    plane: &GrayPlane,
    num_classes: usize,
    min_area: usize,
    seed: u64,
) -> Result<PostprocessOutput> {
    postprocess_mask_with(plane, num_classes, min_area, seed, Connectivity::Eight, DEFAULT_RESTARTS)
}

pub fn postprocess_mask_with(
    plane: &GrayPlane,
    num_classes: usize,
    min_area: usize,
    seed: u64,
    connectivity: Connectivity,
    restarts: usize,
) -> Result<PostprocessOutput> {
    let kmeans = kmeans_gray_restarts(plane, num_classes, seed, DEFAULT_KMEANS_ITERS, restarts)?;
    let snapped = snap_to_classes(&kmeans, num_classes)?;
    let removal = remove_small(&snapped, min_area, connectivity);
    Ok(PostprocessOutput {
        mask: removal.mask,
        centroids: kmeans.centroids,
        removed_regions: removal.removed,
        connectivity,
    })
}
