//! Depth-to-point-cloud conversion, preprocessing, flip augmentation and
//! neighborhood queries.

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{DepthImage, DepthUnits, Intrinsics};
use crate::geom::Vec3;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_POINTS: usize = 1024;

/// Real points first, then origin padding.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub centroid_offset: Vec3,
    pub n_real: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        let n_real = points.len();
        Self {
            points,
            centroid_offset: [0.0; 3],
            n_real,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn real(&self) -> &[Vec3] {
        &self.points[..self.n_real]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.points)
    }

    pub fn real_tensor(&self) -> Tensor {
        Tensor::from_rows(self.real())
    }
}

/// Back-projects every valid pixel through the pinhole model, in row-major
/// pixel order.
pub fn unproject(depth: &DepthImage, intr: &Intrinsics) -> Result<PointCloud> {
    if depth.width() != intr.width || depth.height() != intr.height {
        return Err(Error::Shape(format!(
            "depth is {}x{}, intrinsics are {}x{}",
            depth.width(),
            depth.height(),
            intr.width,
            intr.height
        )));
    }
    let mut points = Vec::with_capacity(depth.valid_count());
    for v in 0..intr.height {
        for u in 0..intr.width {
            if let Some(z) = depth.at(u, v) {
                points.push([z * (u as f64 - intr.cx) / intr.fx, z * (v as f64 - intr.cy) / intr.fy, z]);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyDepth);
    }
    Ok(PointCloud::new(points))
}

/// Unprojects a stored normalized depth map back to metric points.
pub fn unproject_normalized(depth: &DepthImage, diagonal: f64) -> Result<PointCloud> {
    let metric = match depth.units {
        DepthUnits::Normalized => crate::datagen::denormalize_depth(depth, diagonal)?,
        DepthUnits::MetricM => depth.clone(),
    };
    unproject(&metric, &depth.intrinsics)
}

/// Exactly `n` points: a uniform subset without replacement when there are
/// more real points, otherwise the real points followed by origin padding.
pub fn resample(pc: &PointCloud, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if pc.n_real == 0 {
        return Err(Error::DegenerateCloud);
    }
    let real = pc.real();
    let mut points: Vec<Vec3> = if real.len() > n {
        let mut idx = rand::seq::index::sample(rng, real.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| real[i]).collect()
    } else {
        real.to_vec()
    };
    let n_real = points.len();
    points.resize(n, [0.0; 3]);
    Ok(PointCloud {
        points,
        centroid_offset: pc.centroid_offset,
        n_real,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenterStage {
    /// The cloud was larger than the target size and has just been
    /// subsampled; it carries no padding.
    AfterDownsample,
    /// The cloud is smaller than the target size; padding comes afterwards.
    BeforePadding,
}

/// Subtracts the mean of the real points from the real points. Padding is
/// never moved, so it sits at the centroid of the centered cloud.
pub fn center(pc: &PointCloud, stage: CenterStage) -> Result<PointCloud> {
    if pc.n_real == 0 {
        return Err(Error::DegenerateCloud);
    }
    debug_assert!(stage == CenterStage::BeforePadding || pc.n_real == pc.len());
    let mean = crate::geom::mean(pc.real());
    let mut points = pc.points.clone();
    for p in &mut points[..pc.n_real] {
        *p = crate::geom::sub(*p, mean);
    }
    Ok(PointCloud {
        points,
        centroid_offset: crate::geom::add(pc.centroid_offset, mean),
        n_real: pc.n_real,
    })
}

/// Resample to `n` points and center, in the order that keeps padding out of
/// the mean.
pub fn preprocess(pc: &PointCloud, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if pc.n_real > n {
        center(&resample(pc, n, rng)?, CenterStage::AfterDownsample)
    } else {
        resample(&center(pc, CenterStage::BeforePadding)?, n, rng)
    }
}

/// Channel-major image tensor `[C × H·W]`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Tensor,
}

impl ImageTensor {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Tensor::zeros(3, h * w);
        for (u, v, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data.set(c, v as usize * w + u as usize, px.0[c] as f64 / 255.0);
            }
        }
        Self { height: h, width: w, data }
    }

    /// Largest centered square, resized to `side × side`.
    pub fn from_rgb_square(img: &RgbImage, side: usize) -> Self {
        let s = img.width().min(img.height());
        let crop = imageops::crop_imm(img, (img.width() - s) / 2, (img.height() - s) / 2, s, s).to_image();
        let resized = if s as usize == side {
            crop
        } else {
            imageops::resize(&crop, side as u32, side as u32, FilterType::Triangle)
        };
        Self::from_rgb(&resized)
    }

    pub fn channels(&self) -> usize {
        self.data.rows()
    }

    fn remapped(&self, f: impl Fn(usize, usize) -> usize) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = Tensor::zeros(self.channels(), h * w);
        for c in 0..self.channels() {
            let src = self.data.row(c);
            let dst = out.row_mut(c);
            for v in 0..h {
                for u in 0..w {
                    dst[v * w + u] = src[f(u, v)];
                }
            }
        }
        Self { height: h, width: w, data: out }
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        self.remapped(|u, v| v * w + (w - 1 - u))
    }

    pub fn flip_vertical(&self) -> Self {
        let (w, h) = (self.width, self.height);
        self.remapped(|u, v| (h - 1 - v) * w + u)
    }
}

/// Mirror augmentation; the four modes form the Klein four-group under
/// composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlipMode {
    None,
    Horizontal,
    Vertical,
    Both,
}

impl FlipMode {
    pub const ALL: [FlipMode; 4] = [FlipMode::None, FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Both];

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self::ALL[rng.gen_range(0..4)]
    }

    fn bits(self) -> (bool, bool) {
        match self {
            FlipMode::None => (false, false),
            FlipMode::Horizontal => (true, false),
            FlipMode::Vertical => (false, true),
            FlipMode::Both => (true, true),
        }
    }

    fn from_bits(h: bool, v: bool) -> Self {
        match (h, v) {
            (false, false) => FlipMode::None,
            (true, false) => FlipMode::Horizontal,
            (false, true) => FlipMode::Vertical,
            (true, true) => FlipMode::Both,
        }
    }

    pub fn compose(self, other: FlipMode) -> FlipMode {
        let (a, b) = (self.bits(), other.bits());
        Self::from_bits(a.0 ^ b.0, a.1 ^ b.1)
    }

    /// Negates x for a horizontal flip and y for a vertical one.
    pub fn apply_points(self, points: &mut [Vec3]) {
        let (h, v) = self.bits();
        for p in points {
            if h {
                p[0] = -p[0];
            }
            if v {
                p[1] = -p[1];
            }
        }
    }

    pub fn apply_image(self, img: &ImageTensor) -> ImageTensor {
        let (h, v) = self.bits();
        let mut out = img.clone();
        if h {
            out = out.flip_horizontal();
        }
        if v {
            out = out.flip_vertical();
        }
        out
    }
}

/// Applies the same mirror to an image and its point cloud. Padding stays
/// at the origin, which is fixed by both negations.
pub fn flip_augment(img: &ImageTensor, pc: &PointCloud, mode: FlipMode) -> (ImageTensor, PointCloud) {
    let mut out = pc.clone();
    mode.apply_points(&mut out.points);
    (mode.apply_image(img), out)
}

/// `k` neighbor indices per point, row-major `[N × k]`, each row ordered by
/// ascending distance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    pub indices: Vec<usize>,
    pub k: usize,
}

impl NeighborIndex {
    pub fn rows(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(candidates: &mut Vec<(f64, usize)>, k: usize, out: &mut Vec<usize>) {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    out.extend(candidates.iter().map(|c| c.1));
}

/// Exact brute-force k-NN over the rows of `points`, excluding each point
/// itself; equal distances resolve to the lower index.
pub fn knn(points: &Tensor, k: usize) -> Result<NeighborIndex> {
    let n = points.rows();
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("knn needs 0 < k < N, got k={k}, N={n}")));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut cand = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let pi = points.row(i);
        cand.extend((0..n).filter(|&j| j != i).map(|j| (sq_dist(pi, points.row(j)), j)));
        nearest(&mut cand, k, &mut indices);
    }
    Ok(NeighborIndex { indices, k })
}

/// For each query row, the `k` nearest rows of `points` (a query that is
/// itself in `points` finds itself first).
pub fn knn_query(queries: &Tensor, points: &Tensor, k: usize) -> Result<NeighborIndex> {
    let n = points.rows();
    if k == 0 || k > n || queries.cols() != points.cols() {
        return Err(Error::Domain(format!(
            "knn_query needs 0 < k <= N and matching widths, got k={k}, N={n}, widths {} and {}",
            queries.cols(),
            points.cols()
        )));
    }
    let mut indices = Vec::with_capacity(queries.rows() * k);
    let mut cand = Vec::with_capacity(n);
    for i in 0..queries.rows() {
        cand.clear();
        let q = queries.row(i);
        cand.extend((0..n).map(|j| (sq_dist(q, points.row(j)), j)));
        nearest(&mut cand, k, &mut indices);
    }
    Ok(NeighborIndex { indices, k })
}

/// First index of a farthest-point sequence: position 0 of the permutation
/// of `0..n` drawn from `seed`.
pub fn fps_start(n: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..n)
}

/// Farthest-point sampling from an explicit start index, returning the
/// chosen indices and each pick's distance to the previously chosen set
/// (infinite for the start). Ties go to the lower index.
pub fn farthest_point_sample_from(points: &Tensor, m: usize, start: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = points.rows();
    if m == 0 || m > n || start >= n {
        return Err(Error::Domain(format!("farthest point sampling needs 1 <= m <= N, got m={m}, N={n}")));
    }
    let mut chosen = vec![start];
    let mut picked_dist = vec![f64::INFINITY];
    let mut min_d = vec![f64::INFINITY; n];
    let mut last = start;
    while chosen.len() < m {
        let pl = points.row(last);
        let mut best = (f64::NEG_INFINITY, 0);
        for j in 0..n {
            let d = sq_dist(points.row(j), pl);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > best.0 {
                best = (min_d[j], j);
            }
        }
        last = best.1;
        chosen.push(last);
        picked_dist.push(best.0.sqrt());
    }
    Ok((chosen, picked_dist))
}

pub fn farthest_point_sample(points: &Tensor, m: usize, seed: u64) -> Result<Vec<usize>> {
    if points.rows() == 0 {
        return Err(Error::Domain("farthest point sampling on an empty cloud".into()));
    }
    Ok(farthest_point_sample_from(points, m, fps_start(points.rows(), seed))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy};

    fn plane_depth(intr: Intrinsics, z: f64) -> DepthImage {
        let mut d = DepthImage::empty(intr, DepthUnits::MetricM);
        for v in 0..intr.height {
            for u in 0..intr.width {
                d.set(u, v, z);
            }
        }
        d
    }

    #[test]
    fn unproject_principal_point() {
        let intr = Intrinsics {
            width: 5,
            height: 3,
            fx: 10.0,
            fy: 10.0,
            cx: 2.0,
            cy: 1.0,
        };
        let mut d = DepthImage::empty(intr, DepthUnits::MetricM);
        d.set(2, 1, 1.7);
        let pc = unproject(&d, &intr).unwrap();
        assert_eq!(pc.points, vec![[0.0, 0.0, 1.7]]);
        assert_eq!(pc.n_real, 1);
        assert!(matches!(unproject(&DepthImage::empty(intr, DepthUnits::MetricM), &intr), Err(Error::EmptyDepth)));
    }

    #[test]
    fn unproject_plane_matches_pinhole() {
        let intr = Intrinsics::kinect_scaled(32);
        let z = 1.3;
        let pc = unproject(&plane_depth(intr, z), &intr).unwrap();
        assert_eq!(pc.len(), intr.width * intr.height);
        let mut i = 0;
        for v in 0..intr.height {
            for u in 0..intr.width {
                let x = (u as f64 - intr.cx) / intr.fx * z;
                let y = (v as f64 - intr.cy) / intr.fy * z;
                let p = pc.points[i];
                assert!((p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12 && p[2] == z);
                i += 1;
            }
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0)]).collect())
    }

    #[test]
    fn resample_downsamples_to_members() {
        let pc = cloud(2000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = resample(&pc, 1024, &mut rng).unwrap();
        assert_eq!(out.len(), 1024);
        assert_eq!(out.n_real, 1024);
        for p in &out.points {
            assert!(pc.points.contains(p));
        }
        let mut seen = out.points.clone();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 1024);
    }

    #[test]
    fn resample_pads_with_origin() {
        let pc = cloud(600, 2);
        let out = resample(&pc, 1024, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.len(), 1024);
        assert_eq!(out.n_real, 600);
        assert_eq!(&out.points[..600], &pc.points[..]);
        assert!(out.points[600..].iter().all(|p| *p == [0.0; 3]));

        let exact = cloud(1024, 3);
        assert_eq!(resample(&exact, 1024, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().points, exact.points);
    }

    #[test]
    fn center_examples() {
        let pc = PointCloud::new(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let c = center(&pc, CenterStage::AfterDownsample).unwrap();
        assert_eq!(c.points, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(c.centroid_offset, [2.0, 0.0, 0.0]);
        let again = center(&c, CenterStage::AfterDownsample).unwrap();
        for (a, b) in again.points.iter().zip(&c.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
        assert!(crate::geom::norm(crate::geom::sub(again.centroid_offset, c.centroid_offset)) < 1e-9);
        assert!(matches!(center(&PointCloud::new(vec![]), CenterStage::BeforePadding), Err(Error::DegenerateCloud)));
    }

    #[test]
    fn small_cloud_centered_before_padding() {
        let pc = cloud(600, 4);
        let out = preprocess(&pc, 1024, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.len(), 1024);
        let m = crate::geom::mean(&out.points[..600]);
        assert!(crate::geom::norm(m) < 1e-6);
        assert!(out.points[600..].iter().all(|p| *p == [0.0; 3]));
        let big = preprocess(&cloud(3000, 5), 1024, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(crate::geom::norm(crate::geom::mean(&big.points)) < 1e-6);
    }

    #[test]
    fn horizontal_flip_commutes_with_unproject() {
        let intr = Intrinsics::kinect_scaled(40);
        let mut d = DepthImage::empty(intr, DepthUnits::MetricM);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in 0..intr.height {
            for u in 0..intr.width {
                if rng.gen_bool(0.6) {
                    d.set(u, v, rng.gen_range(0.5..3.0));
                }
            }
        }
        for (mode, flipped) in [(FlipMode::Horizontal, d.flip_horizontal()), (FlipMode::Vertical, d.flip_vertical())] {
            let mut direct = unproject(&flipped, &intr).unwrap().points;
            let mut via = unproject(&d, &intr).unwrap().points;
            mode.apply_points(&mut via);
            let key = |a: &Vec3, b: &Vec3| a.partial_cmp(b).unwrap();
            direct.sort_by(key);
            via.sort_by(key);
            assert_eq!(direct.len(), via.len());
            for (a, b) in direct.iter().zip(&via) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn flip_identity_and_involution() {
        let mut rgb = RgbImage::new(7, 5);
        for (u, v, px) in rgb.enumerate_pixels_mut() {
            *px = image::Rgb([(u * 30) as u8, (v * 40) as u8, 7]);
        }
        let img = ImageTensor::from_rgb(&rgb);
        let pc = cloud(20, 6);
        let (i0, p0) = flip_augment(&img, &pc, FlipMode::None);
        assert_eq!((&i0, &p0), (&img, &pc));
        let (i1, p1) = flip_augment(&img, &pc, FlipMode::Both);
        assert_ne!(i1, img);
        let (i2, p2) = flip_augment(&i1, &p1, FlipMode::Both);
        assert_eq!((&i2, &p2), (&img, &pc));
        assert_eq!(img.flip_horizontal().data.get(0, 0), img.data.get(0, 6));
    }

    #[test]
    fn klein_group_table() {
        use FlipMode::*;
        let img = ImageTensor::from_rgb(&RgbImage::from_fn(4, 3, |u, v| image::Rgb([u as u8 * 50, v as u8 * 60, (u * v) as u8])));
        let pc = cloud(10, 7);
        for a in FlipMode::ALL {
            assert_eq!(a.compose(a), None);
            assert_eq!(a.compose(None), a);
            for b in FlipMode::ALL {
                assert_eq!(a.compose(b), b.compose(a));
                let (ia, pa) = flip_augment(&img, &pc, a);
                let (iab, pab) = flip_augment(&ia, &pa, b);
                let (ic, pcc) = flip_augment(&img, &pc, a.compose(b));
                assert_eq!((iab, pab), (ic, pcc));
            }
        }
        assert_eq!(Horizontal.compose(Vertical), Both);
    }

    #[test]
    fn knn_collinear_example() {
        let pts = Tensor::from_vec(3, 1, vec![0.0, 1.0, 3.0]);
        let nb = knn(&pts, 1).unwrap();
        assert_eq!(nb.indices, vec![1, 0, 1]);
        assert!(matches!(knn(&pts, 3), Err(Error::Domain(_))));
        let full = knn(&pts, 2).unwrap();
        for i in 0..3 {
            let mut r = full.row(i).to_vec();
            r.sort();
            assert_eq!(r, (0..3).filter(|&j| j != i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let pts = Tensor::from_vec(4, 1, vec![0.0, -1.0, 1.0, 5.0]);
        assert_eq!(knn(&pts, 2).unwrap().row(0), &[1, 2]);
    }

    fn oracle_knn(pts: &Tensor, k: usize) -> Vec<usize> {
        let n = pts.rows();
        let mut out = Vec::new();
        for i in 0..n {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((0..pts.cols()).map(|c| (pts.get(i, c) - pts.get(j, c)).powi(2)).sum(), j))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.extend(all[..k].iter().map(|x| x.1));
        }
        out
    }

    #[test]
    fn knn_random_cloud_matches_oracle() {
        let pts = cloud(64, 11).to_tensor();
        assert_eq!(knn(&pts, 8).unwrap().indices, oracle_knn(&pts, 8));
    }

    #[test]
    fn fps_examples() {
        let sq = Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(farthest_point_sample_from(&sq, 2, 0).unwrap().0, vec![0, 2]);
        let pts = cloud(1024, 12).to_tensor();
        let idx = farthest_point_sample(&pts, 256, 3).unwrap();
        assert_eq!(idx.len(), 256);
        let mut s = idx.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 256);
        let all = farthest_point_sample(&cloud(50, 13).to_tensor(), 50, 1).unwrap();
        let mut s = all.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_eq!(farthest_point_sample(&pts, 10, 5).unwrap(), farthest_point_sample(&pts, 10, 5).unwrap());
        assert!(farthest_point_sample(&pts, 0, 0).is_err());
        assert!(farthest_point_sample(&pts, 1025, 0).is_err());
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 2..max)
    }

    proptest! {
        #[test]
        fn knn_equals_oracle(pts in arb_cloud(64), k in 1usize..10) {
            let t = Tensor::from_rows(&pts);
            let k = k.min(pts.len() - 1);
            prop_assert_eq!(knn(&t, k).unwrap().indices, oracle_knn(&t, k));
        }

        #[test]
        fn fps_distances_non_increasing(pts in arb_cloud(80), seed in 0u64..100) {
            let t = Tensor::from_rows(&pts);
            let (_, d) = farthest_point_sample_from(&t, pts.len(), fps_start(pts.len(), seed)).unwrap();
            for w in d.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }

        #[test]
        fn resample_size_and_padding(n_real in 1usize..1500, seed in 0u64..1000) {
            let pc = cloud(n_real, seed);
            let out = resample(&pc, 1024, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.len(), 1024);
            prop_assert_eq!(out.len() - out.n_real, 1024usize.saturating_sub(n_real));
        }

        #[test]
        fn center_reconstructs_input(pts in arb_cloud(40)) {
            let pc = PointCloud::new(pts.clone());
            let c = center(&pc, CenterStage::BeforePadding).unwrap();
            for (p, q) in pts.iter().zip(&c.points) {
                for k in 0..3 {
                    prop_assert!((q[k] + c.centroid_offset[k] - p[k]).abs() < 1e-12);
                }
            }
        }
    }
}
