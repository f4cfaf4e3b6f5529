//! System matrix `A` and its matched adjoint.
//!
//! [`SiddonProjector`] computes exact ray/pixel intersection lengths. The same
//! lengths feed both the forward and the back projection, so `⟨Ax, y⟩ = ⟨x, Aᵀy⟩`
//! holds up to summation rounding.
//!
//! Reductions run in a fixed order: each ray sums its pixels in traversal order,
//! and backprojection accumulates fixed-size chunks of views into partial images
//! that are added in chunk order. Results therefore do not depend on the number
//! of worker threads.

use rayon::prelude::*;

use crate::error::{check_len, Result};
use crate::geometry::{Geometry, Ray};
use crate::image::{Image, Sinogram, SinogramKind};

/// Views per partial image during backprojection.
const VIEW_CHUNK: usize = 4;
/// Partial images held in memory at once.
const CHUNK_GROUP: usize = 64;
/// Cache the system matrix below this many estimated nonzeros.
const CACHE_BUDGET: usize = 24_000_000;

/// A linear operator from images to view-organised measurements.
///
/// Measurements are grouped into views of `bins_per_view()` values so that
/// ordered-subset solvers can address subsets of views.
pub trait Projector: Sync {
    fn image_len(&self) -> usize;
    fn n_views(&self) -> usize;
    fn bins_per_view(&self) -> usize;

    /// `out[i·bins + b] = (A x)[views[i], b]`.
    fn forward_views(&self, x: &[f64], views: &[usize], out: &mut [f64]);

    /// `out = A_Sᵀ y` where `S` are the listed views and `y` is laid out as in
    /// [`Projector::forward_views`]. `out` is overwritten.
    fn back_views(&self, y: &[f64], views: &[usize], out: &mut [f64]);

    fn n_rays(&self) -> usize {
        self.n_views() * self.bins_per_view()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let views: Vec<usize> = (0..self.n_views()).collect();
        let mut out = vec![0.0; self.n_rays()];
        self.forward_views(x, &views, &mut out);
        out
    }

    fn back(&self, y: &[f64]) -> Vec<f64> {
        let views: Vec<usize> = (0..self.n_views()).collect();
        let mut out = vec![0.0; self.image_len()];
        self.back_views(y, &views, &mut out);
        out
    }
}

/// Compressed rows of the system matrix, one row per ray.
#[derive(Debug, Clone)]
struct RayTable {
    ptr: Vec<usize>,
    pixel: Vec<u32>,
    length: Vec<f64>,
}

/// Exact ray-driven projector over a [`Geometry`].
#[derive(Debug, Clone)]
pub struct SiddonProjector {
    geom: Geometry,
    table: Option<RayTable>,
}

impl SiddonProjector {
    /// Caches the intersection lengths when they fit the memory budget.
    pub fn new(geom: &Geometry) -> Self {
        let estimate = geom.n_rays() * (geom.rows + geom.cols);
        if estimate <= CACHE_BUDGET {
            Self::cached(geom)
        } else {
            Self::on_the_fly(geom)
        }
    }

    /// Retraces every ray on every call.
    pub fn on_the_fly(geom: &Geometry) -> Self {
        Self {
            geom: geom.clone(),
            table: None,
        }
    }

    pub fn cached(geom: &Geometry) -> Self {
        let per_view: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = (0..geom.n_views)
            .into_par_iter()
            .map(|v| {
                let mut tracer = Tracer::default();
                let mut counts = Vec::with_capacity(geom.n_bins);
                let mut pixel = Vec::new();
                let mut length = Vec::new();
                for b in 0..geom.n_bins {
                    let hits = tracer.trace(geom, &geom.ray(v, b));
                    counts.push(hits.len());
                    for &(p, l) in hits {
                        pixel.push(p);
                        length.push(l);
                    }
                }
                (counts, pixel, length)
            })
            .collect();
        let nnz: usize = per_view.iter().map(|(_, p, _)| p.len()).sum();
        let mut table = RayTable {
            ptr: Vec::with_capacity(geom.n_rays() + 1),
            pixel: Vec::with_capacity(nnz),
            length: Vec::with_capacity(nnz),
        };
        table.ptr.push(0);
        for (counts, pixel, length) in per_view {
            let mut acc = *table.ptr.last().unwrap();
            for c in counts {
                acc += c;
                table.ptr.push(acc);
            }
            table.pixel.extend(pixel);
            table.length.extend(length);
        }
        Self {
            geom: geom.clone(),
            table: Some(table),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn is_cached(&self) -> bool {
        self.table.is_some()
    }

    /// Runs `f` on the (pixel, length) list of every bin of `view`.
    fn with_view_rays(&self, view: usize, tracer: &mut Tracer, mut f: impl FnMut(usize, &[(u32, f64)])) {
        let bins = self.geom.n_bins;
        match &self.table {
            Some(t) => {
                let mut hits = Vec::new();
                for b in 0..bins {
                    let r = view * bins + b;
                    hits.clear();
                    hits.extend(
                        t.pixel[t.ptr[r]..t.ptr[r + 1]]
                            .iter()
                            .copied()
                            .zip(t.length[t.ptr[r]..t.ptr[r + 1]].iter().copied()),
                    );
                    f(b, &hits);
                }
            }
            None => {
                for b in 0..bins {
                    let ray = self.geom.ray(view, b);
                    let hits = tracer.trace(&self.geom, &ray);
                    f(b, hits);
                }
            }
        }
    }

    fn forward_ray_cached(t: &RayTable, r: usize, x: &[f64]) -> f64 {
        let (a, b) = (t.ptr[r], t.ptr[r + 1]);
        t.pixel[a..b]
            .iter()
            .zip(&t.length[a..b])
            .fold(0.0, |acc, (&p, &l)| acc + l * x[p as usize])
    }

    /// Pixels crossed by ray `(view, bin)` with their intersection lengths.
    pub fn ray_hits(&self, view: usize, bin: usize) -> Vec<(usize, f64)> {
        let mut tracer = Tracer::default();
        tracer
            .trace(&self.geom, &self.geom.ray(view, bin))
            .iter()
            .map(|&(p, l)| (p as usize, l))
            .collect()
    }
}

impl Projector for SiddonProjector {
    fn image_len(&self) -> usize {
        self.geom.n_pixels()
    }

    fn n_views(&self) -> usize {
        self.geom.n_views
    }

    fn bins_per_view(&self) -> usize {
        self.geom.n_bins
    }

    fn forward_views(&self, x: &[f64], views: &[usize], out: &mut [f64]) {
        let bins = self.geom.n_bins;
        assert_eq!(x.len(), self.image_len());
        assert_eq!(out.len(), views.len() * bins);
        out.par_chunks_mut(bins).zip(views.par_iter()).for_each_init(
            Tracer::default,
            |tracer, (chunk, &v)| match &self.table {
                Some(t) => {
                    for (b, o) in chunk.iter_mut().enumerate() {
                        *o = Self::forward_ray_cached(t, v * bins + b, x);
                    }
                }
                None => {
                    for (b, o) in chunk.iter_mut().enumerate() {
                        let hits = tracer.trace(&self.geom, &self.geom.ray(v, b));
                        *o = hits.iter().fold(0.0, |acc, &(p, l)| acc + l * x[p as usize]);
                    }
                }
            },
        );
    }

    fn back_views(&self, y: &[f64], views: &[usize], out: &mut [f64]) {
        let bins = self.geom.n_bins;
        assert_eq!(y.len(), views.len() * bins);
        assert_eq!(out.len(), self.image_len());
        out.fill(0.0);
        let chunks: Vec<(usize, &[usize])> = views
            .chunks(VIEW_CHUNK)
            .enumerate()
            .map(|(i, c)| (i * VIEW_CHUNK, c))
            .collect();
        for group in chunks.chunks(CHUNK_GROUP) {
            let partials: Vec<Vec<f64>> = group
                .par_iter()
                .map(|&(start, chunk)| {
                    let mut tracer = Tracer::default();
                    let mut img = vec![0.0; self.image_len()];
                    for (k, &v) in chunk.iter().enumerate() {
                        let yv = &y[(start + k) * bins..(start + k + 1) * bins];
                        self.with_view_rays(v, &mut tracer, |b, hits| {
                            let val = yv[b];
                            if val != 0.0 {
                                for &(p, l) in hits {
                                    img[p as usize] += l * val;
                                }
                            }
                        });
                    }
                    img
                })
                .collect();
            for p in partials {
                for (o, v) in out.iter_mut().zip(p) {
                    *o += v;
                }
            }
        }
    }
}

/// Reusable buffers for tracing one ray through the pixel grid.
#[derive(Debug, Default)]
struct Tracer {
    tx: Vec<f64>,
    ty: Vec<f64>,
    hits: Vec<(u32, f64)>,
}

impl Tracer {
    /// Siddon's method: collect every grid-plane crossing along the ray, merge
    /// them in parametric order and assign each segment to the pixel that
    /// contains its midpoint.
    #[allow(clippy::needless_range_loop)]
    fn trace(&mut self, geom: &Geometry, ray: &Ray) -> &[(u32, f64)] {
        self.hits.clear();
        let (xh, yh) = geom.half_extent();
        let ps = geom.pixel_size;
        let half = [xh, yh];
        let (mut t0, mut t1) = (ray.t_min, ray.t_max);
        for axis in 0..2 {
            let (o, d) = (ray.origin[axis], ray.dir[axis]);
            if d.abs() < 1e-12 {
                if o < -half[axis] || o > half[axis] {
                    return &self.hits;
                }
            } else {
                let ta = (-half[axis] - o) / d;
                let tb = (half[axis] - o) / d;
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if !(t1 > t0) {
            return &self.hits;
        }

        plane_crossings(ray.origin[0], ray.dir[0], -xh, ps, geom.cols, t0, t1, &mut self.tx);
        plane_crossings(ray.origin[1], ray.dir[1], -yh, ps, geom.rows, t0, t1, &mut self.ty);

        let (cols, rows) = (geom.cols as i64, geom.rows as i64);
        let emit = |ta: f64, tb: f64, hits: &mut Vec<(u32, f64)>| {
            if tb <= ta {
                return;
            }
            let mid = 0.5 * (ta + tb);
            let px = ray.origin[0] + mid * ray.dir[0];
            let py = ray.origin[1] + mid * ray.dir[1];
            let c = (((px + xh) / ps).floor() as i64).clamp(0, cols - 1);
            let r = (((yh - py) / ps).floor() as i64).clamp(0, rows - 1);
            hits.push(((r * cols + c) as u32, tb - ta));
        };

        let (mut i, mut j) = (0, 0);
        let mut prev = t0;
        while i < self.tx.len() || j < self.ty.len() {
            let next = if j >= self.ty.len() || (i < self.tx.len() && self.tx[i] <= self.ty[j]) {
                i += 1;
                self.tx[i - 1]
            } else {
                j += 1;
                self.ty[j - 1]
            };
            emit(prev, next, &mut self.hits);
            prev = prev.max(next);
        }
        emit(prev, t1, &mut self.hits);
        &self.hits
    }
}

/// Parametric positions where the ray crosses the planes `lo + k·step`,
/// `k = 0..=n`, strictly inside `(t0, t1)`, in increasing order.
#[allow(clippy::too_many_arguments)]
fn plane_crossings(o: f64, d: f64, lo: f64, step: f64, n: usize, t0: f64, t1: f64, out: &mut Vec<f64>) {
    out.clear();
    if d.abs() < 1e-12 {
        return;
    }
    let a = o + t0 * d;
    let b = o + t1 * d;
    let k_lo = (((a.min(b) - lo) / step).ceil().max(0.0)) as usize;
    let k_hi = (((a.max(b) - lo) / step).floor().min(n as f64)).max(0.0) as usize;
    if k_lo > k_hi {
        return;
    }
    let push = |k: usize, out: &mut Vec<f64>| {
        let t = (lo + k as f64 * step - o) / d;
        if t > t0 && t < t1 {
            out.push(t);
        }
    };
    if d > 0.0 {
        for k in k_lo..=k_hi {
            push(k, out);
        }
    } else {
        for k in (k_lo..=k_hi).rev() {
            push(k, out);
        }
    }
}

/// Dense matrix operator; rows are grouped into views of `bins_per_view` rows.
#[derive(Debug, Clone)]
pub struct MatrixProjector {
    rows: usize,
    cols: usize,
    bins_per_view: usize,
    data: Vec<f64>,
}

impl MatrixProjector {
    /// Row-major `rows × cols` matrix with one row per view.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_bins_per_view(rows, cols, 1, data)
    }

    pub fn with_bins_per_view(rows: usize, cols: usize, bins_per_view: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        if bins_per_view == 0 || !rows.is_multiple_of(bins_per_view) {
            return Err(crate::Error::InvalidParameter(format!(
                "{rows} rows cannot be split into views of {bins_per_view}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            bins_per_view,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

impl Projector for MatrixProjector {
    fn image_len(&self) -> usize {
        self.cols
    }

    fn n_views(&self) -> usize {
        self.rows / self.bins_per_view
    }

    fn bins_per_view(&self) -> usize {
        self.bins_per_view
    }

    fn forward_views(&self, x: &[f64], views: &[usize], out: &mut [f64]) {
        let bins = self.bins_per_view;
        assert_eq!(out.len(), views.len() * bins);
        for (i, &v) in views.iter().enumerate() {
            for b in 0..bins {
                let row = self.row(v * bins + b);
                out[i * bins + b] = row.iter().zip(x).map(|(a, x)| a * x).sum();
            }
        }
    }

    fn back_views(&self, y: &[f64], views: &[usize], out: &mut [f64]) {
        let bins = self.bins_per_view;
        out.fill(0.0);
        for (i, &v) in views.iter().enumerate() {
            for b in 0..bins {
                let yv = y[i * bins + b];
                for (o, a) in out.iter_mut().zip(self.row(v * bins + b)) {
                    *o += a * yv;
                }
            }
        }
    }
}

/// `A x` as a line-integral sinogram.
pub fn forward_project(image: &Image, geom: &Geometry) -> Result<Sinogram> {
    image.check_geometry(geom)?;
    let proj = SiddonProjector::on_the_fly(geom);
    Sinogram::from_vec(geom, SinogramKind::LineIntegral, proj.forward(&image.data))
}

/// `Aᵀ y`.
pub fn back_project(sino: &Sinogram, geom: &Geometry) -> Result<Image> {
    sino.check_geometry(geom)?;
    let proj = SiddonProjector::on_the_fly(geom);
    Image::from_vec(geom.rows, geom.cols, proj.back(&sino.data))
}
