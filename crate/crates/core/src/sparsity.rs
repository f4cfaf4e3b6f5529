//! Patch extraction/assembly, hard thresholding and joint sparse coding and
//! clustering over a union of square transforms.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::image::Image;

/// Square patches whose top-left corners step by `stride`; patches never
/// wrap or extend past the border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub side: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { side: 8, stride: 1 }
    }
}

impl PatchConfig {
    pub fn new(side: usize, stride: usize) -> Self {
        Self { side, stride }
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.side == 0 || self.stride == 0 {
            return Err(Error::InvalidParameter("patch side and stride must be >= 1".into()));
        }
        if self.side > rows.min(cols) {
            return Err(Error::InvalidParameter(format!(
                "patch side {} exceeds image {rows}×{cols}",
                self.side
            )));
        }
        Ok(())
    }

    fn starts(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..=n - self.side).step_by(self.stride)
    }

    /// Top-left corners in raster order.
    pub fn positions(&self, rows: usize, cols: usize) -> Vec<(usize, usize)> {
        self.starts(rows)
            .flat_map(|r| self.starts(cols).map(move |c| (r, c)))
            .collect()
    }

    pub fn count(&self, rows: usize, cols: usize) -> usize {
        (rows - self.side + 1).div_ceil(self.stride) * (cols - self.side + 1).div_ceil(self.stride)
    }
}

/// One vectorised patch per column, stored patch-contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PatchSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "{} values do not form patches of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn patch(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Concatenates patch sets of equal dimension.
    pub fn concat(sets: &[PatchSet]) -> Result<Self> {
        let dim = sets.first().map_or(1, |s| s.dim);
        let mut data = Vec::new();
        for s in sets {
            check_len("patch dimension", dim, s.dim)?;
            data.extend_from_slice(&s.data);
        }
        Self::new(dim, data)
    }
}

/// Column `j` is `P_j x` in row-major order.
pub fn extract_patches(image: &Image, cfg: &PatchConfig) -> Result<PatchSet> {
    cfg.validate(image.rows, image.cols)?;
    let s = cfg.side;
    let positions = cfg.positions(image.rows, image.cols);
    let mut data = Vec::with_capacity(positions.len() * cfg.dim());
    for (r, c) in positions {
        for i in 0..s {
            let start = (r + i) * image.cols + c;
            data.extend_from_slice(&image.data[start..start + s]);
        }
    }
    PatchSet::new(cfg.dim(), data)
}

/// `Σ_j τ_j P_jᵀ v_j`, the adjoint of [`extract_patches`] with per-patch
/// scaling. `tau = None` means `τ ≡ 1`.
pub fn assemble_weighted(
    vectors: &PatchSet,
    cfg: &PatchConfig,
    rows: usize,
    cols: usize,
    tau: Option<&[f64]>,
) -> Result<Image> {
    cfg.validate(rows, cols)?;
    check_len("patch dimension", cfg.dim(), vectors.dim)?;
    let positions = cfg.positions(rows, cols);
    check_len("patch count", positions.len(), vectors.len())?;
    if let Some(t) = tau {
        check_len("patch weights", positions.len(), t.len())?;
    }
    let s = cfg.side;
    let mut out = Image::zeros(rows, cols);
    for (j, &(r, c)) in positions.iter().enumerate() {
        let w = tau.map_or(1.0, |t| t[j]);
        if w == 0.0 {
            continue;
        }
        let v = vectors.patch(j);
        for i in 0..s {
            let row = &mut out.data[(r + i) * cols + c..(r + i) * cols + c + s];
            for (o, &x) in row.iter_mut().zip(&v[i * s..(i + 1) * s]) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// `Σ_j τ_j P_jᵀ P_j` as a per-pixel diagonal.
pub fn patch_coverage(cfg: &PatchConfig, rows: usize, cols: usize, tau: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = cfg.count(rows, cols);
    let ones = PatchSet::new(cfg.dim(), vec![1.0; n * cfg.dim()])?;
    Ok(assemble_weighted(&ones, cfg, rows, cols, tau)?.data)
}

/// Zeros entries with `|v_i| < γ`; entries with `|v_i| = γ` are kept.
pub fn hard_threshold(v: &[f64], gamma: f64) -> Vec<f64> {
    v.iter().map(|&x| if x.abs() >= gamma { x } else { 0.0 }).collect()
}

/// Square transform, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Transform {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_len("transform entries", dim * dim, data.len())?;
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= s);
        self
    }

    /// Orthonormal 2D DCT-II on `side×side` patches (Kronecker product of 1D DCTs).
    pub fn dct2(side: usize) -> Self {
        let n = side as f64;
        let c1: Vec<f64> = (0..side * side)
            .map(|idx| {
                let (k, i) = (idx / side, idx % side);
                let a = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                a * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()
            })
            .collect();
        let d = side * side;
        let mut data = vec![0.0; d * d];
        for (row, chunk) in data.chunks_exact_mut(d).enumerate() {
            let (k1, k2) = (row / side, row % side);
            for (col, v) in chunk.iter_mut().enumerate() {
                let (i1, i2) = (col / side, col % side);
                *v = c1[k1 * side + i1] * c1[k2 * side + i2];
            }
        }
        Self { dim: d, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `out = Ω u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.dim)) {
            *o = row.iter().zip(u).map(|(a, b)| a * b).sum();
        }
    }

    /// `out = Ωᵀ v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&vi, row) in v.iter().zip(self.data.chunks_exact(self.dim)) {
            if vi != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * vi;
                }
            }
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(m[(r, c)]);
            }
        }
        Self { dim, data }
    }

    pub fn determinant(&self) -> f64 {
        self.to_matrix().determinant()
    }

    /// `‖ΩᵀΩ‖₂ = σ_max(Ω)²`, by power iteration to `1e−10` relative.
    pub fn gram_spectral_norm(&self) -> f64 {
        let d = self.dim;
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 * 0.618).fract()).collect();
        let mut w = vec![0.0; d];
        let mut u = vec![0.0; d];
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            self.apply(&v, &mut w);
            self.apply_transpose(&w, &mut u);
            let next: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            std::mem::swap(&mut v, &mut u);
            if (next - lambda).abs() <= 1e-12 * next.abs() {
                return next;
            }
            lambda = next;
        }
        lambda
    }
}

/// A union of `K` square sparsifying transforms over `side×side` patches.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformUnion {
    pub side: usize,
    pub transforms: Vec<Transform>,
}

impl TransformUnion {
    /// Validates shapes, finiteness and nonsingularity.
    pub fn new(side: usize, transforms: Vec<Transform>) -> Result<Self> {
        Self::validated(side, side * side, transforms)
    }

    /// Union over plain vectors of any length; `side` is set when the length
    /// is a perfect square.
    pub fn from_transforms(transforms: Vec<Transform>) -> Result<Self> {
        let dim = transforms.first().map_or(0, |t| t.dim);
        let side = (dim as f64).sqrt().round() as usize;
        let side = if side * side == dim { side } else { 0 };
        Self::validated(side, dim, transforms)
    }

    fn validated(side: usize, dim: usize, transforms: Vec<Transform>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::InvalidParameter("a transform union needs K >= 1".into()));
        }
        for (k, t) in transforms.iter().enumerate() {
            check_len("transform dimension", dim, t.dim)?;
            let det = t.determinant();
            if t.data.iter().any(|v| !v.is_finite()) || !(det.abs() > 0.0) || !det.is_finite() {
                return Err(Error::SingularTransform { index: k });
            }
        }
        Ok(Self { side, transforms })
    }

    pub fn dct(side: usize, k: usize) -> Self {
        Self {
            side,
            transforms: vec![Transform::dct2(side); k],
        }
    }

    pub fn k(&self) -> usize {
        self.transforms.len()
    }

    pub fn dim(&self) -> usize {
        self.transforms[0].dim
    }

    pub fn patch_config(&self, stride: usize) -> PatchConfig {
        PatchConfig::new(self.side, stride)
    }

    /// `max_k ‖Ω_kᵀΩ_k‖₂`.
    pub fn max_gram_norm(&self) -> f64 {
        self.transforms
            .iter()
            .map(Transform::gram_spectral_norm)
            .fold(0.0, f64::max)
    }
}

/// Result of coding one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Coding {
    /// Zero-based class index.
    pub class: usize,
    pub code: Vec<f64>,
    pub cost: f64,
}

/// `‖v − H_γ(v)‖² + γ²‖H_γ(v)‖₀`.
pub fn threshold_cost(v: &[f64], gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    v.iter().map(|&x| if x.abs() >= gamma { g2 } else { x * x }).sum()
}

/// Picks the class minimising `‖Ω_k u − H_γ(Ω_k u)‖² + γ²‖H_γ(Ω_k u)‖₀ +
/// offset(k)`; ties go to the lowest class index.
pub fn code_and_cluster_with(
    u: &[f64],
    union: &TransformUnion,
    gamma: f64,
    offset: impl Fn(usize) -> f64,
    scratch: &mut Vec<f64>,
) -> (usize, f64) {
    scratch.resize(union.dim(), 0.0);
    let mut best = (0, f64::INFINITY);
    for (k, t) in union.transforms.iter().enumerate() {
        t.apply(u, scratch);
        let cost = threshold_cost(scratch, gamma) + offset(k);
        if cost < best.1 {
            best = (k, cost);
        }
    }
    best
}

pub fn code_and_cluster(u: &[f64], union: &TransformUnion, gamma: f64) -> Result<Coding> {
    check_len("patch dimension", union.dim(), u.len())?;
    let mut scratch = Vec::new();
    let (class, cost) = code_and_cluster_with(u, union, gamma, |_| 0.0, &mut scratch);
    let mut v = vec![0.0; union.dim()];
    union.transforms[class].apply(u, &mut v);
    Ok(Coding {
        class,
        code: hard_threshold(&v, gamma),
        cost,
    })
}

/// Per-patch class labels (zero-based), sparse codes and costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeAssignment {
    pub labels: Vec<usize>,
    pub codes: PatchSet,
    pub costs: Vec<f64>,
}

impl CodeAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `Σ_j τ_j cost_j`.
    pub fn total_cost(&self, tau: Option<&[f64]>) -> f64 {
        self.costs
            .iter()
            .enumerate()
            .map(|(j, c)| tau.map_or(1.0, |t| t[j]) * c)
            .sum()
    }
}

/// Codes every patch independently (in parallel, output in patch order).
pub fn code_patches(patches: &PatchSet, union: &TransformUnion, gamma: f64) -> Result<CodeAssignment> {
    check_len("patch dimension", union.dim(), patches.dim)?;
    let d = union.dim();
    let per: Vec<(usize, f64, Vec<f64>)> = patches
        .data
        .par_chunks_exact(d)
        .map_init(Vec::new, |scratch, u| {
            let (k, cost) = code_and_cluster_with(u, union, gamma, |_| 0.0, scratch);
            union.transforms[k].apply(u, scratch);
            (k, cost, hard_threshold(scratch, gamma))
        })
        .collect();
    let mut labels = Vec::with_capacity(per.len());
    let mut costs = Vec::with_capacity(per.len());
    let mut codes = Vec::with_capacity(per.len() * d);
    for (k, c, z) in per {
        labels.push(k);
        costs.push(c);
        codes.extend(z);
    }
    Ok(CodeAssignment {
        labels,
        codes: PatchSet::new(d, codes)?,
        costs,
    })
}

/// Per-pixel majority vote over the labels of all patches covering the
/// pixel; ties go to the lowest class. Pixels covered by no patch get `None`.
pub fn pixel_cluster_map(
    labels: &[usize],
    k: usize,
    cfg: &PatchConfig,
    rows: usize,
    cols: usize,
) -> Result<Vec<Option<usize>>> {
    cfg.validate(rows, cols)?;
    let positions = cfg.positions(rows, cols);
    check_len("patch labels", positions.len(), labels.len())?;
    let mut votes = vec![0u32; rows * cols * k];
    for (&(r, c), &label) in positions.iter().zip(labels) {
        if label >= k {
            return Err(Error::InvalidParameter(format!("label {label} outside 0..{k}")));
        }
        for i in r..r + cfg.side {
            for j in c..c + cfg.side {
                votes[(i * cols + j) * k + label] += 1;
            }
        }
    }
    Ok(votes
        .chunks_exact(k)
        .map(|v| {
            let (best, count) = v
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (i, &n)| if n > acc.1 { (i, n) } else { acc });
            (count > 0).then_some(best)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(rows: usize, cols: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_patch_is_whole_image() {
        let img = image(8, 8, 1);
        let p = extract_patches(&img, &PatchConfig::new(8, 1)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.patch(0), &img.data[..]);
    }

    #[test]
    fn constant_image_constant_patches() {
        let img = Image::filled(12, 9, 0.7);
        let p = extract_patches(&img, &PatchConfig::new(4, 1)).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn count_formula() {
        let cfg = PatchConfig::new(8, 2);
        assert_eq!(cfg.count(10, 10), 4);
        let p = extract_patches(&image(10, 10, 2), &cfg).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(PatchConfig::new(3, 2).count(10, 7), 4 * 3);
    }

    #[test]
    fn image_smaller_than_patch() {
        assert!(extract_patches(&image(6, 9, 3), &PatchConfig::new(8, 1)).is_err());
    }

    #[test]
    fn unit_patches_assemble_to_identity() {
        let img = image(5, 7, 4);
        let cfg = PatchConfig::new(1, 1);
        let p = extract_patches(&img, &cfg).unwrap();
        assert_eq!(assemble_weighted(&p, &cfg, 5, 7, None).unwrap().data, img.data);
    }

    #[test]
    fn zero_tau_zero_image() {
        let cfg = PatchConfig::new(3, 1);
        let p = extract_patches(&image(6, 6, 5), &cfg).unwrap();
        let tau = vec![0.0; p.len()];
        assert!(assemble_weighted(&p, &cfg, 6, 6, Some(&tau))
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn assemble_count_mismatch() {
        let cfg = PatchConfig::new(3, 1);
        let p = PatchSet::new(9, vec![0.0; 9 * 3]).unwrap();
        assert!(assemble_weighted(&p, &cfg, 6, 6, None).is_err());
    }

    #[test]
    fn patch_adjoint_identity() {
        let cfg = PatchConfig::new(4, 2);
        let x = image(13, 11, 6);
        let px = extract_patches(&x, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = PatchSet::new(16, (0..px.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let lhs: f64 = px.data.iter().zip(&v.data).map(|(a, b)| a * b).sum();
        let ptv = assemble_weighted(&v, &cfg, 13, 11, None).unwrap();
        let rhs: f64 = x.data.iter().zip(&ptv.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(hard_threshold(&[3.0, -1.0, 2.0, 0.5], 2.0), vec![3.0, 0.0, 2.0, 0.0]);
        let v = [0.3, -4.0, 1e-9];
        assert_eq!(hard_threshold(&v, 0.0), v.to_vec());
    }

    #[test]
    fn threshold_is_elementwise_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-3.0..3.0);
            let g: f64 = rng.random_range(0.0..2.0);
            let z = hard_threshold(&[v], g)[0];
            let cost = |z: f64| (v - z).powi(2) + if z != 0.0 { g * g } else { 0.0 };
            assert!(cost(z) <= cost(0.0).min(cost(v)));
        }
    }

    #[test]
    fn two_class_example() {
        assert!(TransformUnion::new(1, vec![]).is_err());
        let union =
            TransformUnion::from_transforms(vec![Transform::identity(2), Transform::identity(2).scaled(2.0)]).unwrap();
        let mut scratch = Vec::new();
        let (k, cost) = code_and_cluster_with(&[1.0, 0.1], &union, 0.5, |_| 0.0, &mut scratch);
        assert_eq!(k, 0);
        assert!((cost - 0.26).abs() < 1e-12);
        union.transforms[1].apply(&[1.0, 0.1], &mut scratch);
        assert!((threshold_cost(&scratch, 0.5) - 0.29).abs() < 1e-12);
        union.transforms[0].apply(&[1.0, 0.1], &mut scratch);
        assert_eq!(hard_threshold(&scratch, 0.5), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_patch_ties_to_first_class() {
        let union = TransformUnion::new(2, vec![Transform::dct2(2), Transform::identity(4)]).unwrap();
        let c = code_and_cluster(&[0.0; 4], &union, 0.3).unwrap();
        assert_eq!(c.class, 0);
        assert_eq!(c.cost, 0.0);
        assert_eq!(c.code, vec![0.0; 4]);
    }

    #[test]
    fn single_class_cost_is_residual() {
        let union = TransformUnion::new(2, vec![Transform::dct2(2)]).unwrap();
        let u = [0.4, -0.2, 1.3, 0.05];
        let c = code_and_cluster(&u, &union, 0.25).unwrap();
        let mut v = vec![0.0; 4];
        union.transforms[0].apply(&u, &mut v);
        let z = hard_threshold(&v, 0.25);
        let resid: f64 = v.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum();
        let nnz = z.iter().filter(|&&x| x != 0.0).count() as f64;
        assert_eq!(c.class, 0);
        assert!((c.cost - (resid + 0.0625 * nnz)).abs() < 1e-12);
    }

    #[test]
    fn singular_transform_rejected() {
        let t = Transform::new(4, vec![0.0; 16]).unwrap();
        assert!(matches!(
            TransformUnion::new(2, vec![Transform::identity(4), t]),
            Err(Error::SingularTransform { index: 1 })
        ));
    }

    #[test]
    fn dct_is_orthonormal() {
        let t = Transform::dct2(4).to_matrix();
        let g = &t * t.transpose();
        assert!((g - DMatrix::<f64>::identity(16, 16)).amax() < 1e-12);
        assert!((Transform::dct2(3).gram_spectral_norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cluster_map_partitions_pixels() {
        let cfg = PatchConfig::new(3, 1);
        let n = cfg.count(7, 6);
        let labels: Vec<usize> = (0..n).map(|j| j % 3).collect();
        let map = pixel_cluster_map(&labels, 3, &cfg, 7, 6).unwrap();
        assert!(map.iter().all(|m| m.is_some()));
        // the top-left pixel is covered only by patch 0
        assert_eq!(map[0], Some(0));
    }

    proptest! {
        #[test]
        fn permuting_patches_permutes_codes(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let union = TransformUnion::new(2, vec![
                Transform::dct2(2),
                Transform::new(4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            ]).unwrap();
            let n = 12;
            let data: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = code_patches(&PatchSet::new(4, data.clone()).unwrap(), &union, 0.7).unwrap();
            let perm: Vec<usize> = (0..n).rev().collect();
            let permuted: Vec<f64> = perm.iter().flat_map(|&j| data[j * 4..(j + 1) * 4].to_vec()).collect();
            let b = code_patches(&PatchSet::new(4, permuted).unwrap(), &union, 0.7).unwrap();
            for (i, &j) in perm.iter().enumerate() {
                prop_assert_eq!(a.labels[j], b.labels[i]);
                prop_assert_eq!(a.codes.patch(j), b.codes.patch(i));
            }
        }
    }
}
