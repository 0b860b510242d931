//! Image containers and the coil-combination / noise-propagation math.
//!
//! Channel images follow `y_i = s_i x + n_i`. A channel group is combined with
//! the matched filter `sum_i conj(s_i) y_i`; the noise statistics of such
//! combinations are propagated analytically from the channel covariance.
//! All voxelwise arithmetic is elementwise.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Values an [`Image`] can hold.
pub trait Voxel: Copy + Default + PartialEq + std::fmt::Debug {
    fn is_finite_value(&self) -> bool;
}

impl Voxel for f64 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Voxel for Complex64 {
    fn is_finite_value(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Voxel for bool {
    fn is_finite_value(&self) -> bool {
        true
    }
}

/// A row-major 2-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub type ComplexImage = Image<Complex64>;
pub type RealImage = Image<f64>;

impl<T> Image<T> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl<T: Voxel> Image<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be >= 1, got {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            data: vec![value; height * width],
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, T::default())
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be >= 1, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::dims(height * width, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_vec(height, width, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Applies `f` voxelwise, producing a new image of the same shape.
    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally sized images.
    pub fn zip_map<U: Voxel, V: Voxel>(
        &self,
        other: &Image<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<Image<V>> {
        self.ensure_same_dims(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_dims<U>(&self, other: &Image<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

impl RealImage {
    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scale(&self, c: f64) -> RealImage {
        self.map(|v| v * c)
    }
}

impl ComplexImage {
    pub fn scale(&self, c: Complex64) -> ComplexImage {
        self.map(|v| v * c)
    }
}

/// Boolean region of interest with at least one selected voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    image: Image<bool>,
    count: usize,
}

impl Mask {
    pub fn new(image: Image<bool>) -> Result<Self> {
        let count = image.data().iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Self { image, count })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        Self::new(Image::from_vec(height, width, data)?)
    }

    /// Every voxel selected.
    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(Image::filled(height, width, true)?)
    }

    /// Voxels strictly above `fraction` of the image maximum.
    pub fn from_threshold(image: &RealImage, fraction: f64) -> Result<Self> {
        let level = fraction * image.max_value();
        Self::new(image.map(|v| v > level))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[bool] {
        self.image.data()
    }

    pub fn image(&self) -> &Image<bool> {
        &self.image
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.image.get(row, col)
    }

    /// Linear indices of the selected voxels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.image
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// Mean of `image` over the selected voxels.
    pub fn mean_of(&self, image: &RealImage) -> Result<f64> {
        image.ensure_same_dims(&self.image)?;
        let sum: f64 = self.indices().map(|i| image.data()[i]).sum();
        Ok(sum / self.count as f64)
    }
}

/// One complex image per channel, all on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    channels: Vec<ComplexImage>,
}

impl ChannelStack {
    pub fn new(channels: Vec<ComplexImage>) -> Result<Self> {
        let first = channels.first().ok_or_else(|| {
            Error::InvalidArgument("channel stack needs at least one channel".into())
        })?;
        for ch in &channels[1..] {
            first.ensure_same_dims(ch)?;
        }
        Ok(Self { channels })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn channel(&self, i: usize) -> &ComplexImage {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[ComplexImage] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<ComplexImage> {
        self.channels
    }

    pub fn scale(&self, c: Complex64) -> ChannelStack {
        ChannelStack {
            channels: self.channels.iter().map(|ch| ch.scale(c)).collect(),
        }
    }

    /// Voxelwise sum of two stacks.
    pub fn add(&self, other: &ChannelStack) -> Result<ChannelStack> {
        if self.channel_count() != other.channel_count() {
            return Err(Error::dims(self.channel_count(), other.channel_count()));
        }
        let channels = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| a.zip_map(b, |x, y| x + y))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelStack { channels })
    }
}

/// Complex coil sensitivities, one image per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMap(ChannelStack);

impl SensitivityMap {
    pub fn new(channels: Vec<ComplexImage>) -> Result<Self> {
        Ok(Self(ChannelStack::new(channels)?))
    }

    pub fn channel_count(&self) -> usize {
        self.0.channel_count()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn channel(&self, i: usize) -> &ComplexImage {
        self.0.channel(i)
    }

    pub fn as_stack(&self) -> &ChannelStack {
        &self.0
    }
}

impl From<ChannelStack> for SensitivityMap {
    fn from(stack: ChannelStack) -> Self {
        Self(stack)
    }
}

/// Channel noise covariance `Psi`, an m x m Hermitian matrix. Entry (a, b) is the
/// covariance of channel noise along each of the real and imaginary axes.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariance {
    m: usize,
    data: Vec<Complex64>,
}

const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

impl NoiseCovariance {
    /// Builds a covariance from row-major entries. Checks shape, finiteness and
    /// Hermitian symmetry; positive semi-definiteness is checked by the
    /// operations that need it.
    pub fn new(m: usize, data: Vec<Complex64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "covariance needs at least one channel".into(),
            ));
        }
        if data.len() != m * m {
            return Err(Error::dims(m * m, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite(i));
        }
        let scale = data.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
        for a in 0..m {
            for b in a..m {
                let d = data[a * m + b] - data[b * m + a].conj();
                if d.norm() > HERMITIAN_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not Hermitian at ({a}, {b})"
                    )));
                }
            }
        }
        Ok(Self { m, data })
    }

    pub fn from_real(m: usize, data: &[f64]) -> Result<Self> {
        Self::new(m, data.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn zeros(m: usize) -> Result<Self> {
        Self::new(m, vec![Complex64::default(); m * m])
    }

    pub fn identity(m: usize) -> Result<Self> {
        let mut data = vec![Complex64::default(); m * m];
        for i in 0..m {
            data[i * m + i] = Complex64::new(1.0, 0.0);
        }
        Self::new(m, data)
    }

    pub fn channel_count(&self) -> usize {
        self.m
    }

    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        self.data[a * self.m + b]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> NoiseCovariance {
        NoiseCovariance {
            m: self.m,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    pub(crate) fn to_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.m, self.m, &self.data)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .to_matrix()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn psd_tolerance(&self) -> f64 {
        let max_diag = (0..self.m)
            .map(|i| self.get(i, i).re.abs())
            .fold(0.0, f64::max);
        PSD_TOL * max_diag.max(f64::MIN_POSITIVE)
    }

    pub fn is_psd(&self) -> bool {
        self.ensure_psd().is_ok()
    }

    pub fn ensure_psd(&self) -> Result<()> {
        for i in 0..self.m {
            let d = self.get(i, i);
            if d.re < 0.0 || d.im.abs() > HERMITIAN_TOL * d.re.abs().max(1.0) {
                return Err(Error::NotPositiveSemidefinite(format!(
                    "diagonal entry {i} is {d}"
                )));
            }
        }
        if self.is_zero() {
            return Ok(());
        }
        let min = self.eigenvalues()[0];
        if min < -self.psd_tolerance() {
            return Err(Error::NotPositiveSemidefinite(format!(
                "minimum eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    /// Nearest PSD matrix in Frobenius norm: negative eigenvalues clamped at zero.
    pub fn project_psd(&self) -> NoiseCovariance {
        let eig = self.to_matrix().symmetric_eigen();
        if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            return self.clone();
        }
        let m = self.m;
        let mut data = vec![Complex64::default(); m * m];
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= 0.0 {
                continue;
            }
            let v = eig.eigenvectors.column(k);
            for a in 0..m {
                for b in 0..m {
                    data[a * m + b] += v[a] * v[b].conj() * lambda;
                }
            }
        }
        // Restore exact Hermitian symmetry and a real diagonal.
        for a in 0..m {
            data[a * m + a].im = 0.0;
            for b in a + 1..m {
                let avg = (data[a * m + b] + data[b * m + a].conj()) * 0.5;
                data[a * m + b] = avg;
                data[b * m + a] = avg.conj();
            }
        }
        NoiseCovariance { m, data }
    }

    /// Lower-triangular `L` with `L L^H = Psi`, row-major. Zero pivots are
    /// accepted when the whole remaining column vanishes, so singular PSD
    /// matrices (including `Psi = 0`) factor without error.
    pub fn cholesky(&self) -> Result<Vec<Complex64>> {
        let m = self.m;
        let tol = self.psd_tolerance();
        let max_diag = (0..m).map(|i| self.get(i, i).re.abs()).fold(0.0, f64::max);
        let mut l = vec![Complex64::default(); m * m];
        for j in 0..m {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l[j * m + k].norm_sqr();
            }
            if d < -tol {
                return Err(Error::NotPositiveSemidefinite(format!(
                    "negative pivot {d:e} at column {j}"
                )));
            }
            if d <= tol {
                for i in j + 1..m {
                    let mut v = self.get(i, j);
                    for k in 0..j {
                        v -= l[i * m + k] * l[j * m + k].conj();
                    }
                    if v.norm() > (tol * max_diag).sqrt() {
                        return Err(Error::NotPositiveSemidefinite(format!(
                            "zero pivot with non-zero column at {j}"
                        )));
                    }
                }
                continue;
            }
            let ljj = d.sqrt();
            l[j * m + j] = Complex64::new(ljj, 0.0);
            for i in j + 1..m {
                let mut v = self.get(i, j);
                for k in 0..j {
                    v -= l[i * m + k] * l[j * m + k].conj();
                }
                l[i * m + j] = v / ljj;
            }
        }
        Ok(l)
    }
}

/// Per-voxel noise variance/covariance of two combined images.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelStats {
    pub var_j: RealImage,
    pub var_k: RealImage,
    pub cov_jk: RealImage,
}

fn check_group(group: &[usize], channels: usize) -> Result<()> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    for &index in group {
        if index >= channels {
            return Err(Error::ChannelOutOfRange { index, channels });
        }
    }
    Ok(())
}

fn check_stack_sens(stack: &ChannelStack, sens: &SensitivityMap) -> Result<()> {
    if stack.channel_count() != sens.channel_count() {
        return Err(Error::dims(
            format!("{} channels", sens.channel_count()),
            format!("{} channels", stack.channel_count()),
        ));
    }
    if stack.dims() != sens.dims() {
        return Err(Error::dims(sens.dims(), stack.dims()));
    }
    Ok(())
}

/// Matched-filter combination `sum_{i in group} conj(s_i) y_i`.
pub fn coil_combine(
    stack: &ChannelStack,
    sens: &SensitivityMap,
    group: &[usize],
) -> Result<ComplexImage> {
    check_stack_sens(stack, sens)?;
    check_group(group, stack.channel_count())?;
    let (h, w) = stack.dims();
    let mut out = vec![Complex64::default(); h * w];
    for &i in group {
        let s = sens.channel(i).data();
        let y = stack.channel(i).data();
        for ((o, s), y) in out.iter_mut().zip(s).zip(y) {
            *o += s.conj() * y;
        }
    }
    Image::from_vec(h, w, out)
}

pub fn magnitude(img: &ComplexImage) -> RealImage {
    img.map(|v| v.norm())
}

/// Matched-filter gain `sum_{i in group} |s_i|^2` of a channel group.
pub fn effective_sensitivity(sens: &SensitivityMap, group: &[usize]) -> Result<RealImage> {
    check_group(group, sens.channel_count())?;
    let (h, w) = sens.dims();
    let mut out = vec![0.0; h * w];
    for &i in group {
        for (o, s) in out.iter_mut().zip(sens.channel(i).data()) {
            *o += s.norm_sqr();
        }
    }
    Image::from_vec(h, w, out)
}

/// Analytic per-axis noise statistics of the J- and K-combinations.
///
/// For combination weights `conj(s)` the per-axis covariance of two combined
/// noise fields is `Re(sum_{a in A, b in B} conj(s_a) Psi_ab s_b)`; at high
/// SNR this is also the covariance of their magnitudes. Either group may be
/// empty (its statistics are then zero) but not both.
pub fn propagate_noise_stats(
    sens: &SensitivityMap,
    psi: &NoiseCovariance,
    group_j: &[usize],
    group_k: &[usize],
) -> Result<VoxelStats> {
    let m = sens.channel_count();
    if psi.channel_count() != m {
        return Err(Error::dims(
            format!("{m}x{m} covariance"),
            psi.channel_count(),
        ));
    }
    if group_j.is_empty() && group_k.is_empty() {
        return Err(Error::EmptyGroup);
    }
    for g in [group_j, group_k] {
        if !g.is_empty() {
            check_group(g, m)?;
        }
    }
    if let Some(&c) = group_j.iter().find(|c| group_k.contains(c)) {
        return Err(Error::OverlappingGroups(c));
    }
    psi.ensure_psd()?;

    let (h, w) = sens.dims();
    let n = h * w;
    let mut var_j = vec![0.0; n];
    let mut var_k = vec![0.0; n];
    let mut cov_jk = vec![0.0; n];
    let quad = |v: usize, left: &[usize], right: &[usize]| -> f64 {
        let mut acc = Complex64::default();
        for &a in left {
            let sa = sens.channel(a).data()[v].conj();
            for &b in right {
                acc += sa * psi.get(a, b) * sens.channel(b).data()[v];
            }
        }
        acc.re
    };
    for v in 0..n {
        let sj = quad(v, group_j, group_j).max(0.0);
        let sk = quad(v, group_k, group_k).max(0.0);
        let bound = (sj * sk).sqrt();
        var_j[v] = sj;
        var_k[v] = sk;
        cov_jk[v] = quad(v, group_j, group_k).clamp(-bound, bound);
    }
    Ok(VoxelStats {
        var_j: Image::from_vec(h, w, var_j)?,
        var_k: Image::from_vec(h, w, var_k)?,
        cov_jk: Image::from_vec(h, w, cov_jk)?,
    })
}
