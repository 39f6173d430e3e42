//! Hashed 3D feature containers (dense voxel grid, triplane), their
//! differentiable sampling scheme, the adjoint splat operation, and the
//! unbounded-scene coordinate contraction.
//!
//! The world domain is the cube `[-1, 1]^3`, mapped affinely onto index
//! space `[0, H-1] x [0, W-1] x [0, D-1]`. Sampling and splatting enumerate
//! interpolation weights through the same function, so they form an exact
//! adjoint pair by construction.

use alloc::vec;
use alloc::vec::Vec;

use crate::accum::{AccumMode, Accumulator};
use crate::error::{Error, Result};
use crate::math::{Real, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    Voxel,
    TriPlane,
}

/// Dense `H x W x D x K` feature grid, row-major with `H` outermost and the
/// channel index `K` innermost. Axis mapping: `x -> H`, `y -> W`, `z -> D`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<S> {
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<S>,
}

/// Three axis-aligned feature planes sharing a channel count: `xy` is
/// `H x W x K`, `yz` is `W x D x K`, `zx` is `D x H x K`. A point feature is
/// the sum of the three bilinear samples at `(x,y)`, `(y,z)`, `(z,x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriPlane<S> {
    pub dims: [usize; 3],
    pub channels: usize,
    pub plane_xy: Vec<S>,
    pub plane_yz: Vec<S>,
    pub plane_zx: Vec<S>,
}

/// A feature container plus its interpolation scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum HashStructure<S> {
    Voxel(VoxelGrid<S>),
    TriPlane(TriPlane<S>),
}

/// Shape descriptor for building structures and flat accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub dims: [usize; 3],
    pub channels: usize,
}

impl StructureSpec {
    pub fn voxel(dims: [usize; 3], channels: usize) -> Self {
        StructureSpec {
            kind: StructureKind::Voxel,
            dims,
            channels,
        }
    }

    pub fn triplane(dims: [usize; 3], channels: usize) -> Self {
        StructureSpec {
            kind: StructureKind::TriPlane,
            dims,
            channels,
        }
    }

    pub fn of<S>(structure: &HashStructure<S>) -> Self {
        match structure {
            HashStructure::Voxel(g) => StructureSpec::voxel(g.dims, g.channels),
            HashStructure::TriPlane(t) => StructureSpec::triplane(t.dims, t.channels),
        }
    }

    /// Same geometry with a single channel (splat weight target).
    pub fn weight_target(&self) -> Self {
        StructureSpec {
            channels: 1,
            ..*self
        }
    }

    /// Total number of scalars stored.
    pub fn flat_len(&self) -> usize {
        let [h, w, d] = self.dims;
        match self.kind {
            StructureKind::Voxel => h * w * d * self.channels,
            StructureKind::TriPlane => (h * w + w * d + d * h) * self.channels,
        }
    }

    /// Offset of each backing buffer inside the flat index space.
    fn buffer_offset(&self, buffer: usize) -> usize {
        let [h, w, d] = self.dims;
        let k = self.channels;
        match (self.kind, buffer) {
            (StructureKind::Voxel, 0) => 0,
            (StructureKind::TriPlane, 0) => 0,
            (StructureKind::TriPlane, 1) => h * w * k,
            (StructureKind::TriPlane, 2) => (h * w + w * d) * k,
            _ => unreachable!("buffer index out of range"),
        }
    }

    pub fn zeros<S: Real>(&self) -> HashStructure<S> {
        let [h, w, d] = self.dims;
        let k = self.channels;
        match self.kind {
            StructureKind::Voxel => HashStructure::Voxel(VoxelGrid {
                dims: self.dims,
                channels: k,
                data: vec![S::ZERO; h * w * d * k],
            }),
            StructureKind::TriPlane => HashStructure::TriPlane(TriPlane {
                dims: self.dims,
                channels: k,
                plane_xy: vec![S::ZERO; h * w * k],
                plane_yz: vec![S::ZERO; w * d * k],
                plane_zx: vec![S::ZERO; d * h * k],
            }),
        }
    }
}

/// One interpolation target: backing buffer id, linear index of the cell's
/// first channel, and the interpolation weight.
#[derive(Debug, Clone, Copy)]
pub struct CellWeight<S> {
    pub buffer: usize,
    pub base: usize,
    pub weight: S,
}

/// World-domain membership shared by sampling and splatting: inside the
/// closed cube `[-1, 1]^3`. NaN coordinates count as outside.
#[inline]
pub fn in_bounds<S: Real>(x: [S; 3]) -> bool {
    x.iter().all(|c| *c >= -S::ONE && *c <= S::ONE)
}

#[inline]
fn axis_coord<S: Real>(x: S, n: usize) -> Option<(usize, S)> {
    // Rejects NaN too: both comparisons are false.
    if !(x >= -S::ONE && x <= S::ONE) {
        return None;
    }
    if n == 1 {
        return Some((0, S::ZERO));
    }
    let u = (x + S::ONE) * S::HALF * S::from_usize(n - 1);
    // A point exactly on the upper boundary lands in the last cell with
    // fraction 1, keeping all index arithmetic in range.
    let i = (u.floor().to_f64() as usize).min(n - 2);
    Some((i, u - S::from_usize(i)))
}

/// Enumerates the interpolation weights `sample` uses at `x`; the same
/// enumeration drives splatting, so the two stay exact adjoints.
///
/// Returns the number of cells emitted (0 when `x` is out of bounds,
/// 8 for voxels, 12 for triplanes).
#[inline]
pub fn for_each_cell<S: Real>(
    spec: &StructureSpec,
    x: [S; 3],
    mut f: impl FnMut(CellWeight<S>),
) -> u32 {
    let [h, w, d] = spec.dims;
    let k = spec.channels;
    match spec.kind {
        StructureKind::Voxel => {
            let (ix, fx) = match axis_coord(x[0], h) {
                Some(v) => v,
                None => return 0,
            };
            let (iy, fy) = match axis_coord(x[1], w) {
                Some(v) => v,
                None => return 0,
            };
            let (iz, fz) = match axis_coord(x[2], d) {
                Some(v) => v,
                None => return 0,
            };
            let wx = [S::ONE - fx, fx];
            let wy = [S::ONE - fy, fy];
            let wz = [S::ONE - fz, fz];
            for (dx, &wxv) in wx.iter().enumerate() {
                for (dy, &wyv) in wy.iter().enumerate() {
                    for (dz, &wzv) in wz.iter().enumerate() {
                        let cx = (ix + dx).min(h - 1);
                        let cy = (iy + dy).min(w - 1);
                        let cz = (iz + dz).min(d - 1);
                        f(CellWeight {
                            buffer: 0,
                            base: ((cx * w + cy) * d + cz) * k,
                            weight: wxv * wyv * wzv,
                        });
                    }
                }
            }
            8
        }
        StructureKind::TriPlane => {
            // (plane id, first-axis value & extent, second-axis value & extent)
            let planes = [
                (0usize, x[0], h, x[1], w),
                (1, x[1], w, x[2], d),
                (2, x[2], d, x[0], h),
            ];
            let mut emitted = 0u32;
            for &(buffer, a, na, b, nb) in &planes {
                let (ia, fa) = match axis_coord(a, na) {
                    Some(v) => v,
                    None => return 0,
                };
                let (ib, fb) = match axis_coord(b, nb) {
                    Some(v) => v,
                    None => return 0,
                };
                let wa = [S::ONE - fa, fa];
                let wb = [S::ONE - fb, fb];
                for (da, &wav) in wa.iter().enumerate() {
                    for (db, &wbv) in wb.iter().enumerate() {
                        let ca = (ia + da).min(na - 1);
                        let cb = (ib + db).min(nb - 1);
                        f(CellWeight {
                            buffer,
                            base: (ca * nb + cb) * k,
                            weight: wav * wbv,
                        });
                        emitted += 1;
                    }
                }
            }
            emitted
        }
    }
}

impl<S: Real> HashStructure<S> {
    pub fn spec(&self) -> StructureSpec {
        StructureSpec::of(self)
    }

    pub fn kind(&self) -> StructureKind {
        self.spec().kind
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec().dims
    }

    pub fn channels(&self) -> usize {
        self.spec().channels
    }

    pub fn zeros_like(&self) -> Self {
        self.spec().zeros()
    }

    fn buffer(&self, id: usize) -> &[S] {
        match self {
            HashStructure::Voxel(g) => &g.data,
            HashStructure::TriPlane(t) => match id {
                0 => &t.plane_xy,
                1 => &t.plane_yz,
                _ => &t.plane_zx,
            },
        }
    }

    fn buffer_mut(&mut self, id: usize) -> &mut [S] {
        match self {
            HashStructure::Voxel(g) => &mut g.data,
            HashStructure::TriPlane(t) => match id {
                0 => &mut t.plane_xy,
                1 => &mut t.plane_yz,
                _ => &mut t.plane_zx,
            },
        }
    }

    pub fn flat_len(&self) -> usize {
        self.spec().flat_len()
    }

    pub fn flat_get(&self, index: usize) -> S {
        let spec = self.spec();
        let (buffer, inner) = flat_split(&spec, index);
        self.buffer(buffer)[inner]
    }

    /// Direct read from one backing buffer (cheaper than [`flat_get`] in
    /// inner loops that already know the buffer id).
    ///
    /// [`flat_get`]: HashStructure::flat_get
    #[inline]
    pub fn flat_get_buffer(&self, buffer: usize, index: usize) -> S {
        self.buffer(buffer)[index]
    }

    pub fn flat_set(&mut self, index: usize, value: S) {
        let spec = self.spec();
        let (buffer, inner) = flat_split(&spec, index);
        self.buffer_mut(buffer)[inner] = value;
    }

    pub fn from_flat(spec: &StructureSpec, values: Vec<S>) -> Result<Self> {
        if values.len() != spec.flat_len() {
            return Err(Error::DimMismatch {
                what: "flat structure payload",
                expected: spec.flat_len(),
                got: values.len(),
            });
        }
        let mut out = spec.zeros::<S>();
        for (i, v) in values.into_iter().enumerate() {
            out.flat_set(i, v);
        }
        Ok(out)
    }

    pub fn convert<T: Real>(&self) -> HashStructure<T> {
        let spec = self.spec();
        let mut out = spec.zeros::<T>();
        for i in 0..spec.flat_len() {
            out.flat_set(i, T::from_f64(self.flat_get(i).to_f64()));
        }
        out
    }

    pub fn fill_uniform(&mut self, rng: &mut Rng, lo: f64, hi: f64) {
        for i in 0..self.flat_len() {
            let v = S::from_f64(lo + (hi - lo) * rng.next_f64());
            self.flat_set(i, v);
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.flat_len()).all(|i| self.flat_get(i).is_finite())
    }

    /// Interpolated `K`-vector at world point `x`. Out-of-bounds points
    /// yield the zero vector. Non-finite points are a domain error.
    pub fn sample(&self, x: [S; 3]) -> Result<Vec<S>> {
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain {
                what: "sample point must be finite",
            });
        }
        let mut out = vec![S::ZERO; self.channels()];
        self.sample_into(x, &mut out);
        Ok(out)
    }

    /// Allocation-free sampling; `out` must hold `channels()` scalars.
    /// Non-finite coordinates are treated as out of bounds. Returns the
    /// number of cells read (0 out of bounds).
    pub fn sample_into(&self, x: [S; 3], out: &mut [S]) -> u32 {
        debug_assert_eq!(out.len(), self.channels());
        for v in out.iter_mut() {
            *v = S::ZERO;
        }
        let spec = self.spec();
        for_each_cell(&spec, x, |cw| {
            let buf = self.buffer(cw.buffer);
            for (k, o) in out.iter_mut().enumerate() {
                *o += cw.weight * buf[cw.base + k];
            }
        })
    }

    /// Scatters `weight * value` into the cells around `x` using exactly
    /// the interpolation weights `sample` would use there. Out-of-bounds
    /// points are a no-op.
    pub fn splat_accumulate(&mut self, x: [S; 3], value: &[S], weight: S) -> Result<()> {
        if value.len() != self.channels() {
            return Err(Error::DimMismatch {
                what: "splat value channels",
                expected: self.channels(),
                got: value.len(),
            });
        }
        let spec = self.spec();
        // Collect targets first; the closure cannot borrow self mutably.
        let mut cells: [CellWeight<S>; 12] = [CellWeight {
            buffer: 0,
            base: 0,
            weight: S::ZERO,
        }; 12];
        let mut n = 0usize;
        for_each_cell(&spec, x, |cw| {
            cells[n] = cw;
            n += 1;
        });
        for cw in &cells[..n] {
            let buf = self.buffer_mut(cw.buffer);
            for (k, v) in value.iter().enumerate() {
                buf[cw.base + k] += cw.weight * weight * *v;
            }
        }
        Ok(())
    }
}

/// Reverse-mode gradient of [`HashStructure::sample`] with respect to the
/// structure: scatters `upstream` with the sampling weights. Identical code
/// path to `splat_accumulate` with weight 1.
pub fn sample_vjp<S: Real>(
    grad: &mut HashStructure<S>,
    x: [S; 3],
    upstream: &[S],
) -> Result<()> {
    grad.splat_accumulate(x, upstream, S::ONE)
}

fn flat_split(spec: &StructureSpec, index: usize) -> (usize, usize) {
    match spec.kind {
        StructureKind::Voxel => (0, index),
        StructureKind::TriPlane => {
            let o1 = spec.buffer_offset(1);
            let o2 = spec.buffer_offset(2);
            if index < o1 {
                (0, index)
            } else if index < o2 {
                (1, index - o1)
            } else {
                (2, index - o2)
            }
        }
    }
}

/// Thread-shared accumulation target shaped like a [`HashStructure`].
pub struct StructureAccum {
    spec: StructureSpec,
    cells: Accumulator,
}

impl StructureAccum {
    pub fn zeros(spec: StructureSpec, mode: AccumMode) -> Self {
        StructureAccum {
            spec,
            cells: Accumulator::zeros(spec.flat_len(), mode),
        }
    }

    pub fn spec(&self) -> StructureSpec {
        self.spec
    }

    /// Scatters `scale * values` at `x`; returns the number of cells touched.
    #[inline]
    pub fn scatter<S: Real>(&self, x: [S; 3], values: &[S], scale: S) -> u32 {
        debug_assert_eq!(values.len(), self.spec.channels);
        for_each_cell(&self.spec, x, |cw| {
            let offset = self.spec.buffer_offset(cw.buffer) + cw.base;
            for (k, v) in values.iter().enumerate() {
                self.cells.add(offset + k, cw.weight * scale * *v);
            }
        })
    }

    /// Gathers (samples) from the accumulated values at `x`.
    pub fn gather_into<S: Real>(&self, x: [S; 3], out: &mut [S]) {
        debug_assert_eq!(out.len(), self.spec.channels);
        for v in out.iter_mut() {
            *v = S::ZERO;
        }
        for_each_cell(&self.spec, x, |cw| {
            let offset = self.spec.buffer_offset(cw.buffer) + cw.base;
            for (k, o) in out.iter_mut().enumerate() {
                *o += cw.weight * self.cells.get::<S>(offset + k);
            }
        });
    }

    pub fn into_structure<S: Real>(&self) -> HashStructure<S> {
        let mut out = self.spec.zeros::<S>();
        for i in 0..self.spec.flat_len() {
            out.flat_set(i, self.cells.get::<S>(i));
        }
        out
    }
}

/// Configuration of the unbounded-scene contraction. `scale_a` controls the
/// share of the output cube given to the foreground `|x| <= 1`; valid range
/// is `(0, 2)`. The default applies the map to each axis independently;
/// `radial` switches to the Euclidean-norm form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractConfig {
    pub scale_a: f32,
    pub enabled: bool,
    pub radial: bool,
}

impl ContractConfig {
    pub fn new(scale_a: f32) -> Result<Self> {
        let cfg = ContractConfig {
            scale_a,
            enabled: true,
            radial: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_a > 0.0 && self.scale_a < 2.0) || !self.scale_a.is_finite() {
            return Err(Error::Domain {
                what: "contraction scale must lie in (0, 2)",
            });
        }
        Ok(())
    }

    pub fn disabled() -> Self {
        ContractConfig {
            scale_a: 1.0,
            enabled: false,
            radial: false,
        }
    }
}

#[inline]
fn contract_1d<S: Real>(t: S, a: S) -> S {
    let r = t.abs();
    if r <= S::ONE {
        S::HALF * a * t
    } else {
        let sign = if t < S::ZERO { -S::ONE } else { S::ONE };
        S::HALF * ((S::TWO - a) * (S::ONE - S::ONE / r) + a) * sign
    }
}

/// Maps unbounded points into the open cube `(-1, 1)^3`. The foreground
/// region maps to `[-a/2, a/2]`; magnitudes tend to 1 as the input grows.
#[inline]
pub fn contract<S: Real>(x: [S; 3], cfg: &ContractConfig) -> [S; 3] {
    if !cfg.enabled {
        return x;
    }
    let a = S::from_f32(cfg.scale_a);
    if cfg.radial {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r <= S::ONE {
            [S::HALF * a * x[0], S::HALF * a * x[1], S::HALF * a * x[2]]
        } else {
            let coeff = S::HALF * ((S::TWO - a) * (S::ONE - S::ONE / r) + a) / r;
            [coeff * x[0], coeff * x[1], coeff * x[2]]
        }
    } else {
        [
            contract_1d(x[0], a),
            contract_1d(x[1], a),
            contract_1d(x[2], a),
        ]
    }
}
