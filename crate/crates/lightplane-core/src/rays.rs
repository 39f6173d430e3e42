//! Cameras, ray generation, and equispaced point sampling along rays.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hash3d::{contract, ContractConfig};
use crate::math::{Real, Rng};

/// Pinhole camera with a world-from-camera rigid pose (`rotation` row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<S> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
    pub width: usize,
    pub height: usize,
    pub rotation: [[S; 3]; 3],
    pub translation: [S; 3],
}

impl<S: Real> Camera<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > S::ZERO && self.fy > S::ZERO) || self.width == 0 || self.height == 0 {
            return Err(Error::Domain {
                what: "camera intrinsics must be positive",
            });
        }
        // R^T R = I within 1e-5.
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = S::ZERO;
                for (row, _) in self.rotation.iter().enumerate() {
                    acc += self.rotation[row][i] * self.rotation[row][j];
                }
                let want = if i == j { S::ONE } else { S::ZERO };
                if (acc - want).abs() > S::from_f32(1e-5) {
                    return Err(Error::Domain {
                        what: "camera rotation must be orthonormal",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn rotate(&self, v: [S; 3]) -> [S; 3] {
        [
            self.rotation[0][0] * v[0] + self.rotation[0][1] * v[1] + self.rotation[0][2] * v[2],
            self.rotation[1][0] * v[0] + self.rotation[1][1] * v[1] + self.rotation[1][2] * v[2],
            self.rotation[2][0] * v[0] + self.rotation[2][1] * v[1] + self.rotation[2][2] * v[2],
        ]
    }

    /// Projects a world point; returns pixel coordinates and camera depth.
    pub fn project(&self, world: [S; 3]) -> Option<([S; 2], S)> {
        // Camera-space point: R^T (x - t).
        let d = [
            world[0] - self.translation[0],
            world[1] - self.translation[1],
            world[2] - self.translation[2],
        ];
        let cam = [
            self.rotation[0][0] * d[0] + self.rotation[1][0] * d[1] + self.rotation[2][0] * d[2],
            self.rotation[0][1] * d[0] + self.rotation[1][1] * d[1] + self.rotation[2][1] * d[2],
            self.rotation[0][2] * d[0] + self.rotation[1][2] * d[1] + self.rotation[2][2] * d[2],
        ];
        if cam[2] <= S::ZERO {
            return None;
        }
        Some((
            [
                self.fx * cam[0] / cam[2] + self.cx,
                self.fy * cam[1] / cam[2] + self.cy,
            ],
            cam[2],
        ))
    }

    pub fn convert<T: Real>(&self) -> Camera<T> {
        let conv = |v: S| T::from_f64(v.to_f64());
        Camera {
            fx: conv(self.fx),
            fy: conv(self.fy),
            cx: conv(self.cx),
            cy: conv(self.cy),
            width: self.width,
            height: self.height,
            rotation: self.rotation.map(|row| row.map(conv)),
            translation: self.translation.map(conv),
        }
    }
}

/// `M` rays with shared near/far bounds; directions are unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle<S> {
    pub origins: Vec<[S; 3]>,
    pub directions: Vec<[S; 3]>,
    pub near: S,
    pub far: S,
}

impl<S: Real> RayBundle<S> {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.origins.len() != self.directions.len() {
            return Err(Error::DimMismatch {
                what: "ray origins vs directions",
                expected: self.origins.len(),
                got: self.directions.len(),
            });
        }
        if !(self.near >= S::ZERO && self.far > self.near) {
            return Err(Error::Domain {
                what: "ray bounds need 0 <= near < far",
            });
        }
        let tol = S::from_f32(1e-4);
        for d in &self.directions {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - S::ONE).abs() > tol || !norm.is_finite() {
                return Err(Error::Domain {
                    what: "ray directions must be unit length",
                });
            }
        }
        for o in &self.origins {
            if o.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain {
                    what: "ray origins must be finite",
                });
            }
        }
        Ok(())
    }

    pub fn convert<T: Real>(&self) -> RayBundle<T> {
        let conv = |v: S| T::from_f64(v.to_f64());
        RayBundle {
            origins: self.origins.iter().map(|o| o.map(conv)).collect(),
            directions: self.directions.iter().map(|d| d.map(conv)).collect(),
            near: conv(self.near),
            far: conv(self.far),
        }
    }
}

/// One ray per pixel center: direction
/// `normalize(R * ((u+.5-cx)/fx, (v+.5-cy)/fy, 1))`, origin at the camera
/// center, rows scanned v-major so ray `i` maps to pixel `(i % w, i / w)`.
pub fn rays_from_camera<S: Real>(camera: &Camera<S>, near: S, far: S) -> Result<RayBundle<S>> {
    camera.validate()?;
    let mut origins = Vec::with_capacity(camera.pixel_count());
    let mut directions = Vec::with_capacity(camera.pixel_count());
    for v in 0..camera.height {
        for u in 0..camera.width {
            let cam_dir = [
                (S::from_usize(u) + S::HALF - camera.cx) / camera.fx,
                (S::from_usize(v) + S::HALF - camera.cy) / camera.fy,
                S::ONE,
            ];
            let world = camera.rotate(cam_dir);
            let norm = (world[0] * world[0] + world[1] * world[1] + world[2] * world[2]).sqrt();
            directions.push([world[0] / norm, world[1] / norm, world[2] / norm]);
            origins.push(camera.translation);
        }
    }
    let bundle = RayBundle {
        origins,
        directions,
        near,
        far,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// `R+1` equispaced points per ray, generated on demand:
/// `x_ij = origin_i + (near + j * delta) * direction_i`, then the optional
/// coordinate contraction. Points are never materialized in bulk.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples<S> {
    bundle: RayBundle<S>,
    steps: usize,
    delta: S,
    contraction: ContractConfig,
    jitter_seed: Option<u64>,
}

impl<S: Real> RaySamples<S> {
    pub fn num_rays(&self) -> usize {
        self.bundle.len()
    }

    /// `R`: the number of segments; each ray carries `R+1` points.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn delta(&self) -> S {
        self.delta
    }

    pub fn bundle(&self) -> &RayBundle<S> {
        &self.bundle
    }

    pub fn contraction(&self) -> &ContractConfig {
        &self.contraction
    }

    pub fn direction(&self, ray: usize) -> [S; 3] {
        self.bundle.directions[ray]
    }

    /// Distance along the ray of sample `j` (pre-contraction).
    pub fn t_value(&self, ray: usize, j: usize) -> S {
        let mut t = self.bundle.near + S::from_usize(j) * self.delta;
        if let Some(seed) = self.jitter_seed {
            let mut r = Rng::stream(seed, (ray as u64) << 24 | j as u64);
            let offset = S::from_f64(r.next_f64() - 0.5) * self.delta;
            t = (t + offset).clamp(self.bundle.near, self.bundle.far);
        }
        t
    }

    /// World point before contraction.
    pub fn raw_point(&self, ray: usize, j: usize) -> [S; 3] {
        let t = self.t_value(ray, j);
        let o = self.bundle.origins[ray];
        let d = self.bundle.directions[ray];
        [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]
    }

    /// Sample point as seen by the hash structures (contraction applied).
    #[inline]
    pub fn point(&self, ray: usize, j: usize) -> [S; 3] {
        contract(self.raw_point(ray, j), &self.contraction)
    }

    pub fn convert<T: Real>(&self) -> RaySamples<T> {
        RaySamples {
            bundle: self.bundle.convert(),
            steps: self.steps,
            delta: T::from_f64(self.delta.to_f64()),
            contraction: self.contraction,
            jitter_seed: self.jitter_seed,
        }
    }
}

/// Builds the sampling schedule: `delta = (far - near) / R` exactly.
pub fn sample_points<S: Real>(
    bundle: RayBundle<S>,
    steps: usize,
    contraction: ContractConfig,
) -> Result<RaySamples<S>> {
    if steps == 0 {
        return Err(Error::Domain {
            what: "need at least one segment per ray",
        });
    }
    bundle.validate()?;
    contraction.validate()?;
    let delta = (bundle.far - bundle.near) / S::from_usize(steps);
    Ok(RaySamples {
        bundle,
        steps,
        delta,
        contraction,
        jitter_seed: None,
    })
}

/// Like [`sample_points`] but with seeded stratified jitter on the sample
/// positions; used by fitting loops, never by the deterministic goldens.
pub fn sample_points_jittered<S: Real>(
    bundle: RayBundle<S>,
    steps: usize,
    contraction: ContractConfig,
    seed: u64,
) -> Result<RaySamples<S>> {
    let mut samples = sample_points(bundle, steps, contraction)?;
    samples.jitter_seed = Some(seed);
    Ok(samples)
}
