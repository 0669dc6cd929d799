//! Static obstacle geometry as signed distance fields.
//!
//! A scene is the min-union of a few analytic primitives: negative
//! inside, positive outside, zero on the surface. Obstacle costs only
//! ever need the value and a gradient, so no meshes or broadphase here.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SdfPrimitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box given by center and half extents.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Points with `(p - point) . normal >= 0` are outside.
    HalfSpace {
        point: [f64; 3],
        normal: [f64; 3],
    },
}

impl SdfPrimitive {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            SdfPrimitive::Sphere { radius, .. } => *radius > 0.0,
            SdfPrimitive::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            SdfPrimitive::HalfSpace { normal, .. } => {
                let n = Vector3::from(*normal).norm();
                (n - 1.0).abs() < 1e-9
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "degenerate sdf primitive: {self:?}"
            )))
        }
    }

    fn eval(&self, p: &Vector3<f64>) -> f64 {
        match self {
            SdfPrimitive::Sphere { center, radius } => {
                (p - Vector3::from(*center)).norm() - radius
            }
            SdfPrimitive::Box {
                center,
                half_extents,
            } => {
                let q = (p - Vector3::from(*center)).abs() - Vector3::from(*half_extents);
                let outside = q.map(|v| v.max(0.0));
                outside.norm() + q.max().min(0.0)
            }
            SdfPrimitive::HalfSpace { point, normal } => {
                (p - Vector3::from(*point)).dot(&Vector3::from(*normal))
            }
        }
    }

    /// Gradient of the distance. Singular points get a deterministic
    /// subgradient: zero at a sphere center, and ties across box faces
    /// or corners resolved toward the lowest axis index.
    fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            SdfPrimitive::Sphere { center, .. } => {
                let d = p - Vector3::from(*center);
                let n = d.norm();
                if n < 1e-12 {
                    Vector3::zeros()
                } else {
                    d / n
                }
            }
            SdfPrimitive::Box {
                center,
                half_extents,
            } => {
                let d = p - Vector3::from(*center);
                let q = d.abs() - Vector3::from(*half_extents);
                let outside = q.map(|v| v.max(0.0));
                let n = outside.norm();
                if n > 1e-12 {
                    // Outside: differentiate |max(q, 0)| through the abs.
                    Vector3::new(
                        d.x.signum() * outside.x / n,
                        d.y.signum() * outside.y / n,
                        d.z.signum() * outside.z / n,
                    )
                } else {
                    // Inside: distance is the largest (least negative)
                    // component of q; face priority x, then y, then z.
                    let mut axis = 0;
                    for a in 1..3 {
                        if q[a] > q[axis] {
                            axis = a;
                        }
                    }
                    let mut g = Vector3::zeros();
                    g[axis] = d[axis].signum();
                    g
                }
            }
            SdfPrimitive::HalfSpace { normal, .. } => Vector3::from(*normal),
        }
    }
}

/// Min-union of primitives. An empty scene evaluates to plus infinity
/// (nothing anywhere to collide with) and a zero gradient.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    primitives: Vec<SdfPrimitive>,
}

impl Scene {
    pub fn empty() -> Self {
        Scene::default()
    }

    pub fn new(primitives: Vec<SdfPrimitive>) -> Result<Self> {
        for p in &primitives {
            p.validate()?;
        }
        Ok(Scene { primitives })
    }

    pub fn primitives(&self) -> &[SdfPrimitive] {
        &self.primitives
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn sdf_eval(&self, p: &Vector3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.eval(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Gradient of the active (minimal) primitive; ties pick the lowest
    /// index so the result is deterministic.
    pub fn sdf_gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut best: Option<(f64, &SdfPrimitive)> = None;
        for prim in &self.primitives {
            let d = prim.eval(p);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, prim));
            }
        }
        best.map_or(Vector3::zeros(), |(_, prim)| prim.gradient(p))
    }
}
