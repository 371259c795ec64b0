//! Target functions to approximate: callables with gradients, plus optional
//! sharp-layer metadata that integration routines use to place graded
//! quadrature around the layer.

use crate::spline_space::{AxisSides, DofFunction, Point, SIDES_DEFAULT};

/// Description of a straight sharp layer: the target varies like
/// `f((n·x - offset) / width)` with `n` a unit normal.
#[derive(Clone, Copy, Debug)]
pub struct Layer {
    pub normal: [f64; 2],
    pub offset: f64,
    pub width: f64,
}

impl Layer {
    /// Signed distance of `x` from the layer along the normal.
    pub fn coordinate(&self, x: Point) -> f64 {
        self.normal[0] * x[0] + self.normal[1] * x[1] - self.offset
    }
}

/// A function to approximate: value, gradient, and optional layer metadata.
///
/// Targets with interface jumps (members of discontinuous spline spaces)
/// override the traced variants so interface integrals see one-sided limits;
/// smooth targets keep the defaults.
pub trait TargetFn: Sync + Send {
    fn value(&self, x: Point) -> f64;
    fn gradient(&self, x: Point) -> [f64; 2];
    fn layer(&self) -> Option<Layer> {
        None
    }

    fn value_traced(&self, x: Point, _sides: AxisSides) -> f64 {
        self.value(x)
    }

    fn gradient_traced(&self, x: Point, _sides: AxisSides) -> [f64; 2] {
        self.gradient(x)
    }
}

/// Smoothed step `tanh((x - a) / eps)` in 1D.
#[derive(Clone, Copy, Debug)]
pub struct TanhStep1d {
    pub a: f64,
    pub eps: f64,
}

impl TargetFn for TanhStep1d {
    fn value(&self, x: Point) -> f64 {
        ((x[0] - self.a) / self.eps).tanh()
    }

    fn gradient(&self, x: Point) -> [f64; 2] {
        let t = ((x[0] - self.a) / self.eps).tanh();
        [(1.0 - t * t) / self.eps, 0.0]
    }

    fn layer(&self) -> Option<Layer> {
        Some(Layer {
            normal: [1.0, 0.0],
            offset: self.a,
            width: self.eps,
        })
    }
}

/// Smoothed skew step `tanh((y - x - c) / eps)` in 2D.
#[derive(Clone, Copy, Debug)]
pub struct TanhSkewStep2d {
    pub c: f64,
    pub eps: f64,
}

impl TargetFn for TanhSkewStep2d {
    fn value(&self, x: Point) -> f64 {
        ((x[1] - x[0] - self.c) / self.eps).tanh()
    }

    fn gradient(&self, x: Point) -> [f64; 2] {
        let t = ((x[1] - x[0] - self.c) / self.eps).tanh();
        let d = (1.0 - t * t) / self.eps;
        [-d, d]
    }

    fn layer(&self) -> Option<Layer> {
        let s = std::f64::consts::SQRT_2;
        // (y - x - c)/eps = (n.x - c/sqrt(2)) / (eps/sqrt(2)) with unit n.
        Some(Layer {
            normal: [-1.0 / s, 1.0 / s],
            offset: self.c / s,
            width: self.eps / s,
        })
    }
}

/// Target backed by closures; used by tests and custom callers.
pub struct CallableTarget<F, G>
where
    F: Fn(Point) -> f64 + Sync + Send,
    G: Fn(Point) -> [f64; 2] + Sync + Send,
{
    pub f: F,
    pub grad: G,
    pub layer: Option<Layer>,
}

impl<F, G> TargetFn for CallableTarget<F, G>
where
    F: Fn(Point) -> f64 + Sync + Send,
    G: Fn(Point) -> [f64; 2] + Sync + Send,
{
    fn value(&self, x: Point) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: Point) -> [f64; 2] {
        (self.grad)(x)
    }

    fn layer(&self) -> Option<Layer> {
        self.layer
    }
}

/// A spline function viewed as a target; traces are side-aware so even
/// discontinuous members behave correctly inside interface integrals.
impl TargetFn for DofFunction {
    fn value(&self, x: Point) -> f64 {
        DofFunction::value(self, x, SIDES_DEFAULT).unwrap()
    }

    fn gradient(&self, x: Point) -> [f64; 2] {
        DofFunction::gradient(self, x, SIDES_DEFAULT).unwrap()
    }

    fn value_traced(&self, x: Point, sides: AxisSides) -> f64 {
        DofFunction::value(self, x, sides).unwrap()
    }

    fn gradient_traced(&self, x: Point, sides: AxisSides) -> [f64; 2] {
        DofFunction::gradient(self, x, sides).unwrap()
    }
}
