//! Least-squares recovery of the exposure twist from flow and depth.
//!
//! Every valid pixel contributes two linear equations in
//! `x = [t_x, t_y, t_z, theta_x, theta_y, theta_z]`. The equations are
//! accumulated straight into the 6x6 normal equations so memory stays
//! constant in the image size, and the small system is solved with an
//! equilibrated Cholesky factorization plus one refinement step.
//!
//! Accumulation is split into fixed blocks of sampled rows. Blocks are reduced
//! in parallel and combined in block order, so results are bit-identical for
//! any thread count.

use nalgebra::{Cholesky, Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, FlowField, Intrinsics, Twist, Vec3};

/// Condition number of `A^T A` above which the geometry is rejected.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

/// Minimum number of pixels (two equations each) for a solve.
pub const MIN_PIXELS: usize = 3;

const BLOCK_ROWS: usize = 16;

/// The two rows of the design matrix contributed by a pixel at centered
/// coordinates `(px, py)` with depth `d` and focal length `f`.
#[inline]
pub fn design_rows(px: f64, py: f64, d: f64, f: f64) -> [[f64; 6]; 2] {
    let inv_d = 1.0 / d;
    [
        [
            -f * inv_d,
            0.0,
            px * inv_d,
            px * py / f,
            -(px * px + f * f) / f,
            py,
        ],
        [
            0.0,
            -f * inv_d,
            py * inv_d,
            (py * py + f * f) / f,
            -px * py / f,
            -px,
        ],
    ]
}

/// Accumulated normal equations `A^T A x = A^T b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub ata: Matrix6<f64>,
    pub atb: Vector6<f64>,
    pub count: usize,
}

impl Default for LinearSystem {
    fn default() -> Self {
        Self {
            ata: Matrix6::zeros(),
            atb: Vector6::zeros(),
            count: 0,
        }
    }
}

/// Upper triangle of `A^T A` packed row-major, plus `A^T b`.
#[derive(Clone, Copy)]
struct Partial {
    upper: [f64; 21],
    atb: [f64; 6],
    count: usize,
}

impl Partial {
    const ZERO: Partial = Partial {
        upper: [0.0; 21],
        atb: [0.0; 6],
        count: 0,
    };

    #[inline]
    fn add(&mut self, rows: &[[f64; 6]; 2], b: [f64; 2]) {
        let [r1, r2] = rows;
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                self.upper[k] += r1[i] * r1[j] + r2[i] * r2[j];
                k += 1;
            }
            self.atb[i] += r1[i] * b[0] + r2[i] * b[1];
        }
        self.count += 1;
    }

    fn merge(mut self, other: &Partial) -> Partial {
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += b;
        }
        for (a, b) in self.atb.iter_mut().zip(&other.atb) {
            *a += b;
        }
        self.count += other.count;
        self
    }

    fn into_system(self) -> LinearSystem {
        let mut ata = Matrix6::zeros();
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                ata[(i, j)] = self.upper[k];
                ata[(j, i)] = self.upper[k];
                k += 1;
            }
        }
        LinearSystem {
            ata,
            atb: Vector6::from_column_slice(&self.atb),
            count: self.count,
        }
    }
}

/// Validated view of a flow/depth pair sampled at a fixed stride.
struct Samples<'a> {
    flow: &'a FlowField,
    depth: &'a DepthMap,
    intrinsics: &'a Intrinsics,
    focal: f64,
    stride: usize,
}

impl<'a> Samples<'a> {
    fn new(
        flow: &'a FlowField,
        depth: &'a DepthMap,
        intrinsics: &'a Intrinsics,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        if flow.dims() != depth.dims() {
            return Err(Error::DimensionMismatch {
                expected: flow.dims(),
                found: depth.dims(),
            });
        }
        if depth.dims() != intrinsics.dims() {
            return Err(Error::DimensionMismatch {
                expected: intrinsics.dims(),
                found: depth.dims(),
            });
        }
        Ok(Self {
            flow,
            depth,
            intrinsics,
            focal: intrinsics.focal()?,
            stride,
        })
    }

    /// Sampled row indices grouped into fixed-size blocks.
    fn row_blocks(&self) -> Vec<Vec<usize>> {
        let rows: Vec<usize> = (0..self.depth.height()).step_by(self.stride).collect();
        rows.chunks(BLOCK_ROWS).map(|c| c.to_vec()).collect()
    }

    /// Calls `f(x, y, rows, b)` for every sampled pixel valid in both inputs.
    #[inline]
    fn for_each_in_row(&self, y: usize, mut f: impl FnMut(usize, &[[f64; 6]; 2], [f64; 2], f64)) {
        let width = self.depth.width();
        for x in (0..width).step_by(self.stride) {
            let (Some(d), Some(b)) = (self.depth.get(x, y), self.flow.get(x, y)) else {
                continue;
            };
            let p = self.intrinsics.center(x as f64, y as f64);
            let rows = design_rows(p.x, p.y, d, self.focal);
            f(x, &rows, b, d);
        }
    }

    fn accumulate(&self) -> LinearSystem {
        let partials: Vec<Partial> = self
            .row_blocks()
            .par_iter()
            .map(|block| {
                let mut acc = Partial::ZERO;
                for &y in block {
                    self.for_each_in_row(y, |_, rows, b, _| acc.add(rows, b));
                }
                acc
            })
            .collect();
        partials
            .iter()
            .fold(Partial::ZERO, |acc, p| acc.merge(p))
            .into_system()
    }

    fn residual_sum_sq(&self, x: &Vector6<f64>) -> f64 {
        let x = x.as_slice();
        let partials: Vec<f64> = self
            .row_blocks()
            .par_iter()
            .map(|block| {
                let mut sum = 0.0;
                for &y in block {
                    self.for_each_in_row(y, |_, rows, b, _| {
                        for (row, bk) in rows.iter().zip(b) {
                            let r = bk - dot6(row, x);
                            sum += r * r;
                        }
                    });
                }
                sum
            })
            .collect();
        partials.iter().sum()
    }
}

#[inline]
fn dot6(a: &[f64; 6], b: &[f64]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3] + a[4] * b[4] + a[5] * b[5]
}

/// Builds the normal equations from every valid pixel on a `stride` grid.
pub fn accumulate_system(
    flow: &FlowField,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    stride: usize,
) -> Result<LinearSystem> {
    Ok(Samples::new(flow, depth, intrinsics, stride)?.accumulate())
}

/// Cholesky factor of the diagonally equilibrated normal matrix.
struct Factorization {
    ata: Matrix6<f64>,
    scale: Vector6<f64>,
    chol: Cholesky<f64, nalgebra::U6>,
}

impl Factorization {
    fn solve_once(&self, rhs: &Vector6<f64>) -> Vector6<f64> {
        let y = self.chol.solve(&rhs.component_mul(&self.scale));
        y.component_mul(&self.scale)
    }

    /// Solve with one step of iterative refinement.
    fn solve(&self, rhs: &Vector6<f64>) -> Vector6<f64> {
        let x = self.solve_once(rhs);
        let r = rhs - self.ata * x;
        x + self.solve_once(&r)
    }
}

impl LinearSystem {
    /// 2-norm condition number of `A^T A` (infinite when singular).
    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::new(self.ata);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > 0.0) || !max.is_finite() {
            f64::INFINITY
        } else {
            (max / min).max(1.0)
        }
    }

    fn factorize(&self, max_condition: f64) -> Result<(Factorization, f64)> {
        let condition = if self.count < MIN_PIXELS {
            f64::INFINITY
        } else {
            self.condition_number()
        };
        let degenerate = || Error::Degenerate {
            count: self.count,
            condition,
        };
        if !(condition <= max_condition) {
            return Err(degenerate());
        }
        let diag = self.ata.diagonal();
        if diag.iter().any(|&v| !(v > 0.0)) {
            return Err(degenerate());
        }
        let scale = diag.map(|v| 1.0 / v.sqrt());
        let scaled = Matrix6::from_fn(|i, j| self.ata[(i, j)] * scale[i] * scale[j]);
        let chol = Cholesky::new(scaled).ok_or_else(degenerate)?;
        Ok((
            Factorization {
                ata: self.ata,
                scale,
                chol,
            },
            condition,
        ))
    }

    /// Least-squares solution and the condition number it was accepted with.
    pub fn solve(&self, max_condition: f64) -> Result<(Twist, f64)> {
        let (fact, condition) = self.factorize(max_condition)?;
        Ok((Twist::from_vector(&fact.solve(&self.atb)), condition))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub stride: usize,
    pub max_condition: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            max_condition: DEFAULT_MAX_CONDITION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub twist: Twist,
    pub condition_number: f64,
    /// RMS over all scalar equations, in pixels.
    pub residual_rms: f64,
    pub pixels_used: usize,
}

/// Accumulates, solves and reports diagnostics for one flow/depth pair.
pub fn solve_twist(
    flow: &FlowField,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    options: &SolveOptions,
) -> Result<SolverReport> {
    let samples = Samples::new(flow, depth, intrinsics, options.stride)?;
    let system = samples.accumulate();
    let (twist, condition_number) = system.solve(options.max_condition)?;
    let sum_sq = samples.residual_sum_sq(&twist.to_vector());
    Ok(SolverReport {
        twist,
        condition_number,
        residual_rms: (sum_sq / (2 * system.count) as f64).sqrt(),
        pixels_used: system.count,
    })
}

/// Instantaneous velocity: angular `omega` (rad/s) and linear `v` (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Velocity {
    pub omega: Vec3,
    pub v: Vec3,
}

/// Divides the exposure twist by the exposure time.
pub fn twist_to_velocity(twist: &Twist, exposure_s: f64) -> Result<Velocity> {
    if !(exposure_s > 0.0) || !exposure_s.is_finite() {
        return Err(Error::NonPositiveTime(exposure_s));
    }
    Ok(Velocity {
        omega: twist.theta / exposure_s,
        v: twist.t / exposure_s,
    })
}

/// Vector-Jacobian products of the solved twist with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGradients {
    pub twist: Twist,
    pub width: usize,
    pub height: usize,
    /// `dL/dF` per pixel, row-major; zero where the pixel did not contribute.
    pub flow: Vec<[f64; 2]>,
    /// `dL/dd` per pixel, row-major; zero where the pixel did not contribute.
    pub depth: Vec<f64>,
}

impl SolutionGradients {
    pub fn flow_at(&self, x: usize, y: usize) -> [f64; 2] {
        self.flow[y * self.width + x]
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }
}

/// Backpropagates an upstream gradient `adjoint = dL/dx` through the solve.
///
/// With `M = A^T A`, `lambda = M^{-1} adjoint` and residual `r = b - A x`:
/// `dL/db = A lambda`, and per pixel
/// `dL/dd = sum_rows r (dA/dd . lambda) - (A lambda)(dA/dd . x)`.
pub fn solution_gradients(
    flow: &FlowField,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    options: &SolveOptions,
    adjoint: &Vector6<f64>,
) -> Result<SolutionGradients> {
    let samples = Samples::new(flow, depth, intrinsics, options.stride)?;
    let system = samples.accumulate();
    let (fact, _) = system.factorize(options.max_condition)?;
    let x = fact.solve(&system.atb);
    let lambda = fact.solve(adjoint);
    let (xs, ls) = (x.as_slice(), lambda.as_slice());
    let f = samples.focal;

    let (width, height) = depth.dims();
    let mut flow_grad = vec![[0.0; 2]; width * height];
    let mut depth_grad = vec![0.0; width * height];
    flow_grad
        .par_chunks_mut(width)
        .zip(depth_grad.par_chunks_mut(width))
        .enumerate()
        .filter(|(y, _)| y % options.stride == 0)
        .for_each(|(y, (fg_row, dg_row))| {
            samples.for_each_in_row(y, |px_idx, rows, b, d| {
                let p = intrinsics.center(px_idx as f64, y as f64);
                let inv_d2 = 1.0 / (d * d);
                let drows = [
                    [f * inv_d2, 0.0, -p.x * inv_d2, 0.0, 0.0, 0.0],
                    [0.0, f * inv_d2, -p.y * inv_d2, 0.0, 0.0, 0.0],
                ];
                let mut grad_d = 0.0;
                for k in 0..2 {
                    let a_lambda = dot6(&rows[k], ls);
                    let r = b[k] - dot6(&rows[k], xs);
                    fg_row[px_idx][k] = a_lambda;
                    grad_d += r * dot6(&drows[k], ls) - a_lambda * dot6(&drows[k], xs);
                }
                dg_row[px_idx] = grad_d;
            });
        });

    Ok(SolutionGradients {
        twist: Twist::from_vector(&x),
        width,
        height,
        flow: flow_grad,
        depth: depth_grad,
    })
}
