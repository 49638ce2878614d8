//! The fusion energy and its minimizers: an ADMM splitting scheme and a
//! plain conjugate-gradient solve of the normal equations that serves as an
//! independent oracle.
//!
//! The energy per band stack is
//! `1/2 ||Y - HX||^2 + lambda1/2 * sum_j ||grad_j X - G_j||^2 +
//! lambda2/2 * ||D X||^2`, which is strictly convex for lambda1 > 0, so both
//! solvers approach the same unique minimizer. Bands couple through nothing,
//! and each band is frozen the moment its own stopping rule fires, so a
//! joint solve is bitwise identical to solving bands one at a time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    apply_h, apply_h_adjoint, gradient_adjoint, gradient_forward, laplacian_adjoint,
    laplacian_apply, upsample_interp, DegradationSpec, GradientDirection,
};
use crate::raster::MultiBandImage;

const DIRECTIONS: [GradientDirection; 2] =
    [GradientDirection::Horizontal, GradientDirection::Vertical];

/// Weights, penalty, and iteration budget for the fusion model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// ADMM penalty on the gradient splitting.
    pub rho: f64,
    pub outer_iters: usize,
    pub inner_cg_iters: usize,
    pub inner_cg_tol: f64,
    pub stop_tol: f64,
    pub spec: DegradationSpec,
}

impl FusionParams {
    /// Defaults: lambda1 = 0.5, lambda2 = 0.01, rho = 2 * lambda1, inner CG
    /// tolerance 1e-6 capped at 100 iterations, 50 outer iterations.
    pub fn new(spec: DegradationSpec) -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.01,
            rho: 1.0,
            outer_iters: 50,
            inner_cg_iters: 100,
            inner_cg_tol: 1e-6,
            stop_tol: 1e-7,
            spec,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidInput("lambda weights must be >= 0".into()));
        }
        if !(self.rho > 0.0) {
            return Err(Error::InvalidInput("rho must be > 0".into()));
        }
        if !(self.inner_cg_tol > 0.0) || !(self.stop_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be > 0".into()));
        }
        Ok(())
    }
}

/// Iteration log of one solve. All sequences have length `iterations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub primal_residuals: Vec<f64>,
    /// Zero for the conjugate-gradient oracle, which has no dual variable.
    pub dual_residuals: Vec<f64>,
    pub energy_trace: Vec<f64>,
    pub converged: bool,
}

/// Evaluates the fusion energy at `x`.
pub fn energy_eval(
    x: &MultiBandImage,
    y: &MultiBandImage,
    g1: &MultiBandImage,
    g2: &MultiBandImage,
    params: &FusionParams,
) -> Result<f64> {
    params.validate()?;
    if !g1.same_shape(x) || !g2.same_shape(x) {
        return Err(Error::ShapeMismatch(
            "gradient targets must match the fused image shape".into(),
        ));
    }
    let hx = apply_h(x, &params.spec)?;
    if !hx.same_shape(y) {
        return Err(Error::ShapeMismatch(format!(
            "observed image is {}x{}x{}, H maps the fused shape to {}x{}x{}",
            y.width(),
            y.height(),
            y.bands(),
            hx.width(),
            hx.height(),
            hx.bands()
        )));
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
    };
    let mut energy = 0.5 * sq(y.samples(), hx.samples());
    for (dir, g) in DIRECTIONS.iter().zip([g1, g2]) {
        let gx = gradient_forward(x, *dir);
        energy += 0.5 * params.lambda1 * sq(gx.samples(), g.samples());
    }
    if params.lambda2 > 0.0 {
        let dx = laplacian_apply(x);
        energy += 0.5 * params.lambda2 * dx.samples().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(energy)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn plane_image(w: usize, h: usize, p: &[f64]) -> MultiBandImage {
    MultiBandImage::new(w, h, 1, p.to_vec()).expect("finite plane")
}

/// Applies `H'H + grad_weight * sum_j grad_j' grad_j + lambda2 * D'D` to one
/// band plane.
fn normal_apply(
    x: &[f64],
    w: usize,
    h: usize,
    spec: &DegradationSpec,
    grad_weight: f64,
    lambda2: f64,
) -> Result<Vec<f64>> {
    let img = plane_image(w, h, x);
    let hx = apply_h(&img, spec)?;
    let mut out = apply_h_adjoint(&hx, spec, w, h)?.samples().to_vec();
    if grad_weight > 0.0 {
        for dir in DIRECTIONS {
            let g = gradient_forward(&img, dir);
            let gt = gradient_adjoint(&g, dir);
            for (o, v) in out.iter_mut().zip(gt.samples()) {
                *o += grad_weight * v;
            }
        }
    }
    if lambda2 > 0.0 {
        let dt = laplacian_adjoint(&laplacian_apply(&img));
        for (o, v) in out.iter_mut().zip(dt.samples()) {
            *o += lambda2 * v;
        }
    }
    Ok(out)
}

/// `H'` applied to one observed band, at the fused resolution.
fn hty_band(y: &MultiBandImage, band: usize, spec: &DegradationSpec, w: usize, h: usize) -> Result<Vec<f64>> {
    let img = plane_image(y.width(), y.height(), y.band(band));
    Ok(apply_h_adjoint(&img, spec, w, h)?.samples().to_vec())
}

/// `grad_j'` applied to one plane.
fn grad_adjoint_plane(p: &[f64], w: usize, h: usize, dir: GradientDirection) -> Vec<f64> {
    gradient_adjoint(&plane_image(w, h, p), dir).samples().to_vec()
}

fn grad_plane(p: &[f64], w: usize, h: usize, dir: GradientDirection) -> Vec<f64> {
    gradient_forward(&plane_image(w, h, p), dir).samples().to_vec()
}

/// Plain conjugate gradient on `A x = b` starting from `x`, with a relative
/// residual stop. Returns the iterations spent. The caller's `x` is updated
/// in place.
fn cg_band(
    x: &mut Vec<f64>,
    b: &[f64],
    w: usize,
    h: usize,
    spec: &DegradationSpec,
    grad_weight: f64,
    lambda2: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(usize, f64)> {
    let bnorm = dot(b, b).sqrt();
    let ax = normal_apply(x, w, h, spec, grad_weight, lambda2)?;
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut rsold = dot(&r, &r);
    if !rsold.is_finite() {
        return Err(Error::Numerical("non-finite residual entering CG".into()));
    }
    let mut p = r.clone();
    let mut iters = 0;
    while iters < max_iters && rsold.sqrt() > tol * bnorm {
        let ap = normal_apply(&p, w, h, spec, grad_weight, lambda2)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!(
                "CG breakdown: curvature {pap} along search direction"
            )));
        }
        let alpha = rsold / pap;
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rsnew = dot(&r, &r);
        if !rsnew.is_finite() {
            return Err(Error::Numerical("non-finite CG iterate".into()));
        }
        let beta = rsnew / rsold;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = *ri + beta * *pi;
        }
        rsold = rsnew;
        iters += 1;
    }
    let rel = if bnorm > 0.0 { rsold.sqrt() / bnorm } else { rsold.sqrt() };
    Ok((iters, rel))
}

fn check_instance(
    y: &MultiBandImage,
    g1: &MultiBandImage,
    g2: &MultiBandImage,
    params: &FusionParams,
    hr_width: usize,
    hr_height: usize,
) -> Result<()> {
    params.validate()?;
    let r = params.spec.ratio;
    if r == 0 || y.width() * r != hr_width || y.height() * r != hr_height {
        return Err(Error::ShapeMismatch(format!(
            "observed {}x{} at ratio {r} cannot yield {hr_width}x{hr_height}",
            y.width(),
            y.height()
        )));
    }
    for g in [g1, g2] {
        if g.width() != hr_width || g.height() != hr_height || g.bands() != y.bands() {
            return Err(Error::ShapeMismatch(
                "gradient targets must be hr_width x hr_height with the observed band count"
                    .into(),
            ));
        }
    }
    Ok(())
}

fn composite(w: usize, h: usize, planes: &[Vec<f64>]) -> MultiBandImage {
    MultiBandImage::new(w, h, planes.len(), planes.concat()).expect("consistent planes")
}

/// Minimizes the fusion energy by per-band conjugate gradient on the normal
/// equations
/// `(H'H + lambda1 sum_j grad_j' grad_j + lambda2 D'D) X = H'Y + lambda1 sum_j grad_j' G_j`,
/// starting from the interpolated observation. Serves as the reference
/// answer for the ADMM solver; its iteration budget is
/// `outer_iters * inner_cg_iters`.
pub fn cg_solve(
    y: &MultiBandImage,
    g1: &MultiBandImage,
    g2: &MultiBandImage,
    params: &FusionParams,
    hr_width: usize,
    hr_height: usize,
) -> Result<(MultiBandImage, SolveReport)> {
    check_instance(y, g1, g2, params, hr_width, hr_height)?;
    let (w, h) = (hr_width, hr_height);
    let bands = y.bands();
    let x0 = upsample_interp(y, params.spec.ratio);

    let mut xs: Vec<Vec<f64>> = (0..bands).map(|b| x0.band(b).to_vec()).collect();
    let mut bs = Vec::with_capacity(bands);
    for b in 0..bands {
        let mut rhs = hty_band(y, b, &params.spec, w, h)?;
        if params.lambda1 > 0.0 {
            for (dir, g) in DIRECTIONS.iter().zip([g1, g2]) {
                let gt = grad_adjoint_plane(g.band(b), w, h, *dir);
                for (r, v) in rhs.iter_mut().zip(&gt) {
                    *r += params.lambda1 * v;
                }
            }
        }
        bs.push(rhs);
    }

    // Lockstep per-band CG with an individual freeze, so the trajectory of
    // each band matches a standalone single-band solve bitwise.
    let bnorms: Vec<f64> = bs.iter().map(|b| dot(b, b).sqrt()).collect();
    let mut rs: Vec<Vec<f64>> = Vec::with_capacity(bands);
    for b in 0..bands {
        let ax = normal_apply(&xs[b], w, h, &params.spec, params.lambda1, params.lambda2)?;
        rs.push(bs[b].iter().zip(&ax).map(|(bi, ai)| bi - ai).collect());
    }
    let mut ps: Vec<Vec<f64>> = rs.clone();
    let mut rsold: Vec<f64> = rs.iter().map(|r| dot(r, r)).collect();
    if rsold.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite residual entering CG".into()));
    }
    let mut frozen: Vec<bool> = rsold
        .iter()
        .zip(&bnorms)
        .map(|(rs, bn)| rs.sqrt() <= params.stop_tol * bn)
        .collect();

    let cap = params.outer_iters * params.inner_cg_iters;
    let mut report = SolveReport {
        iterations: 0,
        primal_residuals: Vec::new(),
        dual_residuals: Vec::new(),
        energy_trace: Vec::new(),
        converged: false,
    };
    while report.iterations < cap && frozen.iter().any(|f| !f) {
        for b in 0..bands {
            if frozen[b] {
                continue;
            }
            let ap = normal_apply(&ps[b], w, h, &params.spec, params.lambda1, params.lambda2)?;
            let pap = dot(&ps[b], &ap);
            if !(pap > 0.0) {
                return Err(Error::Numerical(format!(
                    "CG breakdown: curvature {pap} along search direction"
                )));
            }
            let alpha = rsold[b] / pap;
            for ((xi, pi), (ri, api)) in xs[b]
                .iter_mut()
                .zip(&ps[b])
                .zip(rs[b].iter_mut().zip(&ap))
            {
                *xi += alpha * pi;
                *ri -= alpha * api;
            }
            let rsnew = dot(&rs[b], &rs[b]);
            if !rsnew.is_finite() {
                return Err(Error::Numerical("non-finite CG iterate".into()));
            }
            if rsnew.sqrt() <= params.stop_tol * bnorms[b] {
                frozen[b] = true;
            }
            let beta = rsnew / rsold[b];
            for (pi, ri) in ps[b].iter_mut().zip(&rs[b]) {
                *pi = *ri + beta * *pi;
            }
            rsold[b] = rsnew;
        }
        report.iterations += 1;
        let worst = (0..bands)
            .map(|b| {
                let rn = rsold[b].sqrt();
                if bnorms[b] > 0.0 { rn / bnorms[b] } else { rn }
            })
            .fold(0.0, f64::max);
        report.primal_residuals.push(worst);
        report.dual_residuals.push(0.0);
        let x = composite(w, h, &xs);
        report.energy_trace.push(energy_eval(&x, y, g1, g2, params)?);
    }
    report.converged = frozen.iter().all(|&f| f);
    Ok((composite(w, h, &xs), report))
}

/// Minimizes the fusion energy by ADMM with the splitting `V_j = grad_j X`.
///
/// Each outer iteration solves the X subproblem with warm-started inner CG,
/// updates `V_j = (lambda1 G_j + rho (grad_j X + U_j)) / (lambda1 + rho)` in
/// closed form, and ascends the scaled duals `U_j += grad_j X - V_j`. A band
/// freezes when both its primal and dual residual norms drop below
/// `stop_tol * sqrt(#elements)` of the respective residual.
pub fn admm_fuse(
    y: &MultiBandImage,
    g1: &MultiBandImage,
    g2: &MultiBandImage,
    params: &FusionParams,
    hr_width: usize,
    hr_height: usize,
) -> Result<(MultiBandImage, SolveReport)> {
    check_instance(y, g1, g2, params, hr_width, hr_height)?;
    let (w, h) = (hr_width, hr_height);
    let plane = w * h;
    let bands = y.bands();
    let x0 = upsample_interp(y, params.spec.ratio);

    let mut xs: Vec<Vec<f64>> = (0..bands).map(|b| x0.band(b).to_vec()).collect();
    let mut vs: Vec<[Vec<f64>; 2]> = Vec::with_capacity(bands);
    let mut us: Vec<[Vec<f64>; 2]> = Vec::with_capacity(bands);
    let mut htys = Vec::with_capacity(bands);
    for b in 0..bands {
        vs.push([
            grad_plane(&xs[b], w, h, DIRECTIONS[0]),
            grad_plane(&xs[b], w, h, DIRECTIONS[1]),
        ]);
        us.push([vec![0.0; plane], vec![0.0; plane]]);
        htys.push(hty_band(y, b, &params.spec, w, h)?);
    }

    let primal_gate = params.stop_tol * ((2 * plane) as f64).sqrt();
    let dual_gate = params.stop_tol * (plane as f64).sqrt();
    let mut frozen = vec![false; bands];
    let mut last_primal = vec![f64::INFINITY; bands];
    let mut last_dual = vec![f64::INFINITY; bands];
    let mut report = SolveReport {
        iterations: 0,
        primal_residuals: Vec::new(),
        dual_residuals: Vec::new(),
        energy_trace: Vec::new(),
        converged: false,
    };

    while report.iterations < params.outer_iters && frozen.iter().any(|f| !f) {
        for b in 0..bands {
            if frozen[b] {
                continue;
            }
            let mut rhs = htys[b].clone();
            for (j, dir) in DIRECTIONS.iter().enumerate() {
                let diff: Vec<f64> = vs[b][j]
                    .iter()
                    .zip(&us[b][j])
                    .map(|(v, u)| v - u)
                    .collect();
                let gt = grad_adjoint_plane(&diff, w, h, *dir);
                for (r, v) in rhs.iter_mut().zip(&gt) {
                    *r += params.rho * v;
                }
            }
            cg_band(
                &mut xs[b],
                &rhs,
                w,
                h,
                &params.spec,
                params.rho,
                params.lambda2,
                params.inner_cg_tol,
                params.inner_cg_iters,
            )?;

            let mut primal_sq = 0.0;
            let mut dual_change = vec![0.0; plane];
            for (j, dir) in DIRECTIONS.iter().enumerate() {
                let gx = grad_plane(&xs[b], w, h, *dir);
                let v_new: Vec<f64> = g_targets(g1, g2, j, b)
                    .iter()
                    .zip(gx.iter().zip(&us[b][j]))
                    .map(|(g, (gxv, u))| {
                        (params.lambda1 * g + params.rho * (gxv + u))
                            / (params.lambda1 + params.rho)
                    })
                    .collect();
                let delta: Vec<f64> = v_new
                    .iter()
                    .zip(&vs[b][j])
                    .map(|(new, old)| new - old)
                    .collect();
                let dt = grad_adjoint_plane(&delta, w, h, *dir);
                for (acc, v) in dual_change.iter_mut().zip(&dt) {
                    *acc += v;
                }
                for ((u, gxv), vn) in us[b][j].iter_mut().zip(&gx).zip(&v_new) {
                    *u += gxv - vn;
                    let p = gxv - vn;
                    primal_sq += p * p;
                }
                vs[b][j] = v_new;
            }
            let primal = primal_sq.sqrt();
            let dual = params.rho * dot(&dual_change, &dual_change).sqrt();
            if !primal.is_finite() || !dual.is_finite() {
                return Err(Error::Numerical("non-finite ADMM iterate".into()));
            }
            last_primal[b] = primal;
            last_dual[b] = dual;
            if primal < primal_gate && dual < dual_gate {
                frozen[b] = true;
            }
        }
        report.iterations += 1;
        report
            .primal_residuals
            .push(last_primal.iter().cloned().fold(0.0, f64::max));
        report
            .dual_residuals
            .push(last_dual.iter().cloned().fold(0.0, f64::max));
        let x = composite(w, h, &xs);
        report.energy_trace.push(energy_eval(&x, y, g1, g2, params)?);
    }
    report.converged = frozen.iter().all(|&f| f);
    Ok((composite(w, h, &xs), report))
}

fn g_targets<'a>(
    g1: &'a MultiBandImage,
    g2: &'a MultiBandImage,
    direction: usize,
    band: usize,
) -> &'a [f64] {
    if direction == 0 { g1.band(band) } else { g2.band(band) }
}
