//! L0 gradient minimization by half-quadratic splitting.
//!
//! Minimizes `Σ(S - I)² + λ·C(S)`, `C` counting pixels with a nonzero gradient, through the
//! auxiliary problem `Σ(S - I)² + λ·C(h, v) + β·Σ(|∂x S - h|² + |∂y S - v|²)` with β raised
//! geometrically. Differences are circular so the S-step is an exact FFT solve.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Image;

pub const KAPPA: f64 = 2.0;
pub const BETA_MAX: f64 = 1e5;

/// One outer iteration of the solver.
#[derive(Clone, Copy, Debug)]
pub struct L0Step {
    pub beta: f64,
    /// Splitting energy at this β of the previous iterate `(S, h, v)`.
    pub energy_before: f64,
    /// Splitting energy at this β after the h-step and the S-step.
    pub energy_after: f64,
    /// `Σ(S - I)² + λ·#{nonzero gradients of S}` of the new iterate.
    pub objective: f64,
}

#[derive(Clone, Debug, Default)]
pub struct L0Trace {
    pub steps: Vec<L0Step>,
    /// Output values that had to be clamped into `[0, 1]`.
    pub clamped: usize,
}

impl L0Trace {
    /// Largest increase of the splitting energy over a single outer iteration.
    pub fn max_energy_increase(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.energy_after - s.energy_before)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct Fft2 {
    h: usize,
    w: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    irows: Arc<dyn Fft<f64>>,
    icols: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 {
            h,
            w,
            rows: p.plan_fft_forward(w),
            cols: p.plan_fft_forward(h),
            irows: p.plan_fft_inverse(w),
            icols: p.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (rows, cols) = if inverse {
            (&self.irows, &self.icols)
        } else {
            (&self.rows, &self.cols)
        };
        rows.process(buf);
        let mut col = vec![Complex64::default(); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                col[y] = buf[y * self.w + x];
            }
            cols.process(&mut col);
            for y in 0..self.h {
                buf[y * self.w + x] = col[y];
            }
        }
        if inverse {
            let s = 1.0 / (self.h * self.w) as f64;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn forward_real(&self, src: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = src.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }
}

/// Circular forward differences `(∂x, ∂y)` of one plane.
fn gradients(p: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = p[y * w + x];
            gx[y * w + x] = p[y * w + (x + 1) % w] - v;
            gy[y * w + x] = p[((y + 1) % h) * w + x] - v;
        }
    }
    (gx, gy)
}

struct State {
    s: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn energy(input: &[Vec<f64>], st: &State, lambda: f64, beta: f64, hh: usize, ww: usize) -> f64 {
    let mut fid = 0.0;
    let mut pen = 0.0;
    let mut nonzero = vec![false; hh * ww];
    for c in 0..input.len() {
        let (gx, gy) = gradients(&st.s[c], hh, ww);
        for i in 0..hh * ww {
            fid += (st.s[c][i] - input[c][i]).powi(2);
            pen += (gx[i] - st.h[c][i]).powi(2) + (gy[i] - st.v[c][i]).powi(2);
            nonzero[i] |= st.h[c][i] != 0.0 || st.v[c][i] != 0.0;
        }
    }
    fid + lambda * nonzero.iter().filter(|&&b| b).count() as f64 + beta * pen
}

fn l0_objective(input: &[Vec<f64>], s: &[Vec<f64>], lambda: f64, hh: usize, ww: usize) -> f64 {
    let mut fid = 0.0;
    let mut nonzero = vec![false; hh * ww];
    for c in 0..input.len() {
        let (gx, gy) = gradients(&s[c], hh, ww);
        for i in 0..hh * ww {
            fid += (s[c][i] - input[c][i]).powi(2);
            nonzero[i] |= gx[i] != 0.0 || gy[i] != 0.0;
        }
    }
    fid + lambda * nonzero.iter().filter(|&&b| b).count() as f64
}

/// L0 smoothing with `β₀ = 2λ`, `β ← 2β` while `β < 1e5`.
pub fn l0_smooth(img: &Image, lambda: f64) -> Result<Image> {
    l0_smooth_traced(img, lambda).map(|(out, _)| out)
}

pub fn l0_smooth_traced(img: &Image, lambda: f64) -> Result<(Image, L0Trace)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(
            "l0_smooth",
            format!("lambda must be positive, got {lambda}"),
        ));
    }
    let (hh, ww, nc) = (img.height(), img.width(), img.channels());
    let input: Vec<Vec<f64>> = (0..nc).map(|c| img.plane(c).to_vec()).collect();
    let grads: Vec<(Vec<f64>, Vec<f64>)> = input.iter().map(|p| gradients(p, hh, ww)).collect();
    if grads
        .iter()
        .all(|(gx, gy)| gx.iter().chain(gy).all(|&g| g == 0.0))
    {
        // Zero-gradient images are fixed points.
        return Ok((img.clone(), L0Trace::default()));
    }

    let fft = Fft2::new(hh, ww);
    let mut dx = vec![0.0; hh * ww];
    let mut dy = vec![0.0; hh * ww];
    dx[0] = -1.0;
    dx[(ww > 1) as usize] += 1.0;
    dy[0] = -1.0;
    dy[if hh > 1 { ww } else { 0 }] += 1.0;
    let fdx = fft.forward_real(&dx);
    let fdy = fft.forward_real(&dy);
    let denom: Vec<f64> = fdx
        .iter()
        .zip(&fdy)
        .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
        .collect();
    let finput: Vec<Vec<Complex64>> = input.iter().map(|p| fft.forward_real(p)).collect();

    let mut st = State {
        s: input.clone(),
        h: grads.iter().map(|g| g.0.clone()).collect(),
        v: grads.iter().map(|g| g.1.clone()).collect(),
    };
    let mut trace = L0Trace::default();
    let mut beta = 2.0 * lambda;
    while beta < BETA_MAX {
        let energy_before = energy(&input, &st, lambda, beta, hh, ww);

        // h-step: keep a pixel's gradient iff β·|∇S|² > λ.
        let g: Vec<(Vec<f64>, Vec<f64>)> = st.s.iter().map(|p| gradients(p, hh, ww)).collect();
        for i in 0..hh * ww {
            let mag: f64 = g.iter().map(|(gx, gy)| gx[i] * gx[i] + gy[i] * gy[i]).sum();
            let keep = mag > lambda / beta;
            for c in 0..nc {
                st.h[c][i] = if keep { g[c].0[i] } else { 0.0 };
                st.v[c][i] = if keep { g[c].1[i] } else { 0.0 };
            }
        }

        // S-step: (1 + β·DᵀD) S = I + β·Dᵀ(h, v), solved in the Fourier domain.
        for c in 0..nc {
            let mut adj = vec![0.0; hh * ww];
            for y in 0..hh {
                for x in 0..ww {
                    let i = y * ww + x;
                    let left = y * ww + (x + ww - 1) % ww;
                    let up = ((y + hh - 1) % hh) * ww + x;
                    adj[i] = st.h[c][left] - st.h[c][i] + st.v[c][up] - st.v[c][i];
                }
            }
            let fadj = fft.forward_real(&adj);
            let mut buf: Vec<Complex64> = finput[c]
                .iter()
                .zip(&fadj)
                .zip(&denom)
                .map(|((&fi, &fa), &d)| (fi + fa * beta) / (1.0 + beta * d))
                .collect();
            fft.run(&mut buf, true);
            st.s[c] = buf.iter().map(|z| z.re).collect();
        }

        let energy_after = energy(&input, &st, lambda, beta, hh, ww);
        trace.steps.push(L0Step {
            beta,
            energy_before,
            energy_after,
            objective: l0_objective(&input, &st.s, lambda, hh, ww),
        });
        beta *= KAPPA;
    }
    let raw: Vec<f64> = st.s.concat();
    trace.clamped = Image::count_out_of_range(&raw);
    if trace.clamped > 0 {
        log::debug!(
            "l0_smooth clamped {} of {} values",
            trace.clamped,
            raw.len()
        );
    }
    Ok((Image::new(nc, hh, ww, raw)?, trace))
}

/// Sum of absolute neighbor differences over all channels.
pub fn total_variation(img: &Image) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mut tv = 0.0;
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    tv += (p[y * w + x + 1] - p[y * w + x]).abs();
                }
                if y + 1 < h {
                    tv += (p[(y + 1) * w + x] - p[y * w + x]).abs();
                }
            }
        }
    }
    tv
}
