//! Not-a-knot cubic spline `y = S(x)` through the free-surface nodes.

use std::fmt::Write as _;

use crate::error::{Result, SwellError};

/// Piecewise cubic `S_i(x) = a_i (x-x_i)^3 + b_i (x-x_i)^2 + c_i (x-x_i) + d_i`.
#[derive(Debug, Clone)]
pub struct SurfaceSpline {
    pub knots: Vec<f64>,
    /// `(a_i, b_i, c_i, d_i)` for each of the `N - 1` segments
    pub segment_coeffs: Vec<[f64; 4]>,
}

const RANGE_TOL: f64 = 1e-10;

/// Fits the not-a-knot interpolating spline through `points`.
pub fn fit_spline(points: &[(f64, f64)]) -> Result<SurfaceSpline> {
    let n = points.len();
    if n < 4 {
        return Err(SwellError::InvalidArgument(format!(
            "not-a-knot spline needs at least 4 points, got {n}"
        )));
    }
    if let Some(w) = points.windows(2).find(|w| !(w[1].0 > w[0].0)) {
        return Err(SwellError::SurfaceFold(format!(
            "abscissae not strictly increasing near x = {}",
            w[0].0
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let slope: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();

    // unknowns: second derivatives m_1 .. m_{n-2}; m_0 and m_{n-1} are
    // eliminated through the not-a-knot closures
    let k = n - 2;
    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for r in 0..k {
        let i = r + 1;
        sub[r] = h[i - 1];
        diag[r] = 2.0 * (h[i - 1] + h[i]);
        sup[r] = h[i];
        rhs[r] = 6.0 * (slope[i] - slope[i - 1]);
    }
    // m_0 = ((h0 + h1) m_1 - h0 m_2) / h1
    let (h0, h1) = (h[0], h[1]);
    diag[0] += h0 * (h0 + h1) / h1;
    sup[0] -= h0 * h0 / h1;
    // m_{n-1} = ((hl + hp) m_{n-2} - hl m_{n-3}) / hp  with hl = h[n-2], hp = h[n-3]
    let (hl, hp) = (h[n - 2], h[n - 3]);
    diag[k - 1] += hl * (hl + hp) / hp;
    sub[k - 1] -= hl * hl / hp;

    let inner = if k == 2 {
        // with four points the closures couple both unknowns directly
        let (a, b, c, d) = (diag[0], sup[0], sub[1], diag[1]);
        let det = a * d - b * c;
        vec![(d * rhs[0] - b * rhs[1]) / det, (a * rhs[1] - c * rhs[0]) / det]
    } else {
        thomas(&sub, &diag, &sup, &rhs)?
    };
    let mut m = vec![0.0; n];
    m[1..n - 1].copy_from_slice(&inner);
    m[0] = ((h0 + h1) * m[1] - h0 * m[2]) / h1;
    m[n - 1] = ((hl + hp) * m[n - 2] - hl * m[n - 3]) / hp;

    let segment_coeffs = (0..n - 1)
        .map(|i| {
            let a = (m[i + 1] - m[i]) / (6.0 * h[i]);
            let b = 0.5 * m[i];
            let c = slope[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
            [a, b, c, y[i]]
        })
        .collect();
    Ok(SurfaceSpline {
        knots: x,
        segment_coeffs,
    })
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(SwellError::Singular("spline tridiagonal system"));
    }
    c[0] = sup[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if beta == 0.0 {
            return Err(SwellError::Singular("spline tridiagonal system"));
        }
        c[i] = sup[i] / beta;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

impl SurfaceSpline {
    fn segment(&self, x: f64) -> Result<(usize, f64)> {
        let lo = self.knots[0];
        let hi = *self.knots.last().unwrap();
        let tol = RANGE_TOL * (1.0 + (hi - lo).abs());
        if !(x >= lo - tol && x <= hi + tol) {
            return Err(SwellError::OutOfRange {
                what: "spline abscissa",
                value: x,
                range: format!("[{lo}, {hi}]"),
            });
        }
        let i = self.knots.partition_point(|&k| k <= x).clamp(1, self.knots.len() - 1) - 1;
        Ok((i, x - self.knots[i]))
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        let (i, t) = self.segment(x)?;
        let [a, b, c, d] = self.segment_coeffs[i];
        Ok(((a * t + b) * t + c) * t + d)
    }

    pub fn slope(&self, x: f64) -> Result<f64> {
        let (i, t) = self.segment(x)?;
        let [a, b, c, _] = self.segment_coeffs[i];
        Ok((3.0 * a * t + 2.0 * b) * t + c)
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        let (i, t) = self.segment(x)?;
        let [a, b, _, _] = self.segment_coeffs[i];
        Ok(6.0 * a * t + 2.0 * b)
    }

    pub fn third_derivative(&self, segment: usize) -> f64 {
        6.0 * self.segment_coeffs[segment][0]
    }

    /// Unit normal `(-S', 1) / sqrt(1 + S'^2)`, pointing out of the fluid.
    pub fn normal_at(&self, x: f64) -> Result<[f64; 2]> {
        let s = self.slope(x)?;
        let norm = (1.0 + s * s).sqrt();
        Ok([-s / norm, 1.0 / norm])
    }

    /// Curvature `|S''| / (1 + S'^2)^{3/2}`.
    pub fn curvature_at(&self, x: f64) -> Result<f64> {
        let s = self.slope(x)?;
        let s2 = self.second_derivative(x)?;
        Ok(s2.abs() / (1.0 + s * s).powf(1.5))
    }

    /// `S'' / (1 + S'^2)^{3/2}`; negative where the surface bulges outward.
    pub fn signed_curvature_at(&self, x: f64) -> Result<f64> {
        let s = self.slope(x)?;
        let s2 = self.second_derivative(x)?;
        Ok(s2 / (1.0 + s * s).powf(1.5))
    }

    /// CSV rows `x,S,dS,kappa` sampled at the knots.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,S,dS,kappa\n");
        for &x in &self.knots {
            // knots are in range by construction
            let _ = writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e}",
                x,
                self.value(x).unwrap(),
                self.slope(x).unwrap(),
                self.curvature_at(x).unwrap()
            );
        }
        out
    }
}
