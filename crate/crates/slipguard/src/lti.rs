//! Continuous-time transfer-function arithmetic, frequency response, margin
//! solvers and Tustin discretization to difference equations.
//!
//! Transfer functions are delayed rational functions of `s`. Polynomials are
//! stored as coefficient vectors in ascending degree, so `[1.0, 3.0, 2.0]`
//! encodes `1 + 3s + 2s^2`. The transport delay is kept exact in the margin
//! math (phase `-omega*tau`) and quantized to a sample FIFO when discretized.

use num_complex::Complex64;
use std::collections::VecDeque;
use std::f64::consts::PI;
use thiserror::Error;

/// Frequency range scanned for unit-gain crossings, in rad/s.
pub const CROSSOVER_SCAN_RANGE: (f64, f64) = (1e-3, 1e6);
/// Points in the log-spaced crossover/phase scan grid.
const SCAN_POINTS: usize = 2000;
/// Relative bisection tolerance for the crossover solver.
const CROSSOVER_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("invalid transfer function: {0}")]
    Invalid(String),
    #[error("evaluation at pole: denominator vanishes at j*{omega}")]
    EvaluationAtPole { omega: f64 },
    #[error("no unit-gain crossover found in [{lo:.0e}, {hi:.0e}] rad/s")]
    NoCrossover { lo: f64, hi: f64 },
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

/// Gain-crossover frequency and phase margin of a loop transfer function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopMargins {
    /// Gain-crossover frequency in rad/s.
    pub omega_c: f64,
    /// Phase margin in degrees.
    pub phi_m_deg: f64,
}

/// Delayed rational transfer function `num(s)/den(s) * e^{-s*delay}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTf {
    num: Vec<f64>,
    den: Vec<f64>,
    delay: f64,
}

fn trim_trailing_zeros(mut p: Vec<f64>) -> Vec<f64> {
    while p.len() > 1 && *p.last().unwrap() == 0.0 {
        p.pop();
    }
    p
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_eval(p: &[f64], s: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in p.iter().rev() {
        acc = acc * s + c;
    }
    acc
}

impl RationalTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, LtiError> {
        Self::with_delay(num, den, 0.0)
    }

    pub fn with_delay(num: Vec<f64>, den: Vec<f64>, delay: f64) -> Result<Self, LtiError> {
        if delay < 0.0 || !delay.is_finite() {
            return Err(LtiError::Invalid(format!("delay must be >= 0, got {delay}")));
        }
        let num = trim_trailing_zeros(num);
        let den = trim_trailing_zeros(den);
        if num.is_empty() {
            return Err(LtiError::Invalid("empty numerator".into()));
        }
        if den.iter().all(|&c| c == 0.0) {
            return Err(LtiError::Invalid("denominator has no nonzero coefficient".into()));
        }
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(LtiError::Invalid("non-finite coefficient".into()));
        }
        Ok(Self { num, den, delay })
    }

    /// Static gain block `k`.
    pub fn gain(k: f64) -> Self {
        Self { num: vec![k], den: vec![1.0], delay: 0.0 }
    }

    /// Pure transport delay of `tau` seconds.
    pub fn pure_delay(tau: f64) -> Result<Self, LtiError> {
        Self::with_delay(vec![1.0], vec![1.0], tau)
    }

    pub fn num_coeffs(&self) -> &[f64] {
        &self.num
    }

    pub fn den_coeffs(&self) -> &[f64] {
        &self.den
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn num_degree(&self) -> usize {
        self.num.len() - 1
    }

    pub fn den_degree(&self) -> usize {
        self.den.len() - 1
    }

    /// Evaluates `num(j*omega)/den(j*omega) * e^{-j*omega*delay}`.
    pub fn freq_response(&self, omega: f64) -> Result<Complex64, LtiError> {
        let g = self.rational_response(omega)?;
        let phase = -omega * self.delay;
        Ok(g * Complex64::new(phase.cos(), phase.sin()))
    }

    /// Frequency response of the rational part only (delay excluded).
    fn rational_response(&self, omega: f64) -> Result<Complex64, LtiError> {
        let s = Complex64::new(0.0, omega);
        let d = poly_eval(&self.den, s);
        if d.norm() == 0.0 {
            return Err(LtiError::EvaluationAtPole { omega });
        }
        Ok(poly_eval(&self.num, s) / d)
    }

    /// Series composition: polynomial products, delays add.
    pub fn series(&self, other: &Self) -> Self {
        Self {
            num: trim_trailing_zeros(poly_mul(&self.num, &other.num)),
            den: trim_trailing_zeros(poly_mul(&self.den, &other.den)),
            delay: self.delay + other.delay,
        }
    }

    /// Finds the gain-crossover frequency `omega_c` with `|L(j*omega_c)| = 1`.
    ///
    /// Scans a log-spaced grid over [`CROSSOVER_SCAN_RANGE`]; when several
    /// unit-gain crossings exist the largest one is returned, then refined by
    /// bisection. The delay does not affect magnitude, so it is ignored here.
    pub fn crossover_frequency(&self) -> Result<f64, LtiError> {
        let (lo, hi) = CROSSOVER_SCAN_RANGE;
        let mag_err = |omega: f64| -> Result<f64, LtiError> {
            Ok(self.rational_response(omega)?.norm() - 1.0)
        };

        let ratio = (hi / lo).powf(1.0 / (SCAN_POINTS - 1) as f64);
        let mut bracket: Option<(f64, f64)> = None;
        let mut prev_omega = lo;
        let mut prev_err = mag_err(lo)?;
        for i in 1..SCAN_POINTS {
            let omega = lo * ratio.powi(i as i32);
            let err = mag_err(omega)?;
            if prev_err == 0.0 {
                bracket = Some((prev_omega, prev_omega));
            } else if prev_err.signum() != err.signum() {
                bracket = Some((prev_omega, omega));
            }
            prev_omega = omega;
            prev_err = err;
        }
        if prev_err == 0.0 {
            bracket = Some((prev_omega, prev_omega));
        }

        let (mut a, mut b) = bracket.ok_or(LtiError::NoCrossover { lo, hi })?;
        if a == b {
            return Ok(a);
        }
        let mut fa = mag_err(a)?;
        while (b - a) / a > CROSSOVER_REL_TOL {
            let mid = 0.5 * (a + b);
            let fm = mag_err(mid)?;
            if fm == 0.0 {
                return Ok(mid);
            }
            if fa.signum() == fm.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Phase margin in degrees at the given crossover frequency.
    ///
    /// The phase of the rational part is unwrapped by accumulating principal
    /// differences along a log-spaced grid from low frequency up to `omega_c`;
    /// the delay contribution `-omega_c*delay` is exact, added separately.
    pub fn phase_margin(&self, omega_c: f64) -> Result<f64, LtiError> {
        let start = (omega_c * 1e-6).min(CROSSOVER_SCAN_RANGE.0);
        let ratio = (omega_c / start).powf(1.0 / (SCAN_POINTS - 1) as f64);

        let mut phase = self.rational_response(start)?.arg();
        // Loops of interest start with nonpositive phase (integrator or lag
        // dominated); fold a positive principal value at the low end back.
        if phase > 1e-9 {
            phase -= 2.0 * PI;
        }
        let mut prev_arg = phase;
        for i in 1..SCAN_POINTS {
            let omega = start * ratio.powi(i as i32);
            let arg = self.rational_response(omega)?.arg();
            let mut d = arg - prev_arg;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
            }
            phase += d;
            prev_arg = arg;
        }
        phase -= omega_c * self.delay;
        Ok(180.0 + phase.to_degrees())
    }

    /// Crossover frequency and phase margin in one call.
    pub fn margins(&self) -> Result<LoopMargins, LtiError> {
        let omega_c = self.crossover_frequency()?;
        let phi_m_deg = self.phase_margin(omega_c)?;
        Ok(LoopMargins { omega_c, phi_m_deg })
    }

    /// Bilinear (Tustin) discretization: `s <- (2/dt)(z-1)/(z+1)`.
    ///
    /// The transport delay is rounded to the nearest integer multiple of `dt`
    /// and realized as a sample FIFO on the input.
    pub fn discretize_tustin(&self, dt: f64) -> Result<DiscreteLti, LtiError> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(LtiError::InvalidTimeStep(dt));
        }
        let n = self.den_degree();
        if self.num_degree() > n {
            return Err(LtiError::Invalid(
                "improper transfer function cannot be discretized".into(),
            ));
        }
        let c = 2.0 / dt;

        // num(s)/den(s) with s = c(z-1)/(z+1); multiply through by (z+1)^n.
        let map_poly = |p: &[f64]| -> Vec<f64> {
            let mut acc = vec![0.0; n + 1];
            for (k, &coeff) in p.iter().enumerate() {
                let mut term = vec![coeff * c.powi(k as i32)];
                for _ in 0..k {
                    term = poly_mul(&term, &[-1.0, 1.0]); // (z - 1)
                }
                for _ in 0..(n - k) {
                    term = poly_mul(&term, &[1.0, 1.0]); // (z + 1)
                }
                for (i, t) in term.into_iter().enumerate() {
                    acc[i] += t;
                }
            }
            acc
        };
        let bz = map_poly(&self.num); // ascending in z
        let az = map_poly(&self.den);
        let lead = az[n];
        if lead == 0.0 {
            return Err(LtiError::Invalid("degenerate discretization".into()));
        }

        let input_coeffs: Vec<f64> = (0..=n).map(|i| bz[n - i] / lead).collect();
        let output_coeffs: Vec<f64> = (1..=n).map(|i| az[n - i] / lead).collect();
        let delay_samples = (self.delay / dt).round() as usize;

        Ok(DiscreteLti {
            input_coeffs,
            output_coeffs,
            u_hist: vec![0.0; n],
            y_hist: vec![0.0; n],
            delay_line: VecDeque::from(vec![0.0; delay_samples]),
            dt,
        })
    }
}

/// Difference-equation realization of a [`RationalTf`] at a fixed step.
///
/// `y[k] = sum(b_i * u[k-i]) - sum(a_i * y[k-i])`, with the input first run
/// through the delay FIFO.
#[derive(Debug, Clone)]
pub struct DiscreteLti {
    input_coeffs: Vec<f64>,
    output_coeffs: Vec<f64>,
    u_hist: Vec<f64>,
    y_hist: Vec<f64>,
    delay_line: VecDeque<f64>,
    dt: f64,
}

impl DiscreteLti {
    /// Advances the block one sample. Deterministic.
    pub fn step(&mut self, u: f64) -> f64 {
        let u_eff = if self.delay_line.is_empty() {
            u
        } else {
            self.delay_line.push_back(u);
            self.delay_line.pop_front().unwrap()
        };
        let mut y = self.input_coeffs[0] * u_eff;
        for (i, &b) in self.input_coeffs.iter().enumerate().skip(1) {
            y += b * self.u_hist[i - 1];
        }
        for (i, &a) in self.output_coeffs.iter().enumerate() {
            y -= a * self.y_hist[i];
        }
        if !self.u_hist.is_empty() {
            self.u_hist.rotate_right(1);
            self.u_hist[0] = u_eff;
            self.y_hist.rotate_right(1);
            self.y_hist[0] = y;
        }
        y
    }

    /// Clears all past samples, keeping the coefficients and FIFO length.
    pub fn reset(&mut self) {
        self.u_hist.iter_mut().for_each(|v| *v = 0.0);
        self.y_hist.iter_mut().for_each(|v| *v = 0.0);
        self.delay_line.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay_samples(&self) -> usize {
        self.delay_line.len()
    }

    pub fn input_coeffs(&self) -> &[f64] {
        &self.input_coeffs
    }

    pub fn output_coeffs(&self) -> &[f64] {
        &self.output_coeffs
    }
}
