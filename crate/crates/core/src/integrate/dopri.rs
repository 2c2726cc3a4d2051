//! Dormand–Prince 5(4) embedded pair with the standard 4th-order continuous
//! extension. Generic over the state dimension so the same stepper drives
//! plain states, variational (state + STM) systems and test problems.

use nalgebra::SVector;

// Butcher tableau (7 stages, FSAL)
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

// y5 - y4 error coefficients
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense-output coefficients
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension over one accepted step `[t0, t0 + h]` (h signed).
#[derive(Debug, Clone)]
pub struct DenseSegment<const N: usize> {
    pub t0: f64,
    pub h: f64,
    rcont: [SVector<f64, N>; 5],
}

impl<const N: usize> DenseSegment<N> {
    /// Evaluate the interpolant; `t` should lie within the step.
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        self.rcont[0]
            + (self.rcont[1] + (self.rcont[2] + (self.rcont[3] + self.rcont[4] * th1) * theta) * th1)
                * theta
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }

    /// Whether `t` lies within the (signed) step interval.
    pub fn contains(&self, t: f64) -> bool {
        let a = (t - self.t0) / self.h;
        (-1e-12..=1.0 + 1e-12).contains(&a)
    }
}

/// Result of one trial step.
pub struct StepResult<const N: usize> {
    pub y_new: SVector<f64, N>,
    /// Scaled error norm; the step is acceptable when `err <= 1`.
    pub err: f64,
    /// FSAL stage `f(t + h, y_new)`, reusable as `k1` of the next step.
    pub k_last: SVector<f64, N>,
    pub dense: DenseSegment<N>,
}

/// One Dormand–Prince 5(4) step from `(t, y)` with signed step `h`.
///
/// `k1` must hold `f(t, y)`.
pub fn dopri5_step<const N: usize, F>(
    f: &F,
    t: f64,
    y: &SVector<f64, N>,
    k1: &SVector<f64, N>,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> StepResult<N>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let k2 = f(t + C2 * h, &(y + (k1 * A21) * h));
    let k3 = f(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h));
    let k4 = f(t + C4 * h, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
    let k5 = f(
        t + C5 * h,
        &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h),
    );
    let ysti = y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h;
    let k6 = f(t + h, &ysti);
    let y_new = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
    let k_last = f(t + h, &y_new);

    let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k_last * E7) * h;
    let mut acc = 0.0;
    for i in 0..N {
        let sk = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
        let e = err_vec[i] / sk;
        acc += e * e;
    }
    let err = (acc / N as f64).sqrt();

    let ydiff = y_new - y;
    let bspl = k1 * h - ydiff;
    let rcont = [
        *y,
        ydiff,
        bspl,
        ydiff - k_last * h - bspl,
        (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k_last * D7) * h,
    ];

    StepResult {
        y_new,
        err,
        k_last,
        dense: DenseSegment { t0: t, h, rcont },
    }
}

/// PI step-size controller state (Hairer's DOPRI5 defaults).
pub struct StepController {
    facold: f64,
}

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FACC1: f64 = 5.0; // 1 / fac_min
const FACC2: f64 = 0.1; // 1 / fac_max

impl StepController {
    pub fn new() -> Self {
        Self { facold: 1e-4 }
    }

    /// Next step magnitude after an accepted step.
    pub fn accept(&mut self, err: f64, h: f64) -> f64 {
        let fac11 = err.powf(EXPO1);
        let fac = (fac11 / self.facold.powf(BETA) / SAFE).clamp(FACC2, FACC1);
        self.facold = err.max(1e-4);
        h / fac
    }

    /// Next step magnitude after a rejected step.
    pub fn reject(&self, err: f64, h: f64) -> f64 {
        let fac11 = err.powf(EXPO1);
        h / (fac11 / SAFE).min(FACC1)
    }
}

impl Default for StepController {
    fn default() -> Self {
        Self::new()
    }
}

/// Integrate a generic system over a fixed span with adaptive stepping and
/// no event handling. Returns the end state.
pub fn propagate_fixed<const N: usize, F>(
    f: &F,
    y0: &SVector<f64, N>,
    t_span: (f64, f64),
    rel_tol: f64,
    abs_tol: f64,
    h_init: f64,
    h_min: f64,
    h_max: f64,
) -> crate::error::Result<SVector<f64, N>>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let (t0, t1) = t_span;
    if t0 == t1 {
        return Ok(*y0);
    }
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut y = *y0;
    let mut k1 = f(t, &y);
    let mut h = h_init.min(h_max) * dir;
    let mut controller = StepController::new();
    let mut steps = 0usize;
    loop {
        steps += 1;
        if steps > 50_000_000 {
            return Err(crate::error::Error::StepLimit(t));
        }
        let mut last = false;
        if (t1 - t).abs() <= h.abs() {
            h = t1 - t;
            last = true;
        }
        let res = dopri5_step(f, t, &y, &k1, h, rel_tol, abs_tol);
        if !res.err.is_finite() || res.err > 1.0 {
            let h_new =
                if res.err.is_finite() { controller.reject(res.err, h) } else { 0.5 * h };
            if h_new.abs() < h_min {
                return Err(crate::error::Error::StepUnderflow { t, h: h_new.abs() });
            }
            h = h_new;
            continue;
        }
        t += h;
        y = res.y_new;
        k1 = res.k_last;
        if last {
            return Ok(y);
        }
        h = controller.accept(res.err, h).abs().clamp(h_min, h_max) * dir;
    }
}
