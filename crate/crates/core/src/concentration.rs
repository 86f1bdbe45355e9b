//! MPRAGE signal model and signal-ratio → contrast-concentration conversion.
//!
//! The sequence model follows the inversion-prepared gradient-echo cycle:
//! inversion pulse, delay `T_a`, a train of `m` low-flip-angle readouts
//! spaced `T_b`, then a delay `T_w = TR - T_a - T_b (m-1)` before the next
//! inversion. With
//!
//! ```text
//! a = cos(theta),  b = exp(-T_b/T1),  d = exp(-T_a/T1),
//! w = exp(-T_w/T1),  r = exp(-TR/T1)
//! ```
//!
//! the steady-state longitudinal magnetization just before the inversion is
//!
//! ```text
//! Me/M0 = [ (1-w) + a w (1-b) S_{m-1} + a w (a b)^{m-1} (1-d) ] / (1 + r a^m)
//! ```
//!
//! with the geometric sum `S_j = (1 - (a b)^j) / (1 - a b)`, and the
//! magnetization read out at echo `n` is
//!
//! ```text
//! Mn/M0 = (1-b) S_{n-1} + (a b)^{n-1} [ (1-d) - d Me/M0 ].
//! ```
//!
//! `f(T1) = Mn/M0` at the center echo `n = m/2` is tabulated over
//! `T1 in [200, 4000] ms` and inverted on its monotone branch to map a signal
//! ratio to a post-contrast `T1`, which yields the concentration through
//! `1/T1_c = 1/T1_0 + r1 c`. The `TE`/`T2*` weighting of the raw signal
//! cancels in ratios and is kept only as descriptive metadata.

use crate::error::{Error, Result};

/// Baseline relaxation time used for CSF voxels (ms), replacing unreliable
/// T1-map values in fluid.
pub const CSF_BASELINE_T1_MS: f64 = 3000.0;

/// Lookup-table range and spacing (ms).
pub const LOOKUP_T1_MIN_MS: f64 = 200.0;
pub const LOOKUP_T1_MAX_MS: f64 = 4000.0;

/// Typical tissue T1 range (ms); the inversion branch must cover part of it.
const TISSUE_T1_RANGE_MS: (f64, f64) = (800.0, 2000.0);

/// Sequence and physical constants of the MPRAGE acquisition.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MprageParams {
    /// Flip angle of the readout pulses (radians).
    pub flip_angle_rad: f64,
    /// Inversion delay `T_a` (ms).
    pub inversion_time_ms: f64,
    /// Echo spacing `T_b` (ms).
    pub echo_spacing_ms: f64,
    /// Full cycle length `TR` (ms).
    pub repetition_time_ms: f64,
    /// Number of echoes `m` in the readout train (even).
    pub echo_count: usize,
    /// Contrast agent relaxivity `r1` (1/(mM*s)). No default on purpose: the
    /// value is agent- and field-strength-specific.
    pub relaxivity_per_mm_s: f64,
    /// Echo time (ms). Unused: the `exp(-TE/T2*)` factor cancels in signal
    /// ratios.
    #[serde(default)]
    pub echo_time_ms: f64,
    /// Effective transverse relaxation (ms). Unused, kept as metadata.
    #[serde(default)]
    pub t2_star_ms: f64,
}

impl MprageParams {
    /// Recovery delay after the echo train, `TR - T_a - T_b (m - 1)`.
    pub fn delay_time_ms(&self) -> f64 {
        self.repetition_time_ms
            - self.inversion_time_ms
            - self.echo_spacing_ms * (self.echo_count as f64 - 1.0)
    }

    /// Center echo index `n = m/2` (1-based).
    pub fn center_echo(&self) -> usize {
        self.echo_count / 2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flip_angle_rad > 0.0 && self.flip_angle_rad < std::f64::consts::PI) {
            return Err(Error::Signal("flip angle must lie in (0, pi)".into()));
        }
        if self.echo_count < 2 || self.echo_count % 2 != 0 {
            return Err(Error::Signal("echo count must be even and at least 2".into()));
        }
        if !(self.inversion_time_ms > 0.0 && self.echo_spacing_ms > 0.0) {
            return Err(Error::Signal("inversion time and echo spacing must be positive".into()));
        }
        if self.delay_time_ms() < 0.0 {
            return Err(Error::Signal(format!(
                "negative recovery delay {:.3} ms; TR too short for the echo train",
                self.delay_time_ms()
            )));
        }
        if !(self.relaxivity_per_mm_s > 0.0) {
            return Err(Error::Signal("relaxivity must be positive".into()));
        }
        Ok(())
    }
}

/// Normalized center-echo magnetization `f(T1) = Mn/M0` of the steady-state
/// cycle.
pub fn mprage_f(t1_ms: f64, p: &MprageParams) -> Result<f64> {
    p.validate()?;
    if !(t1_ms > 0.0) {
        return Err(Error::Signal(format!("T1 must be positive, got {t1_ms}")));
    }
    let a = p.flip_angle_rad.cos();
    let b = (-p.echo_spacing_ms / t1_ms).exp();
    let d = (-p.inversion_time_ms / t1_ms).exp();
    let w = (-p.delay_time_ms() / t1_ms).exp();
    let r = (-p.repetition_time_ms / t1_ms).exp();
    let m = p.echo_count as i32;
    let n = p.center_echo() as i32;

    let ab = a * b;
    if (1.0 - ab).abs() < 1e-14 {
        return Err(Error::Signal("degenerate echo train: cos(theta) * exp(-Tb/T1) = 1".into()));
    }
    let geom = |j: i32| (1.0 - ab.powi(j)) / (1.0 - ab);

    let me = ((1.0 - w) + a * w * (1.0 - b) * geom(m - 1) + a * w * ab.powi(m - 1) * (1.0 - d))
        / (1.0 + r * a.powi(m));
    let m1 = (1.0 - d) - d * me;
    let mn = (1.0 - b) * geom(n - 1) + ab.powi(n - 1) * m1;
    if !mn.is_finite() {
        return Err(Error::Signal(format!(
            "non-finite magnetization (Me/M0 = {me}, Mn/M0 = {mn})"
        )));
    }
    Ok(mn)
}

/// `f(T1)` tabulated at 1 ms spacing with its inversion branch.
#[derive(Clone, Debug)]
pub struct T1Lookup {
    t1_ms: Vec<f64>,
    f: Vec<f64>,
    /// Inclusive index range of the monotone branch used for inversion.
    branch: (usize, usize),
    increasing: bool,
}

/// Tabulates `f` over the grid and locates the largest strictly monotone
/// branch overlapping typical tissue T1 values.
pub fn build_lookup(p: &MprageParams) -> Result<T1Lookup> {
    let n = (LOOKUP_T1_MAX_MS - LOOKUP_T1_MIN_MS) as usize + 1;
    let mut t1_ms = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    for i in 0..n {
        let t1 = LOOKUP_T1_MIN_MS + i as f64;
        t1_ms.push(t1);
        f.push(mprage_f(t1, p)?);
    }

    // Maximal strictly monotone runs.
    let mut best: Option<((usize, usize), f64)> = None;
    let mut start = 0usize;
    let mut dir = 0i8;
    let flush = |start: usize, end: usize, best: &mut Option<((usize, usize), f64)>| {
        if end <= start {
            return;
        }
        let lo = t1_ms[start].max(TISSUE_T1_RANGE_MS.0);
        let hi = t1_ms[end].min(TISSUE_T1_RANGE_MS.1);
        let overlap = (hi - lo).max(0.0);
        let better = match best {
            None => overlap > 0.0,
            Some((cur, cur_overlap)) => {
                overlap > *cur_overlap
                    || (overlap == *cur_overlap && overlap > 0.0 && end - start > cur.1 - cur.0)
            }
        };
        if better {
            *best = Some(((start, end), overlap));
        }
    };
    for i in 1..n {
        let step = f[i] - f[i - 1];
        let s = if step > 0.0 {
            1i8
        } else if step < 0.0 {
            -1i8
        } else {
            0i8
        };
        if s == 0 || (dir != 0 && s != dir) {
            flush(start, i - 1, &mut best);
            start = if s == 0 { i } else { i - 1 };
            dir = s;
        } else {
            dir = s;
        }
    }
    flush(start, n - 1, &mut best);

    let Some((branch, _)) = best else {
        return Err(Error::Signal(
            "f(T1) has no monotone branch over tissue T1 values; parameters unusable for inversion"
                .into(),
        ));
    };
    let increasing = f[branch.1] > f[branch.0];
    Ok(T1Lookup {
        t1_ms,
        f,
        branch,
        increasing,
    })
}

impl T1Lookup {
    pub fn len(&self) -> usize {
        self.t1_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t1_ms.is_empty()
    }

    /// Branch bounds as T1 values (ms).
    pub fn branch_t1_ms(&self) -> (f64, f64) {
        (self.t1_ms[self.branch.0], self.t1_ms[self.branch.1])
    }

    /// Interpolated `f` at `t1_ms`; out-of-grid queries clamp and flag.
    pub fn value_at(&self, t1_ms: f64) -> (f64, bool) {
        let clamped = t1_ms.clamp(LOOKUP_T1_MIN_MS, LOOKUP_T1_MAX_MS);
        let out_of_range = clamped != t1_ms;
        let pos = clamped - LOOKUP_T1_MIN_MS;
        let i = (pos.floor() as usize).min(self.f.len() - 2);
        let frac = pos - i as f64;
        (self.f[i] * (1.0 - frac) + self.f[i + 1] * frac, out_of_range)
    }

    /// Inverts `f* -> T1` on the monotone branch with linear interpolation;
    /// targets beyond the branch clamp to its endpoint and flag saturation.
    pub fn invert(&self, f_star: f64) -> (f64, bool) {
        let (lo, hi) = self.branch;
        let (f_lo, f_hi) = (self.f[lo], self.f[hi]);
        let (f_min, f_max) = if self.increasing { (f_lo, f_hi) } else { (f_hi, f_lo) };
        if f_star <= f_min {
            let idx = if self.increasing { lo } else { hi };
            return (self.t1_ms[idx], true);
        }
        if f_star >= f_max {
            let idx = if self.increasing { hi } else { lo };
            return (self.t1_ms[idx], true);
        }
        let (mut a, mut b) = (lo, hi);
        while b - a > 1 {
            let mid = (a + b) / 2;
            let below = if self.increasing {
                self.f[mid] <= f_star
            } else {
                self.f[mid] >= f_star
            };
            if below {
                a = mid;
            } else {
                b = mid;
            }
        }
        let span = self.f[b] - self.f[a];
        let frac = if span == 0.0 { 0.0 } else { (f_star - self.f[a]) / span };
        (self.t1_ms[a] + frac * (self.t1_ms[b] - self.t1_ms[a]), false)
    }
}

/// Result of a signal-ratio conversion.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConcentrationEstimate {
    pub concentration_mm: f64,
    /// Target ratio fell outside the invertible branch.
    pub saturated: bool,
    /// Raw concentration was negative and clamped to zero.
    pub clamped_negative: bool,
}

/// Concentration from the relaxation change, `c = (1/T1_c - 1/T1_0) / r1`
/// with times in ms and `r1` in 1/(mM*s).
pub fn concentration_from_t1(t1_c_ms: f64, t1_0_ms: f64, r1_per_mm_s: f64) -> f64 {
    (1.0e3 / t1_c_ms - 1.0e3 / t1_0_ms) / r1_per_mm_s
}

/// Post-contrast relaxation time for a known concentration (ms).
pub fn t1_with_contrast(c_mm: f64, t1_0_ms: f64, r1_per_mm_s: f64) -> f64 {
    1.0 / (1.0 / t1_0_ms + r1_per_mm_s * c_mm / 1.0e3)
}

/// Converts a signal ratio `S_c / S_0` at baseline `T1_0` into a
/// concentration: the target `f* = ratio * f(T1_0)` is inverted through the
/// lookup and fed into the relaxivity relation.
pub fn concentration_from_ratio(
    ratio: f64,
    t1_0_ms: f64,
    p: &MprageParams,
    lut: &T1Lookup,
) -> Result<ConcentrationEstimate> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Signal(format!("signal ratio must be positive, got {ratio}")));
    }
    if !(LOOKUP_T1_MIN_MS..=LOOKUP_T1_MAX_MS).contains(&t1_0_ms) {
        return Err(Error::Signal(format!(
            "baseline T1 {t1_0_ms} ms outside the lookup range"
        )));
    }
    let f0 = mprage_f(t1_0_ms, p)?;
    let f_star = ratio * f0;
    let (t1_c, saturated) = lut.invert(f_star);
    let raw = concentration_from_t1(t1_c, t1_0_ms, p.relaxivity_per_mm_s);
    let clamped_negative = raw < 0.0;
    Ok(ConcentrationEstimate {
        concentration_mm: raw.max(0.0),
        saturated,
        clamped_negative,
    })
}

/// [`concentration_from_ratio`] with the CSF baseline T1 of 3000 ms.
pub fn csf_concentration(ratio: f64, p: &MprageParams, lut: &T1Lookup) -> Result<ConcentrationEstimate> {
    concentration_from_ratio(ratio, CSF_BASELINE_T1_MS, p, lut)
}

/// Percentage signal change `100 (S_t - S_0) / S_0`.
pub fn signal_change_percent(s_t: f64, s_0: f64) -> f64 {
    100.0 * (s_t - s_0) / s_0
}

/// Generic sequence parameters used across tests and examples.
#[cfg(test)]
pub(crate) fn generic_params() -> MprageParams {
    MprageParams {
        flip_angle_rad: 8.0f64.to_radians(),
        inversion_time_ms: 900.0,
        echo_spacing_ms: 5.1,
        repetition_time_ms: 2000.0,
        echo_count: 200,
        relaxivity_per_mm_s: 3.2,
        echo_time_ms: 2.3,
        t2_star_ms: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_t1_recovers_fully() {
        let f = mprage_f(1e-6, &generic_params()).unwrap();
        assert!((f - 1.0).abs() < 1e-12, "f = {f}");
    }

    #[test]
    fn right_angle_readout_collapses_to_saturation() {
        let mut p = generic_params();
        p.flip_angle_rad = std::f64::consts::FRAC_PI_2;
        let t1 = 1200.0;
        let b = (-p.echo_spacing_ms / t1).exp();
        let f = mprage_f(t1, &p).unwrap();
        assert!((f - (1.0 - b)).abs() < 1e-14, "f = {f}, 1-b = {}", 1.0 - b);
    }

    #[test]
    fn lookup_covers_the_stated_grid() {
        let lut = build_lookup(&generic_params()).unwrap();
        assert_eq!(lut.len(), 3801);
        let (lo, hi) = lut.branch_t1_ms();
        assert!(lo < 2000.0 && hi > 800.0, "branch [{lo}, {hi}] misses tissue T1");
    }

    #[test]
    fn lookup_clamps_out_of_range_queries() {
        let lut = build_lookup(&generic_params()).unwrap();
        let (inside, flag) = lut.value_at(1200.0);
        assert!(!flag);
        let (low, flag_low) = lut.value_at(100.0);
        assert!(flag_low);
        assert_eq!(low, lut.value_at(LOOKUP_T1_MIN_MS).0);
        let (_, flag_high) = lut.value_at(4500.0);
        assert!(flag_high);
        assert!(inside.is_finite());
    }

    #[test]
    fn unit_ratio_means_zero_concentration() {
        let p = generic_params();
        let lut = build_lookup(&p).unwrap();
        let est = concentration_from_ratio(1.0, 1200.0, &p, &lut).unwrap();
        assert!(est.concentration_mm.abs() < 2e-3, "c = {}", est.concentration_mm);
    }

    #[test]
    fn relaxivity_arithmetic_bypassing_the_lookup() {
        // T1_0 = 2 s, T1_c = 1 s, r1 = 5 -> c = (1 - 0.5)/5 = 0.1 mM.
        let c = concentration_from_t1(1000.0, 2000.0, 5.0);
        assert!((c - 0.1).abs() < 1e-15);
        let t1c = t1_with_contrast(0.1, 2000.0, 5.0);
        assert!((t1c - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn signal_change_examples() {
        assert_eq!(signal_change_percent(1.5, 1.0), 50.0);
        assert_eq!(signal_change_percent(1.0, 1.0), 0.0);
    }

    #[test]
    fn saturating_ratio_is_flagged() {
        let p = generic_params();
        let lut = build_lookup(&p).unwrap();
        let est = csf_concentration(1e6, &p, &lut).unwrap();
        assert!(est.saturated);
        assert!(est.concentration_mm.is_finite());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = generic_params();
        p.echo_count = 3;
        assert!(mprage_f(1200.0, &p).is_err());
        let mut p = generic_params();
        p.repetition_time_ms = 100.0;
        assert!(p.validate().is_err());
        assert!(mprage_f(-5.0, &generic_params()).is_err());
        let p = generic_params();
        let lut = build_lookup(&p).unwrap();
        assert!(concentration_from_ratio(0.0, 1200.0, &p, &lut).is_err());
        assert!(concentration_from_ratio(1.1, 10.0, &p, &lut).is_err());
    }
}
