//! Scalar maps derived from diffusion-tensor eigenvalues and the
//! tortuosity-based contrast-agent ADC estimate.
//!
//! Units here are mm²/s (the native DTI scale); the transport solver works in
//! mm²/h and converts at the reporting boundary.

use crate::error::{Error, Result};

/// Self-diffusion coefficient of water at 37 °C (mm²/s).
pub const WATER_SELF_DIFFUSION_MM2_S: f64 = 3.0e-3;

/// Free diffusion coefficient of the contrast agent surrogate (mm²/s).
pub const CONTRAST_FREE_DIFFUSION_MM2_S: f64 = 3.8e-4;

/// Eigenvalues of one diffusion tensor, sorted descending, all non-negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionTensorSample {
    eigenvalues: [f64; 3],
}

impl DiffusionTensorSample {
    pub fn new(mut eigenvalues: [f64; 3]) -> Result<Self> {
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Invalid(
                "diffusion tensor eigenvalues must be finite and non-negative".into(),
            ));
        }
        eigenvalues.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(DiffusionTensorSample { eigenvalues })
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }
}

/// Mean diffusivity, the eigenvalue average.
pub fn mean_diffusivity(s: &DiffusionTensorSample) -> f64 {
    let [l1, l2, l3] = s.eigenvalues;
    (l1 + l2 + l3) / 3.0
}

/// Fractional anisotropy in `[0, 1]`:
/// `FA^2 = (3/2) * sum_i (l_i - MD)^2 / sum_i l_i^2`.
pub fn fractional_anisotropy(s: &DiffusionTensorSample) -> Result<f64> {
    let [l1, l2, l3] = s.eigenvalues;
    let sum_sq = l1 * l1 + l2 * l2 + l3 * l3;
    if sum_sq == 0.0 {
        return Err(Error::Invalid("fractional anisotropy undefined for a zero tensor".into()));
    }
    let md = mean_diffusivity(s);
    let dev = (l1 - md).powi(2) + (l2 - md).powi(2) + (l3 - md).powi(2);
    Ok((1.5 * dev / sum_sq).sqrt().min(1.0))
}

/// Tortuosity `sqrt(D_free / D_adc)`. Values below 1 indicate apparent
/// transport faster than free diffusion and are left to the caller to flag.
pub fn tortuosity(d_free: f64, d_adc: f64) -> Result<f64> {
    if !(d_free > 0.0 && d_adc > 0.0) {
        return Err(Error::Invalid("tortuosity needs positive diffusion coefficients".into()));
    }
    Ok((d_free / d_adc).sqrt())
}

/// Contrast-agent ADC from a tortuosity estimate, `D_free_agent / lambda^2`
/// with the default free coefficient.
pub fn gadobutrol_adc(lambda: f64) -> Result<f64> {
    gadobutrol_adc_with(lambda, CONTRAST_FREE_DIFFUSION_MM2_S)
}

/// [`gadobutrol_adc`] with an explicit free diffusion coefficient.
pub fn gadobutrol_adc_with(lambda: f64, d_free: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Invalid("tortuosity must be positive".into()));
    }
    Ok(d_free / (lambda * lambda))
}

/// Median and median absolute deviation of a sample.
pub fn median_mad(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let med = median(values.to_vec());
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    Some((med, median(deviations)))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-region reduction of voxelwise eigenvalue maps: median/MAD of MD and
/// FA, plus the tortuosity and contrast-agent ADC derived from the median MD.
#[derive(Clone, Debug)]
pub struct RegionStats {
    pub label: u8,
    pub voxels: usize,
    pub md_median: f64,
    pub md_mad: f64,
    pub fa_median: f64,
    pub fa_mad: f64,
    pub tortuosity: f64,
    pub gadobutrol_adc: f64,
}

/// Reduces three eigenvalue grids over a label mask. `eigenvalues[i][v]` is
/// the i-th eigenvalue at voxel `v`; voxels with label 0 are background.
pub fn region_stats(
    eigenvalues: [&[f64]; 3],
    labels: &[u8],
    water_free_mm2_s: f64,
    agent_free_mm2_s: f64,
) -> Result<Vec<RegionStats>> {
    let n = labels.len();
    if eigenvalues.iter().any(|e| e.len() != n) {
        return Err(Error::Invalid("eigenvalue maps and mask differ in size".into()));
    }
    let mut present: Vec<u8> = labels.iter().copied().filter(|&l| l != 0).collect();
    present.sort_unstable();
    present.dedup();

    let mut out = Vec::with_capacity(present.len());
    for label in present {
        let mut mds = Vec::new();
        let mut fas = Vec::new();
        for v in 0..n {
            if labels[v] != label {
                continue;
            }
            let s = DiffusionTensorSample::new([
                eigenvalues[0][v],
                eigenvalues[1][v],
                eigenvalues[2][v],
            ])?;
            mds.push(mean_diffusivity(&s));
            fas.push(fractional_anisotropy(&s)?);
        }
        let (md_median, md_mad) = median_mad(&mds).expect("label present");
        let (fa_median, fa_mad) = median_mad(&fas).expect("label present");
        let lambda = tortuosity(water_free_mm2_s, md_median)?;
        out.push(RegionStats {
            label,
            voxels: mds.len(),
            md_median,
            md_mad,
            fa_median,
            fa_mad,
            tortuosity: lambda,
            gadobutrol_adc: gadobutrol_adc_with(lambda, agent_free_mm2_s)?,
        });
    }
    Ok(out)
}
