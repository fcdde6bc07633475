//! Frequency-response checks for the linear-phase property.
//!
//! 1D: closed-form amplitude/phase of odd-length FIR filters with symmetric
//! (Type I) or antisymmetric (Type III) coefficients. 2D: a learned kernel
//! is classified by computing its DFT with the center tap at the origin;
//! even real kernels (T1, T2A) must come out purely real and odd real
//! kernels (T2B) purely imaginary. Centering avoids phase unwrapping while
//! testing exactly the same linearity of the phase.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

/// Sampled response: `H(w) = amplitude(w) * exp(j * phase(w))`.
#[derive(Clone, Debug)]
pub struct FrequencyResponse {
    pub omega: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

/// 256 uniform samples on `[0, pi]`.
pub fn default_omega_grid() -> Vec<f64> {
    (0..256).map(|i| i as f64 * PI / 255.0).collect()
}

fn check_odd(coeffs: &[f64]) -> Result<usize> {
    if coeffs.is_empty() || coeffs.len() % 2 == 0 {
        return Err(Error::invalid_argument(format!(
            "coefficient length must be odd, got {}",
            coeffs.len()
        )));
    }
    Ok((coeffs.len() - 1) / 2)
}

/// Type I (odd length, symmetric coefficients):
/// `A(w) = b[M] + 2 * sum_{n<M} b[n] * cos((M-n) w)`, phase `-M w`.
pub fn type1_response(coeffs: &[f64], omega: &[f64]) -> Result<FrequencyResponse> {
    let m = check_odd(coeffs)?;
    let n = coeffs.len();
    for i in 0..n {
        if coeffs[i] != coeffs[n - 1 - i] {
            return Err(Error::invalid_argument(format!(
                "coefficients are not symmetric at index {i}"
            )));
        }
    }
    let mut amplitude = Vec::with_capacity(omega.len());
    let mut phase = Vec::with_capacity(omega.len());
    for &w in omega {
        let mut a = coeffs[m];
        for i in 0..m {
            a += 2.0 * coeffs[i] * (((m - i) as f64) * w).cos();
        }
        amplitude.push(a);
        phase.push(-(m as f64) * w);
    }
    Ok(FrequencyResponse { omega: omega.to_vec(), amplitude, phase })
}

/// Type III (odd length, antisymmetric coefficients, zero center):
/// `A(w) = 2 * sum_{n<M} b[n] * sin((M-n) w)`, phase `-M w + pi/2`.
pub fn type3_response(coeffs: &[f64], omega: &[f64]) -> Result<FrequencyResponse> {
    let m = check_odd(coeffs)?;
    let n = coeffs.len();
    if coeffs[m] != 0.0 {
        return Err(Error::invalid_argument(
            "center coefficient must be zero for antisymmetric filters",
        ));
    }
    for i in 0..n {
        if coeffs[i] != -coeffs[n - 1 - i] {
            return Err(Error::invalid_argument(format!(
                "coefficients are not antisymmetric at index {i}"
            )));
        }
    }
    let mut amplitude = Vec::with_capacity(omega.len());
    let mut phase = Vec::with_capacity(omega.len());
    for &w in omega {
        let mut a = 0.0;
        for i in 0..m {
            a += 2.0 * coeffs[i] * (((m - i) as f64) * w).sin();
        }
        amplitude.push(a);
        phase.push(-(m as f64) * w + PI / 2.0);
    }
    Ok(FrequencyResponse { omega: omega.to_vec(), amplitude, phase })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralVerdict {
    SymmetricReal,
    AntisymmetricImaginary,
    Neither,
}

impl SpectralVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            SpectralVerdict::SymmetricReal => "symmetric-real",
            SpectralVerdict::AntisymmetricImaginary => "antisymmetric-imaginary",
            SpectralVerdict::Neither => "neither",
        }
    }
}

impl fmt::Display for SpectralVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralReport {
    pub verdict: SpectralVerdict,
    /// Deviation backing the verdict (normalized by the kernel's Frobenius
    /// norm): max |Im| for symmetric-real, max |Re| for
    /// antisymmetric-imaginary, the smaller of the two for neither.
    pub deviation: f64,
    pub max_imag: f64,
    pub max_real: f64,
}

const SPECTRAL_THRESHOLD: f64 = 1e-9;

/// Classify a kernel's centered 2D spectrum.
pub fn spectral_phase_report(kernel: &Matrix) -> Result<SpectralReport> {
    let n = kernel.rows();
    if n != kernel.cols() || n % 2 == 0 || n == 0 {
        return Err(Error::invalid_argument(
            "spectral report requires an odd square kernel",
        ));
    }
    let c = (n / 2) as isize;
    let norm = kernel.frobenius_norm();
    let mut max_imag = 0.0f64;
    let mut max_real = 0.0f64;
    for u in 0..n {
        for v in 0..n {
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let di = i as isize - c;
                    let dj = j as isize - c;
                    let ang = -2.0 * PI * ((u as isize * di + v as isize * dj) as f64) / n as f64;
                    let w = kernel[(i, j)];
                    re += w * ang.cos();
                    im += w * ang.sin();
                }
            }
            max_imag = max_imag.max(im.abs());
            max_real = max_real.max(re.abs());
        }
    }
    let (rel_imag, rel_real) = if norm > 0.0 {
        (max_imag / norm, max_real / norm)
    } else {
        (0.0, 0.0)
    };
    let (verdict, deviation) = if rel_imag <= SPECTRAL_THRESHOLD {
        (SpectralVerdict::SymmetricReal, rel_imag)
    } else if rel_real <= SPECTRAL_THRESHOLD {
        (SpectralVerdict::AntisymmetricImaginary, rel_real)
    } else {
        (SpectralVerdict::Neither, rel_imag.min(rel_real))
    };
    Ok(SpectralReport { verdict, deviation, max_imag: rel_imag, max_real: rel_real })
}
