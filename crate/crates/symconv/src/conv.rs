//! 2D cross-correlation with stride and zero padding, plus two alternative
//! routes used for verification: a dense Toeplitz operator and the
//! reduced-multiply forward path for symmetry-constrained kernels.
//!
//! The network treats the operation as cross-correlation (no 180-degree
//! kernel flip); during learning the two are indistinguishable.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::symmetry::{build_orbit_map, SymmetricKernel};

/// Shape bookkeeping for one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input_size: usize,
    pub kernel_size: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeometry {
    /// Validates that `(input + 2*padding - kernel) / stride + 1` is a
    /// positive integer.
    pub fn new(input_size: usize, kernel_size: usize, padding: usize, stride: usize) -> Result<Self> {
        if stride < 1 {
            return Err(Error::invalid_geometry("stride must be >= 1"));
        }
        if kernel_size == 0 || input_size == 0 {
            return Err(Error::invalid_geometry(
                "input and kernel sizes must be positive",
            ));
        }
        let padded = input_size + 2 * padding;
        if padded < kernel_size {
            return Err(Error::invalid_geometry(format!(
                "kernel {kernel_size} does not fit in padded input {padded}"
            )));
        }
        let span = padded - kernel_size;
        if span % stride != 0 {
            return Err(Error::invalid_geometry(format!(
                "({input_size} + 2*{padding} - {kernel_size}) is not divisible by stride {stride}"
            )));
        }
        Ok(ConvGeometry { input_size, kernel_size, padding, stride })
    }

    /// `(N_in + 2*N_P - N_w) / N_S + 1`
    pub fn out_dim(&self) -> usize {
        (self.input_size + 2 * self.padding - self.kernel_size) / self.stride + 1
    }
}

#[inline]
fn padded_pixel(image: &Matrix, i: isize, j: isize) -> f64 {
    if i < 0 || j < 0 || i as usize >= image.rows() || j as usize >= image.cols() {
        0.0
    } else {
        image[(i as usize, j as usize)]
    }
}

fn check_shapes(image: &Matrix, kernel_size: usize, geom: &ConvGeometry) -> Result<()> {
    if image.rows() != geom.input_size || image.cols() != geom.input_size {
        return Err(Error::invalid_argument(format!(
            "image shape {}x{} does not match geometry input {}",
            image.rows(),
            image.cols(),
            geom.input_size
        )));
    }
    if kernel_size != geom.kernel_size {
        return Err(Error::invalid_argument(format!(
            "kernel size {} does not match geometry kernel {}",
            kernel_size, geom.kernel_size
        )));
    }
    Ok(())
}

/// Direct sliding-window cross-correlation at stride-spaced positions.
pub fn cross_correlate(image: &Matrix, kernel: &Matrix, geom: &ConvGeometry) -> Result<Matrix> {
    if kernel.rows() != kernel.cols() {
        return Err(Error::invalid_argument("kernel must be square"));
    }
    check_shapes(image, kernel.rows(), geom)?;
    let out = geom.out_dim();
    let k = geom.kernel_size;
    let p = geom.padding as isize;
    let s = geom.stride;
    let mut y = Matrix::zeros(out, out);

    if geom.padding == 0 {
        // fast interior path with contiguous row slices
        for oi in 0..out {
            for oj in 0..out {
                let mut acc = 0.0;
                for u in 0..k {
                    let xrow = &image.row(oi * s + u)[oj * s..oj * s + k];
                    let krow = kernel.row(u);
                    for v in 0..k {
                        acc += krow[v] * xrow[v];
                    }
                }
                y[(oi, oj)] = acc;
            }
        }
    } else {
        for oi in 0..out {
            for oj in 0..out {
                let mut acc = 0.0;
                for u in 0..k {
                    for v in 0..k {
                        let ii = (oi * s + u) as isize - p;
                        let jj = (oj * s + v) as isize - p;
                        acc += kernel[(u, v)] * padded_pixel(image, ii, jj);
                    }
                }
                y[(oi, oj)] = acc;
            }
        }
    }
    Ok(y)
}

/// Dense matrix form of a cross-correlation: row r holds the kernel entries
/// at the image positions covered by output pixel r. Materialized only at
/// verification scale; the training path uses the direct loop.
#[derive(Clone, Debug)]
pub struct ToeplitzOperator {
    pub matrix: Matrix,
    pub geometry: ConvGeometry,
}

impl ToeplitzOperator {
    /// Multiply by a row-major unrolled image and reshape the result.
    pub fn apply(&self, image: &Matrix) -> Result<Matrix> {
        check_shapes(image, self.geometry.kernel_size, &self.geometry)?;
        let out = self.geometry.out_dim();
        let x = image.as_slice();
        let mut y = Matrix::zeros(out, out);
        for r in 0..out * out {
            y.as_mut_slice()[r] = crate::matrix::dot(self.matrix.row(r), x);
        }
        Ok(y)
    }
}

/// Build the dense operator for a kernel: shape `(out^2, in^2)`.
pub fn build_toeplitz(kernel: &Matrix, geom: &ConvGeometry) -> Result<ToeplitzOperator> {
    if kernel.rows() != kernel.cols() {
        return Err(Error::invalid_argument("kernel must be square"));
    }
    if kernel.rows() != geom.kernel_size {
        return Err(Error::invalid_argument(format!(
            "kernel size {} does not match geometry kernel {}",
            kernel.rows(),
            geom.kernel_size
        )));
    }
    let n = geom.input_size;
    let out = geom.out_dim();
    let k = geom.kernel_size;
    let p = geom.padding as isize;
    let s = geom.stride;
    let mut m = Matrix::zeros(out * out, n * n);
    for oi in 0..out {
        for oj in 0..out {
            let r = oi * out + oj;
            for u in 0..k {
                for v in 0..k {
                    let ii = (oi * s + u) as isize - p;
                    let jj = (oj * s + v) as isize - p;
                    if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                        m[(r, ii as usize * n + jj as usize)] = kernel[(u, v)];
                    }
                }
            }
        }
    }
    Ok(ToeplitzOperator { matrix: m, geometry: *geom })
}

/// Reduced-multiply forward path: inputs tied to one weight are summed (or
/// differenced, for T2B) before the single multiplication by that weight.
/// Output is numerically equivalent to the direct path on the expanded
/// kernel; the multiplication count per output pixel drops to the canonical
/// weight count.
pub fn symmetric_forward(image: &Matrix, kernel: &SymmetricKernel, geom: &ConvGeometry) -> Result<Matrix> {
    symmetric_forward_counted(image, kernel, geom).map(|(y, _)| y)
}

/// Instrumented variant returning `(output, total multiplications)`.
pub fn symmetric_forward_counted(
    image: &Matrix,
    kernel: &SymmetricKernel,
    geom: &ConvGeometry,
) -> Result<(Matrix, u64)> {
    check_shapes(image, kernel.kernel_size, geom)?;
    let map = build_orbit_map(kernel.class, kernel.kernel_size)?;
    if kernel.canonical.len() != map.group_count() {
        return Err(Error::invalid_argument(format!(
            "canonical length {} does not match {} orbit groups",
            kernel.canonical.len(),
            map.group_count()
        )));
    }
    let out = geom.out_dim();
    let p = geom.padding as isize;
    let s = geom.stride;
    let mut y = Matrix::zeros(out, out);
    let mut multiplies = 0u64;
    for oi in 0..out {
        for oj in 0..out {
            let mut acc = 0.0;
            for (k, group) in map.groups.iter().enumerate() {
                let mut summed = 0.0;
                for m in &group.members {
                    let ii = (oi * s + m.row) as isize - p;
                    let jj = (oj * s + m.col) as isize - p;
                    let x = padded_pixel(image, ii, jj);
                    if m.sign > 0.0 {
                        summed += x;
                    } else {
                        summed -= x;
                    }
                }
                acc += kernel.canonical[k] * summed;
                multiplies += 1;
            }
            y[(oi, oj)] = acc;
        }
    }
    Ok((y, multiplies))
}

/// Insert `stride - 1` zero rows and columns between adjacent entries; this
/// undoes the stride before the kernel-gradient cross-correlation.
pub fn dilate_for_stride(e: &Matrix, stride: usize) -> Matrix {
    assert!(stride >= 1, "stride must be >= 1");
    if stride == 1 {
        return e.clone();
    }
    if e.rows() == 0 || e.cols() == 0 {
        return e.clone();
    }
    let rows = (e.rows() - 1) * stride + 1;
    let cols = (e.cols() - 1) * stride + 1;
    let mut d = Matrix::zeros(rows, cols);
    for i in 0..e.rows() {
        for j in 0..e.cols() {
            d[(i * stride, j * stride)] = e[(i, j)];
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::{random_kernel, SymmetryClass};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: literal triple loop over output, kernel rows and
    /// kernel columns with explicit padding arithmetic.
    fn naive_cross_correlate(image: &Matrix, kernel: &Matrix, pad: usize, stride: usize) -> Matrix {
        let n = image.rows();
        let k = kernel.rows();
        let out = (n + 2 * pad - k) / stride + 1;
        let mut y = Matrix::zeros(out, out);
        for oi in 0..out {
            for oj in 0..out {
                let mut acc = 0.0;
                for u in 0..k {
                    for v in 0..k {
                        let ii = oi as isize * stride as isize + u as isize - pad as isize;
                        let jj = oj as isize * stride as isize + v as isize - pad as isize;
                        if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                            acc += kernel[(u, v)] * image[(ii as usize, jj as usize)];
                        }
                    }
                }
                y[(oi, oj)] = acc;
            }
        }
        y
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn out_dim_examples() {
        assert_eq!(ConvGeometry::new(29, 5, 0, 2).unwrap().out_dim(), 13);
        assert_eq!(ConvGeometry::new(13, 5, 0, 2).unwrap().out_dim(), 5);
        assert_eq!(ConvGeometry::new(5, 5, 0, 1).unwrap().out_dim(), 1);
    }

    #[test]
    fn out_dim_rejects_non_integral() {
        assert!(ConvGeometry::new(28, 5, 0, 2).is_err());
        assert!(ConvGeometry::new(4, 5, 0, 1).is_err());
        assert!(ConvGeometry::new(8, 3, 0, 0).is_err());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let img = Matrix::from_vec(3, 3, vec![1.0; 9]);
        let ker = Matrix::from_vec(3, 3, vec![1.0; 9]);
        let geom = ConvGeometry::new(3, 3, 0, 1).unwrap();
        let y = cross_correlate(&img, &ker, &geom).unwrap();
        assert_eq!(y.rows(), 1);
        assert_eq!(y[(0, 0)], 9.0);
    }

    #[test]
    fn impulse_response_is_kernel_rotated_180() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ker = random_matrix(&mut rng, 5, 5);
        let n = 7;
        let mut img = Matrix::zeros(n, n);
        img[(3, 3)] = 1.0;
        let geom = ConvGeometry::new(n, 5, 2, 1).unwrap();
        let y = cross_correlate(&img, &ker, &geom).unwrap();
        assert_eq!(y.rows(), n);
        // response around the impulse equals the kernel flipped both ways
        for u in 0..5 {
            for v in 0..5 {
                let yy = y[(3 + 2 - u, 3 + 2 - v)];
                assert!((yy - ker[(u, v)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_naive_oracle_with_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_matrix(&mut rng, 8, 8);
        let ker = random_matrix(&mut rng, 3, 3);
        let geom = ConvGeometry::new(8, 3, 0, 1).unwrap();
        let y = cross_correlate(&img, &ker, &geom).unwrap();
        let oracle = naive_cross_correlate(&img, &ker, 0, 1);
        assert!(y.max_abs_diff(&oracle) < 1e-12);

        // stride 2 needs (8 - 3) divisible; use padding to make it land
        let geom2 = ConvGeometry::new(8, 3, 1, 1).unwrap();
        let y2 = cross_correlate(&img, &ker, &geom2).unwrap();
        let oracle2 = naive_cross_correlate(&img, &ker, 1, 1);
        assert!(y2.max_abs_diff(&oracle2) < 1e-12);

        let img9 = random_matrix(&mut rng, 9, 9);
        let geom3 = ConvGeometry::new(9, 3, 0, 2).unwrap();
        let y3 = cross_correlate(&img9, &ker, &geom3).unwrap();
        let oracle3 = naive_cross_correlate(&img9, &ker, 0, 2);
        assert!(y3.max_abs_diff(&oracle3) < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let img = Matrix::zeros(8, 8);
        let ker = Matrix::zeros(3, 3);
        let geom = ConvGeometry::new(9, 3, 0, 2).unwrap();
        assert!(cross_correlate(&img, &ker, &geom).is_err());
    }

    #[test]
    fn toeplitz_shape_follows_geometry() {
        // 3x3 image, kernel support embedded in 3x3, stride 1 -> (1, 9)
        let ker = Matrix::from_vec(3, 3, vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let geom = ConvGeometry::new(3, 3, 0, 1).unwrap();
        let op = build_toeplitz(&ker, &geom).unwrap();
        assert_eq!(op.matrix.rows(), 1);
        assert_eq!(op.matrix.cols(), 9);

        let geom2 = ConvGeometry::new(6, 3, 0, 1).unwrap();
        let op2 = build_toeplitz(&ker, &geom2).unwrap();
        assert_eq!(op2.matrix.rows(), 16);
        assert_eq!(op2.matrix.cols(), 36);
    }

    #[test]
    fn toeplitz_interior_rows_have_kernel_nonzeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ker = random_matrix(&mut rng, 3, 3);
        let geom = ConvGeometry::new(7, 3, 0, 1).unwrap();
        let op = build_toeplitz(&ker, &geom).unwrap();
        for r in 0..op.matrix.rows() {
            let nz = op.matrix.row(r).iter().filter(|x| **x != 0.0).count();
            assert_eq!(nz, 9);
        }
    }

    #[test]
    fn toeplitz_product_equals_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (n, k, p, s) in [(8, 3, 0, 1), (9, 3, 0, 2), (11, 5, 2, 2), (7, 7, 0, 1)] {
            let img = random_matrix(&mut rng, n, n);
            let ker = random_matrix(&mut rng, k, k);
            let geom = ConvGeometry::new(n, k, p, s).unwrap();
            let direct = cross_correlate(&img, &ker, &geom).unwrap();
            let toe = build_toeplitz(&ker, &geom).unwrap().apply(&img).unwrap();
            let norm = direct.frobenius_norm().max(1e-30);
            assert!(direct.max_abs_diff(&toe) / norm < 1e-12, "({n},{k},{p},{s})");
        }
    }

    #[test]
    fn zero_kernel_gives_zero_operator() {
        let ker = Matrix::zeros(3, 3);
        let geom = ConvGeometry::new(5, 3, 0, 1).unwrap();
        let op = build_toeplitz(&ker, &geom).unwrap();
        assert!(op.matrix.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn symmetric_forward_equals_expanded_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for class in SymmetryClass::ALL {
            for (n, k, p, s) in [(9usize, 3usize, 0usize, 2usize), (13, 5, 0, 2), (11, 5, 2, 1)] {
                let img = random_matrix(&mut rng, n, n);
                let kern = random_kernel(class, k, 1.0, &mut rng).unwrap();
                let geom = ConvGeometry::new(n, k, p, s).unwrap();
                let direct =
                    cross_correlate(&img, &crate::symmetry::expand(&kern).unwrap(), &geom).unwrap();
                let (sym, _) = symmetric_forward_counted(&img, &kern, &geom).unwrap();
                let norm = direct.frobenius_norm().max(1e-30);
                assert!(
                    direct.max_abs_diff(&sym) / norm < 1e-12,
                    "{class} ({n},{k},{p},{s})"
                );
            }
        }
    }

    #[test]
    fn multiply_count_equals_canonical_weight_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let img = random_matrix(&mut rng, 13, 13);
        let geom = ConvGeometry::new(13, 5, 0, 2).unwrap();
        let pixels = (geom.out_dim() * geom.out_dim()) as u64;
        for (class, expected) in [
            (SymmetryClass::T1, 6u64),
            (SymmetryClass::T2A, 13),
            (SymmetryClass::T2B, 12),
            (SymmetryClass::R, 25),
        ] {
            let kern = random_kernel(class, 5, 1.0, &mut rng).unwrap();
            let (_, muls) = symmetric_forward_counted(&img, &kern, &geom).unwrap();
            assert_eq!(muls, expected * pixels, "{class}");
        }
    }

    #[test]
    fn t2b_annihilates_constant_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let kern = random_kernel(SymmetryClass::T2B, 5, 1.0, &mut rng).unwrap();
        let img = Matrix::from_vec(9, 9, vec![3.75; 81]);
        let geom = ConvGeometry::new(9, 5, 0, 2).unwrap();
        let y = symmetric_forward(&img, &kern, &geom).unwrap();
        assert!(y.as_slice().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn forward_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x1 = random_matrix(&mut rng, 8, 8);
        let x2 = random_matrix(&mut rng, 8, 8);
        let ker = random_matrix(&mut rng, 3, 3);
        let geom = ConvGeometry::new(8, 3, 0, 1).unwrap();
        let (a, b) = (2.5, -1.25);
        let mixed = Matrix::from_vec(
            8,
            8,
            x1.as_slice()
                .iter()
                .zip(x2.as_slice())
                .map(|(u, v)| a * u + b * v)
                .collect(),
        );
        let y_mixed = cross_correlate(&mixed, &ker, &geom).unwrap();
        let y1 = cross_correlate(&x1, &ker, &geom).unwrap();
        let y2 = cross_correlate(&x2, &ker, &geom).unwrap();
        let combo = Matrix::from_vec(
            y1.rows(),
            y1.cols(),
            y1.as_slice()
                .iter()
                .zip(y2.as_slice())
                .map(|(u, v)| a * u + b * v)
                .collect(),
        );
        let norm = y_mixed.frobenius_norm().max(1e-30);
        assert!(y_mixed.max_abs_diff(&combo) / norm < 1e-12);
    }

    #[test]
    fn dilation_examples() {
        let e = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let d = dilate_for_stride(&e, 2);
        assert_eq!(d.rows(), 3);
        assert_eq!(d.as_slice(), &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 4.0]);

        let same = dilate_for_stride(&e, 1);
        assert_eq!(same, e);

        let e3 = Matrix::from_vec(3, 3, (1..=9).map(f64::from).collect::<Vec<_>>());
        let d3 = dilate_for_stride(&e3, 3);
        assert_eq!(d3.rows(), 7);
        assert_eq!(d3[(0, 0)], 1.0);
        assert_eq!(d3[(0, 3)], 2.0);
        assert_eq!(d3[(0, 6)], 3.0);
        assert_eq!(d3[(3, 3)], 5.0);
        assert_eq!(d3[(6, 6)], 9.0);
        assert_eq!(d3[(1, 1)], 0.0);
    }

    /// Path equivalence over 200 random instances: direct, Toeplitz, and
    /// (for symmetric kernels) the reduced-multiply route.
    #[test]
    fn three_paths_agree_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut done = 0;
        while done < 200 {
            let k = *[3usize, 5, 7].iter().nth(rng.random_range(0..3)).unwrap();
            let s = 1 + rng.random_range(0..2usize);
            let n = rng.random_range(k..=16usize);
            let p = rng.random_range(0..=2usize);
            let Ok(geom) = ConvGeometry::new(n, k, p, s) else {
                continue;
            };
            let img = random_matrix(&mut rng, n, n);
            let class = SymmetryClass::ALL[rng.random_range(0..4)];
            let kern = random_kernel(class, k, 1.0, &mut rng).unwrap();
            let full = crate::symmetry::expand(&kern).unwrap();

            let direct = cross_correlate(&img, &full, &geom).unwrap();
            let toe = build_toeplitz(&full, &geom).unwrap().apply(&img).unwrap();
            let sym = symmetric_forward(&img, &kern, &geom).unwrap();

            let norm = direct.frobenius_norm().max(1e-30);
            assert!(direct.max_abs_diff(&toe) / norm < 1e-12);
            assert!(direct.max_abs_diff(&sym) / norm < 1e-12);
            done += 1;
        }
    }
}
