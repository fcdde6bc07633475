//! Symmetry-constrained convolution kernels.
//!
//! Four kernel families share weights inside a single filter:
//!
//! * `R`   — unconstrained (every tap is free),
//! * `T1`  — full dihedral symmetry (Gaussian/Laplacian-like),
//! * `T2A` — point reflection through the center,
//! * `T2B` — anti point reflection (Sobel-like), center pinned to zero.
//!
//! A kernel is stored as a canonical vector of free weights; an [`OrbitMap`]
//! partitions the kernel coordinates into tied groups (with signs for T2B)
//! and drives both expansion to the full 2D filter and the folding of a
//! kernel-shaped gradient back onto the canonical parameters.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymmetryClass {
    R,
    T1,
    T2A,
    T2B,
}

impl SymmetryClass {
    pub const ALL: [SymmetryClass; 4] = [
        SymmetryClass::R,
        SymmetryClass::T1,
        SymmetryClass::T2A,
        SymmetryClass::T2B,
    ];

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "R" => Ok(SymmetryClass::R),
            "T1" => Ok(SymmetryClass::T1),
            "T2A" => Ok(SymmetryClass::T2A),
            "T2B" => Ok(SymmetryClass::T2B),
            other => Err(Error::invalid_argument(format!(
                "unknown kernel class `{other}` (expected R, T1, T2A or T2B)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SymmetryClass::R => "R",
            SymmetryClass::T1 => "T1",
            SymmetryClass::T2A => "T2A",
            SymmetryClass::T2B => "T2B",
        }
    }
}

impl fmt::Display for SymmetryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One kernel coordinate inside a tied-weight group. `sign` is +1 or -1;
/// only T2B groups carry a negative member.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitMember {
    pub row: usize,
    pub col: usize,
    pub sign: f64,
}

#[derive(Clone, Debug)]
pub struct OrbitGroup {
    pub members: Vec<OrbitMember>,
}

/// Partition of the coordinates of an `n x n` kernel into tied-weight groups.
///
/// Canonical index order is first appearance under a row-major scan, so the
/// 5x5 labels match the w_1..w_k layout of the four filter families. For T2B
/// the center coordinate belongs to no group: it is pinned to zero.
#[derive(Clone, Debug)]
pub struct OrbitMap {
    pub class: SymmetryClass,
    pub kernel_size: usize,
    pub groups: Vec<OrbitGroup>,
}

impl OrbitMap {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Center coordinate (0-based).
    pub fn center(&self) -> (usize, usize) {
        let c = self.kernel_size / 2;
        (c, c)
    }
}

fn check_kernel_size(kernel_size: usize) -> Result<()> {
    if kernel_size < 3 || kernel_size % 2 == 0 {
        return Err(Error::invalid_argument(format!(
            "kernel size must be odd and >= 3, got {kernel_size}"
        )));
    }
    Ok(())
}

/// Number of free weights for a kernel class at a given odd size.
pub fn count_parameters(class: SymmetryClass, kernel_size: usize) -> Result<usize> {
    check_kernel_size(kernel_size)?;
    let n = kernel_size;
    let h = n / 2;
    Ok(match class {
        SymmetryClass::R => n * n,
        SymmetryClass::T1 => (h + 1) * (h + 2) / 2,
        SymmetryClass::T2A => h * n + h + 1,
        SymmetryClass::T2B => h * n + h,
    })
}

/// Build the tied-weight partition for a kernel class.
///
/// T1 groups are dihedral orbits: two coordinates are tied iff their absolute
/// offsets from the center agree as unordered pairs. (Grouping by Euclidean
/// distance would merge distinct orbits at larger sizes, e.g. offsets (1,7)
/// and (5,5) both have squared distance 50.) T2A/T2B tie each coordinate to
/// its point reflection through the center.
pub fn build_orbit_map(class: SymmetryClass, kernel_size: usize) -> Result<OrbitMap> {
    check_kernel_size(kernel_size)?;
    let n = kernel_size;
    let c = n / 2;
    let mut groups: Vec<OrbitGroup> = Vec::new();

    match class {
        SymmetryClass::R => {
            for i in 0..n {
                for j in 0..n {
                    groups.push(OrbitGroup {
                        members: vec![OrbitMember { row: i, col: j, sign: 1.0 }],
                    });
                }
            }
        }
        SymmetryClass::T1 => {
            // key = unordered pair of absolute offsets from the center
            let mut index_of: Vec<((usize, usize), usize)> = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    let di = i.abs_diff(c);
                    let dj = j.abs_diff(c);
                    let key = (di.min(dj), di.max(dj));
                    let k = match index_of.iter().find(|(k, _)| *k == key) {
                        Some((_, k)) => *k,
                        None => {
                            index_of.push((key, groups.len()));
                            groups.push(OrbitGroup { members: Vec::new() });
                            groups.len() - 1
                        }
                    };
                    groups[k].members.push(OrbitMember { row: i, col: j, sign: 1.0 });
                }
            }
        }
        SymmetryClass::T2A | SymmetryClass::T2B => {
            let anti = class == SymmetryClass::T2B;
            for i in 0..n {
                for j in 0..n {
                    // Row-major scan: a coordinate opens a group only if its
                    // point reflection has not been seen yet, which keeps the
                    // positive member lexicographically before the center.
                    let (ri, rj) = (n - 1 - i, n - 1 - j);
                    if (ri, rj) < (i, j) {
                        continue; // reflection already scanned
                    }
                    if (i, j) == (c, c) {
                        if !anti {
                            groups.push(OrbitGroup {
                                members: vec![OrbitMember { row: i, col: j, sign: 1.0 }],
                            });
                        }
                        // T2B: the center is pinned to zero, never a parameter.
                        continue;
                    }
                    groups.push(OrbitGroup {
                        members: vec![
                            OrbitMember { row: i, col: j, sign: 1.0 },
                            OrbitMember {
                                row: ri,
                                col: rj,
                                sign: if anti { -1.0 } else { 1.0 },
                            },
                        ],
                    });
                }
            }
        }
    }

    Ok(OrbitMap { class, kernel_size, groups })
}

/// A kernel stored in canonical (free-weight) form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricKernel {
    pub class: SymmetryClass,
    pub kernel_size: usize,
    pub canonical: Vec<f64>,
}

impl SymmetricKernel {
    pub fn new(class: SymmetryClass, kernel_size: usize, canonical: Vec<f64>) -> Result<Self> {
        let expected = count_parameters(class, kernel_size)?;
        if canonical.len() != expected {
            return Err(Error::invalid_argument(format!(
                "canonical length {} does not match {} weights required by {class} at size {kernel_size}",
                canonical.len(),
                expected
            )));
        }
        Ok(SymmetricKernel { class, kernel_size, canonical })
    }

    pub fn zeros(class: SymmetryClass, kernel_size: usize) -> Result<Self> {
        let n = count_parameters(class, kernel_size)?;
        Ok(SymmetricKernel { class, kernel_size, canonical: vec![0.0; n] })
    }

    pub fn orbit_map(&self) -> OrbitMap {
        // size validated at construction
        build_orbit_map(self.class, self.kernel_size).expect("valid kernel")
    }
}

/// Expand canonical weights to the full 2D filter.
pub fn expand(kernel: &SymmetricKernel) -> Result<Matrix> {
    let map = build_orbit_map(kernel.class, kernel.kernel_size)?;
    expand_with(kernel, &map)
}

/// Expansion with a prebuilt orbit map (hot path).
pub fn expand_with(kernel: &SymmetricKernel, map: &OrbitMap) -> Result<Matrix> {
    if kernel.canonical.len() != map.group_count() || kernel.class != map.class {
        return Err(Error::invalid_argument(format!(
            "canonical length {} does not match orbit map with {} groups",
            kernel.canonical.len(),
            map.group_count()
        )));
    }
    let mut w = Matrix::zeros(kernel.kernel_size, kernel.kernel_size);
    for (k, group) in map.groups.iter().enumerate() {
        let v = kernel.canonical[k];
        for m in &group.members {
            w[(m.row, m.col)] = m.sign * v;
        }
    }
    Ok(w)
}

/// How T2B folds a kernel-shaped gradient onto canonical weights.
///
/// `Literal` keeps only the positive member's gradient; the negated copy is
/// restored by expansion after the step. `Consistent` subtracts the reflected
/// member's gradient, which is the exact derivative of the tied
/// parameterization. Classes other than T2B fold identically in both modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum T2bMode {
    Literal,
    Consistent,
}

impl T2bMode {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "literal" => Ok(T2bMode::Literal),
            "consistent" => Ok(T2bMode::Consistent),
            other => Err(Error::invalid_argument(format!(
                "unknown t2b mode `{other}` (expected literal or consistent)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            T2bMode::Literal => "literal",
            T2bMode::Consistent => "consistent",
        }
    }
}

impl fmt::Display for T2bMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fold a full kernel-shaped gradient onto the canonical parameters.
///
/// Gradients are summed over each orbit, not averaged. For T2B the center
/// contributes nothing in either mode.
pub fn fold_gradient(map: &OrbitMap, grad: &Matrix, mode: T2bMode) -> Result<Vec<f64>> {
    if grad.rows() != map.kernel_size || grad.cols() != map.kernel_size {
        return Err(Error::invalid_argument(format!(
            "gradient shape {}x{} does not match kernel size {}",
            grad.rows(),
            grad.cols(),
            map.kernel_size
        )));
    }
    let literal_t2b = map.class == SymmetryClass::T2B && mode == T2bMode::Literal;
    let mut out = Vec::with_capacity(map.group_count());
    for group in &map.groups {
        let delta = if literal_t2b {
            // positive member only; the negative half is re-derived by expansion
            let m = &group.members[0];
            grad[(m.row, m.col)]
        } else {
            group
                .members
                .iter()
                .map(|m| m.sign * grad[(m.row, m.col)])
                .sum()
        };
        out.push(delta);
    }
    Ok(out)
}

/// Initialization parameters: zero-mean Gaussian with `std = 1/sqrt(fan_in)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub std: f64,
    pub seed: u64,
}

impl InitSpec {
    pub fn from_fan_in(fan_in: usize, seed: u64) -> Self {
        InitSpec {
            std: 1.0 / (fan_in as f64).sqrt(),
            seed,
        }
    }
}

/// Draw a fresh kernel; only the canonical weights consume random draws.
pub fn init_kernel(class: SymmetryClass, kernel_size: usize, spec: &InitSpec) -> Result<SymmetricKernel> {
    if !(spec.std > 0.0) {
        return Err(Error::invalid_argument(format!(
            "init std must be positive, got {}",
            spec.std
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    random_kernel(class, kernel_size, spec.std, &mut rng)
}

/// Like [`init_kernel`] but drawing from a caller-owned stream, so a whole
/// network can be initialized from one seed.
pub fn random_kernel(
    class: SymmetryClass,
    kernel_size: usize,
    std: f64,
    rng: &mut impl rand::Rng,
) -> Result<SymmetricKernel> {
    let n = count_parameters(class, kernel_size)?;
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::invalid_argument(format!("bad normal parameters: {e}")))?;
    let canonical = (0..n).map(|_| normal.sample(rng)).collect();
    Ok(SymmetricKernel { class, kernel_size, canonical })
}
