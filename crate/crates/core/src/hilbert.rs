//! Tensor-product Hilbert space of electrons, two photon modes and the
//! nuclear grid.
//!
//! Axes are stored in the fixed order (electronic, cavity, fluorescence,
//! grid) with the grid fastest-varying, so every operator that acts along
//! the nuclear coordinate touches contiguous memory.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dimensions of the product space plus the nuclear grid window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceShape {
    /// 4 for the two-electron dimer sector, 2 for the two-level system.
    pub n_elec: usize,
    /// Cavity Fock cutoff (occupations 0..n_cav).
    pub n_cav: usize,
    /// Fluorescence Fock cutoff.
    pub n_flu: usize,
    /// Nuclear grid points; 1 freezes the bond length.
    pub n_grid: usize,
    pub grid_min: f64,
    pub grid_max: f64,
}

impl SpaceShape {
    pub fn rigid(n_elec: usize, n_cav: usize, n_flu: usize) -> Self {
        SpaceShape {
            n_elec,
            n_cav,
            n_flu,
            n_grid: 1,
            grid_min: 0.3,
            grid_max: 12.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_elec * self.n_cav * self.n_flu * self.n_grid
    }

    pub fn is_rigid(&self) -> bool {
        self.n_grid == 1
    }
}

/// The four labels of a product basis state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FlatIndex {
    pub lambda: usize,
    pub n: usize,
    pub m: usize,
    pub j: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axis {
    Electronic,
    Cavity,
    Fluorescence,
    Grid,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Electronic, Axis::Cavity, Axis::Fluorescence, Axis::Grid];
}

/// Validated space with index arithmetic and grid coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct HilbertSpace {
    shape: SpaceShape,
    dim: usize,
    dx: f64,
    grid: Vec<f64>,
}

/// Validates `shape` and returns the corresponding space.
pub fn build_space(shape: SpaceShape) -> Result<HilbertSpace> {
    HilbertSpace::new(shape)
}

impl HilbertSpace {
    pub fn new(shape: SpaceShape) -> Result<Self> {
        let dims = [
            ("n_elec", shape.n_elec),
            ("n_cav", shape.n_cav),
            ("n_flu", shape.n_flu),
            ("n_grid", shape.n_grid),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::InvalidShape(format!("{name} must be >= 1")));
            }
        }
        if shape.n_elec != 2 && shape.n_elec != 4 {
            return Err(Error::InvalidShape(format!(
                "n_elec must be 2 (two-level system) or 4 (dimer), got {}",
                shape.n_elec
            )));
        }
        let (dx, grid) = if shape.n_grid > 1 {
            if !(shape.grid_min > 0.0) || !shape.grid_min.is_finite() {
                return Err(Error::InvalidShape(format!(
                    "grid_min must be > 0, got {}",
                    shape.grid_min
                )));
            }
            if !(shape.grid_max > shape.grid_min) || !shape.grid_max.is_finite() {
                return Err(Error::InvalidShape(format!(
                    "grid_max ({}) must exceed grid_min ({})",
                    shape.grid_max, shape.grid_min
                )));
            }
            let dx = (shape.grid_max - shape.grid_min) / (shape.n_grid - 1) as f64;
            let grid = (0..shape.n_grid).map(|j| shape.grid_min + j as f64 * dx).collect();
            (dx, grid)
        } else {
            (0.0, Vec::new())
        };
        Ok(HilbertSpace {
            shape,
            dim: shape.dim(),
            dx,
            grid,
        })
    }

    pub fn shape(&self) -> &SpaceShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Grid spacing; zero for a rigid space.
    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Grid coordinates x_j; empty for a rigid space.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    #[inline]
    pub fn index(&self, idx: FlatIndex) -> usize {
        let s = &self.shape;
        ((idx.lambda * s.n_cav + idx.n) * s.n_flu + idx.m) * s.n_grid + idx.j
    }

    #[inline]
    pub fn unindex(&self, flat: usize) -> FlatIndex {
        let s = &self.shape;
        let j = flat % s.n_grid;
        let rest = flat / s.n_grid;
        let m = rest % s.n_flu;
        let rest = rest / s.n_flu;
        let n = rest % s.n_cav;
        let lambda = rest / s.n_cav;
        FlatIndex { lambda, n, m, j }
    }

    fn axis_len(&self, axis: Axis) -> usize {
        match axis {
            Axis::Electronic => self.shape.n_elec,
            Axis::Cavity => self.shape.n_cav,
            Axis::Fluorescence => self.shape.n_flu,
            Axis::Grid => self.shape.n_grid,
        }
    }

    pub fn zeros(&self) -> StateVector {
        StateVector {
            shape: self.shape,
            amplitudes: vec![C64::new(0.0, 0.0); self.dim],
        }
    }

    pub fn basis_state(&self, idx: FlatIndex) -> StateVector {
        let mut s = self.zeros();
        s.amplitudes[self.index(idx)] = C64::new(1.0, 0.0);
        s
    }

    /// Product state built from per-axis factors.
    pub fn product_state(
        &self,
        electronic: &[C64],
        cavity: &[C64],
        fluorescence: &[C64],
        grid: &[C64],
    ) -> Result<StateVector> {
        let s = &self.shape;
        check_len(electronic.len(), s.n_elec)?;
        check_len(cavity.len(), s.n_cav)?;
        check_len(fluorescence.len(), s.n_flu)?;
        check_len(grid.len(), s.n_grid)?;
        let mut amps = Vec::with_capacity(self.dim);
        for &e in electronic {
            for &c in cavity {
                for &f in fluorescence {
                    let ecf = e * c * f;
                    amps.extend(grid.iter().map(|&g| ecf * g));
                }
            }
        }
        Ok(StateVector {
            shape: self.shape,
            amplitudes: amps,
        })
    }

    /// Sum of |amplitude|² over all axes not in `keep`.
    pub fn marginal_probability(&self, state: &StateVector, keep: &[Axis]) -> Result<Marginal> {
        self.check(state)?;
        let mut axes: Vec<Axis> = keep.to_vec();
        axes.sort();
        axes.dedup();
        let dims: Vec<usize> = axes.iter().map(|&a| self.axis_len(a)).collect();
        let mut probs = vec![0.0; dims.iter().product()];
        for (flat, a) in state.amplitudes.iter().enumerate() {
            let idx = self.unindex(flat);
            let mut k = 0;
            for &axis in &axes {
                let (v, len) = match axis {
                    Axis::Electronic => (idx.lambda, self.shape.n_elec),
                    Axis::Cavity => (idx.n, self.shape.n_cav),
                    Axis::Fluorescence => (idx.m, self.shape.n_flu),
                    Axis::Grid => (idx.j, self.shape.n_grid),
                };
                k = k * len + v;
            }
            probs[k] += a.norm_sqr();
        }
        Ok(Marginal { axes, dims, probs })
    }

    pub fn check(&self, state: &StateVector) -> Result<()> {
        if state.shape != self.shape {
            return Err(Error::InvalidShape(format!(
                "state shape {:?} does not match space {:?}",
                state.shape, self.shape
            )));
        }
        check_len(state.amplitudes.len(), self.dim)
    }
}

fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

/// Probability table over the kept axes, row-major in axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub axes: Vec<Axis>,
    pub dims: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Marginal {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Complex amplitudes on a [`SpaceShape`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub shape: SpaceShape,
    pub amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amplitudes.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }
}

/// ⟨a|b⟩ = Σ conj(a_i) b_i
#[inline]
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(n_elec: usize, n_cav: usize, n_flu: usize, n_grid: usize) -> HilbertSpace {
        build_space(SpaceShape {
            n_elec,
            n_cav,
            n_flu,
            n_grid,
            grid_min: 0.3,
            grid_max: 12.0,
        })
        .unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(space(4, 2, 2, 1).dim(), 16);
        assert_eq!(space(4, 30, 6, 240).dim(), 172_800);
        assert_eq!(space(2, 12, 6, 1).dim(), 144);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut s = SpaceShape::rigid(4, 0, 2);
        assert!(build_space(s).is_err());
        s.n_cav = 3;
        s.n_grid = 10;
        s.grid_min = 0.0;
        assert!(build_space(s).is_err());
        s.grid_min = 2.0;
        s.grid_max = 1.0;
        assert!(build_space(s).is_err());
        // grid bounds are irrelevant for a rigid molecule
        s.n_grid = 1;
        assert!(build_space(s).is_ok());
        s.n_elec = 3;
        assert!(build_space(s).is_err());
    }

    #[test]
    fn grid_coordinates() {
        let sp = space(4, 1, 1, 5);
        let dx = (12.0 - 0.3) / 4.0;
        assert_eq!(sp.dx(), dx);
        assert_eq!(sp.grid()[0], 0.3);
        assert!((sp.grid()[4] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn index_bijection_exhaustive() {
        let sp = space(4, 3, 2, 5);
        let mut seen = vec![false; sp.dim()];
        for lambda in 0..4 {
            for n in 0..3 {
                for m in 0..2 {
                    for j in 0..5 {
                        let idx = FlatIndex { lambda, n, m, j };
                        let flat = sp.index(idx);
                        assert!(!seen[flat]);
                        seen[flat] = true;
                        assert_eq!(sp.unindex(flat), idx);
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn marginal_delta_and_born_rule() {
        let sp = space(4, 4, 3, 1);
        let st = sp.basis_state(FlatIndex {
            lambda: 0,
            n: 1,
            m: 0,
            j: 0,
        });
        let cav = sp.marginal_probability(&st, &[Axis::Cavity]).unwrap();
        assert_eq!(cav.probs, vec![0.0, 1.0, 0.0, 0.0]);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut st = sp.zeros();
        st.amplitudes[sp.index(FlatIndex {
            lambda: 1,
            n: 2,
            m: 0,
            j: 0,
        })] = C64::new(h, 0.0);
        st.amplitudes[sp.index(FlatIndex {
            lambda: 1,
            n: 2,
            m: 1,
            j: 0,
        })] = C64::new(0.0, h);
        let flu = sp.marginal_probability(&st, &[Axis::Fluorescence]).unwrap();
        assert!((flu.probs[0] - 0.5).abs() < 1e-15);
        assert!((flu.probs[1] - 0.5).abs() < 1e-15);
        assert_eq!(flu.probs[2], 0.0);
    }

    fn arb_state(sp: &HilbertSpace) -> impl Strategy<Value = StateVector> {
        let shape = *sp.shape();
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), sp.dim()).prop_map(move |v| {
            let mut s = StateVector {
                shape,
                amplitudes: v.into_iter().map(|(a, b)| C64::new(a, b)).collect(),
            };
            s.normalize();
            s
        })
    }

    proptest! {
        #[test]
        fn marginals_compose_and_normalize(st in arb_state(&space(4, 3, 3, 4))) {
            let sp = space(4, 3, 3, 4);
            let full = sp.marginal_probability(&st, &Axis::ALL).unwrap();
            prop_assert!((full.total() - 1.0).abs() < 1e-12);
            prop_assert!(full.probs.iter().all(|&p| p >= 0.0));

            let cav = sp.marginal_probability(&st, &[Axis::Cavity]).unwrap();
            let cf = sp.marginal_probability(&st, &[Axis::Fluorescence, Axis::Cavity]).unwrap();
            prop_assert_eq!(&cf.axes, &vec![Axis::Cavity, Axis::Fluorescence]);
            for n in 0..3 {
                let summed: f64 = (0..3).map(|m| cf.probs[n * 3 + m]).sum();
                prop_assert!((summed - cav.probs[n]).abs() < 1e-14);
            }
        }

        #[test]
        fn inner_product_conjugate_symmetric(a in arb_state(&space(2, 3, 2, 1)),
                                             b in arb_state(&space(2, 3, 2, 1))) {
            let ab = a.inner(&b);
            let ba = b.inner(&a);
            prop_assert!((ab - ba.conj()).norm() < 1e-14);
            prop_assert!(a.inner(&a).re >= 0.0);
            prop_assert!(a.inner(&a).im.abs() < 1e-15);
        }
    }
}
