//! POD-DEIM reduced-order model.

pub mod deim;
pub mod operators;
pub mod pod;
pub mod solve;

pub use deim::{deim_build, DeimInterpolant};
pub use operators::{cost_vectors, project_operators, CostVectors, EnlargedBasis, ReducedBasis, RomOperators};
pub use pod::{pod, GramFactor, Pod, PodRule};
pub use solve::{lift, solve_rom, solve_rom_sensitivities, RomSensitivities, RomTrajectory};

use nalgebra::DMatrix;

use crate::error::Result;
use crate::fom::FullOrderModel;
use crate::problem::Parameter;

/// A reduced model on nested spaces: operators for the enlarged basis and
/// their leading blocks for the reduced one, sharing one DEIM interpolant.
#[derive(Debug, Clone)]
pub struct NestedRom {
    pub basis: EnlargedBasis,
    pub deim: DeimInterpolant,
    pub big: RomOperators,
    pub small: RomOperators,
}

impl NestedRom {
    pub fn build(model: &FullOrderModel, basis: EnlargedBasis, deim: DeimInterpolant) -> Self {
        let big = project_operators(model, &basis.enlarged(), &deim);
        let small = big.truncate(basis.l_y, basis.l_q);
        Self { basis, deim, big, small }
    }

    /// Projects data `w` (one `V0` column per time node) for cost evaluation.
    pub fn attach_data(&mut self, model: &FullOrderModel, w: &DMatrix<f64>) {
        self.big.cost = Some(cost_vectors(&model.ops.mq, &self.basis.psi_q, w));
        self.small = self.big.truncate(self.basis.l_y, self.basis.l_q);
    }

    pub fn l_y(&self) -> usize {
        self.basis.l_y
    }

    pub fn l_q(&self) -> usize {
        self.basis.l_q
    }

    pub fn m_y(&self) -> usize {
        self.basis.m_y()
    }

    pub fn m_q(&self) -> usize {
        self.basis.m_q()
    }

    pub fn solve_small(&self, mu: &Parameter) -> Result<RomTrajectory> {
        solve_rom(mu, &self.small)
    }

    pub fn solve_big(&self, mu: &Parameter) -> Result<RomTrajectory> {
        solve_rom(mu, &self.big)
    }
}
