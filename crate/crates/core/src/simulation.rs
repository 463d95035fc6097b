use crate::error::Result;

/// A forward problem linearized around a model.
///
/// `fields` evaluates the physics at `model` and keeps whatever state the
/// sensitivity products need (for DC resistivity: the factorization and the
/// source potentials).
pub trait Simulation {
    type Fields;

    fn n_data(&self) -> usize;

    fn n_model(&self) -> usize;

    fn fields(&self, model: &[f64]) -> Result<Self::Fields>;

    fn predicted(&self, fields: &Self::Fields) -> Vec<f64>;

    /// `J v`, J = ∂d/∂m at the model `fields` was built for.
    fn jvec(&self, fields: &Self::Fields, v: &[f64]) -> Result<Vec<f64>>;

    /// `Jᵀ u`
    fn jtvec(&self, fields: &Self::Fields, u: &[f64]) -> Result<Vec<f64>>;
}
