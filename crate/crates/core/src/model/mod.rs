//! Physical models: field-mode bases, Hamiltonian descriptions, initial states
//! and the declarative scenario format.

mod hamiltonian;
mod modes;
mod scenario;
mod state;

pub use hamiltonian::{
    ComplexMatrix, Coupling, FieldModeSpec, FieldModel, GuidanceLaw, HamiltonianSpec, MagneticField, Model,
    ModelError, ModelKind, ParticleSpec, PauliSpec, Potential, SpatialAxis, HERMITIAN_TOL,
};
pub use modes::{polarization_vectors, ModeBasis, ModeBasisError, ModePair, Quadrature, QuadratureLabel};
pub use scenario::{
    apply_override, validate_scenario, AxisSpec, EXACT_SCHEME_MAX_DIM, FOCK_MAX_DIM, FOCK_MAX_OCCUPATION, BranchSpec, Diagnostic, Domain, EnsembleSpec, InitialDistribution,
    NodePolicy, OverlaySpec, Scenario, ScenarioError, Scheme, TimeSpec,
};
pub use state::{coherent_wavefunction, ComplexNumber, InitialState, StateContext, StateError, SuperpositionTerm};
