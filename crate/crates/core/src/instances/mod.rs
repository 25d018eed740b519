//! Instance synthesis: shared dynamics plus low-rank per-user rewards.

pub mod bundle;
pub mod coherence;
pub mod linear;
pub mod tabular;

pub use bundle::{Bundle, BundleKind};
pub use coherence::{coherence, subspace_coherence, CoherenceReport};
pub use linear::{gen_linear_instance, gen_planted_instance, LinearDesign, LinearMdpSpec, LinearParams, ThetaSet};
pub use tabular::{gen_tabular_instance, random_mdp, RewardMatrixSet, TabularParams};
