//! Ellipsoidal invariant synthesis and certificate checking for a C-subset
//! controller language.
//!
//! The pipeline is: [`frontend`] (parse, CFG, unroll) → [`roles`] →
//! [`semantics`] (rule compilation) → [`synthesis`] → [`certificate`].
//! [`sim`] runs the program concretely against a checked invariant.

pub mod certificate;
pub mod ellipsoid;
pub mod frontend;
pub mod linalg;
pub mod pipeline;
pub mod roles;
pub mod semantics;
pub mod sim;
pub mod synthesis;

pub use certificate::{emit, replay, verify_file, CertError, Certificate, Report, Verdict};
pub use ellipsoid::{Ellipsoid, EllipsoidError, Form, SymMatrix};
pub use frontend::{FrontendError, SourceProgram, Span};
pub use linalg::Matrix;
pub use pipeline::{analyze_source, Analysis, PipelineError};
pub use roles::{Role, RoleMap};
pub use semantics::{LoopSummary, RuleInstance, RuleKind};
pub use sim::{simulate, Policy, SimOptions, SimReport};
pub use synthesis::{synthesize, Margin, Status, SynthesisConfig, SynthesisResult};
