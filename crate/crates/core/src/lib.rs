//! Geometry of ReLU networks and certification of local individual fairness.

pub mod certifier;
pub mod error;
pub mod geometry;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod spec;

pub use certifier::{certify_fairness, geocert_lb, CertificateBundle, CertifyOptions, Outcome, TraversalTrace};
pub use error::{Error, Result};
pub use geometry::{ActivationCode, Cell, Halfspace, Polytope, TightRow};
pub use model::{Layer, ModelWeights};
pub use spec::{SensitiveFeature, SensitiveSpec};
