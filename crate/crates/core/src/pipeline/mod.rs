//! Model files, the plaintext reference transformer and the private
//! forward pass.

pub mod model;
pub mod oracle;
pub mod private;
pub mod report;
pub mod toy;

pub use model::{Dims, LayerMeta, Model, ModelManifest};
pub use oracle::{plaintext_forward, OracleMode, OracleOutput, Variant};
pub use private::{private_forward, PrivateRun};
pub use report::{InferenceReport, LayerReport};
