//! Human full-body motion prediction with gradient-based refinement.
//!
//! The pipeline: a position-velocity recurrent network extrapolates an
//! observed motion window into the future, and a trajectory optimizer
//! then bends that prediction toward task evidence (a reaching goal,
//! obstacle clearance, coordination with a moving robot) by perturbing
//! the velocity inputs of the decoder. Costs follow the weighted-sum
//! objective over perturbations and an optional robot trajectory, and
//! are minimized with L-BFGS.
//!
//! Module map:
//! - [`kinematics`]: rotations, skeletons, forward kinematics, trajectories
//! - [`scene`]: signed-distance obstacle geometry
//! - [`model`]: the recurrent predictor, rollouts, backpropagation, model files
//! - [`training`]: dataset slicing, augmentation, loss, the training loop
//! - [`costs`]: objective terms and their gradients
//! - [`optimizer`]: L-BFGS and the prediction/joint refinement drivers
//! - [`dataio`]: synthetic data, baselines, evaluation, file formats

pub mod costs;
pub mod dataio;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod optimizer;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
