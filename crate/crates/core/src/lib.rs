//! Streaming, label-free uncertainty monitoring for classifiers on
//! temporally correlated data.
//!
//! The library watches a stream of posterior vectors (and optionally
//! projected feature vectors) emitted by a frozen classifier and converts
//! short-horizon temporal consistency into a calibrated risk score with an
//! accept/abstain decision per step:
//!
//! 1. [`window`] keeps a constant-size ring of recent posteriors, features
//!    and predicted labels.
//! 2. [`signals`] turns the window plus the current step into four bounded
//!    consistency signals and aggregates them into an uncertainty score.
//! 3. [`conformal`] blends the score with a confidence term into a
//!    nonconformity value, tracks its streaming quantile, and applies a
//!    budgeted abstention policy.
//! 4. [`quantized`] provides integer/table-lookup variants of the signal
//!    kernels for targets without fast transcendentals.
//! 5. [`fitting`] fits the signal aggregation weights offline from a
//!    labeled development stream.
//! 6. [`evaluation`] implements the offline metric suite (accuracy-drop
//!    detection, failure separability, calibration, budget adherence).
//! 7. [`streamgen`] synthesizes deterministic evaluation streams with
//!    clean, corrupted and out-of-distribution segments.
//! 8. [`monitor`] wires 1-3 into a single per-step state machine.
//!
//! Everything is deterministic: no wall clock, no OS entropy. Randomness
//! enters only through explicit seeds in [`streamgen`].

pub mod conformal;
pub mod evaluation;
pub mod fitting;
pub mod monitor;
pub mod quantized;
pub mod record;
pub mod signals;
pub mod streamgen;
pub mod streamio;
pub mod window;

pub use conformal::{BudgetController, CalibConfig, Decision, MonitorState, QuantileTracker, Verdict};
pub use monitor::{Monitor, MonitorConfig, StepOutput};
pub use record::{GroundTruth, StreamRecord};
pub use signals::{CombinerParams, SignalConfig, SignalVector};
pub use window::TemporalWindow;
