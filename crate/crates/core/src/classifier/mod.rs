//! MobileFaceNet backbone and the two interchangeable classification heads.

#[cfg(feature = "nn")]
mod head;
mod margin;
#[cfg(feature = "nn")]
mod mfn;

#[cfg(feature = "nn")]
pub use head::ClassifierHead;
pub use margin::{arcface_target_logit, classification_loss, log_softmax, softmax, HeadConfig, HeadKind};
#[cfg(feature = "nn")]
pub use mfn::{BottleneckSpec, MfnConfig, MobileFaceNet};
