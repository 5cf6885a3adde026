//! Core of the interactive lesion segmentation service: volume and mask
//! I/O, the segmentation backend slot, slice propagation, reference
//! retrieval, surface meshing, evaluation metrics and the session state
//! machine that the network service drives.

pub mod components;
pub mod mask;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod propagation;
pub mod protocol;
pub mod retrieval;
pub mod segmenter;
pub mod session;
pub mod volume;
