//! Cardiac key-frame detection from sequential deformable registration.
//!
//! Frames of a cine sequence are registered pairwise, the displacement
//! fields are reduced to a signed direction curve relative to a focus
//! point, and five key frames are read off that curve by a fixed rule set.

pub mod descriptor;
pub mod evalqc;
pub mod imgvol;
pub mod phantom;
pub mod phases;
pub mod register;
pub mod stats;
