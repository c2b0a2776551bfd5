//! Demonstration augmentation for dexterous manipulation imitation learning.
//!
//! A small deterministic simulator with three tasks, a demonstration format
//! with replayable state snapshots, visual and trajectory augmentation
//! operators, a nearest-neighbor chunked behavior-cloning learner and the
//! curriculum loop that ties them together.

pub mod augment;
pub mod curriculum;
pub mod demo;
pub mod learner;
pub mod render;
pub mod se3;
pub mod seed;
pub mod sim;
