#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod autodiff;
pub mod detector;
pub mod heatmap;
pub mod landmarks;
pub mod metrics;
pub mod phantom;
pub mod pose;
pub mod poselib;
pub mod ssl;
pub mod tensor;
pub mod volume;
