#![allow(dead_code)]

pub mod ap_ref;
pub mod attention_ref;
pub mod conv_ref;
pub mod grad_cases;
pub mod gradcheck;
pub mod nms_ref;
pub mod raster_ref;
pub mod scenes;
