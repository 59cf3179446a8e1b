#![allow(dead_code)]

pub mod enumerate;
pub mod roundtrip;
pub mod walk;
