//! Helpers shared by the integration targets.
#![allow(dead_code)]

pub mod oracle;
