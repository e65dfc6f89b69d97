//! Predictor-based networked control under uncertain transmission delays.
//!
//! A plant `ẋ = Ax + Bu` is controlled over two lossy-timing networks:
//! measurements reach the controller after `r0 + η_k`, control values reach
//! the actuators after `r1 + μ_k`. The controller compensates the known
//! transport part `r0 + r1` with a state predictor and optionally throttles
//! transmissions with an event trigger. This crate provides
//!
//! * exact discrete-event simulation of the sampled, event-triggered,
//!   continuous-predictor and switching-trigger closed loops ([`simulator`]),
//! * the predictor itself, in integral and ODE form ([`predictor`]),
//! * LMI feasibility certificates of exponential decay for each loop,
//!   checked through a pluggable SDP backend ([`lmi`]),
//! * gain synthesis and parameter searches ([`design`]),
//! * the inverted-pendulum-on-a-cart benchmark ([`bench`]).

pub mod bench;
pub mod config;
pub mod design;
pub mod error;
pub mod lmi;
pub mod matexp;
pub mod model;
pub mod predictor;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{DelayBounds, DelayProfile, EventTimeline, Gain, LtiPlant, Scenario, TriggerParams};
