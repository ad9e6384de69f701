//! Desk-scale co-simulation platform for developing energy-efficient
//! connected/automated driving: synthetic drive cycles become dual-format
//! road networks, a traffic world with V2I signal timing surrounds a
//! longitudinal vehicle + conventional powertrain plant, and eco-driving
//! strategies are evaluated against a baseline driver over a lockstep or
//! UDP-coupled message bus.

pub mod bus;
pub mod config;
pub mod cycle;
pub mod mapgen;
pub mod planner;
pub mod traffic;
pub mod vehicle;
