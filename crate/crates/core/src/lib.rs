//! Temperature-attributable mortality modelling.
//!
//! The crate couples three statistical components into one projection
//! pipeline:
//!
//! * a distributed-lag non-linear regression of daily death counts on daily
//!   mean temperature ([`dlnm`]), from which temperature-attributable death
//!   fractions are derived ([`attribution`]);
//! * a two-population stochastic mortality trend model fitted to annual
//!   deaths and exposures ([`lilee`]), with its period indices driven by a
//!   random-walk-with-drift plus two AR(1) components ([`timeseries`]);
//! * projection utilities that combine simulated mortality trends with
//!   climate-scenario temperature paths to produce death rates, death
//!   probabilities and life-expectancy losses with Monte Carlo prediction
//!   intervals ([`forecast`]), plus heatwave episode detection ([`heatwave`]).
//!
//! [`data`] and [`io`] hold the shared containers and the CSV exchange
//! formats; [`synth`] generates fully synthetic datasets with known ground
//! truth for testing and demonstration.

pub mod attribution;
pub mod basis;
pub mod data;
pub mod dlnm;
pub mod forecast;
pub mod glm;
pub mod heatwave;
pub mod io;
pub mod lilee;
mod optim;
pub mod rng;
pub mod synth;
pub mod timeseries;
