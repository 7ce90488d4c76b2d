//! Evaluate a STATCOM's field response by replaying fault-recorder voltage
//! through an average-value controller model and scoring the simulated
//! reactive power against the recorded one.
//!
//! Module map:
//!
//! * [`records`]: cfg/dat ingestion, phasors, sequence components, Q.
//! * [`simcore`]: fixed-step droop/Q-control simulation against a Thevenin
//!   grid or a played-back voltage.
//! * [`gaintune`]: dQ/dV probing, gain lookup, gain/reactance calibration
//!   and passive gain reduction.
//! * [`evalpipe`]: the end-to-end evaluation and report rendering.
//! * [`synthgen`]: synthetic fault events for desk testing.
//! * [`cli`]: the `statcom-eval` command line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod evalpipe;
pub mod gaintune;
pub mod records;
pub mod simcore;
pub mod synthgen;
