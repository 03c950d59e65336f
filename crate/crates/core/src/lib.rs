//! Contract triage: classify Solidity contracts as malicious or benign
//! from static-analysis findings, then repair the flagged ones.
//!
//! The pipeline stages, in run order:
//!
//! 1. [`ingest`] fetches verified sources from an explorer API (or reads
//!    a local corpus file).
//! 2. [`solprep`] rewrites pragmas so a contract can be compiled under a
//!    ladder of compiler versions.
//! 3. [`analyzer`] runs detectors (builtin token-pattern ones, or an
//!    external tool via subprocess) and records findings per contract.
//! 4. [`features`] turns findings plus source text into fixed-width
//!    numeric vectors.
//! 5. [`forest`] trains a random forest on those vectors and classifies
//!    held-out contracts.
//! 6. [`repair`] sends flagged contracts through an LLM repair loop and
//!    re-analyzes the result.
//! 7. [`report`] aggregates before/after findings into summary artifacts.
//!
//! [`corpus`] defines the record types shared by every stage, [`gen`]
//! synthesizes labeled corpora for offline runs, and [`pipeline`] wires
//! the stages together behind one configuration struct.

pub mod analyzer;
pub mod clock;
pub mod corpus;
pub mod features;
pub mod forest;
pub mod gen;
pub mod ingest;
pub mod pipeline;
pub mod repair;
pub mod report;
pub mod seeds;
pub mod solprep;
pub mod transport;
