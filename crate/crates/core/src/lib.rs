//! Detection of crypto-vehicle transfers in exchange ledgers and estimation
//! of how a dated fiscal shock moves the resulting cross-border flows.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`ingest`]: ledger, rate-table and country-classification parsing.
//! - [`matcher`]: equal-size trade pairing with a running-distribution p-value.
//! - [`panel`]: country × week flow panels and control-group selection.
//! - [`econ`]: Poisson QMLE and OLS two-way fixed effects, event studies,
//!   country-clustered covariance.
//! - [`sdid`]: synthetic difference-in-differences with placebo inference.
//! - [`spillover`]: counterfactual series and scenario extrapolation.
//! - [`synth`]: ground-truth generators for ledgers and panels.

pub mod econ;
pub mod ingest;
pub mod matcher;
pub mod panel;
pub mod sdid;
pub mod spillover;
pub mod synth;

mod country;

pub use country::{CountryCode, CountryCodeError};
pub use econ::{EconError, EventStudyResult, FitResult, TreatSpec};
pub use ingest::{CountryClassification, IncomeGroup, IngestError, RateTable, TradeRecord};
pub use matcher::{FlowClass, MatchError, MatchParams, SizeDistribution, VehicleTrade};
pub use panel::{
    ControlRule, CounterpartyFilter, Direction, FlowPanel, Measure, PanelError, PanelSpec,
};
pub use sdid::{SdidConfig, SdidError, SdidProblem, SdidResult, SdidWeights};
pub use spillover::{CounterfactualSeries, ScenarioRow, SpilloverError};
pub use synth::{LedgerConfig, PanelDgp, PanelTruth, SynthError};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
