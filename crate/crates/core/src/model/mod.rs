//! Network description, construction and analysis.

mod config;
mod features;
mod msff;
mod network;
mod params;
mod rf;
mod trace;

pub use config::{
    ArchConfig, BlockSpec, BranchConfig, BranchKind, LayerKind, LayerSpec, MsffConfig, Preset, Resample, Variant,
};
pub use features::{dump_feature_maps, select_features, DumpedMap};
pub use msff::{msff, msff_on_tape};
pub use network::{Branch, BranchRun, Forward, Injections, Oucd};
pub use params::{Bound, ParamStore};
pub use rf::{receptive_field, render_rf_table, rf_table, RfQuery, RfRow};
pub use trace::{ShapeTrace, TraceRow};
