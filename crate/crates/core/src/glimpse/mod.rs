//! Entropy maps, glimpse selection and the exploration loop.

mod entropy;
mod explore;
mod retina;
mod select;
mod spec;

pub use entropy::{entropy_map, shannon_entropy, EntropyMap, ROW_SUM_TOLERANCE};
pub use explore::{
    explore, metric_name, run_selection, visible_from, EpisodeReport, ExplorationState, ExploreOptions, StepRecord,
};
pub use retina::{extract_retinal_glimpse, Canvas, RetinalGlimpse};
pub use select::{select_ame, select_random, Checkerboard, Selector, SelectorKind};
pub use spec::{Anchor, GlimpseKind, GlimpseSpec};
