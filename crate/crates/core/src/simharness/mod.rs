//! Synthetic network designs and replication studies.

pub mod design;
mod study;

pub use design::{
    generate_graph, generate_outcomes, interference_values, presets, true_adet, Graphon, InterferenceFn, Law,
    SimDesign,
};
pub use study::{
    draw_repetition, run_adet_study, run_k0_study, AdetStudyResult, AdetStudySpec, CellSummary, DrawnRepetition,
    K0RepetitionRecord, K0StudyResult, K0Summary, RepetitionSummary, StudyMethod,
};
