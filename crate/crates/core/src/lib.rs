//! Core algorithms for radiomics-informed radiology report completion.
//!
//! Everything in this crate is pure and allocation-only so it builds under
//! `#![no_std]`. File IO, HTTP and the command line live in the `radassist`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod completion;
pub mod corpus;
pub mod imaging;
pub mod metrics;
pub mod promptgen;
pub mod radiomics;
pub mod rle;
pub mod router;
pub mod text;

pub use completion::{
    AcceptMode, Backend, BackendError, BackendParams, CompletionSession, FeedbackEvent,
    FeedbackKind, RuleBackend, SessionError, Suggestion, SuggestionStatus, TokenSink,
};
pub use imaging::{Axis, ImagingError, LabelMask, Modality, SliceRaster, VoxelVolume};
pub use metrics::{EvalResult, Stratum};
pub use promptgen::InformativePrompt;
pub use radiomics::{LateralityRatio, OrganFeatureSet};
pub use router::{KeywordHit, RouteDecision, StudyDescriptor};
