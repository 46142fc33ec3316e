//! Intent prediction for task-oriented dialogue, trained jointly with
//! successive-user-utterance generation and improved at inference time by
//! generating look-ahead user utterances.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] ingests MultiWOZ / SGD / canonical dialogues, extracts
//!   same-intent windows and produces the data splits.
//! * [`tasks`] turns windows into text-in/text-out [`tasks::TaskExample`]s.
//! * [`weak`] adds weak labels by agreement of two classifiers.
//! * [`backend`] abstracts the text-to-text model (scripted oracle and a small
//!   trainable model).
//! * [`regime`] runs the multi-stage training regimes.
//! * [`lookahead`] evaluates the truncated-context and generation scenarios.
//! * [`conflict`] resolves conflicting intents with counterfactual utterances.
//! * [`harness`] holds configuration, run manifests, reports and the pipeline.

pub mod backend;
pub mod conflict;
pub mod corpus;
pub mod harness;
pub mod lookahead;
pub mod records;
pub mod regime;
pub mod tasks;
pub mod text;
pub mod weak;
