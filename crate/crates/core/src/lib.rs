//! Generate-and-rank orchestration for open-domain conversational agents.
//!
//! A turn fans out to many response generators under per-generator hedging
//! policies, filters the candidates through guardrails, and picks one with a
//! ranker. Rule responders and declarative state machines take over where a
//! scripted reply fits better. See the guide in `book/` for a walkthrough.

pub mod dialogue;
pub mod fsm;
pub mod generators;
pub mod guardrails;
pub mod knowledge;
pub mod nlp;
pub mod ranker;
pub mod service;

/// Guide chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/turn.md")]
    mod turn {}
    #[doc = include_str!("../../../book/src/fanout.md")]
    mod fanout {}
    #[doc = include_str!("../../../book/src/guardrails.md")]
    mod guardrails {}
    #[doc = include_str!("../../../book/src/fsm.md")]
    mod fsm {}
    #[doc = include_str!("../../../book/src/ranker.md")]
    mod ranker {}
    #[doc = include_str!("../../../book/src/http.md")]
    mod http {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/testing.md")]
    mod testing {}
}
