//! Long-term conversational memory that reasons while storing.
//!
//! Sessions are distilled into categorized, time-stamped fragments
//! ([`extraction`]), linked across sessions by clustering and pairwise
//! reasoning ([`consolidation`]), and retrieved under a token budget
//! ([`retrieval`]). [`eval`] scores answers against LoCoMo or LongMemEval.
//! The guide in `book/` walks through each stage; its snippets run as
//! doc-tests of this crate.

pub mod consolidation;
pub mod eval;
pub mod extraction;
pub mod gateway;
pub mod memory;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod store;
pub mod temporal;
pub mod vector;

macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

book_chapters! {
    book_introduction => "introduction.md",
    book_fragments => "fragments.md",
    book_extraction => "extraction.md",
    book_consolidation => "consolidation.md",
    book_retrieval => "retrieval.md",
    book_evaluation => "evaluation.md",
    book_stores => "stores.md",
    book_cli => "cli.md",
}
