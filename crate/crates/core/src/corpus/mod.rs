//! Corpus ingestion, multi-pattern retrieval of target-bearing snippets and
//! model-generated snippets.

mod generate;
mod matcher;
mod retrieve;
mod snippet;

pub use generate::{generate_snippets, generation_prompt, GenerateOptions};
pub use matcher::{Match, Matcher};
pub use retrieve::{
    extract_window, retrieve_snippets, target_rng, Deficit, Reservoir, Retrieval, RetrieveOptions,
};
pub use snippet::{load_corpus, parse_corpus, Snippet, SnippetSet, SnippetSource};
