//! Book snippets are doc-tested here (placeholder).
