//! Corpus and sidecar ingestion plus the text/URL normalization used by the
//! indicators.

mod load;
mod post;
mod sidecar;
mod tokenize;
mod url;

pub use self::load::{
    load_corpus, parse_jsonl_str, write_jsonl, CorpusFormat, CsvColumns, LoadReport, MalformedRecord,
};
pub use self::post::{normalize_hashtag, Corpus, Post, PostKind};
pub(crate) use self::sidecar::ensure_parent;
pub use self::sidecar::{
    read_claim_labels, write_claim_labels, ClaimLabel, EmbeddingTable, PostScores, SidecarTables,
};
pub use self::tokenize::{
    default_stopwords, load_stopwords, IdentityNormalizer, Normalizer, NormalizerKind, SuffixStripper,
    Tokenizer,
};
pub use self::url::{clean_url, CleanedUrl, UrlCleaner, DEFAULT_STRIP_PARAMS};
