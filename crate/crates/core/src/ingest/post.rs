use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostKind {
    Original,
    Retweet,
    Quote,
    Reply,
}

impl PostKind {
    pub const ALL: [PostKind; 4] = [
        PostKind::Original,
        PostKind::Retweet,
        PostKind::Quote,
        PostKind::Reply,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PostKind::Original => "original",
            PostKind::Retweet => "retweet",
            PostKind::Quote => "quote",
            PostKind::Reply => "reply",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" | "tweet" => Ok(PostKind::Original),
            "retweet" | "rt" => Ok(PostKind::Retweet),
            "quote" => Ok(PostKind::Quote),
            "reply" => Ok(PostKind::Reply),
            other => Err(Error::Format(format!("unknown post kind `{other}`"))),
        }
    }
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    pub kind: PostKind,
    pub text: String,
    /// Present iff `kind == Retweet`.
    pub retweeted_author_id: Option<String>,
    pub retweeted_post_id: Option<String>,
    /// Lowercase, without the leading `#`.
    pub hashtags: Vec<String>,
    pub urls: Vec<String>,
    pub image_ids: Vec<String>,
    pub timestamp: Option<DateTime<Utc>>,
}

impl Post {
    pub fn is_retweet(&self) -> bool {
        self.kind == PostKind::Retweet
    }
}

pub fn normalize_hashtag(tag: &str) -> String {
    tag.trim().trim_start_matches('#').to_lowercase()
}

/// Append-ordered, immutable collection of posts.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    posts: Vec<Post>,
    by_id: HashMap<String, usize>,
    by_author: HashMap<String, Vec<usize>>,
}

impl Corpus {
    /// Builds a corpus. Posts whose id repeats an earlier post are returned
    /// separately instead of being inserted.
    pub fn from_posts(posts: impl IntoIterator<Item = Post>) -> (Self, Vec<Post>) {
        let mut corpus = Corpus::default();
        let mut rejected = Vec::new();
        for post in posts {
            if corpus.by_id.contains_key(&post.post_id) {
                rejected.push(post);
                continue;
            }
            let idx = corpus.posts.len();
            corpus.by_id.insert(post.post_id.clone(), idx);
            corpus
                .by_author
                .entry(post.author_id.clone())
                .or_default()
                .push(idx);
            corpus.posts.push(post);
        }
        (corpus, rejected)
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, post_id: &str) -> Option<&Post> {
        self.by_id.get(post_id).map(|&i| &self.posts[i])
    }

    pub fn contains_post(&self, post_id: &str) -> bool {
        self.by_id.contains_key(post_id)
    }

    pub fn users(&self) -> BTreeSet<&str> {
        self.by_author.keys().map(String::as_str).collect()
    }

    pub fn user_count(&self) -> usize {
        self.by_author.len()
    }

    pub fn posts_by(&self, author_id: &str) -> impl Iterator<Item = &Post> {
        self.by_author
            .get(author_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.posts[i])
    }

    /// Retweets whose `retweeted_post_id` does not resolve inside the corpus.
    pub fn external_retweet_refs(&self) -> usize {
        self.posts
            .iter()
            .filter_map(|p| p.retweeted_post_id.as_deref())
            .filter(|id| !self.by_id.contains_key(*id))
            .count()
    }

    pub fn kind_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for p in &self.posts {
            counts[p.kind.index()] += 1;
        }
        counts
    }
}
