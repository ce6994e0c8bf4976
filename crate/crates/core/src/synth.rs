//! Synthetic corpora with planted coordination, for end-to-end runs.
//!
//! Background users retweet, post, and reply at random over large pools, so
//! their pairwise similarities stay low. Two groups are planted on top: a
//! clique that co-retweets a small set of niche accounts, and a copy-pasta
//! group that repeatedly posts one text template with a shared image.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::indicators::IndicatorKind;
use crate::ingest::{
    ensure_parent, write_claim_labels, write_jsonl, ClaimLabel, EmbeddingTable, Post, PostKind,
    PostScores,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub background_users: usize,
    /// Background users post between three quarters and five quarters of this,
    /// three fifths of it as retweets of distinct popular accounts.
    pub mean_posts_per_user: usize,
    pub popular_accounts: usize,
    pub posts_per_popular: usize,
    pub vocabulary: usize,
    pub words_per_post: usize,
    pub hashtag_pool: usize,
    pub url_pool: usize,
    /// Chance that an original background post carries an image.
    pub image_share: f64,
    pub clique_size: usize,
    pub clique_targets: usize,
    pub clique_posts_per_target: usize,
    /// Chance that a clique member retweets a given niche post.
    pub clique_retweet_prob: f64,
    /// Authored posts per clique member, which carry its toxicity shift.
    pub clique_own_posts: usize,
    pub copypasta_size: usize,
    pub copypasta_posts: usize,
    pub embedding_dim: usize,
    /// Niche posts labeled misleading.
    pub misleading_posts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            background_users: 5000,
            mean_posts_per_user: 19,
            popular_accounts: 2000,
            posts_per_popular: 3,
            vocabulary: 20_000,
            words_per_post: 12,
            hashtag_pool: 3000,
            url_pool: 3000,
            image_share: 0.3,
            clique_size: 10,
            clique_targets: 8,
            clique_posts_per_target: 3,
            clique_retweet_prob: 0.85,
            clique_own_posts: 4,
            copypasta_size: 8,
            copypasta_posts: 6,
            embedding_dim: 8,
            misleading_posts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub name: String,
    pub indicator: IndicatorKind,
    pub members: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    pub embeddings: EmbeddingTable,
    pub scores: PostScores,
    pub claims: BTreeMap<String, ClaimLabel>,
    pub planted: Vec<PlantedGroup>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable pseudo-word for `n`, built from consonant-vowel syllables
/// so it survives tokenization and suffix stripping unchanged.
fn word(mut n: usize, syllables: usize) -> String {
    let mut w = String::with_capacity(2 * syllables);
    for _ in 0..syllables {
        let s = n % (CONSONANTS.len() * VOWELS.len());
        n /= CONSONANTS.len() * VOWELS.len();
        w.push(CONSONANTS[s / VOWELS.len()] as char);
        w.push(VOWELS[s % VOWELS.len()] as char);
    }
    w
}

const TOXICITY: [&str; 6] = ["insult", "threat", "severe_toxicity", "profanity", "identity_attack", "toxicity"];
const EMOTIONS: [&str; 6] = ["anger", "disgust", "joy", "sadness", "surprise", "fear"];

struct Builder {
    rng: ChaCha8Rng,
    cfg: SynthConfig,
    posts: Vec<Post>,
    epoch: DateTime<Utc>,
}

impl Builder {
    fn push(&mut self, author: &str, kind: PostKind, text: String) -> usize {
        let id = self.posts.len();
        let offset = Duration::seconds(self.rng.random_range(0..70 * 24 * 3600));
        self.posts.push(Post {
            post_id: format!("p{id:07}"),
            author_id: author.to_owned(),
            kind,
            text,
            retweeted_author_id: None,
            retweeted_post_id: None,
            hashtags: Vec::new(),
            urls: Vec::new(),
            image_ids: Vec::new(),
            timestamp: Some(self.epoch + offset),
        });
        id
    }

    fn retweet(&mut self, author: &str, target: usize) {
        let (t_author, t_id, t_text) = {
            let t = &self.posts[target];
            (t.author_id.clone(), t.post_id.clone(), t.text.clone())
        };
        let id = self.push(author, PostKind::Retweet, format!("RT @{t_author}: {t_text}"));
        let p = &mut self.posts[id];
        p.retweeted_author_id = Some(t_author);
        p.retweeted_post_id = Some(t_id);
    }

    fn random_text(&mut self) -> String {
        let n = self.cfg.words_per_post;
        (0..n)
            .map(|_| word(self.rng.random_range(0..self.cfg.vocabulary), 3))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        cfg: cfg.clone(),
        posts: Vec::new(),
        epoch: DateTime::parse_from_rfc3339("2023-10-07T00:00:00Z")
            .expect("valid literal")
            .with_timezone(&Utc),
    };
    let dim = cfg.embedding_dim;
    let mut embeddings = EmbeddingTable::new(dim);
    let mut image_seq = 0usize;
    let mut new_image = |rng: &mut ChaCha8Rng, embeddings: &mut EmbeddingTable, base: Option<&[f64]>| {
        let v: Vec<f64> = match base {
            Some(base) => base.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect(),
            None => (0..dim).map(|_| rng.random_range(-500.0..500.0)).collect(),
        };
        let id = format!("img{image_seq:06}");
        image_seq += 1;
        embeddings.push(id.clone(), &v).expect("fixed dimension");
        (id, v)
    };

    // Accounts whose posts get retweeted.
    let mut popular_posts: Vec<Vec<usize>> = Vec::new();
    for a in 0..cfg.popular_accounts {
        let author = format!("acct{a:04}");
        let posts = (0..cfg.posts_per_popular.max(1))
            .map(|_| {
                let text = b.random_text();
                b.push(&author, PostKind::Original, text)
            })
            .collect();
        popular_posts.push(posts);
    }
    let mut niche_posts = Vec::new();
    for t in 0..cfg.clique_targets {
        let author = format!("niche{t:02}");
        for _ in 0..cfg.clique_posts_per_target {
            let text = b.random_text();
            niche_posts.push(b.push(&author, PostKind::Original, text));
        }
    }

    // Background activity. Every user retweets the same number of distinct
    // accounts, so background similarity reflects chance overlap only and no
    // small or concentrated profile turns into a hub after pruning.
    let lo = (cfg.mean_posts_per_user * 3 / 4).max(1);
    let hi = (cfg.mean_posts_per_user * 5 / 4).max(lo + 1);
    let retweets = (cfg.mean_posts_per_user * 3 / 5).min(popular_posts.len());
    for u in 0..cfg.background_users {
        let author = format!("u{u:05}");
        let n = b.rng.random_range(lo..=hi);
        for account in index::sample(&mut b.rng, popular_posts.len(), retweets) {
            let target = *popular_posts[account].choose(&mut b.rng).expect("non-empty");
            b.retweet(&author, target);
        }
        for _ in retweets..n {
            let roll: f64 = b.rng.random();
            let kind = if roll < 0.625 {
                PostKind::Original
            } else if roll < 0.75 {
                PostKind::Quote
            } else {
                PostKind::Reply
            };
            let text = b.random_text();
            let id = b.push(&author, kind, text);
            if b.rng.random_bool(0.3) {
                let tag = word(b.rng.random_range(0..cfg.hashtag_pool), 3);
                b.posts[id].hashtags.push(tag);
            }
            if b.rng.random_bool(0.2) {
                let site = b.rng.random_range(0..cfg.url_pool);
                let url = format!("https://site{}.example/{}?utm_source=feed", site % 97, word(site, 3));
                b.posts[id].urls.push(url);
            }
            if kind == PostKind::Original && b.rng.random_bool(cfg.image_share) {
                let (img, _) = new_image(&mut b.rng, &mut embeddings, None);
                b.posts[id].image_ids.push(img);
            }
        }
    }

    // Planted clique: members co-retweet the niche accounts.
    let clique: BTreeSet<String> = (0..cfg.clique_size).map(|i| format!("clq{i:02}")).collect();
    for m in &clique {
        let mut hit = 0;
        for &p in &niche_posts {
            if b.rng.random_bool(cfg.clique_retweet_prob) {
                b.retweet(m, p);
                hit += 1;
            }
        }
        if hit == 0 && !niche_posts.is_empty() {
            b.retweet(m, niche_posts[0]);
        }
        for _ in 0..cfg.clique_own_posts {
            let text = b.random_text();
            b.push(m, PostKind::Original, text);
        }
    }

    // Planted copy-pasta: one template with a private vocabulary, posted
    // with near-duplicates of one image.
    let copypasta: BTreeSet<String> = (0..cfg.copypasta_size).map(|i| format!("cpy{i:02}")).collect();
    let template: String = (0..cfg.words_per_post)
        .map(|i| word(i * 7919 + 31, 4))
        .collect::<Vec<_>>()
        .join(" ");
    let (_, base_image) = new_image(&mut b.rng, &mut embeddings, None);
    for m in &copypasta {
        for _ in 0..cfg.copypasta_posts {
            let id = b.push(m, PostKind::Original, template.clone());
            let (img, _) = new_image(&mut b.rng, &mut embeddings, Some(&base_image));
            b.posts[id].image_ids.push(img);
        }
    }

    // Sidecar scores for authored text; planted groups score higher on
    // toxicity and fear respectively.
    let mut scores = PostScores::default();
    for p in &b.posts {
        if p.kind == PostKind::Retweet {
            continue;
        }
        let (tox_shift, fear_shift) = if clique.contains(&p.author_id) {
            (0.4, 0.0)
        } else if copypasta.contains(&p.author_id) {
            (0.0, 0.3)
        } else {
            (0.0, 0.0)
        };
        for m in TOXICITY {
            let v: f64 = b.rng.random_range(0.0..0.5) + tox_shift;
            scores.insert(&p.post_id, m, v.min(1.0)).expect("in range");
        }
        for m in EMOTIONS {
            let (base, shift) = if m == "fear" { (0.3, fear_shift) } else { (0.0, 0.0) };
            let v: f64 = base + b.rng.random_range(0.0..0.4) + shift;
            scores.insert(&p.post_id, m, v.min(1.0)).expect("in range");
        }
    }

    let mut claims = BTreeMap::new();
    for (i, &p) in niche_posts.iter().enumerate() {
        let label = if i < cfg.misleading_posts {
            ClaimLabel::Misleading
        } else {
            ClaimLabel::NotMisleading
        };
        claims.insert(b.posts[p].post_id.clone(), label);
    }

    SynthCorpus {
        posts: b.posts,
        embeddings,
        scores,
        claims,
        planted: vec![
            PlantedGroup {
                name: "co-retweet clique".into(),
                indicator: IndicatorKind::RetweetedAccount,
                members: clique,
            },
            PlantedGroup {
                name: "copy-pasta".into(),
                indicator: IndicatorKind::Token,
                members: copypasta,
            },
        ],
    }
}

/// Files written by [`write_synth`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub config: PathBuf,
    pub posts: PathBuf,
    pub planted: PathBuf,
}

/// Writes the corpus, its sidecars, the planted groups, and a pipeline
/// config pointing at them into `dir`.
pub fn write_synth(dir: &Path, synth: &SynthCorpus) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let posts = dir.join("posts.jsonl");
    write_jsonl(&posts, &synth.posts)?;
    synth.embeddings.write_csv(&dir.join("image_embeddings.csv"))?;
    synth.scores.write_csv(&dir.join("post_scores.csv"))?;
    write_claim_labels(&dir.join("claim_labels.csv"), &synth.claims)?;
    let planted = dir.join("planted.json");
    ensure_parent(&planted)?;
    let json = serde_json::to_string_pretty(&synth.planted)?;
    std::fs::write(&planted, json + "\n").map_err(|e| Error::io(&planted, e))?;

    let mut cfg = PipelineConfig::default();
    cfg.input.corpus = "posts.jsonl".into();
    cfg.input.image_embeddings = Some("image_embeddings.csv".into());
    cfg.input.post_scores = Some("post_scores.csv".into());
    cfg.input.claim_labels = Some("claim_labels.csv".into());
    cfg.characterization.kmeans_k = cfg.characterization.kmeans_k.min(synth.embeddings.len().max(1));
    cfg.run.output_dir = "out".into();
    let config = dir.join("config.toml");
    std::fs::write(&config, cfg.to_toml_string()?).map_err(|e| Error::io(&config, e))?;
    Ok(SynthFiles {
        config,
        posts,
        planted,
    })
}

pub fn read_planted(path: &Path) -> Result<Vec<PlantedGroup>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&raw)?)
}
