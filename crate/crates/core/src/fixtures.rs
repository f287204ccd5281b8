//! Tiny word vocabulary and prompt generators for demos and tests.
//!
//! The toy encoder works on abstract ids. The word list maps a handful of
//! story words onto ids so fixtures read like prompts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prompt::{build_layout, PromptLayout};

pub const WORDS: &[&str] = &[
    "<pad>",
    "a",
    "photo",
    "of",
    "the",
    "golden",
    "retriever",
    "dog",
    "cat",
    "fluffy",
    "wearing",
    "yellow",
    "raincoat",
    "red",
    "scarf",
    "in",
    "city",
    "alley",
    "playing",
    "on",
    "beach",
    "sleeping",
    "under",
    "tree",
    "baby",
    "gorilla",
    "with",
    "eating",
    "ice",
    "cream",
    "forest",
    "snow",
    "reading",
    "book",
    "library",
    "old",
    "wizard",
    "blue",
    "robe",
    "riding",
    "bicycle",
    "park",
    "standing",
    "near",
    "lighthouse",
    "at",
    "night",
    "cooking",
    "kitchen",
    "painting",
    "canvas",
    "young",
    "girl",
    "curly",
    "hair",
    "sitting",
    "bench",
    "train",
    "station",
    "flying",
    "kite",
];

pub fn word_id(word: &str) -> Option<u32> {
    WORDS.iter().position(|w| *w == word).map(|i| i as u32)
}

/// Maps whitespace-separated words to ids.
pub fn word_ids(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|w| {
            word_id(w).ok_or_else(|| {
                Error::InvalidConfig(format!("word {w:?} is not in the fixture vocabulary"))
            })
        })
        .collect()
}

/// A named story: labels and the text of each segment.
#[derive(Debug, Clone, Copy)]
pub struct StoryFixture {
    pub name: &'static str,
    pub segments: &'static [(&'static str, &'static str)],
}

pub const STORIES: &[StoryFixture] = &[
    StoryFixture {
        name: "dog-story",
        segments: &[
            ("identity", "a photo of a golden retriever dog"),
            ("raincoat", "wearing a yellow raincoat"),
            ("alley", "in a city alley"),
            ("beach", "playing on the beach"),
        ],
    },
    StoryFixture {
        name: "wizard-story",
        segments: &[
            ("identity", "a photo of the old wizard with blue robe"),
            ("library", "reading a book in the library"),
            ("bicycle", "riding a bicycle in the park"),
        ],
    },
];

impl StoryFixture {
    pub fn by_name(name: &str) -> Option<&'static StoryFixture> {
        STORIES.iter().find(|s| s.name == name)
    }

    pub fn layout(&self) -> Result<PromptLayout> {
        let lengths = self
            .segments
            .iter()
            .map(|(_, text)| word_ids(text).map(|ids| ids.len()))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<&str> = self.segments.iter().map(|(l, _)| *l).collect();
        build_layout(&lengths, &labels)
    }

    pub fn tokens(&self) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for (_, text) in self.segments {
            out.extend(word_ids(text)?);
        }
        Ok(out)
    }
}

/// A random story: identity prompt plus `frames` frame prompts.
#[derive(Debug, Clone)]
pub struct SyntheticStory {
    pub layout: PromptLayout,
    pub tokens: Vec<u32>,
}

/// Draws segment lengths in `3..=6` and token ids without repetition, so
/// every segment carries its own vocabulary.
pub fn synthetic_story(seed: u64, frames: usize, vocab_size: usize) -> Result<SyntheticStory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths: Vec<usize> = (0..=frames).map(|_| rng.random_range(3..=6)).collect();
    let total: usize = lengths.iter().sum();
    if total >= vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocabulary of {vocab_size} is too small for {total} distinct tokens"
        )));
    }
    // Id 0 is reserved for padding.
    let mut ids: Vec<u32> = (1..vocab_size as u32).collect();
    ids.shuffle(&mut rng);
    ids.truncate(total);
    let labels: Vec<String> = (0..=frames).map(|i| format!("P{i}")).collect();
    Ok(SyntheticStory {
        layout: build_layout(&lengths, &labels)?,
        tokens: ids,
    })
}
