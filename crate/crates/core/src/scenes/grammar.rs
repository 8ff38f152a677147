//! Caption templates and the inverse grammar.
//!
//! Every template names all four attributes exactly once, filler words never
//! collide with attribute words, and the longest template is 9 tokens, so
//! `parse_caption(caption(scene))` always recovers the scene.

use super::{Caption, Color, Position, SceneSpec, Shape, Size};
use rand::Rng;
use thiserror::Error;

pub const PAD_TOKEN: &str = "<pad>";

#[derive(Clone, Copy)]
enum Part {
    Lit(&'static str),
    Size,
    Color,
    Shape,
    Position,
}

use Part::*;

const TEMPLATES: &[&[Part]] = &[
    &[Lit("a"), Size, Color, Shape, Lit("in"), Lit("the"), Position],
    &[Lit("the"), Size, Color, Shape, Lit("at"), Lit("the"), Position],
    &[
        Lit("there"),
        Lit("is"),
        Lit("a"),
        Size,
        Color,
        Shape,
        Lit("in"),
        Lit("the"),
        Position,
    ],
    &[Lit("one"), Size, Color, Shape, Lit("near"), Lit("the"), Position],
];

const FILLERS: &[&str] = &["a", "at", "in", "is", "near", "one", "the", "there"];

/// Longest caption the templates can produce.
pub const MAX_CAPTION_TOKENS: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("caption names no {attribute} word; expected one of: {expected}")]
    MissingAttribute {
        attribute: &'static str,
        expected: String,
    },
    #[error("caption names more than one {attribute} word: {first} and {second}")]
    ConflictingAttribute {
        attribute: &'static str,
        first: String,
        second: String,
    },
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Templated caption naming all four attributes; template choice varies
/// with the rng, attribute words are fixed by the scene.
pub fn caption(scene: &SceneSpec, rng: &mut impl Rng) -> Caption {
    let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
    let words: Vec<&str> = template
        .iter()
        .map(|part| match part {
            Lit(w) => *w,
            Size => scene.size.word(),
            Color => scene.color.word(),
            Shape => scene.shape.word(),
            Position => scene.position.word(),
        })
        .collect();
    debug_assert!(words.len() <= MAX_CAPTION_TOKENS);
    Caption {
        text: words.join(" "),
        scene: *scene,
    }
}

fn find_unique<A: Copy>(
    tokens: &[String],
    attribute: &'static str,
    lookup: impl Fn(&str) -> Option<A>,
    words: &[&'static str],
) -> Result<A, GrammarError> {
    let mut found: Option<(A, &str)> = None;
    for tok in tokens {
        if let Some(a) = lookup(tok) {
            if let Some((_, first)) = &found {
                return Err(GrammarError::ConflictingAttribute {
                    attribute,
                    first: first.to_string(),
                    second: tok.clone(),
                });
            }
            found = Some((a, tok));
        }
    }
    found.map(|(a, _)| a).ok_or_else(|| GrammarError::MissingAttribute {
        attribute,
        expected: words.join(", "),
    })
}

/// Recover the unique scene a caption describes. Filler words are ignored;
/// missing or duplicated attribute words are errors.
pub fn parse_caption(text: &str) -> Result<SceneSpec, GrammarError> {
    let tokens = tokenize(text);
    let shape_words: Vec<&'static str> = Shape::ALL.iter().map(|s| s.word()).collect();
    let color_words: Vec<&'static str> = Color::ALL.iter().map(|c| c.word()).collect();
    let position_words: Vec<&'static str> = Position::ALL.iter().map(|p| p.word()).collect();
    let size_words: Vec<&'static str> = Size::ALL.iter().map(|s| s.word()).collect();
    Ok(SceneSpec {
        shape: find_unique(&tokens, "shape", Shape::from_word, &shape_words)?,
        color: find_unique(&tokens, "color", Color::from_word, &color_words)?,
        position: find_unique(&tokens, "position", Position::from_word, &position_words)?,
        size: find_unique(&tokens, "size", Size::from_word, &size_words)?,
    })
}

/// Closed caption vocabulary, sorted, with the pad sentinel at index 0.
pub fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = FILLERS.iter().map(|w| w.to_string()).collect();
    words.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
    words.extend(Color::ALL.iter().map(|c| c.word().to_string()));
    words.extend(Position::ALL.iter().map(|p| p.word().to_string()));
    words.extend(Size::ALL.iter().map(|s| s.word().to_string()));
    words.sort();
    words.dedup();
    let mut vocab = vec![PAD_TOKEN.to_string()];
    vocab.extend(words);
    vocab
}
