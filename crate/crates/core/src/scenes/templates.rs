//! The fixed question grammar and its ground-truth answerer.
//!
//! Three question families exist, all yes/no-decidable from an object's
//! category or normalized center:
//!
//! - `is it a {category} ?`
//! - `is it in the {left|right|top|bottom} half ?`
//! - `is it in the {top|middle|bottom} {left|center|right} cell ?`
//!
//! Anything else is outside the grammar and draws the fallback answer `na`.

use crate::error::Result;
use crate::scenes::scene::SceneObject;
use crate::scenes::vocab::{Answer, Vocabulary, QMARK};

/// Canvas half relative to the center; `Top` is the low-y half.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

    fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Top => "top",
            Side::Bottom => "bottom",
        }
    }
}

const ROW_WORDS: [&str; 3] = ["top", "middle", "bottom"];
const COL_WORDS: [&str; 3] = ["left", "center", "right"];

/// One template question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    /// `is it a {category} ?` — yes iff the category matches.
    Category(usize),
    /// `is it in the {side} half ?` — yes iff the center is strictly inside
    /// that half.
    Half(Side),
    /// `is it in the {row} {col} cell ?` — yes iff the center's 3×3 grid
    /// cell matches (row, col both 0..3).
    Cell(usize, usize),
}

impl Template {
    /// Every template in the fixed deterministic order used by the scripted
    /// questioner: categories, then halves, then grid cells row-major.
    pub fn all(n_categories: usize) -> Vec<Template> {
        let mut out: Vec<Template> = (1..=n_categories).map(Template::Category).collect();
        out.extend(Side::ALL.into_iter().map(Template::Half));
        for row in 0..3 {
            for col in 0..3 {
                out.push(Template::Cell(row, col));
            }
        }
        out
    }

    /// Token-id sequence including the trailing question mark.
    pub fn tokens(&self, vocab: &Vocabulary) -> Result<Vec<usize>> {
        let words: Vec<usize> = match self {
            Template::Category(c) => {
                vec![vocab.id("is")?, vocab.id("it")?, vocab.id("a")?, vocab.category_token(*c)?]
            }
            Template::Half(side) => vec![
                vocab.id("is")?,
                vocab.id("it")?,
                vocab.id("in")?,
                vocab.id("the")?,
                vocab.id(side.word())?,
                vocab.id("half")?,
            ],
            Template::Cell(row, col) => vec![
                vocab.id("is")?,
                vocab.id("it")?,
                vocab.id("in")?,
                vocab.id("the")?,
                vocab.id(ROW_WORDS[*row])?,
                vocab.id(COL_WORDS[*col])?,
                vocab.id("cell")?,
            ],
        };
        let mut out = words;
        out.push(QMARK);
        Ok(out)
    }

    /// Ground-truth answer for an object on a `width`×`height` canvas.
    pub fn answer(&self, object: &SceneObject, width: f64, height: f64) -> Answer {
        let (cx, cy) = object.center();
        // Normalized center in [-1, 1].
        let nx = 2.0 * cx / width - 1.0;
        let ny = 2.0 * cy / height - 1.0;
        let yes = match self {
            Template::Category(c) => object.category == *c,
            Template::Half(Side::Left) => nx < 0.0,
            Template::Half(Side::Right) => nx > 0.0,
            Template::Half(Side::Top) => ny < 0.0,
            Template::Half(Side::Bottom) => ny > 0.0,
            Template::Cell(row, col) => third(ny) == *row && third(nx) == *col,
        };
        if yes {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

/// Bin a normalized coordinate into thirds: 0 below -1/3, 2 above 1/3.
fn third(n: f64) -> usize {
    if n < -1.0 / 3.0 {
        0
    } else if n > 1.0 / 3.0 {
        2
    } else {
        1
    }
}

/// Matches a token sequence against the grammar; a single trailing question
/// mark is tolerated and ignored.
pub fn parse_question(tokens: &[usize], vocab: &Vocabulary) -> Option<Template> {
    let body = match tokens {
        [rest @ .., last] if *last == QMARK => rest,
        other => other,
    };
    let word = |i: usize| vocab.token(body[i]).ok();
    match body.len() {
        4 => {
            if word(0)? == "is" && word(1)? == "it" && word(2)? == "a" {
                vocab.token_category(body[3]).map(Template::Category)
            } else {
                None
            }
        }
        6 => {
            if word(0)? == "is" && word(1)? == "it" && word(2)? == "in" && word(3)? == "the"
                && word(5)? == "half"
            {
                Side::ALL.into_iter().find(|s| s.word() == word(4).unwrap_or("")).map(Template::Half)
            } else {
                None
            }
        }
        7 => {
            if word(0)? == "is" && word(1)? == "it" && word(2)? == "in" && word(3)? == "the"
                && word(6)? == "cell"
            {
                let row_word = word(4)?;
                let col_word = word(5)?;
                let row = ROW_WORDS.iter().position(|w| *w == row_word)?;
                let col = COL_WORDS.iter().position(|w| *w == col_word)?;
                Some(Template::Cell(row, col))
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Ground-truth answer for any token sequence: grammar questions get their
/// geometric or categorical truth, everything else gets `na`.
pub fn exact_answer(
    question: &[usize],
    object: &SceneObject,
    width: f64,
    height: f64,
    vocab: &Vocabulary,
) -> Answer {
    match parse_question(question, vocab) {
        Some(t) => t.answer(object, width, height),
        None => Answer::Na,
    }
}
