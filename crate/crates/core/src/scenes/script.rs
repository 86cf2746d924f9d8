//! The scripted questioner that manufactures the supervised corpus: a
//! deterministic agent that greedily picks the template splitting the
//! remaining candidate objects most evenly, asks it, and filters candidates
//! by the true answer.

use crate::scalar::Scalar;
use crate::scenes::scene::Game;
use crate::scenes::templates::Template;
use crate::scenes::vocab::{Answer, Vocabulary, QMARK, STOP};

/// One answered question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    /// Token ids, ending with the question mark.
    pub question: Vec<usize>,
    pub answer: Answer,
}

/// A completed question/answer exchange sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dialogue {
    pub pairs: Vec<QaPair>,
    /// True when the questioner ended the game with an explicit stop token
    /// rather than running into the question cap.
    pub terminated_by_stop: bool,
}

impl Dialogue {
    /// Checks the structural invariants every dialogue must satisfy.
    pub fn validate(&self, max_question_len: usize, max_questions: usize) -> Result<(), String> {
        if self.pairs.len() > max_questions {
            return Err(format!("{} questions exceed the cap {max_questions}", self.pairs.len()));
        }
        for (j, pair) in self.pairs.iter().enumerate() {
            if pair.question.last() != Some(&QMARK) {
                return Err(format!("question {j} does not end with the question mark"));
            }
            if pair.question.contains(&STOP) {
                return Err(format!("question {j} contains the stop token"));
            }
            if pair.question.len() > max_question_len {
                return Err(format!(
                    "question {j} has {} tokens, cap is {max_question_len}",
                    pair.question.len()
                ));
            }
        }
        Ok(())
    }

    /// Total token count across questions (answers excluded).
    pub fn question_tokens(&self) -> usize {
        self.pairs.iter().map(|p| p.question.len()).sum()
    }
}

/// Outcome of one scripted game.
#[derive(Debug, Clone)]
pub struct ScriptedGame {
    pub dialogue: Dialogue,
    /// Index the questioner guessed (unique candidate, or lowest-index
    /// survivor at the cap).
    pub guess: usize,
    pub success: bool,
    /// True when filtering narrowed the candidates to exactly one — the
    /// signal used to supervise the stop token.
    pub solved: bool,
}

/// Plays one full scripted game against the exact answerer.
///
/// Each turn considers every template and asks the one whose answer
/// partition of the surviving candidates has the smallest largest part
/// (first in template order on ties), then drops candidates inconsistent
/// with the target's true answer. Stops at one candidate or after
/// `max_questions`.
pub fn scripted_dialogue<S: Scalar>(
    game: &Game<S>,
    vocab: &Vocabulary,
    max_questions: usize,
) -> ScriptedGame {
    let templates = Template::all(vocab.n_categories());
    let mut candidates: Vec<usize> = (0..game.objects.len()).collect();
    let mut dialogue = Dialogue::default();

    while candidates.len() > 1 && dialogue.pairs.len() < max_questions {
        let best = templates
            .iter()
            .min_by_key(|t| largest_part(t, game, &candidates))
            .expect("template list is never empty");
        let truth = best.answer(game.target(), game.width, game.height);
        candidates.retain(|&i| best.answer(&game.objects[i], game.width, game.height) == truth);
        dialogue.pairs.push(QaPair {
            question: best.tokens(vocab).expect("templates only use vocabulary words"),
            answer: truth,
        });
    }

    let solved = candidates.len() == 1;
    let guess = candidates.first().copied().unwrap_or(0);
    ScriptedGame { dialogue, guess, success: guess == game.target_index, solved }
}

/// Size of the biggest answer-group the template induces on `candidates`.
fn largest_part<S: Scalar>(template: &Template, game: &Game<S>, candidates: &[usize]) -> usize {
    let mut sizes = [0usize; 3];
    for &i in candidates {
        sizes[template.answer(&game.objects[i], game.width, game.height).class_index()] += 1;
    }
    sizes.into_iter().max().unwrap_or(0)
}

/// Re-derives the candidate set a dialogue's answers leave standing, from
/// scratch: parse each question, answer it for every object, keep objects
/// agreeing with the recorded answer. Unparseable questions filter on the
/// `na` fallback like any other answer.
pub fn replay_candidates<S: Scalar>(game: &Game<S>, dialogue: &Dialogue, vocab: &Vocabulary) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..game.objects.len()).collect();
    for pair in &dialogue.pairs {
        candidates.retain(|&i| {
            crate::scenes::templates::exact_answer(
                &pair.question,
                &game.objects[i],
                game.width,
                game.height,
                vocab,
            ) == pair.answer
        });
    }
    candidates
}
