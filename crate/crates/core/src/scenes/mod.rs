//! The synthetic game world: random scenes of categorized boxes, a fixed
//! question grammar with a ground-truth answerer, a scripted questioner that
//! manufactures the supervised corpus, and the corpus file formats.

pub mod corpus;
pub mod scene;
pub mod script;
pub mod templates;
pub mod vocab;

pub use corpus::{generate_corpus, load_corpus, load_games, save_games, CorpusData, CorpusGame, CorpusPaths};
pub use scene::{
    generate_scene, grid_cell, scene_features, scene_rng, spatial_features, Game, SceneConfig,
    SceneObject,
};
pub use script::{replay_candidates, scripted_dialogue, Dialogue, QaPair, ScriptedGame};
pub use templates::{exact_answer, parse_question, Side, Template};
pub use vocab::{category_name, Answer, Vocabulary, NA, NO, PAD, QMARK, START, STOP, YES};
