//! Synthetic bimodal world: latent corpus, student dual-encoder, simulated
//! cross-encoder teacher, and the offline similarity bank.

pub mod bank;
pub mod corpus;
pub mod model;
pub mod teacher;

use serde::{Deserialize, Serialize};

pub use bank::{build_similarity_bank, BankBuild, SimilarityBank};
pub use corpus::{generate_corpus, CorpusConfig, Item, LatentCorpus};
pub use model::{backprop_encode, encode_with, Encoded, StudentGrad, StudentModel, Tower};
pub use teacher::{calibrate_alpha, concentration, itm_loss, itm_objective, teacher_score, ItmPair, TeacherSim};

/// Retrieval direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::ImageToText, Direction::TextToImage];

    pub fn query_tower(self) -> Tower {
        match self {
            Direction::ImageToText => Tower::Image,
            Direction::TextToImage => Tower::Text,
        }
    }

    pub fn candidate_tower(self) -> Tower {
        match self {
            Direction::ImageToText => Tower::Text,
            Direction::TextToImage => Tower::Image,
        }
    }

    /// Map `(query item, candidate item)` to `(image item, text item)`.
    pub fn image_text(self, query: usize, candidate: usize) -> (usize, usize) {
        match self {
            Direction::ImageToText => (query, candidate),
            Direction::TextToImage => (candidate, query),
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}
