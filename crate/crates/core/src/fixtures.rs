//! Seeded synthetic episodes for offline experiments.
//!
//! A planted-fact episode has three sessions of eight alternating turns.
//! One user turn in session 1 states a unique fact (the name of the user's
//! pet); no other ingested turn mentions it. The final session ends with
//! the user asking about the pet and the assistant answering, which is the
//! held-out query/reference pair.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::{Episode, Session, Speaker, TurnRecord};

pub const TURNS_PER_SESSION: usize = 8;
pub const SESSIONS: usize = 3;

const SPECIES: &[&str] = &["iguana", "parrot", "tortoise", "hamster", "ferret", "goldfish"];
const NAMES: &[&str] = &[
    "Zorblax", "Quillon", "Marzipan", "Fennimore", "Tobias", "Wigglesworth", "Pistachio", "Odalys",
];

const USER_LINES: &[&str] = &[
    "I spent the weekend repainting the kitchen a pale green.",
    "Work has been hectic since the new manager started.",
    "I finally finished that mystery novel last night.",
    "We are thinking about a trip to the coast in spring.",
    "My sister visited and we cooked dumplings together.",
    "I signed up for a pottery class on Thursdays.",
    "The rain has not stopped here for three days.",
    "I tried a new running route through the park.",
    "Our neighbours are building a treehouse for their kids.",
    "I have been learning to bake sourdough bread.",
    "The concert on Friday was louder than I expected.",
    "I rearranged the living room to get more light.",
];

const ASSISTANT_LINES: &[&str] = &[
    "That sounds like a lovely way to spend time.",
    "How did that turn out for you?",
    "I remember you mentioning something similar before.",
    "That must have been tiring, but rewarding.",
    "Tell me more about how it went.",
    "It is great that you are trying new things.",
    "That sounds fun, did anyone join you?",
    "I hope the weather clears up soon for you.",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedFact {
    pub species: String,
    pub name: String,
    /// The session-1 user turn carrying the fact.
    pub statement: String,
    /// Index of that turn inside session 1.
    pub turn_index: usize,
    pub query: String,
    pub reference: String,
}

impl PlantedFact {
    /// Substring that identifies the fact in a context.
    pub fn phrase(&self) -> String {
        format!("{} is called {}", self.species, self.name)
    }
}

fn filler_session<R: Rng>(rng: &mut R) -> Vec<TurnRecord> {
    let mut users: Vec<&str> = USER_LINES.to_vec();
    users.shuffle(rng);
    (0..TURNS_PER_SESSION)
        .map(|i| {
            if i % 2 == 0 {
                TurnRecord { speaker: Speaker::User, text: users[i / 2].to_string() }
            } else {
                let line = ASSISTANT_LINES.choose(rng).expect("nonempty pool");
                TurnRecord { speaker: Speaker::Assistant, text: line.to_string() }
            }
        })
        .collect()
}

/// Deterministic planted-fact episode for `seed`.
pub fn planted_fact_episode(seed: u64) -> (Episode, PlantedFact) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let species = *SPECIES.choose(&mut rng).expect("nonempty pool");
    let name = *NAMES.choose(&mut rng).expect("nonempty pool");
    let turn_index = 2 * rng.random_range(0..TURNS_PER_SESSION / 2);

    let statement = format!("By the way, my pet {species} is called {name}.");
    let query = format!("What is my pet {species} called?");
    let reference = format!("Of course, your {species} is called {name}.");
    let fact = PlantedFact {
        species: species.to_string(),
        name: name.to_string(),
        statement: statement.clone(),
        turn_index,
        query: query.clone(),
        reference: reference.clone(),
    };

    let mut sessions = Vec::with_capacity(SESSIONS);
    for s in 0..SESSIONS {
        let mut turns = filler_session(&mut rng);
        if s == 0 {
            turns[turn_index].text = statement.clone();
        }
        if s + 1 == SESSIONS {
            turns[TURNS_PER_SESSION - 2].text = query.clone();
            turns[TURNS_PER_SESSION - 1].text = reference.clone();
        }
        let gold_memory = if s == 0 {
            vec![format!("The user has a pet {species} called {name}.")]
        } else {
            vec![
                format!("The user has a pet {species} called {name}."),
                "The user enjoys trying new hobbies.".to_string(),
            ]
        };
        sessions.push(Session { turns, gold_memory });
    }

    let episode = Episode { episode_id: format!("planted-{seed:04}"), sessions };
    (episode, fact)
}

/// `count` planted-fact episodes with consecutive seeds from `first_seed`.
pub fn planted_fact_corpus(first_seed: u64, count: usize) -> Vec<(Episode, PlantedFact)> {
    (0..count as u64).map(|i| planted_fact_episode(first_seed + i)).collect()
}
