//! Synthetic chat corpus: one task per (scenario, conversational act) for
//! every user profile, built from a fixed set of sentence templates.

use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DialogTask, UserProfile, Utterance};
use crate::matching::normalize;

pub const FOOD_SLOT: &str = "food_name";
pub const FOOD_PROMPT: &str = "What is the food_name in this dialog?";
pub const FOOD_EXPLANATION: &str =
    "Food name. The full name of the food. Including any drinks or beverages.";
const COUNTRY_SLOT: &str = "country_name";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Eat,
    Drink,
    Cook,
    Chat,
    NoFood,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Eat,
        Scenario::Drink,
        Scenario::Cook,
        Scenario::Chat,
        Scenario::NoFood,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Eat => "eat",
            Scenario::Drink => "drink",
            Scenario::Cook => "cook",
            Scenario::Chat => "chat",
            Scenario::NoFood => "no_food",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConversationalAct {
    Question,
    Answer,
    Mentioning,
}

impl ConversationalAct {
    pub const ALL: [ConversationalAct; 3] = [
        ConversationalAct::Question,
        ConversationalAct::Answer,
        ConversationalAct::Mentioning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConversationalAct::Question => "question",
            ConversationalAct::Answer => "answer",
            ConversationalAct::Mentioning => "mentioning",
        }
    }
}

impl fmt::Display for ConversationalAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// (preceding turn from the other party, final user turn). `{}` marks the
/// entity.
type Template = (Option<&'static str>, &'static str);

fn templates(scenario: Scenario, act: ConversationalAct) -> &'static [Template] {
    use ConversationalAct::*;
    use Scenario::*;
    match (scenario, act) {
        (Eat, Question) => &[
            (None, "Do you want to grab {} later tonight?"),
            (Some("I'm starving."), "Should we get {} for dinner?"),
        ],
        (Eat, Answer) => &[
            (Some("What do you want to eat later?"), "I'm thinking {}."),
            (Some("Any ideas for lunch?"), "How about {} near the office"),
        ],
        (Eat, Mentioning) => &[
            (None, "I had {} yesterday and it was great."),
            (Some("Long day."), "Same here, I keep dreaming about {} all week"),
        ],
        (Drink, Question) => &[
            (Some("Hi, what can I get for you?"), "Do you still have {} on the menu?"),
            (None, "Can I get a {} to go?"),
        ],
        (Drink, Answer) => &[
            (Some("What would you like to drink?"), "I'll have {}, please."),
            (Some("Anything to drink with that?"), "Yes, {} would be nice"),
        ],
        (Drink, Mentioning) => &[
            (None, "I usually have {} around this time."),
            (Some("Welcome back!"), "Thanks, the {} here was great last time"),
        ],
        (Cook, Question) => &[
            (None, "How long should I cook {} for?"),
            (Some("You said you'd cook tonight?"), "Yes, do you know a good recipe for {}?"),
        ],
        (Cook, Answer) => &[
            (Some("What are you going to cook?"), "I'm going to make {}."),
            (Some("What's for dinner at your place?"), "Probably {} if I find the ingredients"),
        ],
        (Cook, Mentioning) => &[
            (None, "I tried making {} last weekend."),
            (Some("How was your weekend?"), "Good, I finally learned to cook {}"),
        ],
        (Chat, Question) => &[
            (None, "Have you ever tried {}?"),
            (Some("I'm back from the trip."), "Nice! Did you get to eat {} there?"),
        ],
        (Chat, Answer) => &[
            (Some("What's your favorite food?"), "Definitely {}."),
            (Some("What did you have at the party?"), "Mostly {}, it was amazing"),
        ],
        (Chat, Mentioning) => &[
            (None, "My mom makes the best {}."),
            (Some("Guess what I saw today."), "Let me guess, a new place selling {}"),
        ],
        (NoFood, Question) => &[
            (None, "Have you ever been to {}?"),
            (Some("I'm planning a vacation."), "Oh nice, are you going to {}?"),
        ],
        (NoFood, Answer) => &[
            (Some("Where are you from?"), "I grew up in {}."),
            (Some("Where's your next trip?"), "Probably {} in the spring"),
        ],
        (NoFood, Mentioning) => &[
            (None, "My cousin just moved to {}."),
            (Some("How's your sister?"), "She's good, still working in {}"),
        ],
    }
}

/// Produces 15 tasks per profile (5 scenarios x 3 acts), deterministic in
/// `(profiles, seed)`. Food scenarios use each listed food once, drinks and
/// countries likewise. No-food tasks carry no gold; the mentioned country is
/// recorded under `aux_gold["country_name"]`.
pub fn generate_synthetic_corpus(profiles: &[UserProfile], seed: u64) -> Vec<DialogTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(profiles.len() * 15);
    for (p_idx, profile) in profiles.iter().enumerate() {
        let mut foods: Vec<&String> = profile.foods().iter().collect();
        let mut drinks: Vec<&String> = profile.drinks().iter().collect();
        let mut countries: Vec<&String> = profile.countries().iter().collect();
        foods.shuffle(&mut rng);
        drinks.shuffle(&mut rng);
        countries.shuffle(&mut rng);
        let mut foods = foods.into_iter();
        let mut drinks = drinks.into_iter();
        let mut countries = countries.into_iter();

        for scenario in Scenario::ALL {
            for act in ConversationalAct::ALL {
                let entity = match scenario {
                    Scenario::Eat | Scenario::Cook | Scenario::Chat => foods.next(),
                    Scenario::Drink => drinks.next(),
                    Scenario::NoFood => countries.next(),
                }
                .expect("profile list lengths are fixed");
                let (lead, line) = templates(scenario, act)
                    .choose(&mut rng)
                    .expect("templates non-empty");
                let mut utterances = Vec::with_capacity(2);
                if let Some(lead) = lead {
                    utterances.push(Utterance::agent(*lead));
                }
                utterances.push(Utterance::user(line.replace("{}", entity)));
                let (gold, aux_gold) = if scenario == Scenario::NoFood {
                    (None, [(COUNTRY_SLOT.to_string(), normalize(entity))].into())
                } else {
                    (Some(normalize(entity)), Default::default())
                };
                out.push(DialogTask {
                    task_id: format!("u{p_idx:03}-{scenario}-{act}"),
                    category: format!("scenario:{scenario}/act:{act}"),
                    utterances,
                    slot_name: FOOD_SLOT.into(),
                    slot_prompt: FOOD_PROMPT.into(),
                    slot_explanation: FOOD_EXPLANATION.into(),
                    gold,
                    aux_gold,
                });
            }
        }
    }
    out
}

const APPENDIX_FOODS: [[&str; 9]; 10] = [
    [
        "spaghetti", "burger", "vindaloo lamb", "makhani chicken", "kimchee", "wheat bread",
        "pizza", "cornish pasty", "mushroom soup",
    ],
    [
        "burger", "french fries", "scallion cake", "okonomiyaki", "oyakodon", "gyudon",
        "fried rice", "wings", "salad",
    ],
    [
        "Stinky Tofu", "Acai Berry Bowl", "Tuna Onigiri", "Rice Burger", "Seared Salmon",
        "Milkfish Soup", "Mapo Tofu", "Beef Pho", "Scallion Pancake",
    ],
    [
        "pizza", "fried rice", "waffle", "alcohol drink", "chocolate pie", "cookie", "dimsum",
        "burger", "milk shake",
    ],
    [
        "Pho", "BBQ", "Thai food", "beef noodles", "steak", "Tomato soup", "Spicy hot pot",
        "Soup dumplings", "Ramen",
    ],
    [
        "chocolate", "donut", "cheesecake", "pad thai", "seafood pancake",
        "fish fillets in hot chili", "hot pot", "bibimbap", "japchae",
    ],
    [
        "chocolate", "pancakes", "strawberries", "fried fish", "fried chicken", "sausages",
        "gulaab jamun", "paneer tika", "samosa",
    ],
    [
        "Dumplings", "noodle", "stew pork over rice", "Sandwich", "pasta", "hot pot",
        "Potato slices with green peppers", "Chinese BBQ", "pancakes",
    ],
    [
        "stinky tofu", "stew pork over rice", "yakitori", "baked cinnamon apple", "apple pie",
        "stew pork with potato and apple", "teppanyaki", "okonomiyaki", "crab hotpot",
    ],
    [
        "hot pot", "cherry", "Chinese cabbage", "Pumpkin risotto", "Tomato risotto",
        "Boeuf Bourguignon", "stinky tofu", "sausage muffin with egg (McDonald)",
        "eggplant with basil",
    ],
];

const APPENDIX_DRINKS: [[&str; 3]; 10] = [
    ["tea", "coke", "latte"],
    ["green tea latte", "bubble tea", "root beer"],
    ["medium latte with non-fat milk", "green Tea Latte", "Soymilk"],
    ["water", "pepsi", "tea"],
    ["Latte with nonfat milk", "Magic hat #9", "Old fashion"],
    ["vanilla latte", "strawberry smoothie", "iced tea"],
    ["coffee", "milk shake", "beer"],
    ["Mocha coffee", "beers", "orange juice"],
    ["caramel frappuccino", "caramel macchiato", "coffee with coconut milk"],
    ["ice tea", "macha", "apple juice"],
];

// Participants' country lists were not published; these are stand-ins.
const COUNTRIES: [&str; 30] = [
    "Japan", "Taiwan", "India", "France", "Italy", "Mexico", "Brazil", "Canada", "Germany",
    "Spain", "Korea", "Thailand", "Vietnam", "Peru", "Egypt", "Kenya", "Norway", "Sweden",
    "Greece", "Turkey", "Chile", "Argentina", "Portugal", "Ireland", "Iceland", "Morocco",
    "Nepal", "Poland", "Austria", "New Zealand",
];

/// The ten participants' food and drink lists, each paired with three
/// countries.
pub fn appendix_profiles() -> Vec<UserProfile> {
    APPENDIX_FOODS
        .iter()
        .zip(APPENDIX_DRINKS.iter())
        .zip(COUNTRIES.chunks(3))
        .map(|((foods, drinks), countries)| {
            UserProfile::new(foods.iter().copied(), drinks.iter().copied(), countries.iter().copied())
                .expect("appendix lists have the right lengths")
        })
        .collect()
}

/// `n` profiles sampled from the pooled appendix entities.
pub fn synthetic_profiles(n: usize, seed: u64) -> Vec<UserProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut foods: Vec<&str> = APPENDIX_FOODS.iter().flatten().copied().collect();
    let mut drinks: Vec<&str> = APPENDIX_DRINKS.iter().flatten().copied().collect();
    let dedup = |v: &mut Vec<&str>| {
        v.sort_by_key(|s| normalize(s));
        v.dedup_by_key(|s| normalize(s));
    };
    dedup(&mut foods);
    dedup(&mut drinks);
    (0..n)
        .map(|_| {
            let f: Vec<&str> = foods.choose_multiple(&mut rng, UserProfile::FOODS).copied().collect();
            let d: Vec<&str> = drinks.choose_multiple(&mut rng, UserProfile::DRINKS).copied().collect();
            let c: Vec<&str> = COUNTRIES
                .choose_multiple(&mut rng, UserProfile::COUNTRIES)
                .copied()
                .collect();
            UserProfile::new(f, d, c).expect("pools are larger than profile lists")
        })
        .collect()
}

/// Exactly `tasks` synthetic tasks from sampled profiles.
pub fn synthetic_corpus(tasks: usize, seed: u64) -> Vec<DialogTask> {
    let profiles = synthetic_profiles(tasks.div_ceil(15), seed);
    let mut out = generate_synthetic_corpus(&profiles, seed);
    out.truncate(tasks);
    out
}
