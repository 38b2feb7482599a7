//! Synthetic belief-tracking grammar over a closed toy vocabulary.
//!
//! Templated stories where an object's location or a container's contents
//! change with or without the protagonist observing, covering both task
//! families and all six conditions. The same vocabulary also generates a
//! "general" corpus of plain declarative sentences and verbatim-repeat lines
//! so one model can be trained on the mixture.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::tom::{ToMCondition, ToMDataset, ToMExample, ToMPrompt, ToMTask};
use crate::data::{TokenizerSpec, BOS_WORD};
use crate::model::ModelConfig;
use crate::rope::{RopeConfig, RopeLayout, DEFAULT_ROPE_BASE};

const AGENTS: [&str; 8] = [
    "anna", "bob", "carol", "dan", "emma", "frank", "grace", "henry",
];
const OBJECTS: [&str; 8] = ["ball", "key", "coin", "book", "sock", "ring", "cup", "hat"];
const LOCATIONS: [&str; 8] = [
    "box", "drawer", "basket", "shelf", "chest", "bin", "crate", "pouch",
];
const CONTAINERS: [&str; 6] = ["jar", "bag", "tin", "carton", "bottle", "sack"];
const CONTENTS: [&str; 8] = [
    "candy", "bread", "rice", "tea", "salt", "corn", "soap", "nuts",
];
const FUNCTION_WORDS: [&str; 25] = [
    "puts", "the", "in", "while", "is", "away", "moves", "to", "returns", "leaves", "watches",
    "tells", "will", "look", "labeled", "holds", "does", "not", "see", "inside", "open", "sees",
    "thinks", ".", ":",
];
const TEMPLATE_WORDS: [&str; 8] = [
    "please", "repeat", "every", "single", "word", "of", "following", "text",
];
const GENERAL_WORDS: [&str; 10] = [
    "takes", "likes", "near", "finds", "under", "gives", "keeps", "on", "and", "a",
];

/// The fixed toy vocabulary; id 0 is the BOS marker.
pub fn toy_vocab() -> Vec<String> {
    let mut v: Vec<String> = vec![BOS_WORD.into()];
    for group in [
        &AGENTS[..],
        &OBJECTS[..],
        &LOCATIONS[..],
        &CONTAINERS[..],
        &CONTENTS[..],
        &FUNCTION_WORDS[..],
        &TEMPLATE_WORDS[..],
        &GENERAL_WORDS[..],
    ] {
        v.extend(group.iter().map(|s| s.to_string()));
    }
    v
}

pub fn toy_tokenizer() -> TokenizerSpec {
    TokenizerSpec::Word { vocab: toy_vocab() }
}

/// Desk-scale model defaults: d_model 64, 4 layers, 4 heads (head_dim 16),
/// word vocabulary, sequences up to 256.
pub fn toy_model_config() -> ModelConfig {
    let tokenizer = toy_tokenizer();
    ModelConfig {
        vocab_size: tokenizer.vocab_size(),
        d_model: 64,
        n_layers: 4,
        n_heads: 4,
        d_ff: 256,
        max_seq_len: 256,
        rope: RopeConfig {
            head_dim: 16,
            base: DEFAULT_ROPE_BASE,
            layout: RopeLayout::HalfSplit,
            enabled: true,
        },
        tokenizer,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("nonempty pool")
}

fn pick_two<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> (&'a str, &'a str) {
    let first = pick(rng, pool);
    loop {
        let second = pick(rng, pool);
        if second != first {
            return (first, second);
        }
    }
}

fn transfer_example(condition: ToMCondition, rng: &mut ChaCha8Rng, seed: u64) -> ToMExample {
    let (a, b) = pick_two(rng, &AGENTS);
    let obj = pick(rng, &OBJECTS);
    let (l1, l2) = pick_two(rng, &LOCATIONS);
    let (context, reality, belief) = match condition {
        ToMCondition::FB => (
            format!(
                "{a} puts the {obj} in the {l1} . while {a} is away {b} moves the {obj} to the {l2} . {a} returns ."
            ),
            l2,
            l1,
        ),
        ToMCondition::PP => (
            format!(
                "{a} puts the {obj} in the {l1} . while {a} watches {b} moves the {obj} to the {l2} . {a} returns ."
            ),
            l2,
            l2,
        ),
        ToMCondition::IP => (
            format!(
                "{a} puts the {obj} in the {l1} . while {a} is away {b} moves the {obj} to the {l2} . {a} returns . {b} tells {a} ."
            ),
            l2,
            l2,
        ),
        ToMCondition::NT => (
            format!(
                "{a} puts the {obj} in the {l1} . while {a} is away {b} leaves the {obj} in the {l1} . {a} returns ."
            ),
            l1,
            l1,
        ),
        _ => unreachable!("condition checked by caller"),
    };
    ToMExample {
        context,
        prompts: vec![
            ToMPrompt {
                text: format!("the {obj} is in the"),
                target: reality.into(),
            },
            ToMPrompt {
                text: format!("{a} will look in the"),
                target: belief.into(),
            },
        ],
        task: ToMTask::UnexpectedTransfer,
        condition,
        seed,
    }
}

fn contents_example(condition: ToMCondition, rng: &mut ChaCha8Rng, seed: u64) -> ToMExample {
    let (a, b) = pick_two(rng, &AGENTS);
    let cont = pick(rng, &CONTAINERS);
    let (label, real) = if condition == ToMCondition::CL {
        let x = pick(rng, &CONTENTS);
        (x, x)
    } else {
        pick_two(rng, &CONTENTS)
    };
    let (context, belief) = match condition {
        ToMCondition::FB => (
            format!(
                "the {cont} is labeled {label} . the {cont} holds {real} . {a} does not see inside ."
            ),
            label,
        ),
        ToMCondition::CL => (
            format!(
                "the {cont} is labeled {label} . the {cont} holds {real} . {a} does not see inside ."
            ),
            real,
        ),
        ToMCondition::IP => (
            format!(
                "the {cont} is labeled {label} . the {cont} holds {real} . {a} does not see inside . {b} tells {a} ."
            ),
            real,
        ),
        ToMCondition::OC => (
            format!(
                "the {cont} is labeled {label} . the {cont} holds {real} . the {cont} is open . {a} sees inside ."
            ),
            real,
        ),
        _ => unreachable!("condition checked by caller"),
    };
    ToMExample {
        context,
        prompts: vec![
            ToMPrompt {
                text: format!("the {cont} holds"),
                target: real.into(),
            },
            ToMPrompt {
                text: format!("{a} thinks the {cont} holds"),
                target: belief.into(),
            },
        ],
        task: ToMTask::UnexpectedContents,
        condition,
        seed,
    }
}

/// All eight (task, condition) buckets in a fixed order.
pub const TOM_BUCKETS: [(ToMTask, ToMCondition); 8] = [
    (ToMTask::UnexpectedContents, ToMCondition::FB),
    (ToMTask::UnexpectedContents, ToMCondition::CL),
    (ToMTask::UnexpectedContents, ToMCondition::IP),
    (ToMTask::UnexpectedContents, ToMCondition::OC),
    (ToMTask::UnexpectedTransfer, ToMCondition::FB),
    (ToMTask::UnexpectedTransfer, ToMCondition::NT),
    (ToMTask::UnexpectedTransfer, ToMCondition::IP),
    (ToMTask::UnexpectedTransfer, ToMCondition::PP),
];

/// Generate `n_per_bucket` examples for each of the eight buckets,
/// deterministically from the seed.
pub fn generate_tom_dataset(n_per_bucket: usize, seed: u64) -> ToMDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(8 * n_per_bucket);
    for (task, condition) in TOM_BUCKETS {
        for _ in 0..n_per_bucket {
            let ex = match task {
                ToMTask::UnexpectedTransfer => transfer_example(condition, &mut rng, seed),
                ToMTask::UnexpectedContents => contents_example(condition, &mut rng, seed),
            };
            examples.push(ex);
        }
    }
    ToMDataset { examples }
}

/// The verbatim-repeat instruction wrapped around a segment, mirroring the
/// repeat-task prompt wording over the toy vocabulary.
pub fn repeat_prompt_prefix() -> &'static str {
    "please repeat every single word of the following text :"
}

pub fn repeat_prompt_suffix() -> &'static str {
    "repeat every single word of the text :"
}

fn general_sentence(rng: &mut ChaCha8Rng) -> String {
    let a = pick(rng, &AGENTS);
    let b = pick(rng, &AGENTS);
    let obj = pick(rng, &OBJECTS);
    let loc = pick(rng, &LOCATIONS);
    let cont = pick(rng, &CONTAINERS);
    let stuff = pick(rng, &CONTENTS);
    match rng.random_range(0..8u32) {
        0 => format!("{a} takes the {obj} ."),
        1 => format!("{a} likes the {loc} ."),
        2 => format!("the {obj} is near the {loc} ."),
        3 => format!("{a} gives the {obj} to {b} ."),
        4 => format!("{a} finds the {obj} under the {loc} ."),
        5 => format!("{a} keeps the {stuff} on the {loc} ."),
        6 => format!("the {cont} holds {stuff} ."),
        _ => format!("the {obj} is in the {loc} ."),
    }
}

fn repeat_line(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=8usize);
    let pool: Vec<&str> = OBJECTS
        .iter()
        .chain(CONTENTS.iter())
        .chain(LOCATIONS.iter())
        .copied()
        .collect();
    let words: Vec<&str> = (0..n).map(|_| pick(rng, &pool)).collect();
    format!(
        "{} {} {} {}",
        repeat_prompt_prefix(),
        words.join(" "),
        repeat_prompt_suffix(),
        words.join(" ")
    )
}

/// A general-language corpus: declarative sentences plus verbatim-repeat
/// lines, one sentence per line.
pub fn generate_general_corpus(n_lines: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n_lines {
        // Every fourth line trains the repeat skill.
        let line = if i % 4 == 3 {
            repeat_line(&mut rng)
        } else {
            general_sentence(&mut rng)
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Mixed training corpus: belief-task lines interleaved with general lines.
pub fn mixed_training_text(tom: &ToMDataset, general: &str) -> String {
    let mut lines = tom.training_lines();
    lines.extend(general.lines().map(String::from));
    lines.join("\n")
}
