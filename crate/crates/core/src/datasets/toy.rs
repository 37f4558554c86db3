use std::collections::HashSet;

use super::LabeledExample;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

const SUBJECTS: [&str; 8] = [
    "you", "you people", "your brother", "that editor", "this guy", "the admin", "your friend", "this poster",
];
const BE: [&str; 8] = ["are", "are", "is", "is", "is", "is", "is", "is"];
const INSULT_ADJ: [&str; 8] = [
    "stupid", "pathetic", "worthless", "disgusting", "useless", "brainless", "clueless", "ignorant",
];
const INSULT_NOUN: [&str; 8] = ["idiot", "moron", "loser", "clown", "fool", "troll", "jerk", "coward"];
const NICE_ADJ: [&str; 8] = [
    "kind", "helpful", "brilliant", "lovely", "thoughtful", "clever", "patient", "generous",
];
const NICE_NOUN: [&str; 8] = ["friend", "neighbour", "colleague", "writer", "person", "teacher", "editor", "helper"];
const HOSTILE: [&str; 6] = ["shut up", "get lost", "go away", "nobody wants you here", "stop talking", "drop dead"];
const FRIENDLY: [&str; 6] = ["thank you", "well done", "good point", "welcome aboard", "nice work", "great idea"];
const TAILS: [&str; 8] = [
    "", " today", " again", " on this page", " about the article", " in the last edit", " honestly", " as usual",
];

fn pick<'a>(rng: &mut SeedStream, xs: &[&'a str]) -> &'a str {
    xs[rng.below(xs.len())]
}

fn sentence(rng: &mut SeedStream, toxic: bool) -> String {
    let s = rng.below(SUBJECTS.len());
    let tail = pick(rng, &TAILS);
    match (toxic, rng.below(3)) {
        (true, 0) => format!("{} {} a {} {}{tail}", SUBJECTS[s], BE[s], pick(rng, &INSULT_ADJ), pick(rng, &INSULT_NOUN)),
        (true, 1) => format!("{} {} so {}{tail}", SUBJECTS[s], BE[s], pick(rng, &INSULT_ADJ)),
        (true, _) => format!("{}, {}{tail}", pick(rng, &HOSTILE), pick(rng, &INSULT_NOUN)),
        (false, 0) => format!("{} {} a {} {}{tail}", SUBJECTS[s], BE[s], pick(rng, &NICE_ADJ), pick(rng, &NICE_NOUN)),
        (false, 1) => format!("{} {} so {}{tail}", SUBJECTS[s], BE[s], pick(rng, &NICE_ADJ)),
        (false, _) => format!("{}, {}{tail}", pick(rng, &FRIENDLY), pick(rng, &NICE_NOUN)),
    }
}

/// Balanced, duplicate-free synthetic comments built from insult and
/// compliment templates. `n` must be even.
pub fn toy_corpus(n: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    if !n.is_multiple_of(2) {
        return Err(Error::Validation(format!("toy corpus size {n} must be even")));
    }
    let mut rng = SeedStream::new(seed).derive("toy");
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        let label = (out.len() % 2) as u8;
        let text = sentence(&mut rng, label == 1);
        attempts += 1;
        if attempts > 50 * n + 1000 {
            return Err(Error::Validation(format!("cannot draw {n} distinct toy sentences")));
        }
        if seen.insert(text.clone()) {
            out.push(LabeledExample::new(format!("toy:{}", out.len()), text, label, "toy")?);
        }
    }
    Ok(out)
}

/// Self-directed criticism is benign; the same words aimed at someone else
/// are not. Pairs that a base model tends to get wrong.
pub fn hard_cases() -> Vec<LabeledExample> {
    let pairs = [
        ("i am so stupid sometimes", "you are so stupid"),
        ("i feel like such an idiot today", "you are such an idiot"),
        ("i was a total fool to trust that link", "you are a total fool"),
        ("honestly i am useless at cooking", "honestly you are useless"),
        ("i called myself a loser after that game", "you are a loser"),
        ("i am clueless about taxes", "you are clueless and ignorant"),
    ];
    pairs
        .iter()
        .enumerate()
        .flat_map(|(i, (benign, toxic))| {
            [
                LabeledExample::new(format!("hard:{}", 2 * i), *benign, 0, "hard-cases"),
                LabeledExample::new(format!("hard:{}", 2 * i + 1), *toxic, 1, "hard-cases"),
            ]
        })
        .collect::<Result<_>>()
        .expect("static hard cases are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_unique_and_seeded() {
        let a = toy_corpus(128, 1).unwrap();
        assert_eq!(a.iter().filter(|e| e.label == 1).count(), 64);
        let texts: HashSet<_> = a.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts.len(), 128);
        assert_eq!(a, toy_corpus(128, 1).unwrap());
        assert_ne!(a, toy_corpus(128, 2).unwrap());
        assert!(toy_corpus(3, 1).is_err());
    }

    #[test]
    fn hard_cases_alternate_labels() {
        let h = hard_cases();
        assert_eq!(h.len(), 12);
        assert!(h.chunks(2).all(|p| p[0].label == 0 && p[1].label == 1));
    }
}
