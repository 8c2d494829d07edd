//! Seeded synthetic data for benchmarks and tests: random unit banks and a
//! templated question/passage corpus.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::hopfield::MemoryBank;
use crate::store::Document;

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| unit_vector(&mut rng, dim)).collect()
}

/// `n` random unit patterns with zero-padded ids `p000000`, `p000001`, ...
pub fn random_unit_bank(n: usize, dim: usize, seed: u64) -> MemoryBank {
    let ids = (0..n).map(|i| format!("p{i:06}")).collect();
    MemoryBank::new(ids, random_unit_vectors(n, dim, seed)).expect("valid synthetic bank")
}

/// `(passage wording, question wording)`; the two sides share no tokens.
const CATEGORIES: &[(&str, &str)] = &[
    ("river", "waterway"),
    ("mountain", "summit"),
    ("city", "metropolis"),
    ("festival", "celebration"),
    ("language", "tongue"),
    ("mineral", "ore"),
    ("instrument", "gadget"),
    ("dynasty", "monarchy"),
    ("comet", "asteroid"),
    ("vaccine", "inoculation"),
    ("bridge", "viaduct"),
    ("painting", "canvas"),
];
const PLACES: &[(&str, &str)] = &[
    ("northern highlands", "upper moors"),
    ("coastal province", "seaside county"),
    ("eastern plains", "orient prairie"),
    ("island chain", "archipelago"),
    ("southern desert", "austral dunes"),
    ("river delta", "estuary marsh"),
    ("western valley", "occident vale"),
    ("mountain pass", "alpine col"),
];
const TRAITS: &[(&str, &str)] = &[
    ("unusual color", "odd hue"),
    ("long history", "ancient past"),
    ("seasonal floods", "yearly inundations"),
    ("rare fossils", "scarce petrifactions"),
    ("annual parade", "yearly procession"),
    ("old manuscripts", "antique scrolls"),
    ("bright light", "vivid glow"),
    ("strong winds", "fierce gales"),
];
const ERAS: &[(&str, &str)] = &[
    ("bronze age", "copper epoch"),
    ("medieval period", "feudal times"),
    ("industrial revolution", "factory boom"),
    ("classical antiquity", "greco roman days"),
    ("early modern era", "renaissance aftermath"),
    ("stone age", "paleolithic dawn"),
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const SYLLABLES: &[&str] = &[
        "ka", "lo", "mir", "zan", "tu", "vek", "ori", "pel", "qua", "ras", "sil", "dro", "fen",
        "gau", "hib", "jor", "nyx", "wen", "yal", "bex",
    ];
    (0..3)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect()
}

/// Passages about invented entities, each paired with a question that
/// paraphrases the passage's attributes.
#[derive(Debug, Clone)]
pub struct SyntheticQa {
    pub passages: Vec<Document>,
    /// `(question, id of the passage that answers it)`
    pub questions: Vec<(String, String)>,
}

/// `n` passages with distinct attribute tuples. Each question describes its
/// passage's category, place, trait and era using a fixed synonym lexicon and
/// never repeats a passage token other than stopwords, so lexical matching
/// alone is near chance while the question-to-passage mapping is learnable.
pub fn question_passage_corpus(n: usize, seed: u64) -> SyntheticQa {
    let combos = CATEGORIES.len() * PLACES.len() * TRAITS.len() * ERAS.len();
    assert!(n <= combos, "at most {combos} distinct passages");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples: Vec<usize> = (0..combos).collect();
    tuples.shuffle(&mut rng);
    let mut names = std::collections::BTreeSet::new();
    while names.len() < n {
        names.insert(pseudo_word(&mut rng));
    }
    let mut names: Vec<String> = names.into_iter().collect();
    names.shuffle(&mut rng);

    let mut passages = Vec::with_capacity(n);
    let mut questions = Vec::with_capacity(n);
    for (i, (name, &t)) in names.into_iter().zip(&tuples).enumerate() {
        let (c, t) = (CATEGORIES[t % CATEGORIES.len()], t / CATEGORIES.len());
        let (p, t) = (PLACES[t % PLACES.len()], t / PLACES.len());
        let (tr, t) = (TRAITS[t % TRAITS.len()], t / TRAITS.len());
        let e = ERAS[t];
        let id = format!("doc{i:04}");
        let text = format!(
            "{name} is a {} located in the {}. It is known for {} and dates from the {}.",
            c.0, p.0, tr.0, e.0
        );
        let q = format!("Which {} of the {} has {} since the {}?", c.1, p.1, tr.1, e.1);
        passages.push(Document {
            id: id.clone(),
            title: name,
            text,
            source: "synthetic".into(),
        });
        questions.push((q, id));
    }
    SyntheticQa {
        passages,
        questions,
    }
}
