//! Seeded generator of small English-like dependency treebanks.
//!
//! Trees follow Stanford-style conventions (content-word heads, `prep` /
//! `pobj` chains, coordination headed by the first conjunct). Word choice
//! is Zipfian so rare and unseen words occur, prepositional attachment
//! depends on the verb/preposition pair, and a fraction of POS tags are
//! replaced by plausible confusions to imitate predicted tags.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sentence;

const DETS: &[&str] = &["the", "a", "this", "that", "every", "some", "no", "another"];
const POSS: &[&str] = &["his", "her", "their", "its", "our"];
const PRONOUNS: &[&str] = &["he", "she", "they", "it", "we"];
const ADJS: &[&str] = &[
    "big", "small", "red", "old", "new", "happy", "quick", "quiet", "dark", "bright", "strange", "young",
    "heavy", "empty", "green", "tired", "famous", "careful", "broken", "cold", "warm", "narrow", "wide",
    "ancient", "gentle", "brave", "lazy", "loud",
];
const NOUNS: &[&str] = &[
    "dog", "cat", "man", "woman", "child", "teacher", "farmer", "doctor", "student", "king", "bird", "horse",
    "house", "car", "book", "letter", "table", "window", "garden", "river", "street", "city", "village",
    "school", "market", "shop", "boat", "train", "bridge", "tree", "stone", "box", "bag", "key", "door",
    "hat", "coat", "ball", "knife", "spoon", "cup", "bottle", "picture", "song", "story", "idea", "plan",
    "gift", "map", "road", "hill", "field", "forest", "island", "tower", "wall", "room", "kitchen", "office",
    "friend", "neighbor", "soldier", "painter", "writer", "baker", "driver", "nurse", "lawyer", "pilot",
    "telescope", "umbrella", "basket", "ladder", "hammer", "rope", "lamp", "clock", "mirror", "candle",
    "letterbox", "carpet", "pillow", "blanket", "engine", "wheel", "camera", "phone", "radio", "guitar",
    "violin", "apple", "bread", "cheese", "soup", "coffee", "tea", "cake", "fish", "egg",
];
const NAMES: &[&str] = &[
    "Kim", "Casey", "Alex", "Sam", "Jordan", "Robin", "Morgan", "Taylor", "Jamie", "Riley", "Avery", "Quinn",
    "Parker", "Drew", "Reese", "Skyler", "Rowan", "Emery", "Harper", "Sage",
];
/// Regular transitive verbs (base form).
const TRANSITIVE: &[&str] = &[
    "watch", "open", "push", "pull", "paint", "carry", "clean", "fix", "kick", "visit", "help", "follow",
    "want", "need", "like", "love", "hate", "call", "touch", "cook", "wash", "borrow", "deliver", "repair",
    "collect", "count", "destroy", "guard", "hunt", "kiss", "lift", "mark", "move", "order", "park", "pick",
    "print", "protect", "reach", "record", "remember", "rescue", "sign", "start", "test", "trust", "warn", "greet", "enjoy",
];
const INTRANSITIVE: &[&str] = &[
    "laugh", "smile", "wait", "arrive", "jump", "walk", "talk", "shout", "dance", "cry", "rest", "travel",
    "work", "play", "sail", "climb", "listen", "stay",
];
const PREPS: &[&str] = &["with", "on", "in", "at", "by", "from", "for", "near", "under", "behind"];
const ADVERBS: &[&str] = &["quickly", "often", "never", "slowly", "always", "again", "quietly", "soon", "rarely"];
const MODALS: &[&str] = &["will", "can", "must", "should"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    /// Probability that a non-punctuation tag is replaced by a confusion.
    pub tag_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { sentences: 1500, seed: 17, tag_noise: 0.05 }
    }
}

struct Builder {
    words: Vec<String>,
    tags: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<String>,
}

impl Builder {
    fn push(&mut self, word: &str, tag: &str, label: &str) -> usize {
        self.words.push(word.to_string());
        self.tags.push(tag.to_string());
        self.heads.push(0);
        self.labels.push(label.to_string());
        self.words.len()
    }

    fn attach(&mut self, dep: usize, head: usize) {
        self.heads[dep - 1] = head;
    }

    fn relabel(&mut self, tok: usize, label: &str) {
        self.labels[tok - 1] = label.to_string();
    }
}

struct Lexicon {
    nouns: WeightedIndex<f64>,
    names: WeightedIndex<f64>,
    adjs: WeightedIndex<f64>,
    transitive: WeightedIndex<f64>,
    intransitive: WeightedIndex<f64>,
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.5))).expect("nonempty lexicon")
}

fn past(verb: &str) -> String {
    if let Some(stem) = verb.strip_suffix('e') {
        format!("{stem}ed")
    } else if let Some(stem) = verb.strip_suffix('y').filter(|s| !s.ends_with(['a', 'e', 'o'])) {
        format!("{stem}ied")
    } else {
        format!("{verb}ed")
    }
}

fn third_person(verb: &str) -> String {
    if verb.ends_with(['s', 'h', 'x']) {
        format!("{verb}es")
    } else if let Some(stem) = verb.strip_suffix('y').filter(|s| !s.ends_with(['a', 'e', 'o'])) {
        format!("{stem}ies")
    } else {
        format!("{verb}s")
    }
}

/// Whether a prepositional phrase after `verb` prefers the verb over the
/// object noun. Fixed per (verb, preposition) pair.
fn prefers_verb(verb: usize, prep: usize) -> bool {
    (verb * 7 + prep * 3) % 5 < 2
}

struct Generator<'a> {
    rng: &'a mut ChaCha8Rng,
    lex: &'a Lexicon,
    b: Builder,
}

impl Generator<'_> {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen::<f64>() < p
    }

    fn pick<'s>(&mut self, items: &[&'s str]) -> &'s str {
        items.choose(self.rng).copied().expect("nonempty word list")
    }

    /// A noun phrase; returns its head token.
    fn np(&mut self, label: &str, depth: usize, subject: bool) -> usize {
        let r = self.rng.gen::<f64>();
        if subject && r < 0.12 {
            let w = self.pick(PRONOUNS);
            return self.b.push(w, "PRP", label);
        }
        if r < 0.24 {
            let w = NAMES[self.lex.names.sample(self.rng)];
            let head = self.b.push(w, "NNP", label);
            if depth == 0 && self.chance(0.1) {
                self.coordinate_noun(head, depth);
            }
            return head;
        }
        let mut mods = Vec::new();
        if self.chance(0.15) {
            let w = self.pick(POSS);
            mods.push(self.b.push(w, "PRP$", "poss"));
        } else if self.chance(0.85) {
            let w = self.pick(DETS);
            mods.push(self.b.push(w, "DT", "det"));
        }
        let n_adj = if self.chance(0.35) { if self.chance(0.2) { 2 } else { 1 } } else { 0 };
        for _ in 0..n_adj {
            let w = ADJS[self.lex.adjs.sample(self.rng)];
            mods.push(self.b.push(w, "JJ", "amod"));
        }
        if self.chance(0.08) {
            let w = NOUNS[self.lex.nouns.sample(self.rng)];
            mods.push(self.b.push(w, "NN", "nn"));
        }
        let noun = NOUNS[self.lex.nouns.sample(self.rng)];
        let head = if self.chance(0.25) {
            self.b.push(&format!("{noun}s"), "NNS", label)
        } else {
            self.b.push(noun, "NN", label)
        };
        for m in mods {
            self.b.attach(m, head);
        }
        if depth < 2 && self.chance(0.12) {
            let prep = self.pp(depth + 1);
            self.b.attach(prep, head);
        }
        if depth == 0 && self.chance(0.08) {
            self.relative_clause(head);
        } else if depth == 0 && self.chance(0.06) {
            self.coordinate_noun(head, depth);
        }
        head
    }

    fn coordinate_noun(&mut self, head: usize, depth: usize) {
        let cc = self.b.push("and", "CC", "cc");
        self.b.attach(cc, head);
        let conj = self.np("conj", depth + 1, false);
        self.b.attach(conj, head);
    }

    /// `prep` token with its object; returns the preposition.
    fn pp(&mut self, depth: usize) -> usize {
        let (_, prep) = self.preposition();
        let obj = self.np("pobj", depth, false);
        self.b.attach(obj, prep);
        prep
    }

    fn preposition(&mut self) -> (usize, usize) {
        let p = self.rng.gen_range(0..PREPS.len());
        (p, self.b.push(PREPS[p], "IN", "prep"))
    }

    fn relative_clause(&mut self, noun: usize) {
        let that = self.b.push("that", "WDT", "nsubj");
        let (verb, transitive) = self.verb(false);
        self.b.attach(that, verb);
        self.b.attach(verb, noun);
        self.b.relabel(verb, "rcmod");
        if transitive.is_some() {
            let obj = self.np("dobj", 2, false);
            self.b.attach(obj, verb);
        }
    }

    /// Pushes an inflected verb (possibly after a modal); returns the verb
    /// token and its lexicon index when transitive.
    fn verb(&mut self, allow_modal: bool) -> (usize, Option<usize>) {
        let modal = if allow_modal && self.chance(0.12) {
            let w = self.pick(MODALS);
            Some(self.b.push(w, "MD", "aux"))
        } else {
            None
        };
        let transitive = self.chance(0.7);
        let (base, idx) = if transitive {
            let i = self.lex.transitive.sample(self.rng);
            (TRANSITIVE[i], Some(i))
        } else {
            (INTRANSITIVE[self.lex.intransitive.sample(self.rng)], None)
        };
        let (form, tag) = if modal.is_some() {
            (base.to_string(), "VB")
        } else if self.chance(0.5) {
            (past(base), "VBD")
        } else {
            (third_person(base), "VBZ")
        };
        let v = self.b.push(&form, tag, "root");
        if let Some(m) = modal {
            self.b.attach(m, v);
        }
        (v, idx)
    }

    /// Subject, verb, complements; returns the verb.
    fn clause(&mut self) -> usize {
        let subj = self.np("nsubj", 0, true);
        let adv_before = if self.chance(0.08) {
            let w = self.pick(ADVERBS);
            Some(self.b.push(w, "RB", "advmod"))
        } else {
            None
        };
        let (verb, trans) = self.verb(true);
        self.b.attach(subj, verb);
        if let Some(a) = adv_before {
            self.b.attach(a, verb);
        }
        let object = trans.map(|_| self.np("dobj", 0, false));
        if let Some(o) = object {
            self.b.attach(o, verb);
        }
        let n_pp = if self.chance(0.45) { if self.chance(0.25) { 2 } else { 1 } } else { 0 };
        for _ in 0..n_pp {
            let (p, prep) = self.preposition();
            let obj = self.np("pobj", 1, false);
            self.b.attach(obj, prep);
            let head = match (object, trans) {
                (Some(o), Some(v)) => {
                    let favoured = prefers_verb(v, p);
                    if self.chance(0.9) == favoured {
                        verb
                    } else {
                        o
                    }
                }
                _ => verb,
            };
            self.b.attach(prep, head);
        }
        if self.chance(0.15) {
            let w = self.pick(ADVERBS);
            let a = self.b.push(w, "RB", "advmod");
            self.b.attach(a, verb);
        }
        verb
    }

    fn sentence(&mut self) -> Builder {
        let root = self.clause();
        self.b.attach(root, 0);
        if self.chance(0.12) {
            let comma = self.b.push(",", ",", "punct");
            self.b.attach(comma, root);
            let cc = self.pick(&["and", "but", "or"]);
            let cc = self.b.push(cc, "CC", "cc");
            self.b.attach(cc, root);
            let second = self.clause();
            self.b.attach(second, root);
            self.b.relabel(second, "conj");
        }
        let stop = self.b.push(".", ".", "punct");
        self.b.attach(stop, root);
        std::mem::replace(&mut self.b, Builder { words: vec![], tags: vec![], heads: vec![], labels: vec![] })
    }
}

fn confuse(tag: &str, rng: &mut ChaCha8Rng) -> String {
    let options: &[&str] = match tag {
        "NN" => &["JJ", "NNS", "VB"],
        "NNS" => &["NN", "VBZ"],
        "NNP" => &["NN", "JJ"],
        "JJ" => &["NN", "RB", "VBD"],
        "VBD" => &["VBN", "JJ"],
        "VBZ" => &["NNS", "VB"],
        "VB" => &["NN", "VBP"],
        "IN" => &["RB", "RP"],
        "RB" => &["IN", "JJ"],
        "DT" => &["PRP$", "WDT"],
        "WDT" => &["IN", "DT"],
        "PRP" => &["NN"],
        "PRP$" => &["DT"],
        "MD" => &["VB"],
        "CC" => &["IN"],
        _ => return tag.to_string(),
    };
    options.choose(rng).expect("nonempty").to_string()
}

/// Generates `config.sentences` sentences deterministically from `config.seed`.
pub fn generate(config: &SynthConfig) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lex = Lexicon {
        nouns: zipf(NOUNS.len()),
        names: zipf(NAMES.len()),
        adjs: zipf(ADJS.len()),
        transitive: zipf(TRANSITIVE.len()),
        intransitive: zipf(INTRANSITIVE.len()),
    };
    let mut out = Vec::with_capacity(config.sentences);
    while out.len() < config.sentences {
        let mut g = Generator {
            rng: &mut rng,
            lex: &lex,
            b: Builder { words: vec![], tags: vec![], heads: vec![], labels: vec![] },
        };
        let b = g.sentence();
        if b.words.len() > 40 {
            continue;
        }
        let tags = b
            .tags
            .iter()
            .map(|t| if rng.gen::<f64>() < config.tag_noise { confuse(t, &mut rng) } else { t.clone() })
            .collect();
        out.push(Sentence::new(b.words, tags, b.heads, b.labels).expect("generator builds valid trees"));
    }
    out
}

/// Splits off the last `fraction` of `sentences` as a held-out set.
pub fn split_holdout(mut sentences: Vec<Sentence>, fraction: f64) -> (Vec<Sentence>, Vec<Sentence>) {
    let held = ((sentences.len() as f64) * fraction).round() as usize;
    let dev = sentences.split_off(sentences.len() - held.min(sentences.len()));
    (sentences, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::is_tree;

    #[test]
    fn generated_sentences_are_single_root_trees() {
        let data = generate(&SynthConfig { sentences: 300, ..SynthConfig::default() });
        assert_eq!(data.len(), 300);
        for s in &data {
            assert!(is_tree(&s.heads), "{:?}", s);
            assert_eq!(s.heads.iter().filter(|&&h| h == 0).count(), 1);
            assert_eq!(s.words.last().map(String::as_str), Some("."));
        }
        let mean = data.iter().map(Sentence::len).sum::<usize>() as f64 / data.len() as f64;
        assert!((6.0..20.0).contains(&mean), "{mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let c = SynthConfig { sentences: 50, ..SynthConfig::default() };
        assert_eq!(generate(&c), generate(&c));
        assert_ne!(generate(&c), generate(&SynthConfig { seed: 99, ..c }));
    }

    #[test]
    fn tag_noise_rate() {
        let clean = generate(&SynthConfig { sentences: 400, tag_noise: 0.0, seed: 3 });
        assert!(clean.iter().all(|s| !s.tags.iter().any(|t| t == "VBN" || t == "RP")));
        let holdout = split_holdout(clean, 0.1);
        assert_eq!((holdout.0.len(), holdout.1.len()), (360, 40));
    }

    #[test]
    fn inflection() {
        assert_eq!(past("carry"), "carried");
        assert_eq!(past("love"), "loved");
        assert_eq!(third_person("watch"), "watches");
        assert_eq!(third_person("play"), "plays");
    }
}
