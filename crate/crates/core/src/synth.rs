//! Synthetic languages for desk-scale experiments.
//!
//! A small generative grammar produces English-like sentences with
//! dependency trees over a lexicon of about 500 invented words. Words carry
//! topics and individual selectional preferences, so their distributions
//! differ word by word. A [`Cipher`] rewrites every word letter by letter
//! into a disjoint alphabet, giving a second language with identical
//! syntax and disjoint surface forms.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{BilingualDictionary, Sentence, Split, Treebank};
use crate::error::Result;
use crate::numerics::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WordClass {
    Noun,
    TransitiveVerb,
    IntransitiveVerb,
    Adjective,
    Adverb,
    Preposition,
    Determiner,
    Auxiliary,
    Pronoun,
    Conjunction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexEntry {
    pub form: String,
    pub class: WordClass,
    pub topic: usize,
}

/// Sizes of the open classes and the number of topics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexiconSizes {
    pub nouns: usize,
    pub transitive_verbs: usize,
    pub intransitive_verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub topics: usize,
}

impl Default for LexiconSizes {
    fn default() -> Self {
        LexiconSizes {
            nouns: 200,
            transitive_verbs: 80,
            intransitive_verbs: 40,
            adjectives: 80,
            adverbs: 60,
            topics: 20,
        }
    }
}

const PREPOSITIONS: usize = 12;
const DETERMINERS: usize = 6;
const AUXILIARIES: usize = 5;
const PRONOUNS: usize = 8;
const CONJUNCTIONS: usize = 2;

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br",
    "cr", "dr", "fl", "gr", "pl", "pr", "sl", "st", "tr", "ch", "sh", "th", "qu",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "oo", "ou", "y"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ck", "x"];

/// Per-word collocation preferences. Each content word has its own
/// favourite neighbours, which gives every word a distinct distribution.
#[derive(Debug, Clone, Default)]
struct Preferences {
    determiner: HashMap<usize, usize>,
    adjective: HashMap<usize, usize>,
    /// Verb a noun prefers as its predicate when it is the subject.
    predicate: HashMap<usize, usize>,
    object: HashMap<usize, usize>,
    adverb: HashMap<usize, usize>,
    preposition: HashMap<usize, usize>,
    oblique: HashMap<usize, usize>,
}

/// The grammar: lexicon plus per-word preferences.
#[derive(Debug, Clone)]
pub struct Grammar {
    lexicon: Vec<LexEntry>,
    by_class: BTreeMap<WordClass, Vec<usize>>,
    /// Per class, per topic: entry indices.
    by_topic: BTreeMap<WordClass, Vec<Vec<usize>>>,
    prefs: Preferences,
    topics: usize,
}

/// Probability that a slot is filled by the governing word's preference.
const LEXICAL: f64 = 0.9;

impl Grammar {
    pub fn new(sizes: LexiconSizes, seed: u64) -> Self {
        let mut r = rng::derive(seed, "synth-lexicon");
        let topics = sizes.topics.max(1);
        let mut seen = HashSet::new();
        let mut lexicon = Vec::new();
        let classes = [
            (WordClass::Noun, sizes.nouns, 2),
            (WordClass::TransitiveVerb, sizes.transitive_verbs, 2),
            (WordClass::IntransitiveVerb, sizes.intransitive_verbs, 2),
            (WordClass::Adjective, sizes.adjectives, 2),
            (WordClass::Adverb, sizes.adverbs, 2),
            (WordClass::Preposition, PREPOSITIONS, 1),
            (WordClass::Determiner, DETERMINERS, 1),
            (WordClass::Auxiliary, AUXILIARIES, 1),
            (WordClass::Pronoun, PRONOUNS, 1),
            (WordClass::Conjunction, CONJUNCTIONS, 1),
        ];
        for (class, count, syllables) in classes {
            for i in 0..count {
                let form = loop {
                    let n = r.gen_range(1..=syllables + 1);
                    let mut w = String::new();
                    for _ in 0..n {
                        w.push_str(ONSETS.choose(&mut r).expect("onsets"));
                        w.push_str(VOWELS.choose(&mut r).expect("vowels"));
                        w.push_str(CODAS.choose(&mut r).expect("codas"));
                    }
                    if class == WordClass::Adverb {
                        w.push_str("ly");
                    }
                    if w.len() >= 2 && seen.insert(w.clone()) {
                        break w;
                    }
                };
                lexicon.push(LexEntry {
                    form,
                    class,
                    topic: i % topics,
                });
            }
        }
        let mut by_class: BTreeMap<WordClass, Vec<usize>> = BTreeMap::new();
        let mut by_topic: BTreeMap<WordClass, Vec<Vec<usize>>> = BTreeMap::new();
        for (i, e) in lexicon.iter().enumerate() {
            by_class.entry(e.class).or_default().push(i);
            by_topic
                .entry(e.class)
                .or_insert_with(|| vec![Vec::new(); topics])[e.topic]
                .push(i);
        }
        let mut g = Grammar {
            lexicon,
            by_class,
            by_topic,
            prefs: Preferences::default(),
            topics,
        };
        let mut r = rng::derive(seed, "synth-preferences");
        let mut prefs = Preferences::default();
        for &n in &g.by_class[&WordClass::Noun] {
            let t = g.lexicon[n].topic;
            prefs
                .determiner
                .insert(n, g.any(WordClass::Determiner, &mut r));
            prefs
                .adjective
                .insert(n, g.in_topic(WordClass::Adjective, t, &mut r));
            let class = if r.gen::<f64>() < 0.65 {
                WordClass::TransitiveVerb
            } else {
                WordClass::IntransitiveVerb
            };
            prefs.predicate.insert(n, g.in_topic(class, t, &mut r));
        }
        for class in [WordClass::TransitiveVerb, WordClass::IntransitiveVerb] {
            for &v in &g.by_class[&class] {
                let t = g.lexicon[v].topic;
                if class == WordClass::TransitiveVerb {
                    prefs
                        .object
                        .insert(v, g.in_topic(WordClass::Noun, t, &mut r));
                }
                prefs
                    .adverb
                    .insert(v, g.in_topic(WordClass::Adverb, t, &mut r));
                prefs
                    .preposition
                    .insert(v, g.any(WordClass::Preposition, &mut r));
                prefs
                    .oblique
                    .insert(v, g.in_topic(WordClass::Noun, t, &mut r));
            }
        }
        g.prefs = prefs;
        g
    }

    pub fn lexicon(&self) -> &[LexEntry] {
        &self.lexicon
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.lexicon.iter().map(|e| e.form.as_str())
    }

    fn any<R: Rng>(&self, class: WordClass, r: &mut R) -> usize {
        *self.by_class[&class].choose(r).expect("class has words")
    }

    fn in_topic<R: Rng>(&self, class: WordClass, topic: usize, r: &mut R) -> usize {
        match self.by_topic[&class][topic].choose(r) {
            Some(&w) => w,
            None => self.any(class, r),
        }
    }

    /// Picks from `pool` with Zipf-like weights `1 / (rank + 1)`.
    fn zipf<R: Rng>(pool: &[usize], r: &mut R) -> usize {
        let total: f64 = (0..pool.len()).map(|k| 1.0 / (k as f64 + 1.0)).sum();
        let mut u = r.gen::<f64>() * total;
        for (k, &i) in pool.iter().enumerate() {
            u -= 1.0 / (k as f64 + 1.0);
            if u <= 0.0 {
                return i;
            }
        }
        *pool.last().expect("nonempty pool")
    }

    /// A word of `class`, usually on `topic`, frequent words first.
    fn pick<R: Rng>(&self, class: WordClass, topic: usize, r: &mut R) -> usize {
        let pool = &self.by_topic[&class][topic];
        if pool.is_empty() || r.gen::<f64>() < 0.1 {
            Self::zipf(&self.by_class[&class], r)
        } else {
            Self::zipf(pool, r)
        }
    }

    /// `preferred` with probability [`LEXICAL`], otherwise a topical pick.
    fn prefer<R: Rng>(
        &self,
        preferred: Option<usize>,
        class: WordClass,
        topic: usize,
        r: &mut R,
    ) -> usize {
        match preferred {
            Some(p) if r.gen::<f64>() < LEXICAL => p,
            _ => self.pick(class, topic, r),
        }
    }

    /// Appends a noun phrase; returns the position of its head noun.
    fn noun_phrase<R: Rng>(
        &self,
        b: &mut Builder,
        noun: usize,
        r: &mut R,
        allow_pp: bool,
    ) -> usize {
        let topic = self.lexicon[noun].topic;
        let det = if r.gen::<f64>() < 0.85 {
            let d = match r.gen::<f64>() < LEXICAL {
                true => self.prefs.determiner[&noun],
                false => self.any(WordClass::Determiner, r),
            };
            Some(b.push(d, "det"))
        } else {
            None
        };
        let mut adjectives = Vec::new();
        let n_adj = [0, 0, 1, 1, 1, 2][r.gen_range(0..6)];
        for k in 0..n_adj {
            let preferred = (k == n_adj - 1).then(|| self.prefs.adjective[&noun]);
            let adj = self.prefer(preferred, WordClass::Adjective, topic, r);
            adjectives.push(b.push(adj, "amod"));
        }
        let head = b.push(noun, "");
        if let Some(d) = det {
            b.attach(d, head);
        }
        for a in adjectives {
            b.attach(a, head);
        }
        if allow_pp && r.gen::<f64>() < 0.1 {
            let prep = b.push(self.any(WordClass::Preposition, r), "case");
            let inner = self.pick(WordClass::Noun, topic, r);
            let inner_head = self.noun_phrase(b, inner, r, false);
            b.attach(prep, inner_head);
            b.attach_labeled(inner_head, head, "nmod");
        }
        head
    }

    /// Appends a predicate headed by `verb` (auxiliary, verb, object,
    /// oblique, adverb); returns the verb position.
    fn predicate<R: Rng>(&self, b: &mut Builder, verb: usize, r: &mut R) -> usize {
        let topic = self.lexicon[verb].topic;
        let aux = if r.gen::<f64>() < 0.2 {
            Some(b.push(self.any(WordClass::Auxiliary, r), "aux"))
        } else {
            None
        };
        let v = b.push(verb, "");
        if let Some(a) = aux {
            b.attach(a, v);
        }
        if self.lexicon[verb].class == WordClass::TransitiveVerb {
            let obj = self.prefer(
                self.prefs.object.get(&verb).copied(),
                WordClass::Noun,
                topic,
                r,
            );
            let o = self.noun_phrase(b, obj, r, true);
            b.attach_labeled(o, v, "obj");
        }
        if r.gen::<f64>() < 0.3 {
            let prep = match r.gen::<f64>() < LEXICAL {
                true => self.prefs.preposition[&verb],
                false => self.any(WordClass::Preposition, r),
            };
            let p = b.push(prep, "case");
            let noun = self.prefer(
                self.prefs.oblique.get(&verb).copied(),
                WordClass::Noun,
                topic,
                r,
            );
            let n = self.noun_phrase(b, noun, r, false);
            b.attach(p, n);
            b.attach_labeled(n, v, "obl");
        }
        if r.gen::<f64>() < 0.3 {
            let adv = self.prefer(
                self.prefs.adverb.get(&verb).copied(),
                WordClass::Adverb,
                topic,
                r,
            );
            let a = b.push(adv, "advmod");
            b.attach(a, v);
        }
        v
    }

    fn verb<R: Rng>(&self, topic: usize, r: &mut R) -> usize {
        let class = if r.gen::<f64>() < 0.65 {
            WordClass::TransitiveVerb
        } else {
            WordClass::IntransitiveVerb
        };
        self.pick(class, topic, r)
    }

    /// One sentence with its dependency tree.
    pub fn sentence<R: Rng>(&self, r: &mut R, language: &str) -> Sentence {
        let topic = r.gen_range(0..self.topics);
        let mut b = Builder::default();
        let (subject, verb) = if r.gen::<f64>() < 0.1 {
            (
                b.push(self.any(WordClass::Pronoun, r), ""),
                self.verb(topic, r),
            )
        } else {
            let noun = self.pick(WordClass::Noun, topic, r);
            let verb = match r.gen::<f64>() < LEXICAL {
                true => self.prefs.predicate[&noun],
                false => self.verb(topic, r),
            };
            (self.noun_phrase(&mut b, noun, r, true), verb)
        };
        let v = self.predicate(&mut b, verb, r);
        b.attach_labeled(subject, v, "nsubj");
        b.attach_labeled(v, usize::MAX, "root");
        if r.gen::<f64>() < 0.15 {
            let cc = b.push(self.any(WordClass::Conjunction, r), "cc");
            let second = self.predicate(&mut b, self.verb(topic, r), r);
            b.attach(cc, second);
            b.attach_labeled(second, v, "conj");
        }
        b.finish(&self.lexicon, language)
    }

    /// Sentences totalling at least `tokens` tokens.
    pub fn corpus(&self, tokens: usize, seed: u64, language: &str) -> Vec<Sentence> {
        let mut r = rng::derive(seed, "synth-corpus");
        let mut out = Vec::new();
        let mut total = 0;
        while total < tokens {
            let s = self.sentence(&mut r, language);
            total += s.len();
            out.push(s);
        }
        out
    }

    pub fn treebank(&self, sentences: usize, seed: u64, language: &str, split: Split) -> Treebank {
        let mut r = rng::derive(seed, "synth-treebank");
        Treebank {
            language: language.to_string(),
            split,
            sentences: (0..sentences)
                .map(|_| self.sentence(&mut r, language))
                .collect(),
        }
    }
}

/// Collects tokens left to right; heads are resolved on [`Builder::finish`].
#[derive(Default)]
struct Builder {
    words: Vec<usize>,
    heads: Vec<Option<usize>>,
    labels: Vec<&'static str>,
}

impl Builder {
    fn push(&mut self, word: usize, label: &'static str) -> usize {
        self.words.push(word);
        self.heads.push(None);
        self.labels.push(label);
        self.words.len() - 1
    }

    fn attach(&mut self, dep: usize, head: usize) {
        self.heads[dep] = Some(head);
    }

    /// `head = usize::MAX` attaches to the root.
    fn attach_labeled(&mut self, dep: usize, head: usize, label: &'static str) {
        self.heads[dep] = Some(head);
        self.labels[dep] = label;
    }

    fn finish(self, lexicon: &[LexEntry], language: &str) -> Sentence {
        let heads = self
            .heads
            .iter()
            .map(|h| match h.expect("every token attached") {
                usize::MAX => 0,
                h => h + 1,
            })
            .collect();
        Sentence::new(
            self.words
                .iter()
                .map(|&w| lexicon[w].form.clone())
                .collect(),
            heads,
            self.labels.iter().map(|l| l.to_string()).collect(),
            language,
        )
        .expect("generated trees are well formed")
    }
}

/// Letter-by-letter substitution into the Cyrillic alphabet. Words map
/// one-to-one and share no characters with their originals.
#[derive(Debug, Clone)]
pub struct Cipher {
    map: HashMap<char, char>,
}

impl Cipher {
    pub fn new(seed: u64) -> Self {
        let mut targets: Vec<char> = ('\u{0430}'..='\u{044F}').collect();
        targets.shuffle(&mut rng::derive(seed, "synth-cipher"));
        Cipher {
            map: ('a'..='z').zip(targets).collect(),
        }
    }

    pub fn word(&self, w: &str) -> String {
        w.chars()
            .map(|c| self.map.get(&c).copied().unwrap_or(c))
            .collect()
    }

    pub fn sentence(&self, s: &Sentence, language: &str) -> Sentence {
        Sentence {
            tokens: s.tokens.iter().map(|t| self.word(t)).collect(),
            heads: s.heads.clone(),
            labels: s.labels.clone(),
            language: language.to_string(),
        }
    }

    pub fn treebank(&self, tb: &Treebank, language: &str) -> Treebank {
        Treebank {
            language: language.to_string(),
            split: tb.split,
            sentences: tb
                .sentences
                .iter()
                .map(|s| self.sentence(s, language))
                .collect(),
        }
    }

    /// Gold translation pairs (original → enciphered) for `words`.
    pub fn dictionary<'a>(
        &self,
        words: impl IntoIterator<Item = &'a str>,
        split: Split,
    ) -> Result<BilingualDictionary> {
        BilingualDictionary::new(
            words.into_iter().map(|w| (w.to_string(), self.word(w))),
            split,
        )
    }
}

/// Token lists of sentences.
pub fn token_lists(sentences: &[Sentence]) -> Vec<Vec<String>> {
    sentences.iter().map(|s| s.tokens.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::check_tree;

    #[test]
    fn lexicon_size_and_uniqueness() {
        let g = Grammar::new(LexiconSizes::default(), 1);
        let n = g.lexicon().len();
        assert!((450..=550).contains(&n), "{n}");
        let unique: HashSet<&str> = g.words().collect();
        assert_eq!(unique.len(), n);
    }

    #[test]
    fn corpus_is_deterministic_and_well_formed() {
        let g = Grammar::new(LexiconSizes::default(), 2);
        let a = g.corpus(3000, 5, "a");
        assert_eq!(a, g.corpus(3000, 5, "a"));
        assert!(a.iter().map(Sentence::len).sum::<usize>() >= 3000);
        for s in &a {
            assert!(check_tree(&s.heads).is_ok());
            assert_eq!(s.heads.iter().filter(|&&h| h == 0).count(), 1);
        }
        let mean = 3000.0 / a.len() as f64;
        assert!((5.0..15.0).contains(&mean), "{mean}");
    }

    #[test]
    fn cipher_is_disjoint_and_injective() {
        let g = Grammar::new(LexiconSizes::default(), 3);
        let c = Cipher::new(4);
        let originals: HashSet<char> = g.words().flat_map(str::chars).collect();
        let mut seen = HashSet::new();
        for w in g.words() {
            let e = c.word(w);
            assert!(e.chars().all(|ch| !originals.contains(&ch)));
            assert!(seen.insert(e));
        }
        let tb = g.treebank(5, 1, "a", Split::Train);
        let ctb = c.treebank(&tb, "b");
        assert_eq!(ctb.sentences[0].heads, tb.sentences[0].heads);
        assert_eq!(ctb.language, "b");
    }
}
