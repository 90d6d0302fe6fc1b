use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use rand::seq::SliceRandom;
use xling::corpus::{write_conllu, Split, Treebank};
use xling::numerics::rng;
use xling::synth::{Cipher, Grammar, LexiconSizes};

use crate::config::Config;
use crate::io;
use crate::Invalid;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub dir: PathBuf,
    /// Corpus tokens per language.
    #[arg(long, default_value_t = 50_000)]
    pub tokens: usize,
    /// Training trees per language; dev and test get a fifth each.
    #[arg(long, default_value_t = 500)]
    pub trees: usize,
    /// Seed of the grammar and the cipher.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

const CONFIG: &str = r#"# Synthetic pair: `b` is `a` written in a Cyrillic substitution cipher.
out = "out"

[languages.a]
corpus = "a.txt"
train = "a-train.conllu"
dev = "a-dev.conllu"
test = "a-test.conllu"

[languages.b]
corpus = "b.txt"
train = "b-train.conllu"
dev = "b-dev.conllu"
test = "b-test.conllu"

[lm]
filters = [[1, 32], [2, 32], [3, 64], [4, 128]]
lstm_size = 64
projection = 32
batch_size = 8
epochs = 6

[parser]
lstm_size = 32
arc_mlp = 50
label_mlp = 16
epochs = 20
patience = 10

[align]
dictionary_train = "dict-train.txt"
dictionary_test = "dict-test.txt"

# Uncomment after `train-lm --languages b` and `train-lm --languages a,b`.
# [simulate]
# target = "b"
# hub = "a"
# sweep = [0, 10, 100]
# seeds = [1, 2, 3]
# mono_lm = "out/lm-b.json"
# hub_lm = "out/lm-a-b.json"
"#;

pub fn run(_cfg: &Config, args: SynthArgs) -> anyhow::Result<()> {
    if args.tokens == 0 || args.trees < 5 {
        return Err(Invalid::new("--tokens must be positive and --trees at least 5").into());
    }
    let grammar = Grammar::new(LexiconSizes::default(), args.seed);
    let cipher = Cipher::new(args.seed);
    let dir = &args.dir;

    for (lang, seed) in [("a", 1), ("b", 2)] {
        let mut text = String::new();
        for s in grammar.corpus(args.tokens, seed, lang) {
            let line = s.tokens.iter().map(|t| {
                if lang == "b" {
                    cipher.word(t)
                } else {
                    t.clone()
                }
            });
            let _ = writeln!(text, "{}", line.collect::<Vec<_>>().join(" "));
        }
        io::write_file(&dir.join(format!("{lang}.txt")), &text)?;
    }

    // a and b draw disjoint sentence streams for each split.
    let splits = [
        (Split::Train, args.trees, 11),
        (Split::Dev, args.trees / 5, 14),
        (Split::Test, args.trees / 5, 13),
    ];
    for (split, n, seed) in splits {
        let a = grammar.treebank(n, seed, "a", split);
        let b: Treebank = cipher.treebank(&grammar.treebank(n, seed + 10, "a", split), "b");
        io::write_file(&dir.join(format!("a-{split}.conllu")), &write_conllu(&a))?;
        io::write_file(&dir.join(format!("b-{split}.conllu")), &write_conllu(&b))?;
    }

    let mut words: Vec<&str> = grammar.words().collect();
    words.sort_unstable();
    words.shuffle(&mut rng::derive(args.seed, "synth-dictionary"));
    let test = words.len() / 5;
    for (name, part) in [
        ("dict-test.txt", &words[..test]),
        ("dict-train.txt", &words[test..]),
    ] {
        let mut body = String::new();
        for w in part {
            let _ = writeln!(body, "{w} {}", cipher.word(w));
        }
        io::write_file(&dir.join(name), &body)?;
    }

    io::write_file(&dir.join("config.toml"), CONFIG)?;
    eprintln!(
        "{} lexicon entries, {} test pairs -> {}",
        words.len(),
        test,
        dir.join("config.toml").display()
    );
    Ok(())
}
